"""Training and evaluation loops.

Defaults follow the usual protocol for this task family: batches of 8, 50
epochs, Nesterov momentum 0.9 starting at learning rate 0.1, random
flip/rotate augmentation while loading.  The polynomial decay of the
learning rate to zero (power 0.9) is an artifact default, as is the seeded
shuffling; both exist so identical seed and config reproduce identical
checkpoints bit for bit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import data as datamod
from .blocks import save_checkpoint
from .errors import ConfigError, NumericFailure
from .losses import (LossReport, change_loss, dense_cross_entropy,
                     semantic_consistency_loss, semantic_loss, total_loss)
from .metrics import ConfusionMatrix, compute_report
from .networks import mask_disagreement
from .tensor import Tensor, add, backward, scale, zero_grads


@dataclass
class TrainConfig:
    batch_size: int = 8
    epochs: int = 50
    lr: float = 0.1
    momentum: float = 0.9
    schedule: str = "poly"     # "poly" decays to zero over the run, "constant" does not
    poly_power: float = 0.9
    seed: int = 0
    augment: bool = True
    sc_mode: str = "intent"
    sc_space: str = "prob"
    use_sc: str = "auto"       # "auto": only the family with attention blocks adds the term

    def validate(self):
        if self.batch_size < 1 or self.epochs < 1:
            raise ConfigError(f"batch size and epochs must be >= 1, got {self.batch_size}/{self.epochs}")
        if self.lr <= 0 or not 0.0 <= self.momentum < 1.0:
            raise ConfigError(f"bad lr/momentum {self.lr}/{self.momentum}")
        if self.schedule not in ("poly", "constant"):
            raise ConfigError(f"unknown lr schedule {self.schedule!r}")
        if self.use_sc not in ("auto", "on", "off"):
            raise ConfigError(f"loss.sc must be auto/on/off, got {self.use_sc!r}")


class NesterovSGD:
    """SGD with Nesterov momentum in lookahead form:

        u <- mu * u - lr * g
        theta <- theta + mu * u - lr * g

    With lr = 0 the parameters are exact fixed points.
    """

    def __init__(self, params, momentum=0.9):
        self.params = list(params)
        self.momentum = float(momentum)
        self.velocity = [np.zeros_like(p.data) for p in self.params]

    def step(self, lr):
        mu = self.momentum
        for p, u in zip(self.params, self.velocity):
            if p.grad is None:
                continue
            u *= mu
            u -= lr * p.grad
            p.data += mu * u - lr * p.grad

    def zero_grads(self):
        zero_grads(self.params)


def learning_rate(cfg, epoch):
    if cfg.schedule == "constant":
        return cfg.lr
    return cfg.lr * (1.0 - epoch / cfg.epochs) ** cfg.poly_power


def sample_loss(net, pair, cfg):
    """Forward one pair and route the loss terms for the network family."""
    t1, t2 = datamod.pair_tensors(pair)
    out = net.forward(t1, t2)
    l1m = pair.label1.astype(np.int64)
    l2m = pair.label2.astype(np.int64)

    if net.family in ("dscd-e", "dscd-l"):
        # these heads carry no-change as channel 0, so train them on the raw maps
        l1 = dense_cross_entropy(out.p1, l1m)
        l2 = dense_cross_entropy(out.p2, l2m)
        loss = scale(add(l1, l2), 0.5)
        report = LossReport.from_terms(l1.item(), l2.item(), 0.0, 0.0,
                                       sem_pixels=l1m.size, change_pixels=0)
        return loss, report, out

    change = pair.change_map.astype(np.int64)
    l1 = semantic_loss(out.p1, l1m)
    l2 = semantic_loss(out.p2, l2m)
    lc = change_loss(out.c, change)
    with_sc = cfg.use_sc == "on" or (cfg.use_sc == "auto" and net.family == "bisrnet")
    if with_sc:
        lsc = semantic_consistency_loss(out.p1, out.p2, change, cfg.sc_mode, cfg.sc_space)
    else:
        lsc = Tensor(0.0)
    loss = total_loss(l1, l2, lc, lsc)
    report = LossReport.from_terms(l1.item(), l2.item(), lc.item(), lsc.item(),
                                   sem_pixels=int((l1m >= 1).sum()) + int((l2m >= 1).sum()),
                                   change_pixels=change.size)
    return loss, report, out


def _mean_report(reports):
    n = max(len(reports), 1)
    return LossReport.from_terms(
        sum(r.l_sem1 for r in reports) / n,
        sum(r.l_sem2 for r in reports) / n,
        sum(r.l_change for r in reports) / n,
        sum(r.l_sc for r in reports) / n,
        sem_pixels=sum(r.sem_pixels for r in reports),
        change_pixels=sum(r.change_pixels for r in reports))


def train(net, samples, cfg, log=None):
    """Run the full loop over in-memory samples; returns per-epoch reports.

    Aborts with NumericFailure (plus a diagnostic snapshot) the moment a
    non-finite loss shows up.
    """
    cfg.validate()
    if not samples:
        raise ConfigError("train: dataset is empty")
    rng = np.random.default_rng(cfg.seed)
    opt = NesterovSGD(net.parameters(), cfg.momentum)
    history = []
    for epoch in range(cfg.epochs):
        lr = learning_rate(cfg, epoch)
        order = rng.permutation(len(samples))
        reports = []
        for start in range(0, len(order), cfg.batch_size):
            batch = order[start:start + cfg.batch_size]
            opt.zero_grads()
            for idx in batch:
                pair = samples[int(idx)]
                if cfg.augment:
                    pair = datamod.augment(pair, rng)
                loss, report, _ = sample_loss(net, pair, cfg)
                if not math.isfinite(report.l_total):
                    raise NumericFailure(
                        f"non-finite loss at epoch {epoch}, sample {pair.stem}",
                        snapshot={"epoch": epoch, "stem": pair.stem, "lr": lr,
                                  "report": report})
                backward(scale(loss, 1.0 / len(batch)))
                reports.append(report)
            opt.step(lr)
        epoch_report = _mean_report(reports)
        history.append(epoch_report)
        if log is not None:
            log(epoch_report.line(f"epoch {epoch:3d}  lr {lr:.5f}"))
    return history


def evaluate(net, samples, collect_predictions=False):
    """Forward every pair, accumulate one confusion matrix over both temporal
    maps, and report with the per-temporal breakdown attached."""
    n = net.num_classes
    cm1 = ConfusionMatrix(n)
    cm2 = ConfusionMatrix(n)
    disagree = []
    predictions = []
    for pair in samples:
        t1, t2 = datamod.pair_tensors(pair)
        out = net.forward(t1, t2)
        cm1.add(out.s1, pair.label1.astype(np.int64))
        cm2.add(out.s2, pair.label2.astype(np.int64))
        disagree.append(mask_disagreement(out.s1, out.s2))
        if collect_predictions:
            predictions.append((pair.stem, out.s1, out.s2))
    report = compute_report(cm1.merge(cm2))
    report.temporal = [compute_report(cm1), compute_report(cm2)]
    report.mask_disagreement = float(np.mean(disagree)) if disagree else 0.0
    report.params = net.count_params()
    if samples:
        report.flops = net.estimate_flops(samples[0].height, samples[0].width)
    if collect_predictions:
        return report, predictions
    return report


def evaluate_directories(pred_root, truth_root, n_classes):
    """Compare stored prediction maps against a truth dataset directory."""
    stems = datamod.list_stems(truth_root)
    cm1 = ConfusionMatrix(n_classes)
    cm2 = ConfusionMatrix(n_classes)
    disagree = []
    for stem in stems:
        p1, p2 = datamod.read_prediction(pred_root, stem)
        t1 = datamod.read_pgm(f"{truth_root}/label1/{stem}.pgm")
        t2 = datamod.read_pgm(f"{truth_root}/label2/{stem}.pgm")
        cm1.add(p1.astype(np.int64), t1.astype(np.int64))
        cm2.add(p2.astype(np.int64), t2.astype(np.int64))
        disagree.append(mask_disagreement(p1, p2))
    report = compute_report(cm1.merge(cm2))
    report.temporal = [compute_report(cm1), compute_report(cm2)]
    report.mask_disagreement = float(np.mean(disagree)) if disagree else 0.0
    return report


def save_trained(net, path):
    save_checkpoint(path, net.named_parameters())
