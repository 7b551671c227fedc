"""End-to-end command behavior: exit codes, artifacts, config plumbing."""

import json

import numpy as np
import pytest

from scdkit.cli import main
from scdkit.config import Settings, parse_config
from scdkit.data import write_pgm
from scdkit.errors import ConfigError


TINY_CONFIG = """
# minimal run for tests
family = sscd-l
classes = 3
encoder.channels = 4 4 8
encoder.strides = 2 2 2
encoder.units = 1 0 0
cd.width = 4
cd.units = 1
train.batch_size = 2
train.epochs = 2
train.lr = 0.05
generate.count = 3
generate.size = 16
"""


@pytest.fixture
def cfg_file(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text(TINY_CONFIG)
    return str(path)


@pytest.fixture
def dataset(tmp_path, cfg_file):
    root = tmp_path / "data"
    assert main(["generate", "--config", cfg_file, "--out", str(root)]) == 0
    return str(root)


# ---------------------------------------------------------------------------
# config file parsing


def test_parse_config_overrides_defaults(cfg_file):
    settings = parse_config(cfg_file)
    assert settings.family == "sscd-l"
    assert settings.encoder_channels == (4, 4, 8)
    assert settings.epochs == 2
    assert settings.momentum == Settings().momentum  # untouched key keeps default


def test_parse_config_unknown_key(tmp_path):
    path = tmp_path / "bad.cfg"
    path.write_text("famly = bisrnet\n")
    with pytest.raises(ConfigError, match=":1:"):
        parse_config(path)


def test_parse_config_bad_value(tmp_path):
    path = tmp_path / "bad.cfg"
    path.write_text("\nclasses = four\n")
    with pytest.raises(ConfigError, match=":2:"):
        parse_config(path)


def test_parse_config_missing_equals(tmp_path):
    path = tmp_path / "bad.cfg"
    path.write_text("classes\n")
    with pytest.raises(ConfigError, match="key = value"):
        parse_config(path)


def test_parse_config_missing_file(tmp_path):
    with pytest.raises(ConfigError, match="not found"):
        parse_config(tmp_path / "nope.cfg")


def test_settings_round_trip_into_builders(cfg_file):
    settings = parse_config(cfg_file)
    settings.encoder_config().validate()
    settings.train_config().validate()
    assert settings.build_kwargs()["num_classes"] == 3


# ---------------------------------------------------------------------------
# generate / validate


def test_generate_writes_dataset(dataset, tmp_path):
    assert (tmp_path / "data" / "im1" / "000000.ppm").is_file()
    assert (tmp_path / "data" / "label2" / "000002.pgm").is_file()


def test_validate_clean_dataset(dataset, capsys):
    assert main(["validate", "--data", dataset, "--classes", "3"]) == 0
    out = capsys.readouterr().out
    assert "0 error(s)" in out


def test_validate_reports_zero_set_warning(dataset, tmp_path, capsys):
    label = np.zeros((16, 16), dtype=np.uint8)
    label[0, 0] = 1
    write_pgm(tmp_path / "data" / "label1" / "000000.pgm", label)
    code = main(["validate", "--data", dataset, "--classes", "3"])
    out = capsys.readouterr().out
    assert "warning" in out
    assert code == 0  # mismatched zero sets warn, they do not fail


def test_validate_flags_out_of_range_labels(dataset, tmp_path, capsys):
    assert main(["validate", "--data", dataset, "--classes", "2"]) == 1
    assert "error" in capsys.readouterr().out


def test_validate_broken_file(dataset, tmp_path, capsys):
    (tmp_path / "data" / "im1" / "000001.ppm").write_bytes(b"P6\n1 1\n255\n")
    assert main(["validate", "--data", dataset, "--classes", "3"]) == 1


# ---------------------------------------------------------------------------
# train / evaluate / metrics


def test_train_writes_artifacts(dataset, cfg_file, tmp_path, capsys):
    out = tmp_path / "run"
    code = main(["train", "--config", cfg_file, "--data", dataset,
                 "--out", str(out)])
    assert code == 0
    assert (out / "checkpoint.bin").is_file()
    assert (out / "metrics.json").is_file()
    curve = (out / "loss_curve.csv").read_text().strip().splitlines()
    assert curve[0].startswith("epoch,")
    assert len(curve) == 3  # header + 2 epochs
    report = json.loads((out / "metrics.json").read_text())
    assert "oa" in report and "temporal" in report


def test_train_determinism_across_runs(dataset, cfg_file, tmp_path):
    outs = []
    for name in ("a", "b"):
        out = tmp_path / name
        assert main(["train", "--config", cfg_file, "--data", dataset,
                     "--out", str(out)]) == 0
        outs.append(out)
    assert (outs[0] / "checkpoint.bin").read_bytes() == (outs[1] / "checkpoint.bin").read_bytes()
    assert (outs[0] / "metrics.json").read_text() == (outs[1] / "metrics.json").read_text()


def test_evaluate_roundtrips_checkpoint(dataset, cfg_file, tmp_path, capsys):
    out = tmp_path / "run"
    main(["train", "--config", cfg_file, "--data", dataset, "--out", str(out)])
    capsys.readouterr()
    code = main(["evaluate", "--config", cfg_file, "--data", dataset,
                 "--ckpt", str(out / "checkpoint.bin"), "--json", "-"])
    assert code == 0
    report = json.loads(capsys.readouterr().out)
    assert set(report) >= {"oa", "miou", "sek", "f_scd", "pixels"}


def test_evaluate_writes_predictions_and_metrics_close_loop(dataset, cfg_file,
                                                            tmp_path, capsys):
    preds = tmp_path / "preds"
    assert main(["evaluate", "--config", cfg_file, "--data", dataset,
                 "--pred-out", str(preds), "--json", "-"]) == 0
    eval_report = json.loads(capsys.readouterr().out)
    assert main(["metrics", "--pred", str(preds), "--truth", dataset,
                 "--classes", "3", "--json", "-"]) == 0
    scored = json.loads(capsys.readouterr().out)
    # scoring the stored maps must reproduce the in-memory evaluation
    for key in ("oa", "miou", "sek", "f_scd", "pixels"):
        assert scored[key] == eval_report[key]


def test_metrics_perfect_when_pred_equals_truth(dataset, capsys):
    assert main(["metrics", "--pred", dataset, "--truth", dataset,
                 "--classes", "3", "--csv", "-"]) == 0
    header, row = capsys.readouterr().out.strip().splitlines()
    cells = dict(zip(header.split(","), row.split(",")))
    assert float(cells["oa"]) == 1.0
    assert float(cells["f_scd"]) == 1.0


# ---------------------------------------------------------------------------
# the rest of the surface


def test_gradcheck_single_seed(capsys):
    assert main(["gradcheck", "--seeds", "1"]) == 0
    out = capsys.readouterr().out
    assert "worst over 1 seed(s)" in out
    assert "FAIL" not in out


def test_compare_lists_all_families(cfg_file, capsys):
    assert main(["compare", "--config", cfg_file, "--size", "16"]) == 0
    out = capsys.readouterr().out
    for family in ("dscd-e", "dscd-l", "sscd-e", "sscd-l", "bisrnet"):
        assert family in out


def test_compare_csv_flop_ordering(cfg_file, tmp_path):
    target = tmp_path / "rows.csv"
    assert main(["compare", "--config", cfg_file, "--size", "16",
                 "--csv", str(target)]) == 0
    rows = [line.split(",") for line in target.read_text().strip().splitlines()[1:]]
    flops = {cells[0]: int(cells[2]) for cells in rows}
    assert flops["dscd-e"] < flops["dscd-l"] <= flops["sscd-l"] < flops["sscd-e"]


def test_error_exit_codes(tmp_path, capsys):
    assert main(["train", "--data", str(tmp_path / "missing"),
                 "--out", str(tmp_path / "o")]) == 1
    bad_cfg = tmp_path / "bad.cfg"
    bad_cfg.write_text("nonsense = 1\n")
    assert main(["generate", "--config", str(bad_cfg),
                 "--out", str(tmp_path / "d")]) == 1
    capsys.readouterr()


def test_unknown_family_exits_one(capsys):
    with pytest.raises(SystemExit) as info:
        main(["train", "--family", "resnet", "--data", "x", "--out", "y"])
    assert info.value.code == 1


def test_cli_seed_override(cfg_file, tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["generate", "--config", cfg_file, "--out", str(a),
                 "--seed", "5", "--count", "1"]) == 0
    assert main(["generate", "--config", cfg_file, "--out", str(b),
                 "--seed", "6", "--count", "1"]) == 0
    assert ((a / "im1" / "000000.ppm").read_bytes()
            != (b / "im1" / "000000.ppm").read_bytes())
