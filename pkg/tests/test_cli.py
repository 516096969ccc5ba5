"""End-to-end command wiring: exit codes, stdout/stderr contracts, artifacts."""

import json
import shutil

import numpy as np
import pytest

from cystseg import __version__, cli
from cystseg.evaluation import read_metrics_csv
from cystseg.imgio import read_image, read_mask


def _last_json_line(text):
    for line in reversed(text.strip().splitlines()):
        if line.startswith("{"):
            return json.loads(line)
    raise AssertionError(f"no JSON line in {text!r}")


FAST_CONFIG = {
    "preprocess": {
        "nlm": {v: {"search_size": 5, "patch_size": 3, "h": 10.0}
                for v in ("Cirrus", "Nidek", "Spectralis", "Topcon")},
        "clahe_grid": [4, 4],
        "target_height": 64,
        "target_width": 128,
    },
    "model": {"stem_channels": 4, "stage_channels": [4, 8], "blocks_per_stage": 1},
    "train": {"epochs": 2, "batch_size": 32, "lr": 0.003, "val_fraction": 0.25},
}

# dense large cysts so the Training volume always yields positive patches
FAST_SPEC = {"n_volumes": 3, "frames_per_volume": 2, "height": 96, "width": 128,
             "band_top": 16, "band_bottom": 80, "cysts_min": 8, "cysts_max": 10,
             "axis_min": 5, "axis_max": 9, "seed": 5}


def test_pipeline_end_to_end(tmp_path, capsys):
    spec_path = tmp_path / "spec.json"
    spec_path.write_text(json.dumps(FAST_SPEC))
    config_path = tmp_path / "config.json"
    config_path.write_text(json.dumps(FAST_CONFIG))
    raw = tmp_path / "raw"
    prep = tmp_path / "prep"
    pred = tmp_path / "pred"

    assert cli.main(["synth", "--spec", str(spec_path), "--out", str(raw)]) == 0
    assert (raw / "manifest.json").is_file()

    assert cli.main(["preprocess", "--manifest", str(raw / "manifest.json"),
                     "--config", str(config_path), "--out", str(prep),
                     "--threads", "2"]) == 0
    sample = read_image(prep / "images" / "Cirrus_1" / "frame_000.png")
    assert sample.shape == (64, 128)

    cache = tmp_path / "patches.bin"
    capsys.readouterr()
    assert cli.main(["patches", "--manifest", str(prep / "manifest.json"),
                     "--config", str(config_path), "--seed", "0",
                     "--out", str(cache)]) == 0
    out = capsys.readouterr().out
    hist = json.loads(out[:out.rindex("}") + 1])
    assert hist["by_class"]["cyst"] == hist["by_class"]["non_cyst"] > 0
    assert set(hist["by_vendor"]) == {"Cirrus_1"} or "Cirrus" in hist["by_vendor"]

    ckpt = tmp_path / "model.ckpt"
    assert cli.main(["train", "--patches", str(cache), "--config", str(config_path),
                     "--seed", "0", "--out", str(ckpt)]) == 0
    assert ckpt.is_file()
    assert (tmp_path / "training_log.csv").is_file()

    assert cli.main(["predict", "--ckpt", str(ckpt),
                     "--manifest", str(prep / "manifest.json"),
                     "--out", str(pred), "--stride", "8", "--threads", "2"]) == 0
    for vid in ("Cirrus_1", "Nidek_2", "Spectralis_3"):
        for fi in range(2):
            assert (pred / vid / f"frame_{fi:03d}_mask.png").is_file()
            assert (pred / vid / f"frame_{fi:03d}_prob.png").is_file()
            assert (pred / vid / f"frame_{fi:03d}_overlay.png").is_file()
    mask = read_mask(pred / "Cirrus_1" / "frame_000_mask.png")
    assert mask.shape == (64, 128)

    metrics = tmp_path / "metrics.csv"
    capsys.readouterr()
    assert cli.main(["evaluate", "--pred", str(pred),
                     "--manifest", str(prep / "manifest.json"),
                     "--out", str(metrics)]) == 0
    out = capsys.readouterr().out
    assert "mean dice" in out
    rows = read_metrics_csv(metrics)
    assert len(rows) == 9          # 3 volumes x 3 default rules
    assert {r.grader_rule for r in rows} == {"grader1", "grader2", "intersection"}
    assert all(r.cyst_volume_mm3 is not None for r in rows)

    assert cli.main(["evaluate", "--pred", str(pred),
                     "--manifest", str(prep / "manifest.json"),
                     "--rules", "union", "--out", str(tmp_path / "m2.csv")]) == 0

    # unknown rule: schema problem in the inputs, exit 2
    capsys.readouterr()
    assert cli.main(["evaluate", "--pred", str(pred),
                     "--manifest", str(prep / "manifest.json"),
                     "--rules", "majority", "--out", str(tmp_path / "m3.csv")]) == 2
    err = _last_json_line(capsys.readouterr().err)
    assert err["exit_code"] == 2

    # a volume without predictions must be named in the error
    shutil.rmtree(pred / "Nidek_2")
    capsys.readouterr()
    assert cli.main(["evaluate", "--pred", str(pred),
                     "--manifest", str(prep / "manifest.json"),
                     "--out", str(tmp_path / "m4.csv")]) == 2
    err = _last_json_line(capsys.readouterr().err)
    assert err["error"] == "MissingPredictionError"
    assert "Nidek_2" in err["message"]

    rep = tmp_path / "rep"
    assert cli.main(["report", "--metrics", str(metrics), "--out", str(rep)]) == 0
    text = (rep / "report.txt").read_text()
    assert "de Sisternes et al, 0.68, 0.14" in text
    assert "This run (grader1)" in text


def test_usage_errors_exit_1(capsys):
    for argv in ([], ["frobnicate"], ["synth"], ["train", "--patches", "x"]):
        with pytest.raises(SystemExit) as exc:
            cli.main(argv)
        assert exc.value.code == 1
        err = _last_json_line(capsys.readouterr().err)
        assert err == {"error": "UsageError", "message": err["message"], "exit_code": 1}


def test_missing_inputs_exit_2(tmp_path, capsys):
    assert cli.main(["synth", "--spec", str(tmp_path / "nope.json"),
                     "--out", str(tmp_path / "d")]) == 2
    err = _last_json_line(capsys.readouterr().err)
    assert err["exit_code"] == 2

    assert cli.main(["train", "--patches", str(tmp_path / "nope.bin"),
                     "--config", str(tmp_path / "nope.json"),
                     "--seed", "0", "--out", str(tmp_path / "m.ckpt")]) == 2


def test_selfcheck_exits_0():
    assert cli.main(["selfcheck"]) == 0


def test_version(capsys):
    with pytest.raises(SystemExit) as exc:
        cli.main(["--version"])
    assert exc.value.code == 0
    assert f"cystseg {__version__}" in capsys.readouterr().out
