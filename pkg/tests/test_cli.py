import json
from pathlib import Path

import numpy as np
import pytest

from optideq.cli import main
from optideq.config import ExperimentConfig, load_config, parse_config
from optideq.errors import ConfigurationError
from optideq.synth import SyntheticSpec, cmd_synth, generate

SMOKE_INI = """\
[data]
csv = {csv}
schema = synth:xor-like
[model]
families = deq, logreg, mlp-small
[train]
max_epochs = 1
patience = 1
batch_size = 128
[run]
seeds = 0
"""


# -- synthetic data --------------------------------------------------------------------

def test_synth_is_byte_deterministic(tmp_path):
    spec = SyntheticSpec(1000, 7, "xor-like", 0.02)
    a = cmd_synth(spec, tmp_path / "a.csv").read_bytes()
    b = cmd_synth(spec, tmp_path / "b.csv").read_bytes()
    assert a == b
    assert cmd_synth(SyntheticSpec(1000, 8), tmp_path / "c.csv").read_bytes() != a


def test_synth_rule_noise_and_balance():
    spec = SyntheticSpec(10_000, 0, "xor-like", 0.02)
    cols = generate(spec)
    clean = (cols["z1"] * cols["z2"] > 0).astype(int)
    flipped = np.mean(clean != cols["label"])
    assert abs(flipped - 0.02) < 0.006
    assert spec.bayes_balanced_accuracy == pytest.approx(0.98)
    assert abs(cols["label"].mean() - 0.5) <= 0.02


@pytest.mark.parametrize("noise", [-0.1, 0.5])
def test_synth_noise_bounds(noise):
    with pytest.raises(ConfigurationError):
        SyntheticSpec(100, 0, "xor-like", noise)


def test_sparse_task_is_mostly_zeros_without_centring():
    from optideq.encoding import encode_rows, fit_encoder
    from optideq.synth import synth_schema

    cols = generate(SyntheticSpec(2000, 0, "sparse-onehot", 0.02))
    fit = fit_encoder(cols, synth_schema("sparse-onehot"), "raw-ising", ising=False)
    assert np.mean(encode_rows(fit, cols) == 0) >= 0.8


# -- config ---------------------------------------------------------------------------------

def test_empty_config_is_all_defaults():
    assert parse_config("") == ExperimentConfig()


def test_config_parsing_and_overrides(tmp_path):
    path = tmp_path / "c.ini"
    path.write_text("[data]\nmode = binarized\nising = false\n[model]\nfamilies = deq, logreg\n"
                    "[cell]\ncell = AOCCell\ncrosstalk = 0.05\n[run]\nseeds = 3, 4\n")
    cfg = load_config(path, {"cell": "SimpleCell", "seeds": (9,)})
    assert cfg.mode == "binarized" and cfg.ising is False
    assert cfg.families == ("deq", "logreg")
    assert cfg.cell == "SimpleCell" and cfg.seeds == (9,)
    assert cfg.crosstalk == 0.05
    again = parse_config(cfg.to_ini())
    assert again == cfg


@pytest.mark.parametrize("text", [
    "[bogus]\nx = 1\n",
    "[data]\nnope = 1\n",
    "[data]\nmode = ternary\n",
    "[data]\nising = maybe\n",
    "[model]\nfamilies = xgboost\n",
    "[train]\npatience = 20\nmax_epochs = 5\n",
    "[run]\nseeds =\n",
])
def test_bad_configs_rejected(text):
    with pytest.raises(ConfigurationError):
        parse_config(text)


# -- end to end -------------------------------------------------------------------------------

@pytest.fixture(scope="module")
def smoke(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    assert main(["synth", "--rows", "10000", "--seed", "7", "--out", str(root / "data")]) == 0
    csv = root / "data" / "synth_xor-like_seed7.csv"
    cfg = root / "cfg.ini"
    cfg.write_text(SMOKE_INI.format(csv=csv))
    assert main(["pipeline", "--config", str(cfg), "--out", str(root / "run1")]) == 0
    return root, csv, cfg


def test_pipeline_writes_every_artifact(smoke):
    root, _, _ = smoke
    run = root / "run1"
    for name in ("assignments.csv", "split_report.txt", "encoder_raw-ising.json", "encoder_raw-onehot.json",
                 "encoder_group_keys.json", "report.txt", "report.kv", "scores_long.csv", "manifest.json",
                 "test_row_ids.txt", "models/deq_seed0.ckpt", "models/logreg_seed0.ckpt",
                 "models/mlp-small_seed0.ckpt", "models/deq_seed0_history.tsv",
                 "predictions/deq_seed0.csv", "encoded_raw-ising_train_X.npy"):
        assert (run / name).exists(), name
    manifest = json.loads((run / "manifest.json").read_text())
    assert manifest["command"] == "pipeline"
    assert "assignments.csv" in manifest["outputs"]
    kv = (run / "report.kv").read_text()
    assert "model.deq" in kv and "model.logreg" in kv


def test_pipeline_manifest_is_reproducible(smoke):
    root, csv, cfg = smoke
    assert main(["pipeline", "--config", str(cfg), "--out", str(root / "run2")]) == 0
    assert (root / "run1" / "manifest.json").read_bytes() == (root / "run2" / "manifest.json").read_bytes()


def test_manifest_digest_tracks_input_rows(smoke, tmp_path):
    root, csv, _ = smoke
    lines = csv.read_text().splitlines()
    cells = lines[5].split(",")
    cells[1] = "0.123456"
    lines[5] = ",".join(cells)
    edited = tmp_path / "edited.csv"
    edited.write_text("\n".join(lines) + "\n")
    cfg = tmp_path / "cfg.ini"
    cfg.write_text(SMOKE_INI.format(csv=edited).replace("mlp-small", "logreg").replace("deq, ", ""))
    assert main(["split", "--config", str(cfg), "--out", str(tmp_path / "a")]) == 0
    cfg.write_text(SMOKE_INI.format(csv=csv).replace("mlp-small", "logreg").replace("deq, ", ""))
    assert main(["split", "--config", str(cfg), "--out", str(tmp_path / "b")]) == 0
    a = json.loads((tmp_path / "a" / "manifest.json").read_text())
    b = json.loads((tmp_path / "b" / "manifest.json").read_text())
    assert a["inputs"] != b["inputs"]


def test_eval_reads_previous_run(smoke, capsys):
    root, _, cfg = smoke
    assert main(["eval", "--config", str(cfg), "--out", str(root / "run1")]) == 0
    assert "Evaluation report" in capsys.readouterr().out


def test_compare_three_prediction_files(smoke, capsys):
    root, _, _ = smoke
    preds = sorted(str(p) for p in (root / "run1" / "predictions").glob("*.csv"))
    assert len(preds) == 3
    assert main(["compare", *preds, "--out", str(root / "cmp")]) == 0
    kv = (root / "cmp" / "compare.kv").read_text()
    assert kv.count(".jaccard=") == 3


def test_latency_verb(capsys):
    assert main(["latency"]) == 0
    assert "= 720 ns" in capsys.readouterr().out
    assert main(["latency", "--blocks", "1"]) == 0
    assert "= 180 ns" in capsys.readouterr().out
    assert main(["latency", "--blocks", "1", "--pass-ns", "0.5"]) == 0
    assert "= 4.5 ns" in capsys.readouterr().out


def test_missing_csv_fails_with_stage_name(tmp_path, capsys):
    cfg = tmp_path / "cfg.ini"
    cfg.write_text(SMOKE_INI.format(csv=tmp_path / "absent.csv"))
    code = main(["pipeline", "--config", str(cfg), "--out", str(tmp_path / "run")])
    assert code != 0
    assert "stage" in capsys.readouterr().err


def test_bad_config_exits_nonzero(tmp_path, capsys):
    cfg = tmp_path / "cfg.ini"
    cfg.write_text("[train]\npatience = 50\nmax_epochs = 5\n")
    assert main(["train", "--config", str(cfg), "--out", str(tmp_path / "r")]) == 1
    assert "patience" in capsys.readouterr().err


def test_centring_switch_needs_no_code_change(smoke, tmp_path):
    root, csv, _ = smoke
    cfg = tmp_path / "cfg.ini"
    cfg.write_text(SMOKE_INI.format(csv=csv).replace("[model]", "ising = false\n[model]")
                   .replace("deq, logreg, mlp-small", "logreg"))
    assert main(["encode", "--config", str(cfg), "--out", str(tmp_path / "enc")]) == 0
    enc = json.loads((tmp_path / "enc" / "manifest.json").read_text())
    assert "ising = false" in enc["config"]
