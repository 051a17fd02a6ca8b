import json
import os
import stat
import subprocess
import sys

import pytest

from semloop.checkpoint import Checkpoint, ToyPredictor
from semloop.cli import main
from semloop.config import apply_overrides, config_hash, load_config, parse_config
from semloop.errors import InvalidConfigError, LeakageError
from semloop.ingest import split_loso
from semloop.policy import ToyPolicyParams

SMALL = {
    "seed": 3,
    "data": {"synth": {"subjects_per_subset": 4, "weeks_per_subject": 3, "signal_slope": 2.0, "shift_scale": 0.0}},
    "train": {"steps": 20, "lr": 0.1, "batch_samples": 8, "holdout": ["DS4"]},
    "toy": {"lo": 300, "hi": 540},
    "eval": {"resamples": 200},
}


@pytest.fixture
def cfg_path(tmp_path):
    p = tmp_path / "run.json"
    p.write_text(json.dumps(SMALL))
    return p


def test_help_lists_subcommands(capsys):
    with pytest.raises(SystemExit) as e:
        main(["--help"])
    assert e.value.code == 0
    out = capsys.readouterr().out
    for cmd in ("gen-synth", "train-toy", "run-loso", "eval-provider", "report"):
        assert cmd in out


def test_unknown_flag_fails_without_side_effects(tmp_path, cfg_path):
    out = tmp_path / "o"
    with pytest.raises(SystemExit) as e:
        main(["gen-synth", "--config", str(cfg_path), "--out", str(out), "--bogus"])
    assert e.value.code != 0
    assert not out.exists()


def test_gen_synth_writes_and_is_deterministic(tmp_path, cfg_path, capsys):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["gen-synth", "--config", str(cfg_path), "--out", str(a)]) == 0
    assert "36 samples" in capsys.readouterr().out
    assert main(["--config", str(cfg_path), "gen-synth", "--out", str(b)]) == 0
    for name in ("features.csv", "labels.csv", "manifest.json"):
        assert (a / name).read_bytes() == (b / name).read_bytes()
    assert json.loads((a / "manifest.json").read_text())["config_hash"] == load_config(cfg_path).hash


def test_gen_synth_seed_flag_changes_output(tmp_path, cfg_path):
    main(["gen-synth", "--config", str(cfg_path), "--out", str(tmp_path / "a")])
    main(["gen-synth", "--config", str(cfg_path), "--seed", "4", "--out", str(tmp_path / "b")])
    assert (tmp_path / "a" / "labels.csv").read_bytes() != (tmp_path / "b" / "labels.csv").read_bytes()


@pytest.mark.skipif(os.geteuid() == 0, reason="root ignores directory permissions")
def test_gen_synth_unwritable(tmp_path, cfg_path):
    ro = tmp_path / "ro"
    ro.mkdir()
    ro.chmod(stat.S_IREAD | stat.S_IEXEC)
    assert main(["gen-synth", "--config", str(cfg_path), "--out", str(ro / "x")]) == 3


def test_gen_synth_unwritable_path_is_io_error(tmp_path, cfg_path, capsys):
    blocker = tmp_path / "file"
    blocker.write_text("")
    assert main(["gen-synth", "--config", str(cfg_path), "--out", str(blocker / "sub")]) == 3
    assert "io" in capsys.readouterr().err


def test_missing_data_key(tmp_path, capsys):
    p = tmp_path / "bad.json"
    p.write_text(json.dumps({"seed": 1}))
    assert main(["train-toy", "--config", str(p), "--out", str(tmp_path / "o")]) == 1
    assert "'data'" in capsys.readouterr().err


def test_config_validation(tmp_path):
    with pytest.raises(InvalidConfigError, match="'data'"):
        parse_config({})
    with pytest.raises(InvalidConfigError, match="exactly one"):
        parse_config({"data": {"synth": {}, "paths": {"features": "f", "labels": "l"}}})
    with pytest.raises(InvalidConfigError, match="data.paths.labels"):
        parse_config({"data": {"paths": {"features": "f"}}})
    with pytest.raises(InvalidConfigError, match="unknown config key"):
        parse_config({"data": {"synth": {}}, "trian": {}})
    with pytest.raises(InvalidConfigError, match="train"):
        parse_config({"data": {"synth": {}}, "train": {"K": 1}})
    with pytest.raises(InvalidConfigError, match="provider"):
        parse_config({"data": {"synth": {}}}).require_provider()
    cfg = parse_config({"data": {"paths": {"features": "nope.csv", "labels": "nope.csv"}}}, tmp_path)
    with pytest.raises(InvalidConfigError, match="not found"):
        cfg.load_data()


def test_overrides_win():
    raw = {"seed": 1, "task": "anxiety", "data": {"synth": {"seed": 7}}, "train": {"seed": 8}}
    out = apply_overrides(raw, seed=5, task="depression")
    cfg = parse_config(out)
    assert cfg.data.seed == 5 and cfg.train.seed == 5 and cfg.eval.seed == 5
    assert cfg.task.value == "depression"
    assert raw["data"]["synth"]["seed"] == 7  # input untouched
    assert config_hash(out) != config_hash(raw)
    assert config_hash({"a": 1, "b": 2}) == config_hash({"b": 2, "a": 1})


def test_train_toy_and_checkpoint(tmp_path, cfg_path, capsys):
    out = tmp_path / "t"
    assert main(["train-toy", "--config", str(cfg_path), "--out", str(out)]) == 0
    assert "final mean reward" in capsys.readouterr().out
    ck = Checkpoint.load(out / "checkpoint.json")
    assert ck.trained_subsets == ("DS2", "DS3") and ck.seed == 3 and ck.steps == 20
    assert ck.config_hash == load_config(cfg_path).hash
    lines = (out / "learning_curve.csv").read_text().splitlines()
    assert lines[0] == "step,mean_reward,reward_std,kl,lr" and len(lines) == 21


def test_train_toy_zero_steps_is_init(tmp_path, cfg_path):
    out = tmp_path / "t0"
    assert main(["train-toy", "--config", str(cfg_path), "--steps", "0", "--out", str(out)]) == 0
    ck = Checkpoint.load(out / "checkpoint.json")
    assert ck.params == ToyPolicyParams.uniform(ck.toy)


def test_train_toy_deterministic(tmp_path, cfg_path):
    for d in ("x", "y"):
        assert main(["train-toy", "--config", str(cfg_path), "--steps", "5", "--out", str(tmp_path / d)]) == 0
    for name in ("checkpoint.json", "learning_curve.csv"):
        assert (tmp_path / "x" / name).read_bytes() == (tmp_path / "y" / name).read_bytes()


def test_run_loso_mean_baseline(tmp_path, cfg_path, capsys):
    out = tmp_path / "l"
    assert main(["run-loso", "--config", str(cfg_path), "--predictor", "mean-baseline", "--out", str(out)]) == 0
    doc = json.loads((out / "report.json").read_text())
    assert {f["fold"] for f in doc["folds"]} == {"DS2", "DS3", "DS4"}
    assert doc["config_hash"] == load_config(cfg_path).hash
    assert (out / "predictions_mean-baseline.csv").read_text().splitlines()[0] == "fold,subject_id,label_date,true,pred"
    assert "pooled" in capsys.readouterr().out


def test_run_loso_two_methods_has_pvalues(tmp_path, cfg_path):
    out = tmp_path / "l2"
    argv = ["run-loso", "--config", str(cfg_path), "--predictor", "mean-baseline", "--predictor", "linear-baseline", "--out", str(out)]
    assert main(argv) == 0
    pooled = json.loads((out / "report.json").read_text())["pooled"]
    assert "linear-baseline" in pooled["mean-baseline"]["comparisons"]
    assert "mean-baseline" in pooled["linear-baseline"]["comparisons"]
    first = (out / "report.json").read_bytes()
    assert main(argv) == 0
    assert (out / "report.json").read_bytes() == first


def test_run_loso_with_checkpoint(tmp_path, cfg_path, capsys):
    main(["train-toy", "--config", str(cfg_path), "--out", str(tmp_path / "t")])
    ck = str(tmp_path / "t" / "checkpoint.json")
    out = tmp_path / "l"
    assert main(["run-loso", "--config", str(cfg_path), "--predictor", "toy", "--checkpoint", ck, "--fold", "DS4", "--out", str(out)]) == 0
    doc = json.loads((out / "report.json").read_text())
    assert [f["fold"] for f in doc["folds"]] == ["DS4"]
    assert doc["checkpoint"]["config_hash"] == load_config(cfg_path).hash
    # evaluating on a subset the checkpoint was trained on is refused
    capsys.readouterr()
    assert main(["run-loso", "--config", str(cfg_path), "--predictor", "toy", "--checkpoint", ck, "--out", str(out)]) == 1
    assert "LeakageError" in capsys.readouterr().err


def test_toy_predictor_leakage_guard(tmp_path, cfg_path):
    main(["train-toy", "--config", str(cfg_path), "--steps", "2", "--out", str(tmp_path / "t")])
    ck = Checkpoint.load(tmp_path / "t" / "checkpoint.json")
    cfg = load_config(cfg_path)
    ds = cfg.load_data()
    folds = {f.name: f for f in split_loso(ds)}
    p = ToyPredictor(checkpoint=ck)
    p.fit(ds.subset(folds["DS4"].train), "anxiety")
    assert 0 <= p.predict(ds[folds["DS4"].test[0]].window) <= 6
    with pytest.raises(LeakageError):
        ToyPredictor(checkpoint=ck).fit(ds.subset(folds["DS2"].train), "anxiety")
    with pytest.raises(InvalidConfigError):
        ToyPredictor(checkpoint=ck).fit(ds.subset(folds["DS4"].train), "depression")


def test_run_loso_toy_trained_per_fold(tmp_path, cfg_path):
    out = tmp_path / "pf"
    assert main(["run-loso", "--config", str(cfg_path), "--predictor", "toy", "--fold", "DS3", "--out", str(out)]) == 0
    assert json.loads((out / "report.json").read_text())["pooled"]["toy"]["n"] == 12


def test_eval_provider_records_failures(tmp_path):
    raw = dict(SMALL, provider={"base_url": "http://127.0.0.1:9", "model": "m", "timeout": 1, "max_retries": 0})
    p = tmp_path / "prov.json"
    p.write_text(json.dumps(raw))
    out = tmp_path / "ep"
    assert main(["eval-provider", "--config", str(p), "--fold", "DS2", "--out", str(out)]) == 0
    doc = json.loads((out / "report.json").read_text())
    assert doc["pooled"]["remote-provider"]["n_missing"] == 12
    assert len(doc["failures"]["remote-provider"]) == 12
    assert doc["pooled"]["mean-baseline"]["n"] == 12


def test_eval_provider_needs_provider(cfg_path, tmp_path, capsys):
    assert main(["eval-provider", "--config", str(cfg_path), "--out", str(tmp_path / "x")]) == 1
    assert "provider" in capsys.readouterr().err


def test_report_command(tmp_path, cfg_path, capsys):
    out = tmp_path / "l"
    main(["run-loso", "--config", str(cfg_path), "--out", str(out)])
    capsys.readouterr()
    assert main(["report", str(out / "report.json")]) == 0
    assert "mean-baseline" in capsys.readouterr().out
    (tmp_path / "junk.json").write_text("{}")
    assert main(["report", str(tmp_path / "junk.json")]) == 1


def test_console_entry_point():
    r = subprocess.run([sys.executable, "-m", "semloop.cli", "--help"], capture_output=True, text=True)
    assert r.returncode == 0 and "run-loso" in r.stdout
