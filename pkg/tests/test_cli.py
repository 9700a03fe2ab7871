import csv
import json
import subprocess
import sys

import pytest

from ectnet.architectures import ARCHITECTURE_NAMES
from ectnet.cli import EXIT_CONFIG, EXIT_DATA, EXIT_OK, EXIT_USAGE, RunManifest, _train_config, build_parser, run
from ectnet.training import TrainConfig


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    data = root / "d.bin"
    assert run(["dataset", "gen", "--out", str(data), "--volunteers", "4", "--angles", "1", "--directions", "1",
                "--repeats", "1", "--seed", "3"]) == EXIT_OK
    code = run(["train", "--data", str(data), "--arch", "ResNet1Dv1-14", "--epochs", "2", "--batch", "16",
                "--n-crops", "2", "--test-ids", "0", "--val-ids", "1", "--runs-dir", str(root / "runs"),
                "--name", "r1", "--checkpoint-every", "1"])
    assert code == EXIT_OK
    return root, data, root / "runs" / "r1"


def test_count_all_lists_every_architecture(capsys):
    assert run(["count", "--all"]) == EXIT_OK
    out = capsys.readouterr().out
    for name in ARCHITECTURE_NAMES:
        assert name in out
    assert "discrepancies" in out


def test_count_single_architecture(capsys):
    assert run(["count", "--arch", "ResNet1Dv2-14", "--flops-per-mac", "1"]) == EXIT_OK
    assert "stem.conv" in capsys.readouterr().out


def test_usage_errors_exit_2(capsys):
    assert run(["frobnicate"]) == EXIT_USAGE
    assert run(["train", "--epochs", "many"]) == EXIT_USAGE
    assert run(["train", "--lr-schedule", "10-1e-4"]) == EXIT_USAGE


def test_missing_files_exit_3(tmp_path, capsys):
    assert run(["evaluate", "--checkpoint", str(tmp_path / "none.ckpt"), "--data", str(tmp_path / "x")]) == EXIT_DATA
    assert run(["dataset", "inspect", "--data", str(tmp_path / "none.bin")]) == EXIT_DATA


def test_help_documents_every_training_flag():
    text = build_parser()._subparsers._group_actions[0].choices["train"].format_help()
    for name in TrainConfig().to_dict():
        if name == "threads":
            assert "--threads" in text
            continue
        assert "--" + name.replace("_", "-") in text, name
    for flag in ("--arch", "--data", "--synthetic", "--resume", "--config", "--test-ids", "--val-ids"):
        assert flag in text


def test_config_precedence(tmp_path):
    TrainConfig(epochs=9, batch_size=32, lr_initial=1e-2).save(tmp_path / "c.json")
    args = build_parser().parse_args(["train", "--config", str(tmp_path / "c.json"), "--batch", "8"])
    cfg = _train_config(args)
    assert (cfg.epochs, cfg.batch_size, cfg.lr_initial) == (9, 8, 1e-2)
    assert cfg.beta1 == TrainConfig().beta1
    args = build_parser().parse_args(["train", "--lr-schedule", ""])
    assert _train_config(args).lr_schedule == ()


def test_bad_config_exits_5(tmp_path):
    (tmp_path / "c.json").write_text(json.dumps({"batch_size": 0}))
    assert run(["lr-find", "--config", str(tmp_path / "c.json"), "--synthetic"]) == EXIT_CONFIG


def test_train_writes_run_directory(workdir):
    _, _, out = workdir
    for name in ("manifest.json", "config.json", "trainlog.jsonl", "best.ckpt", "state.ckpt", "model.ckpt",
                 "eval_test.json", "confusion_test.csv"):
        assert (out / name).exists(), name
    man = RunManifest.load(out / "manifest.json")
    assert man.arch == "ResNet1Dv1-14" and man.config["epochs"] == 2
    assert man.split["test_ids"] == [0] and man.split["val_ids"] == [1]
    assert man.seeds["run"] == 0 and "fingerprint" in man.dataset
    assert len((out / "trainlog.jsonl").read_text().splitlines()) == 2


def test_evaluate_cam_and_exports(workdir, capsys):
    root, data, out = workdir
    ck = str(out / "model.ckpt")
    assert run(["evaluate", "--checkpoint", ck, "--data", str(data), "--n-crops", "2",
                "--out", str(root / "ev.json"), "--misclassified", "1.4mm"]) == EXIT_OK
    rep = json.loads((root / "ev.json").read_text())
    assert rep["n_samples"] == 20
    assert (root / "ev_confusion.csv").exists() and (root / "ev_predicted_1.4mm.csv").exists()
    assert run(["cam", "--checkpoint", ck, "--data", str(data), "--out", str(root / "cam.csv"),
                "--align-peaks"]) == EXIT_OK
    rows = list(csv.DictReader(open(root / "cam.csv")))
    assert len(rows) == 224 and "aligned_time" in rows[0]
    assert run(["dataset", "export-plane", "--data", str(data), "--label", "LiftOff", "--out",
                str(root / "p.csv")]) == EXIT_OK
    assert len(list(csv.reader(open(root / "p.csv")))) == 4 * 1250 + 1
    assert run(["dataset", "inspect", "--data", str(data)]) == EXIT_OK
    assert "segments: 80" in capsys.readouterr().out


def test_resume_and_mismatch(workdir):
    root, data, out = workdir
    common = ["train", "--data", str(data), "--arch", "ResNet1Dv1-14", "--n-crops", "2", "--test-ids", "0",
              "--val-ids", "1", "--runs-dir", str(root / "runs"), "--resume", str(out / "state.ckpt")]
    assert run(common + ["--epochs", "3", "--batch", "16", "--name", "r2"]) == EXIT_OK
    lines = (root / "runs" / "r2" / "trainlog.jsonl").read_text().splitlines()
    assert [json.loads(line)["epoch"] for line in lines] == [0, 1, 2]
    assert run(common + ["--epochs", "3", "--batch", "8", "--name", "r3"]) == EXIT_DATA


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "ectnet", "--version"], capture_output=True, text=True)
    assert res.returncode == 0 and res.stdout.startswith("ectnet ")
    res = subprocess.run([sys.executable, "-m", "ectnet", "count", "--arch", "bogus"], capture_output=True, text=True)
    assert res.returncode == 2
