import os
import subprocess
import sys

import pytest

from hfirst.cli import main

SMALL = ["--set", "classes=4", "--set", "per_class=2", "--trials", "2", "--seed", "3"]


def only_dir(parent):
    (name,) = os.listdir(parent)
    return os.path.join(parent, name)


def files(directory):
    out = {}
    for root, _, names in os.walk(directory):
        for n in names:
            p = os.path.join(root, n)
            with open(p, "rb") as fh:
                out[os.path.relpath(p, directory)] = fh.read()
    return out


@pytest.fixture(scope="module")
def dataset_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("synth")
    assert main(["synth", "--out", str(out)] + SMALL) == 0
    return only_dir(out)


@pytest.fixture(scope="module")
def model_path(dataset_dir, tmp_path_factory):
    out = tmp_path_factory.mktemp("train")
    assert main(["train", "--data", dataset_dir, "--out", str(out)] + SMALL) == 0
    return os.path.join(only_dir(out), "model.txt")


def rerun(tmp_path, argv):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(argv + ["--out", str(a)]) == 0
    assert main(argv + ["--out", str(b)]) == 0
    da, db = only_dir(a), only_dir(b)
    assert os.path.basename(da) == os.path.basename(db)
    return files(da), files(db)


@pytest.mark.parametrize(
    "argv",
    [
        ["synth"],
        ["xval"],
        ["jitter", "--sigmas", "0,5"],
        ["ablate", "--variants", "full,no_reset"],
    ],
    ids=lambda a: a[0],
)
def test_rerun_is_byte_identical(tmp_path, argv):
    fa, fb = rerun(tmp_path, argv + SMALL)
    assert fa == fb
    assert "config.txt" in fa


def test_model_commands_rerun_identically(tmp_path, dataset_dir, model_path):
    fa, fb = rerun(tmp_path, ["train", "--data", dataset_dir] + SMALL)
    assert fa == fb
    fa, fb = rerun(tmp_path / "e", ["eval", "--model", model_path, "--data", dataset_dir] + SMALL)
    assert fa == fb and set(fa) >= {"results.csv", "activations.csv", "summary.txt"}
    rec = os.path.join(dataset_dir, "0_0.aer")
    fa, fb = rerun(tmp_path / "s", ["stream", "--model", model_path, "--input", rec, "--spikes"] + SMALL)
    assert fa == fb and set(fa) >= {"detections.csv", "spikes.csv", "activations.csv"}


def test_missing_model_exits_2_naming_path(tmp_path, dataset_dir, capsys):
    missing = str(tmp_path / "nope.txt")
    code = main(["eval", "--model", missing, "--data", dataset_dir, "--out", str(tmp_path)])
    assert code == 2
    assert missing in capsys.readouterr().err


def test_bad_config_exits_2(tmp_path, capsys):
    assert main(["xval", "--set", "no_such_key=1", "--out", str(tmp_path)]) == 2
    assert main(["xval", "--set", "oops", "--out", str(tmp_path)]) == 2
    assert "hfirst xval" in capsys.readouterr().err


def test_precedence_file_then_set_then_flag(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("s2_threshold=120\nseed=7\ntrials=4\n")
    main(["synth", "--config", str(cfg), "--set", "s2_threshold=130", "--set", "seed=8",
          "--seed", "9", "--out", str(tmp_path / "o")] + SMALL[:4])
    text = open(os.path.join(only_dir(tmp_path / "o"), "config.txt")).read()
    assert "s2_threshold=130\n" in text
    assert "seed=9\n" in text
    assert "trials=4\n" in text
    assert only_dir(tmp_path / "o").endswith("-s9")


def test_xval_summary_format(tmp_path, capsys):
    assert main(["xval", "--out", str(tmp_path)] + SMALL) == 0
    line = capsys.readouterr().out.strip()
    assert line.count("%") == 2 and "±" in line
    summary = open(os.path.join(only_dir(tmp_path), "summary.txt")).read().strip()
    assert summary == line


def test_ablation_rows(tmp_path):
    assert main(["ablate", "--variants", "full,bypass_s1", "--out", str(tmp_path)] + SMALL) == 0
    rows = open(os.path.join(only_dir(tmp_path), "ablation.csv")).read().splitlines()
    assert rows[0].startswith("variant,mean_acc,std_acc")
    assert [r.split(",")[0] for r in rows[1:]] == ["full", "bypass_s1"]
    assert main(["ablate", "--variants", "bogus", "--out", str(tmp_path)]) == 2


def test_bench_report(tmp_path):
    argv = ["bench", "--repeats", "3", "--max-events", "2000", "--set", "classes=4",
            "--out", str(tmp_path)]
    assert main(argv) == 0
    text = open(os.path.join(only_dir(tmp_path), "bench.txt")).read()
    for backend in ("cython", "python"):
        assert f"{backend}.events_per_s=" in text
    assert "cython.per_s1_spike.C1=12.000" in text
    assert main(argv[:2] + ["2"] + argv[3:]) == 2


def test_console_script_and_log_env(tmp_path):
    env = {**os.environ, "HFIRST_LOG": "debug"}
    proc = subprocess.run(
        [sys.executable, "-m", "hfirst.cli", "synth", "--out", str(tmp_path)] + SMALL,
        capture_output=True, text=True, env=env,
    )
    assert proc.returncode == 0
    assert proc.stdout.strip() == only_dir(tmp_path)
    env["HFIRST_LOG"] = "loud"
    proc = subprocess.run([sys.executable, "-m", "hfirst.cli", "--version"],
                          capture_output=True, text=True, env=env)
    assert proc.returncode == 0 and proc.stdout.startswith("hfirst ")
