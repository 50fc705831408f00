import csv
import hashlib
import json
import subprocess
import sys

import pytest

from peginhole.cli import main
from peginhole.config import DEFAULTS, load_config
from peginhole.net.checkpoint import load_checkpoint

TINY = ["data.coarse_count=3", "data.fine_count=4", "data.n_points=64", "control.crop_points=64",
        "train.arch=tiny", "train.batch_size=2", "train.epochs_coarse=2", "train.epochs_fine=2"]


def run(tmp, *args):
    return main([*args, "--out", str(tmp)])


def read_csv(path):
    with open(path) as f:
        return list(csv.DictReader(f))


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    assert run(out, "gen-data", *TINY) == 0
    assert run(out, "train", *TINY) == 0
    return out


@pytest.mark.parametrize("argv", [[], ["fly"], ["eval", "no.such.key=1"], ["eval", "eval.trials=abc"],
                                  ["eval", "notkeyvalue"], ["eval", "--seed", "x"]])
def test_usage_errors_exit_1(tmp_path, argv, capsys):
    assert main([*argv, "--out", str(tmp_path)]) == 1
    assert "error" in capsys.readouterr().err


def test_zero_trials_is_a_usage_error(tmp_path):
    assert run(tmp_path, "eval", "--oracle", "eval.trials=0") == 1


def test_missing_models_is_a_usage_error(tmp_path):
    assert run(tmp_path, "eval", "eval.dof_modes=3dof") == 1
    assert run(tmp_path, "eval", "eval.dof_modes=3dof", f"eval.models.3dof={tmp_path}") == 1


def test_zero_records_writes_nothing(tmp_path):
    assert run(tmp_path, "gen-data", "data.coarse_count=0") == 1
    assert not (tmp_path / "coarse.pds").exists() and not (tmp_path / "fine.pds").exists()


def test_gen_data_is_byte_identical(tmp_path, trained):
    assert run(tmp_path, "gen-data", *TINY) == 0
    for name in ("coarse.pds", "fine.pds", "manifest.txt"):
        assert (tmp_path / name).read_bytes() == (trained / name).read_bytes()


def test_manifest_digests_and_config(trained):
    text = (trained / "manifest.txt").read_text()
    for line in text.splitlines():
        if line.endswith(".pds") or ".pds " in line:
            name, *fields = line.split()
            kv = dict(f.split("=") for f in fields)
            blob = (trained / name).read_bytes()
            assert int(kv["bytes"]) == len(blob)
            assert kv["sha256"] == hashlib.sha256(blob).hexdigest()
    assert "data.fine_count = 4" in text


def test_effective_config_is_echoed(trained):
    text = (trained / "config.txt").read_text()
    assert text.startswith("# command: train\n")
    assert "train.arch = tiny" in text
    assert len(text.splitlines()) == len(DEFAULTS) + 1


def test_config_file_and_precedence(tmp_path):
    cfgfile = tmp_path / "c.txt"
    cfgfile.write_text("# comment\neval.trials = 7\nseed = 3\n")
    cfg = load_config(str(cfgfile), ["eval.trials=9"], seed=5)
    assert cfg["eval.trials"] == 9 and cfg["seed"] == 5
    assert run(tmp_path, "eval", "--oracle", "--config", str(cfgfile), "eval.dof_modes=3dof",
               "eval.initial_errors=0.3", "eval.trials=2") == 0
    assert "eval.trials = 2" in (tmp_path / "config.txt").read_text()


def test_training_outputs(trained):
    for kind in ("oakn", "opn"):
        model, state, meta = load_checkpoint(trained / f"{kind}.ckpt")
        assert model.kind == kind and meta["epoch"] == 1 and state is not None
        rows = read_csv(trained / f"loss_{kind}.csv")
        assert [int(r["epoch"]) for r in rows] == [0, 1]
    steps = [r["step"] for r in read_csv(trained / "timings.csv")]
    assert steps == ["gen-data coarse", "gen-data fine", "train oakn", "train opn"]


def test_resume_matches_uninterrupted(tmp_path, trained):
    def fresh(name):
        d = tmp_path / name
        d.mkdir()
        for f in ("coarse.pds", "fine.pds"):
            (d / f).write_bytes((trained / f).read_bytes())
        return d

    whole, split = fresh("whole"), fresh("split")
    common = [*TINY, "train.nets=opn", "train.lr_final=1.0"]
    assert run(whole, "train", *common, "train.epochs_fine=4") == 0
    assert run(split, "train", *common, "train.epochs_fine=2") == 0
    assert run(split, "train", *common, "train.epochs_fine=4", "train.resume=true") == 0
    a, b = read_csv(whole / "loss_opn.csv"), read_csv(split / "loss_opn.csv")
    assert [r["epoch"] for r in b] == ["0", "1", "2", "3"]
    for ra, rb in zip(a, b):
        assert float(ra["loss"]) == pytest.approx(float(rb["loss"]), rel=1e-6)


def test_missing_dataset(tmp_path):
    assert run(tmp_path, "train", *TINY) == 1


def test_eval_with_learned_models_is_deterministic(tmp_path, trained):
    args = ["eval", "eval.dof_modes=3dof", "eval.trials=2", "eval.initial_errors=0.3",
            f"eval.models.3dof={trained}", "eval.traces=true"]
    a, b = tmp_path / "a", tmp_path / "b"
    assert run(a, *args) == 0 and run(b, *args) == 0
    for name in ("eval.csv", "trials.jsonl", "traces.jsonl"):
        assert (a / name).read_bytes() == (b / name).read_bytes()
    rows = read_csv(a / "eval.csv")
    assert len(rows) == 1 and rows[0]["models"] == str(trained)
    assert 0 <= float(rows[0]["success_rate"]) <= 1
    recs = [json.loads(line) for line in (a / "trials.jsonl").read_text().splitlines()]
    assert len(recs) == 2 and all("wall_time" not in r for r in recs)


def test_oracle_eval_grid(tmp_path, capsys):
    assert run(tmp_path, "eval", "--oracle", "eval.trials=3", "eval.shapes=seen,unseen") == 0
    rows = read_csv(tmp_path / "eval.csv")
    assert len(rows) == 3 * 2 * 2
    assert all(r["success_rate"] == "1" for r in rows)
    assert "dof_mode,shape" in capsys.readouterr().out


def test_oracle_ablation_has_five_rows(tmp_path):
    assert run(tmp_path, "ablate", "--oracle", "eval.trials=4") == 0
    rows = read_csv(tmp_path / "ablation.csv")
    assert [r["variant"] for r in rows] == ["a_coarse_only", "b_fine_only", "c_c2f_no_map", "d_c2f_no_aug", "e_full"]
    by = {r["variant"]: r for r in rows}
    # oracle models are exact, so coarse-only and full both succeed
    assert by["a_coarse_only"]["success_rate"] == "1" and by["e_full"]["success_rate"] == "1"


def test_oracle_bench_iterations_do_not_depend_on_distance(tmp_path):
    assert run(tmp_path, "bench", "--oracle", "eval.trials=5", "eval.dof_modes=3dof,6dof") == 0
    rows = read_csv(tmp_path / "bench.csv")
    for mode in ("3dof", "6dof"):
        its = [float(r["mean_iterations"]) for r in rows if r["dof_mode"] == mode]
        assert len(its) == 2 and its[0] == its[1]


def test_check_subset(tmp_path, capsys):
    assert run(tmp_path, "check", "check.suites=so3,losses") == 0
    out = capsys.readouterr().out
    assert "2/2 suites passed" in out
    assert (tmp_path / "check.txt").read_text().count("\n") == 2
    assert run(tmp_path, "check", "check.suites=nope") == 1


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "peginhole.cli", "bogus", "--out", str(tmp_path)],
                          capture_output=True, text=True)
    assert proc.returncode == 1
