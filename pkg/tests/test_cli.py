import csv
import json
import shutil
import subprocess
import sys
import time

import pytest

from gale.bundle import read_bundle
from gale.cli import main
from gale.mesh import format_mesh
from gale.synth import CaseRecord, Joukowski, build_mesh

SMALL = ["--kind", "gine", "--N", "8", "--L", "2", "--C", "2"]


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    """A 10-case dataset and one trained model shared by the smoke tests."""
    root = tmp_path_factory.mktemp("cli")
    start = time.perf_counter()
    assert main(["gen", "--cases", "10", "--seed", "3", "--out", str(root / "ds"),
                 "--rings", "4", "--sectors", "16"]) == 0
    assert main(["train", "--data", str(root / "ds"), "--out", str(root / "run"),
                 "--epochs", "2", *SMALL]) == 0
    root.joinpath("setup_seconds").write_text(str(time.perf_counter() - start))
    return root


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


class TestSmoke:
    def test_gen(self, workdir):
        manifest = json.loads((workdir / "ds" / "manifest.json").read_text())
        assert manifest["n_cases"] == 10
        assert [len(manifest["splits"][s]) for s in ("train", "val", "test")] == [8, 1, 1]

    def test_train_outputs(self, workdir):
        run = workdir / "run"
        assert {"trace.csv", "params.bin", "last.bin", "adam.bin", "config.json"} <= \
            {p.name for p in run.iterdir()}
        rows = read_csv(run / "trace.csv")
        assert rows[0] == ["step", "epoch", "lr", "node_loss", "global_loss", "total"]
        assert len(rows) == 1 + 2 * 8

    def test_train_from_config_multi_seed(self, workdir, tmp_path):
        cfg = tmp_path / "run.json"
        cfg.write_text(json.dumps({"model": {"kind": "gen", "N": 8, "L": 2, "C": 2},
                                   "train": {"epochs": 1, "lr": 1e-3},
                                   "data": {"dataset": str(workdir / "ds")}}))
        assert main(["train", "--config", str(cfg), "--out", str(tmp_path / "r"),
                     "--seeds", "1,2"]) == 0
        for s in (1, 2):
            assert (tmp_path / "r" / f"seed_{s}" / "params.bin").exists()

    def test_eval(self, workdir, capsys):
        out = workdir / "metrics.csv"
        model = str(workdir / "run" / "params.bin")
        assert main(["eval", "--model", model, "--data", str(workdir / "ds"), "--split", "test",
                     "--out", str(out)]) == 0
        rows = read_csv(out)
        assert rows[0] == ["metric", "mean", "std", "runs"]
        assert rows[1][0] == "pressure_Pa" and float(rows[1][1]) >= 0
        assert "pressure_Pa" in capsys.readouterr().out

    def test_eval_two_models(self, workdir):
        model = str(workdir / "run" / "params.bin")
        last = str(workdir / "run" / "last.bin")
        out = workdir / "metrics2.csv"
        assert main(["eval", "--model", model, "--model", last, "--data", str(workdir / "ds"),
                     "--out", str(out), "--pooled"]) == 0
        assert read_csv(out)[1][3] == "2"

    def test_reconstruct(self, workdir):
        ds = workdir / "ds"
        case = json.loads((ds / "manifest.json").read_text())["splits"]["test"][0]
        out = workdir / "recon"
        assert main(["reconstruct", "--model", str(workdir / "run" / "params.bin"),
                     "--data", str(ds), "--case", case, "--out", str(out)]) == 0
        rows = read_csv(out / "fields.csv")
        assert len(rows) - 1 == read_bundle(ds / case).n_nodes
        assert main(["reconstruct", "--model", str(workdir / "run" / "params.bin"),
                     "--bundle", str(ds / case), "--out", str(workdir / "recon2")]) == 0
        assert (workdir / "recon2" / "globals.csv").exists()

    def test_parse(self, tmp_path):
        rec = CaseRecord(Joukowski(0.1, 0.05), U_inf=15.0, alpha=2.0, rings=4, sectors=16)
        (tmp_path / "case.mesh").write_text(format_mesh(build_mesh(rec)))
        assert main(["parse", str(tmp_path / "case.mesh"), "--out", str(tmp_path / "b"),
                     "--truncate", "1.0", "--U", "15", "--alpha", "2"]) == 0
        g = read_bundle(tmp_path / "b")
        assert g.n_nodes > 0 and g.global_true[0] == 15.0

    def test_params(self, capsys):
        assert main(["params"]) == 0
        out = capsys.readouterr().out
        assert "786,982" in out and "per kernel" in out

    def test_membench(self, tmp_path):
        out = tmp_path / "mem.csv"
        assert main(["membench", "--L", "10,50", "--C", "4", "--out", str(out)]) == 0
        rows = read_csv(out)
        assert len(rows) == 3
        col = rows[0].index("rev_peak")
        assert rows[1][col] == rows[2][col]
        s = rows[0].index("stored_peak")
        assert int(rows[2][s]) > int(rows[1][s])

    def test_under_a_minute(self, workdir):
        assert float((workdir / "setup_seconds").read_text()) < 60.0


class TestErrors:
    def test_no_arguments(self):
        exe = shutil.which("gale")
        cmd = [exe] if exe else [sys.executable, "-m", "gale.cli"]
        r = subprocess.run(cmd, capture_output=True, text=True)
        assert r.returncode == 2 and "usage" in (r.stdout + r.stderr).lower()

    def test_unknown_flag(self, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["membench", "--bogus"])
        assert exc.value.code == 2

    def test_missing_dataset(self, tmp_path, capsys):
        assert main(["eval", "--model", str(tmp_path / "m.bin"), "--data", str(tmp_path)]) == 1
        err = capsys.readouterr().err
        assert len(err.strip().splitlines()) == 1

    def test_bad_mesh(self, tmp_path, capsys):
        (tmp_path / "x.mesh").write_text("meshfmt 1\nvertices 1\n0 0 0\n")
        assert main(["parse", str(tmp_path / "x.mesh"), "--out", str(tmp_path / "b")]) == 1
        assert "line 3" in capsys.readouterr().err
