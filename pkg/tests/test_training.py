import csv
import json

import numpy as np
import pytest

from gale.errors import ConfigError, DataError, NumericError
from gale.model import FlowModel, ModelConfig
from gale.synth import CaseRecord, Joukowski, generate_case
from gale.training import (
    TRACE_COLUMNS,
    RunConfig,
    TrainConfig,
    load_model,
    save_model,
    save_run,
    train,
)

MODEL = ModelConfig(N=8, L=2, C=2, kind="gine", kernel_hidden=6)


@pytest.fixture(scope="module")
def graphs():
    out = []
    for i, (U, a) in enumerate([(12.0, 2.0), (20.0, -3.0), (16.0, 6.0), (25.0, 0.0)]):
        rec = CaseRecord(Joukowski(0.1, 0.04), U_inf=U, alpha=a, rings=3, sectors=12,
                         case_id=f"case{i}")
        out.append(generate_case(rec)[1])
    return out


class TestTrain:
    def test_one_epoch_three_steps(self, graphs):
        res = train(graphs[:3], MODEL, TrainConfig(epochs=1))
        assert len(res.trace) == 3 and res.adam.step == 3
        assert [r["step"] for r in res.trace] == [1, 2, 3]

    def test_deterministic(self, graphs):
        cfg = TrainConfig(epochs=3, seed=11)
        a = train(graphs[:3], MODEL, cfg, graphs[3:])
        b = train(graphs[:3], MODEL, cfg, graphs[3:])
        ta = np.array([[r[c] for c in TRACE_COLUMNS] for r in a.trace])
        tb = np.array([[r[c] for c in TRACE_COLUMNS] for r in b.trace])
        np.testing.assert_allclose(ta, tb, rtol=0, atol=1e-12)
        assert all(np.array_equal(a.params[k], b.params[k]) for k in a.params)

    def test_seed_changes_run(self, graphs):
        a = train(graphs[:3], MODEL, TrainConfig(epochs=1, seed=0))
        b = train(graphs[:3], MODEL, TrainConfig(epochs=1, seed=1))
        assert a.trace[0]["total"] != b.trace[0]["total"]

    def test_learning_rate_schedule(self, graphs):
        res = train(graphs[:2], MODEL, TrainConfig(epochs=3, base_lr=1e-3, decay=0.5))
        assert [r["lr"] for r in res.trace] == [1e-3, 1e-3, 5e-4, 5e-4, 2.5e-4, 2.5e-4]

    def test_loss_decreases(self, graphs):
        res = train(graphs, MODEL, TrainConfig(epochs=30, base_lr=3e-3))
        el = res.epoch_losses()
        assert el[-1] < 0.5 * el[0]

    def test_best_validation_selected(self, graphs):
        res = train(graphs[:3], MODEL, TrainConfig(epochs=4), graphs[3:])
        assert len(res.val_losses) == 4
        assert res.best_epoch == int(np.argmin(res.val_losses))

    def test_trace_file(self, graphs, tmp_path):
        path = tmp_path / "trace.csv"
        res = train(graphs[:2], MODEL, TrainConfig(epochs=2), trace_path=path)
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        assert tuple(rows[0]) == TRACE_COLUMNS and len(rows) == 4
        assert float(rows[-1]["total"]) == res.trace[-1]["total"]

    def test_non_finite_names_case(self, graphs):
        bad = graphs[1].with_(target=np.full_like(graphs[1].target, np.inf))
        with pytest.raises(NumericError, match="case1"):
            train([graphs[0], bad], MODEL, TrainConfig(epochs=1))

    def test_empty_split(self):
        with pytest.raises(DataError):
            train([], MODEL, TrainConfig())

    @pytest.mark.parametrize("kw", [dict(lam=-1.0), dict(fp_iterations=0), dict(batch_size=2),
                                    dict(epochs=0), dict(base_lr=0.0)])
    def test_config_validation(self, kw):
        with pytest.raises(ConfigError):
            TrainConfig(**kw)


class TestFiles:
    def test_model_roundtrip(self, tmp_path):
        params = FlowModel(MODEL).init(4)
        save_model(tmp_path / "m.bin", params, MODEL)
        back, cfg = load_model(tmp_path / "m.bin")
        assert cfg == MODEL
        assert all(np.array_equal(params[k], back[k]) for k in params)

    def test_model_shape_mismatch(self, tmp_path):
        params = FlowModel(MODEL).init(4)
        save_model(tmp_path / "m.bin", params, ModelConfig(N=16, L=2, C=2, kind="gine"))
        with pytest.raises(DataError):
            load_model(tmp_path / "m.bin")

    def test_save_run(self, graphs, tmp_path):
        res = train(graphs[:2], MODEL, TrainConfig(epochs=1))
        out = save_run(tmp_path / "run", res, MODEL)
        assert {p.name for p in out.iterdir()} == {"params.bin", "last.bin", "adam.bin"}

    def test_run_config(self, tmp_path):
        path = tmp_path / "run.json"
        path.write_text(json.dumps({
            "model": {"kind": "gen", "N": 16, "L": 4, "C": 2, "heads": 2},
            "train": {"lr": 1e-3, "decay": 0.9, "epochs": 5, "lambda": 0.5, "seed": 2,
                      "fp_iterations": 10},
            "data": {"dataset": "ds", "split": "train"},
        }))
        rc = RunConfig.load(path)
        assert rc.model.kind == "gen" and rc.model.fp_iterations == 10
        assert rc.train.lam == 0.5 and rc.train.base_lr == 1e-3 and rc.dataset == "ds"
        assert RunConfig.from_dict(rc.to_dict()) == rc

    @pytest.mark.parametrize("raw", [{"optim": {}}, {"model": {"width": 3}}, {"train": {"gamma": 1}}])
    def test_run_config_rejects_unknown(self, raw):
        with pytest.raises(ConfigError):
            RunConfig.from_dict(raw)
