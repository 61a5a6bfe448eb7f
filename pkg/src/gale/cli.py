"""``gale`` command-line interface."""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from .bundle import read_bundle, write_bundle
from .errors import ConfigError, GaleError
from .layers import LayerKind, count_params
from .mesh import add_perimeter_edges, cells_to_graph, chord_endpoints, parse_mesh, truncate_to_radius
from .metrics import Prediction, export_fields, rmse_global
from .model import FlowModel, ModelConfig, prepare
from .reversible import ProcessorConfig, peak_activation_count
from .synth import Dataset, make_dataset
from .training import RunConfig, TrainConfig, load_model, save_run, train

log = logging.getLogger("gale")


def _int_list(text: str) -> list[int]:
    try:
        return [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _threads() -> int:
    raw = os.environ.get("GALE_THREADS", "1")
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"GALE_THREADS must be an integer, got {raw!r}") from None
    return max(1, n)


# ---------------------------------------------------------------------------
# subcommands


def cmd_gen(args) -> int:
    split = tuple(float(x) for x in args.split.split(","))
    ds = make_dataset(args.n, args.seed, args.out, split=split, rings=args.rings, sectors=args.sectors)
    counts = {k: len(v) for k, v in ds.manifest["splits"].items()}
    print(f"wrote {args.n} cases to {args.out} ({counts})")
    return 0


def cmd_parse(args) -> int:
    mesh = parse_mesh(Path(args.mesh).read_text(encoding="utf-8"))
    if args.chord is not None:
        chord = args.chord
    else:
        air = mesh.vertices[np.unique(mesh.patch("airfoil").faces)]
        le, te = chord_endpoints(air)
        chord = float(np.linalg.norm(te - le))
    g = cells_to_graph(mesh, chord, global_true=(args.U, args.alpha, args.TI),
                       case_id=args.case_id or Path(args.mesh).stem, rho=args.rho,
                       require_targets=not args.no_targets)
    if args.truncate is not None:
        g = truncate_to_radius(g, args.truncate)
    if not args.no_perimeter:
        g = add_perimeter_edges(g)
    write_bundle(g, args.out)
    print(f"{g.n_nodes} nodes, {g.n_edges} directed edges -> {args.out}")
    return 0


def _run_config(args) -> RunConfig:
    if args.config:
        rc = RunConfig.load(args.config)
    else:
        rc = RunConfig(ModelConfig(), TrainConfig())
    m, t = rc.model.to_dict(), {k: getattr(rc.train, k) for k in TrainConfig.__dataclass_fields__}
    for key in ("kind", "N", "L", "C", "heads"):
        if getattr(args, key) is not None:
            m[key] = getattr(args, key)
    if args.no_context:
        m["use_context"] = False
    if args.fluid_only:
        m["fluid_only_loss"] = True
    for key, attr in (("epochs", "epochs"), ("lam", "lam"), ("base_lr", "lr"), ("seed", "seed")):
        if getattr(args, attr) is not None:
            t[key] = getattr(args, attr)
    tc = TrainConfig(**t)
    m["fp_iterations"] = tc.fp_iterations
    return RunConfig(ModelConfig(**m), tc, args.data or rc.dataset, rc.split)


def cmd_train(args) -> int:
    rc = _run_config(args)
    if not rc.dataset:
        raise ConfigError("no dataset given (use --data or the run config's data.dataset)")
    ds = Dataset.open(rc.dataset)
    tr, va = ds.graphs(rc.split), ds.graphs("val") if "val" in ds.manifest["splits"] else []
    seeds = args.seeds or [rc.train.seed]
    out = Path(args.out)
    for seed in seeds:
        tc = TrainConfig(**{**{k: getattr(rc.train, k) for k in TrainConfig.__dataclass_fields__},
                            "seed": seed})
        run_dir = out if len(seeds) == 1 else out / f"seed_{seed}"
        run_dir.mkdir(parents=True, exist_ok=True)
        res = train(tr, rc.model, tc, va, trace_path=run_dir / "trace.csv")
        save_run(run_dir, res, rc.model)
        cfg = RunConfig(rc.model, tc, rc.dataset, rc.split).to_dict()
        (run_dir / "config.json").write_text(json.dumps(cfg, indent=2, sort_keys=True) + "\n",
                                             encoding="utf-8")
        el = res.epoch_losses()
        print(f"seed {seed}: {len(res.trace)} steps, loss {el[0]:.4g} -> {el[-1]:.4g}, "
              f"best epoch {res.best_epoch}, saved {run_dir / 'params.bin'}")
    return 0


def predict_all(params, cfg: ModelConfig, graphs) -> dict:
    """Predictions keyed by case id; cases run on ``GALE_THREADS`` workers."""
    model = FlowModel(cfg)

    def one(g):
        fields, ctx = model.predict(params, prepare(g, cfg))
        return g.meta.case_id, Prediction(fields, ctx)

    with ThreadPoolExecutor(max_workers=_threads()) as pool:
        return dict(pool.map(one, graphs))


def cmd_eval(args) -> int:
    graphs = Dataset.open(args.data).graphs(args.split)
    reports = []
    for path in args.model:
        params, cfg = load_model(path)
        reports.append(rmse_global(predict_all(params, cfg, graphs), graphs, pooled=args.pooled))
    rows = [list(r.rows()) for r in reports]
    names = [n for n, _ in rows[0]]
    vals = np.array([[v for _, v in r] for r in rows])
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("metric", "mean", "std", "runs"))
        for j, name in enumerate(names):
            col = vals[:, j]
            if np.all(np.isnan(col)):
                w.writerow((name, "", "", len(col)))
            else:
                w.writerow((name, repr(float(np.nanmean(col))), repr(float(np.nanstd(col))), len(col)))
    if len(reports) == 1:
        print(reports[0].table())
    else:
        width = max(len(n) for n in names)
        print(f"{'metric':<{width}}  mean        std")
        for j, name in enumerate(names):
            print(f"{name:<{width}}  {np.nanmean(vals[:, j]):<10.6g}  {np.nanstd(vals[:, j]):.3g}")
    print(f"metrics for {len(graphs)} cases x {len(reports)} model(s) -> {out}")
    return 0


def cmd_reconstruct(args) -> int:
    params, cfg = load_model(args.model)
    if args.bundle:
        g = read_bundle(args.bundle)
    else:
        if not (args.data and args.case):
            raise ConfigError("give either --bundle or both --data and --case")
        g = read_bundle(Path(args.data) / args.case)
    fields, ctx = FlowModel(cfg).predict(params, prepare(g, cfg))
    files = export_fields(g, fields, args.out, ctx)
    print(f"U_inf {ctx.U_inf_pred:.4g} m/s, alpha {ctx.alpha_pred:.4g} deg, TI {ctx.TI_pred:.4g}")
    print("wrote " + ", ".join(str(f) for f in files))
    return 0


def cmd_params(args) -> int:
    cfg = ModelConfig(**{k: v for k, v in (("kind", args.kind), ("N", args.N), ("L", args.L),
                                           ("C", args.C), ("heads", args.heads)) if v is not None})
    model = FlowModel(cfg)
    groups = {}
    for name, shape in model.shapes().items():
        key = ".".join(name.split(".")[:2]) if not name.startswith("proc.layer") else "proc.kernels"
        groups[key] = groups.get(key, 0) + int(np.prod(shape))
    kernel = count_params(cfg.layer_kind, cfg.N // cfg.C)
    print(f"config: kind={cfg.kind} N={cfg.N} L={cfg.L} C={cfg.C}")
    for key in sorted(groups):
        print(f"  {key:<16} {groups[key]:>9,d}")
    print(f"  {'per kernel f_wk':<16} {kernel:>9,d}  ({cfg.L * cfg.C} kernels)")
    print(f"  {'total':<16} {model.count():>9,d}")
    return 0


def cmd_membench(args) -> int:
    kind = LayerKind(args.kind)
    rows = []
    for L in args.L:
        cfg = ProcessorConfig(L=L, C=args.C, N=args.N, kind=kind)
        rev = peak_activation_count(cfg, args.nodes, seed=args.seed)
        ref = peak_activation_count(cfg, args.nodes, seed=args.seed, stored=True)
        rows.append((L, args.C, args.N, args.nodes, rev.peak, rev.peak_bytes, ref.peak, ref.peak_bytes))
    header = ("L", "C", "N", "nodes", "rev_peak", "rev_peak_bytes", "stored_peak", "stored_peak_bytes")
    w = csv.writer(sys.stdout, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    if args.out:
        with open(args.out, "w", newline="", encoding="utf-8") as fh:
            cw = csv.writer(fh, lineterminator="\n")
            cw.writerow(header)
            cw.writerows(rows)
    return 0


# ---------------------------------------------------------------------------


def _model_flags(p, defaults=False):
    p.add_argument("--kind", choices=("gat", "gine", "gen"), default="gat" if defaults else None)
    p.add_argument("--N", type=int, default=128 if defaults else None)
    p.add_argument("--L", type=int, default=30 if defaults else None)
    p.add_argument("--C", type=int, default=4 if defaults else None)
    p.add_argument("--heads", type=int)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="gale", description=__doc__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", metavar="COMMAND")

    p = sub.add_parser("gen", help="generate a synthetic potential-flow dataset")
    p.add_argument("--n", "--cases", dest="n", type=int, required=True, help="number of cases")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--rings", type=int, default=48)
    p.add_argument("--sectors", type=int, default=64)
    p.add_argument("--split", default="0.8,0.1,0.1")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("parse", help="convert a mesh file into a graph bundle")
    p.add_argument("mesh")
    p.add_argument("--out", required=True)
    p.add_argument("--chord", type=float, help="chord length (default: airfoil extent)")
    p.add_argument("--truncate", type=float, help="truncation radius in chords")
    p.add_argument("--U", type=float, default=0.0)
    p.add_argument("--alpha", type=float, default=0.0)
    p.add_argument("--TI", type=float, default=0.0)
    p.add_argument("--rho", type=float, default=1.225)
    p.add_argument("--case-id")
    p.add_argument("--no-targets", action="store_true", help="mesh carries no cell fields")
    p.add_argument("--no-perimeter", action="store_true", help="skip Wall perimeter edges")
    p.set_defaults(func=cmd_parse)

    p = sub.add_parser("train", help="train a model")
    p.add_argument("--config", help="JSON run configuration")
    p.add_argument("--data")
    p.add_argument("--out", required=True)
    _model_flags(p)
    p.add_argument("--epochs", type=int)
    p.add_argument("--lam", type=float)
    p.add_argument("--lr", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--seeds", type=_int_list, help="comma-separated seeds, one run each")
    p.add_argument("--no-context", action="store_true", help="ablate the input context")
    p.add_argument("--fluid-only", action="store_true", help="node loss over Fluid nodes only")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="compute test-set metrics")
    p.add_argument("--model", action="append", required=True, help="model file (repeat to average runs)")
    p.add_argument("--data", required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--out", default="metrics.csv")
    p.add_argument("--pooled", action="store_true", help="pool nodes across cases")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("reconstruct", help="export predicted fields for one case")
    p.add_argument("--model", required=True)
    p.add_argument("--bundle")
    p.add_argument("--data")
    p.add_argument("--case")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_reconstruct)

    p = sub.add_parser("params", help="report trainable parameter counts")
    _model_flags(p)
    p.set_defaults(func=cmd_params)

    p = sub.add_parser("membench", help="peak retained activations versus depth")
    p.add_argument("--L", type=_int_list, default=[10, 50])
    p.add_argument("--C", type=int, default=4)
    p.add_argument("--N", type=int, default=32)
    p.add_argument("--kind", choices=("gat", "gine", "gen"), default="gine")
    p.add_argument("--nodes", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_membench)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    if args.command is None:
        ap.print_usage(sys.stderr)
        return 2
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except GaleError as exc:
        print(f"gale {args.command}: error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"gale {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
