"""Command-line entry point: ``stochlod <subcommand> [options]``.

Every subcommand writes into a staging directory next to the output
directory and moves its files over only on success, so a failed run leaves
no partial outputs behind.  Each run records the resolved configuration in
``run.json``.
"""
from __future__ import annotations

import argparse
import csv
import logging
import os
import shutil
import sys
from pathlib import Path

import numpy as np

from . import fem, lod, mlp, pipeline, storage
from .config import ConfigError, ExperimentConfig, apply_override
from .grid import build_coarse_grid, build_fine_grid
from .randfield import EmbeddingError, contrast

EXIT_OK, EXIT_USAGE, EXIT_NUMERICAL = 0, 1, 2
SOLVERS = ("fem", "pglod", "nnlod")

log = logging.getLogger("stochlod")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON experiment config")
    p.add_argument("--seed", type=int, help="root seed (overrides config)")
    p.add_argument("--workers", type=int, help="worker processes (default: available CPUs)")
    p.add_argument("--deterministic", action="store_true", help="single-threaded, bitwise reproducible")
    p.add_argument("--out", help="output directory (fallback: $STOCHLOD_OUT, then ./out)")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override a config value, e.g. grid.H=0.125 (repeatable)")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="stochlod", description="Neural-network surrogates for PG-LOD on random coefficients")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("sample", help="draw coefficient realizations")
    _common(p)
    p.add_argument("--count", type=int, default=1)
    p.add_argument("--branch", type=int, default=pipeline.FRESH_BRANCH)

    p = sub.add_parser("gen-dataset", help="generate input/target pairs")
    _common(p)

    p = sub.add_parser("pretrain", help="train the warm-start network on uniform coefficients")
    _common(p)

    p = sub.add_parser("train", help="train on a generated dataset")
    _common(p)
    p.add_argument("--dataset", required=True)
    p.add_argument("--warm-start", help="checkpoint to initialize from")

    p = sub.add_parser("eval", help="compare NN-LOD and PG-LOD on fresh realizations")
    _common(p)
    p.add_argument("--model", required=True, help="checkpoint path, or 'oracle'")
    p.add_argument("--fresh-seeds", type=int, help="number of fresh realizations")
    p.add_argument("--dataset", help="dataset for the test loss")
    p.add_argument("--no-fem", action="store_true", help="skip the fine FEM reference")

    p = sub.add_parser("mc", help="Monte Carlo mean solutions")
    _common(p)
    p.add_argument("--samples", type=int)
    p.add_argument("--solvers", help="comma-separated subset of fem,pglod,nnlod")
    p.add_argument("--model", help="checkpoint for nnlod")

    p = sub.add_parser("convergence", help="PG-LOD vs FEM error over coarse mesh sizes")
    _common(p)
    p.add_argument("--H", default="0.25,0.125,0.0625", help="comma-separated coarse mesh sizes")

    p = sub.add_parser("decay", help="corrector error against patch size")
    _common(p)
    p.add_argument("--element", type=int, help="element index (default: central element)")
    return parser


def resolve_config(args) -> ExperimentConfig:
    cfg = ExperimentConfig.load(args.config) if args.config else ExperimentConfig()
    for item in args.set:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not KEY=VALUE")
        key, raw = item.split("=", 1)
        apply_override(cfg, key.strip(), raw)
    if args.seed is not None:
        cfg.seed = args.seed
    if getattr(args, "warm_start", None):
        cfg.training.warm_start = args.warm_start
    # re-validate, also normalising overridden values through the strict loader
    return ExperimentConfig.from_dict(cfg.to_dict())


def resolve_workers(args) -> int:
    if args.deterministic:
        return 1
    if args.workers is not None:
        if args.workers < 1:
            raise UsageError("--workers must be >= 1")
        return args.workers
    return len(os.sched_getaffinity(0)) if hasattr(os, "sched_getaffinity") else (os.cpu_count() or 1)


def resolve_out(args) -> Path:
    return Path(args.out or os.environ.get("STOCHLOD_OUT") or "out")


def _load_model(path):
    if path == "oracle":
        return "oracle"
    model, _, header = mlp.load_checkpoint(path)
    return model


# -- subcommands ------------------------------------------------------------

def cmd_sample(cfg, args, stage: Path, workers: int) -> dict:
    sc = pipeline.scales(cfg)
    rows = []
    for i in range(args.count):
        kappa, z = pipeline.sample_z(cfg, args.branch, i)
        a = np.exp(z.values)
        storage.write_array(stage / f"gaussian_{i:04d}", z.values,
                            {"grid_n": sc.eps_grid.n, "kappa": kappa, "index": i, "branch": args.branch})
        rows.append([i, repr(kappa), repr(contrast(a))])
    with open(stage / "samples.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["realization", "kappa", "contrast"])
        w.writerows(rows)
    return {"count": args.count}


def cmd_gen_dataset(cfg, args, stage, workers) -> dict:
    man = pipeline.generate_dataset(cfg, stage, workers)
    return {"n_pairs": man["n_pairs"],
            "split": {s: man["splits"][s]["realizations"] for s in pipeline.SPLITS}}


def cmd_pretrain(cfg, args, stage, workers) -> dict:
    _, trace, ckpt = pipeline.pretrain_uniform(cfg, stage, workers, log_fn=log.info)
    return {"checkpoint": ckpt.name, "final_train_loss": trace.train_loss[-1]}


def cmd_train(cfg, args, stage, workers) -> dict:
    model, state, trace = pipeline.train_on_dataset(cfg, args.dataset, log_fn=log.info)
    mlp.save_checkpoint(stage / "model.ckpt", model, state)
    trace.to_csv(stage / "loss_trace.csv")
    return {"checkpoint": "model.ckpt", "warm_start": cfg.training.warm_start or "fresh",
            "final_train_loss": trace.train_loss[-1]}


def cmd_eval(cfg, args, stage, workers) -> dict:
    model = _load_model(args.model)
    report = pipeline.evaluate(cfg, model, args.fresh_seeds, args.dataset, with_fem=not args.no_fem)
    report.to_csv(stage / "eval.csv")
    report.to_json(stage / "eval.json")
    for i, cols in enumerate(report.sections):
        coord = next(iter(cols.values()))["coordinate"]
        for axis in ("x1", "x2"):
            pipeline.write_sections(stage / f"cross_{axis}_{i:04d}.csv", coord,
                                    {s: v[axis] for s, v in cols.items()})
    return {"model": str(args.model), "rows": len(report.rows)}


def cmd_mc(cfg, args, stage, workers) -> dict:
    solvers = args.solvers.split(",") if args.solvers else list(cfg.mc.solvers)
    bad = [s for s in solvers if s not in SOLVERS]
    if bad:
        raise UsageError(f"unknown solver(s) {bad}; choose from {list(SOLVERS)}")
    model = _load_model(args.model) if args.model else None
    if "nnlod" in solvers and model is None:
        raise UsageError("--model is required for the nnlod solver")
    res = pipeline.monte_carlo_mean(cfg, args.samples, solvers, model, workers)
    sections = res.sections()
    coord = next(iter(sections.values()))["coordinate"]
    for s in solvers:
        storage.write_array(stage / f"mean_{s}", res.means[s], {"solver": s, "n_samples": res.n_samples})
        for axis in ("x1", "x2"):
            pipeline.write_sections(stage / f"mc_{s}_{axis}.csv", coord, {s: sections[s][axis]})
    for axis in ("x1", "x2"):
        pipeline.write_sections(stage / f"mc_cross_{axis}.csv", coord,
                                {s: sections[s][axis] for s in solvers})
    return {"n_samples": res.n_samples, "solvers": solvers}


def cmd_convergence(cfg, args, stage, workers) -> dict:
    """Coarse L2 distance between PG-LOD and the fine FEM solution at coarse nodes."""
    _, z = pipeline.sample_z(cfg, pipeline.FRESH_BRANCH, 0)
    a_cells = np.exp(z.values)
    base = pipeline.scales(cfg)
    a_fine = pipeline.fine_coefficient(base, a_cells)
    rows = []
    for H in (float(v) for v in args.H.split(",")):
        if not H > cfg.grid.h:
            raise UsageError(f"H={H} must exceed h={cfg.grid.h}")
        coarse = build_coarse_grid(H, cfg.grid.d)
        fine = build_fine_grid(coarse, cfg.grid.h)
        u_fem = fem.solve_fem(fine, a_fine, cfg.grid.f).at_coarse_nodes()
        u_pg, _, _ = lod.pglod_solution(coarse, fine, a_fine, cfg.grid.ell, cfg.grid.f)
        err = pipeline.coarse_l2(u_pg - u_fem, coarse)
        rows.append([repr(H), cfg.grid.ell, repr(err), repr(err / pipeline.coarse_l2(u_fem, coarse))])
    with open(stage / "convergence.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["H", "ell", "l2_error", "rel_l2_error"])
        w.writerows(rows)
    return {"levels": len(rows)}


def cmd_decay(cfg, args, stage, workers) -> dict:
    sc = pipeline.scales(cfg)
    n = sc.coarse.n
    T = args.element if args.element is not None else (n // 2) * n + n // 2
    if not 0 <= T < sc.coarse.n_elements:
        raise UsageError(f"--element must be in [0, {sc.coarse.n_elements})")
    _, z = pipeline.sample_z(cfg, pipeline.FRESH_BRANCH, 0)
    a_fine = pipeline.fine_coefficient(sc, np.exp(z.values))
    table = lod.corrector_decay(sc.coarse, sc.fine, a_fine, T)
    with open(stage / "decay.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["ell", "abs_error", "rel_error"])
        w.writerows([k, repr(e), repr(r)] for k, e, r in table)
    return {"element": int(T)}


COMMANDS = {
    "sample": cmd_sample,
    "gen-dataset": cmd_gen_dataset,
    "pretrain": cmd_pretrain,
    "train": cmd_train,
    "eval": cmd_eval,
    "mc": cmd_mc,
    "convergence": cmd_convergence,
    "decay": cmd_decay,
}


def _publish(stage: Path, out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    for entry in stage.iterdir():
        dest = out / entry.name
        if dest.is_dir():
            shutil.rmtree(dest)
        elif dest.exists():
            dest.unlink()
        shutil.move(str(entry), str(dest))
    stage.rmdir()


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
        workers = resolve_workers(args)
    except (ConfigError, UsageError, OSError, ValueError) as exc:
        print(f"stochlod: error: {exc}", file=sys.stderr)
        return EXIT_USAGE

    out = resolve_out(args)
    stage = out.parent / f".{out.name}.{args.command}.partial"
    if stage.exists():
        shutil.rmtree(stage)
    stage.mkdir(parents=True)
    try:
        summary = COMMANDS[args.command](cfg, args, stage, workers)
        storage.write_json(stage / f"run_{args.command}.json", {
            "command": args.command,
            "argv": list(sys.argv[1:] if argv is None else argv),
            "workers": workers,
            "summary": summary,
            "config": cfg.to_dict(),
        })
        _publish(stage, out)
    except (UsageError, ConfigError, mlp.CheckpointError, FileNotFoundError) as exc:
        shutil.rmtree(stage, ignore_errors=True)
        print(f"stochlod: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (fem.SolverError, lod.CorrectorError, EmbeddingError, mlp.TrainingError,
            FloatingPointError, np.linalg.LinAlgError) as exc:
        shutil.rmtree(stage, ignore_errors=True)
        print(f"stochlod: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except BaseException:
        shutil.rmtree(stage, ignore_errors=True)
        raise
    print(f"{args.command}: wrote {out}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
