"""Command-line entry point: ``rfdg <command> [options]``.

Exit codes: 0 success, 1 usage / configuration error, 2 data error,
3 numerical failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from ..datastore import load_container, lodo_folds, save_container
from ..errors import ConfigError, DataError, NumericalError
from ..model import ModelConfig, load_checkpoint, save_checkpoint
from ..signal_sim import simulate
from ..trainer import train, train_erm_t
from .config import RunConfig, build_config, load_config
from .experiments import (
    ABLATION_VARIANTS,
    benchmark_inference,
    dgar_method,
    erm_method,
    run_ablation,
    run_lodo,
    run_sweep,
)
from .gradcheck_suite import run_suite
from .report import write_bench, write_csv, write_history, write_lodo, write_summary, write_sweep

log = logging.getLogger("rfdg")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERICAL = 0, 1, 2, 3
GRADCHECK_TOL = 1e-5


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _globals(p, suppress):
    d = argparse.SUPPRESS if suppress else None
    p.add_argument("--config", default=d, help="YAML or JSON run configuration")
    p.add_argument("--seed", type=int, default=d, help="overrides simulation and training seeds")
    p.add_argument("--out", default=d, help="output directory (default: ./out)")
    p.add_argument("--dtype", choices=("f32", "f64"), default=d, help="training precision")
    p.add_argument("-v", "--verbose", action="store_true", default=d if suppress else False)


def _fold_arg(p):
    p.add_argument("--fold", default="T-1", help="fold name T-i (held-out domain i)")


def build_parser():
    parser = _Parser(prog="rfdg", description="Domain-generalized RF activity recognition lab")
    _globals(parser, suppress=False)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def cmd(name, help_):
        p = sub.add_parser(name, help=help_)
        _globals(p, suppress=True)
        return p

    p = cmd("simulate", "generate a synthetic dataset container")
    p.add_argument("--modality", choices=("ofdm", "lfm"))
    p.add_argument("--domains", type=int)
    p.add_argument("--samples-per-class", type=int)
    p.add_argument("--spread", type=float)

    p = cmd("train", "train one fold; writes checkpoint and history")
    p.add_argument("--data", required=True)
    _fold_arg(p)
    p.add_argument("--method", choices=("dgar", "erm", "erm-t"), default="dgar")

    p = cmd("eval", "score a checkpoint on a fold's held-out domain")
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint", required=True)
    _fold_arg(p)

    p = cmd("lodo", "leave-one-domain-out run for one or more methods")
    p.add_argument("--data", required=True)
    p.add_argument("--methods", default="DGAR,ERM", help="comma list of DGAR, ERM")

    p = cmd("ablate", "loss-term variants and alignment swaps")
    p.add_argument("--data", required=True)
    p.add_argument("--no-swaps", action="store_true")

    p = cmd("sweep", "lambda x gamma grid")
    p.add_argument("--data", required=True)
    p.add_argument("--lambdas", help="comma list, overrides experiment.lambda_grid")
    p.add_argument("--gammas", help="comma list, overrides experiment.gamma_grid")

    p = cmd("gradcheck", "finite-difference suite over all primitives and losses")
    p.add_argument("--seeds", type=int, default=20)

    p = cmd("bench", "inference time / throughput / accuracy per checkpoint")
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint", action="append", required=True, metavar="NAME=DIR")
    _fold_arg(p)

    p = cmd("report", "merge LODO CSVs into a per-fold summary")
    p.add_argument("inputs", nargs="+", help="CSV files written by lodo / ablate")
    p.add_argument("--metric", default="f1", choices=("accuracy", "precision", "recall", "f1"))
    return parser


# -- helpers ------------------------------------------------------------------------


def _run_config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else build_config({})
    if args.seed is not None:
        cfg.sim = replace(cfg.sim, seed=args.seed)
        cfg.train = replace(cfg.train, seed=args.seed)
        cfg.experiment = replace(cfg.experiment, seeds=[args.seed])
    if args.dtype:
        cfg.train = replace(cfg.train, dtype=args.dtype)
    return cfg


def _out(args):
    out = Path(args.out or "out")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _fold(container, name, cfg):
    folds = {f.name: f for f in lodo_folds(container, cfg.experiment.val_fraction, cfg.experiment.split_seed)}
    if name not in folds:
        raise ConfigError(f"unknown fold {name!r}; available: {sorted(folds)}")
    return folds[name]


def _floats(text):
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"expected a comma list of numbers, got {text!r}") from None


def _echo(obj):
    print(json.dumps(obj, indent=2, default=str))


# -- commands ----------------------------------------------------------------------


def cmd_simulate(args, cfg):
    sim = cfg.sim
    for flag, key in (("modality", "modality"), ("domains", "n_domains"),
                      ("samples_per_class", "samples_per_class"), ("spread", "spread")):
        if getattr(args, flag) is not None:
            sim = replace(sim, **{key: getattr(args, flag)})
    container = simulate(sim)
    path = save_container(container, _out(args))
    _echo({"container": str(path), "records": len(container), "shape": list(container.shape),
           "domain_counts": container.domain_counts()})


def cmd_train(args, cfg):
    container = load_container(args.data)
    out = _out(args)
    D, L = container.shape
    if args.method == "erm-t":
        target = int(args.fold.split("-")[-1]) if args.fold.startswith("T-") else int(args.fold)
        target = container.domains[target - 1]
        mc = ModelConfig(in_channels=D, seq_len=L, n_classes=container.n_classes, **cfg.model)
        model, met, history = train_erm_t(container, target, mc, cfg.train)
        write_csv([{"method": "ERM-T", "fold": args.fold, **met.row()}], out / "metrics.csv")
    else:
        fold = _fold(container, args.fold, cfg)
        method = erm_method(cfg.train, **cfg.model) if args.method == "erm" else dgar_method(cfg.train, **cfg.model)
        K = 1 if method.is_erm() else fold.n_sources
        mc = ModelConfig(in_channels=D, seq_len=L, n_classes=container.n_classes, n_adapters=K, **cfg.model)
        model, history = train(container, fold, mc, method.train)
    save_checkpoint(model, out / "checkpoint")
    write_history(history, out)
    _echo({"checkpoint": str(out / "checkpoint"), "epochs": len(history), "best_epoch": history.best_epoch})


def cmd_eval(args, cfg):
    from ..trainer import evaluate

    container = load_container(args.data)
    model = load_checkpoint(args.checkpoint)
    fold = _fold(container, args.fold, cfg)
    met = evaluate(model, container, fold.test_ids)
    write_csv([{"fold": fold.name, **met.row()}], _out(args) / "eval.csv")
    _echo({"fold": fold.name, **met.row()})


def cmd_lodo(args, cfg):
    container = load_container(args.data)
    makers = {"DGAR": dgar_method, "ERM": erm_method}
    reports = []
    for name in [m.strip() for m in args.methods.split(",") if m.strip()]:
        if name.upper() not in makers:
            raise ConfigError(f"unknown method {name!r}; valid: {sorted(makers)}")
        method = makers[name.upper()](cfg.train, **cfg.model)
        reports.append(run_lodo(container, method, cfg.experiment.seeds, val_fraction=cfg.experiment.val_fraction,
                                split_seed=cfg.experiment.split_seed))
    csv_path, fig = write_lodo(reports, _out(args))
    _echo({"csv": str(csv_path), "figure": str(fig), "average_f1": {r.method: r.metric() for r in reports}})


def cmd_ablate(args, cfg):
    container = load_container(args.data)
    swaps = cfg.experiment.swaps and not args.no_swaps
    reports = run_ablation(container, cfg.train, cfg.experiment.seeds, swaps=swaps, **cfg.model)
    csv_path, fig = write_lodo(reports, _out(args), name="ablation")
    _echo({"csv": str(csv_path), "figure": str(fig), "variants": list(ABLATION_VARIANTS),
           "average_f1": {k: r.metric() for k, r in reports.items()}})


def cmd_sweep(args, cfg):
    container = load_container(args.data)
    lams = _floats(args.lambdas) if args.lambdas else cfg.experiment.lambda_grid
    gams = _floats(args.gammas) if args.gammas else cfg.experiment.gamma_grid
    result = run_sweep(container, lams, gams, cfg.train, cfg.experiment.seeds, **cfg.model)
    csv_path, fig = write_sweep(result, _out(args))
    _echo({"csv": str(csv_path), "figure": str(fig), "shape": list(result.surface.shape)})


def cmd_gradcheck(args, cfg):
    rows = run_suite(seeds=range(args.seeds))
    write_csv(rows, _out(args) / "gradcheck.csv")
    worst = max(rows, key=lambda r: r["max_rel_error"])
    for r in rows:
        status = "ok" if r["max_rel_error"] < GRADCHECK_TOL else "FAIL"
        print(f"{status:4s} {r['check']:32s} {r['max_rel_error']:.3e}")
    if worst["max_rel_error"] >= GRADCHECK_TOL:
        raise NumericalError(f"gradient check failed for {worst['check']}: {worst['max_rel_error']:.3e}")


def cmd_bench(args, cfg):
    container = load_container(args.data)
    fold = _fold(container, args.fold, cfg)
    rows = []
    for spec in args.checkpoint:
        name, sep, path = spec.partition("=")
        if not sep:
            name, path = Path(spec).name, spec
        model = load_checkpoint(path)
        rows.append(benchmark_inference(model, container, fold.test_ids, cfg.experiment.n_runs, name))
    csv_path, fig = write_bench(rows, _out(args))
    _echo({"csv": str(csv_path), "figure": str(fig), "rows": rows})


def cmd_report(args, cfg):
    csv_path, txt, fig = write_summary(args.inputs, _out(args), args.metric)
    print(txt.read_text(), end="")


COMMANDS = {
    "simulate": cmd_simulate, "train": cmd_train, "eval": cmd_eval, "lodo": cmd_lodo,
    "ablate": cmd_ablate, "sweep": cmd_sweep, "gradcheck": cmd_gradcheck, "bench": cmd_bench,
    "report": cmd_report,
}


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
    except UsageError as e:
        print(str(e), file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        COMMANDS[args.command](args, _run_config(args))
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except NumericalError as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERICAL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
