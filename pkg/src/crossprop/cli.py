"""Command-line entry point: ``crossprop {run-geoff,run-mnist,grad-check,export-features,gen-config}``.

Every config key is also a flag; flags override the config file, which
overrides built-in defaults. Exit codes: 0 success, 2 config error,
3 data/parse error, 4 divergence, 5 output could not be written.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np

from .config import (ConfigError, ExperimentConfig, bundled_configs, config_from_values,
                     format_value, parse_value, read_config_values)
from .harness import (ScaledDerivative, build_stream, export_features, grad_check, run_experiment,
                      run_single, write_features, write_results)
from .mnist import IdxParseError
from .net import ActivationKind, Identity, NetShape

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_DIVERGED, EXIT_OUTPUT = 0, 2, 3, 4, 5
OUTPUT_ENV = "CROSSPROP_OUTPUT_DIR"
GRAD_TOLERANCE = 1e-6
MAX_CHECK_SIZE = 8

log = logging.getLogger("crossprop")


def _add_config_flags(p: argparse.ArgumentParser):
    g = p.add_argument_group("config keys (override the config file)")
    for f in fields(ExperimentConfig):
        g.add_argument(f"--{f.name.replace('_', '-')}", dest=f"cfg_{f.name}", metavar="VALUE",
                       help=f"default: {format_value(f.name, f.default)}")


def _overrides(args) -> dict:
    out = {}
    for f in fields(ExperimentConfig):
        v = getattr(args, f"cfg_{f.name}", None)
        if v is not None:
            out[f.name] = parse_value(f.name, v)
    return out


def _resolve_config(args, problem: str) -> ExperimentConfig:
    values = read_config_values(args.config)
    over = _overrides(args)
    # a new shift list without a new schedule reuses the first task's length
    if "shifts" in over and "tasks" not in over:
        tasks = values.get("tasks", ExperimentConfig.tasks)
        count = tasks[0][1] if tasks else 0
        over["tasks"] = tuple((chr(ord("A") + i), count) for i in range(len(over["shifts"])))
    values.update(over)
    config = config_from_values(values)
    if config.problem != problem:
        raise ConfigError(f"config describes a {config.problem} experiment, not {problem}")
    return config


def _out_dir(args, problem: str) -> Path:
    if args.out:
        return Path(args.out)
    return Path(os.environ.get(OUTPUT_ENV, "results")) / problem


def _run(args, problem: str) -> int:
    config = _resolve_config(args, problem)
    out = _out_dir(args, problem)
    result = run_experiment(config, parallel=args.parallel)
    try:
        out.mkdir(parents=True, exist_ok=True)
        write_results(result, out)
    except OSError as e:
        log.error("cannot write results to %s: %s", out, e)
        return EXIT_OUTPUT
    for label, runs in result.runs.items():
        agg = result.aggregate(label)
        tail = f"final-bin error {agg.mean[-1]:.4g}" if len(agg.mean) else "no examples"
        print(f"{label}: {len(runs)} run(s), {tail}")
    if result.diverged:
        for s in result.diverged:
            log.error("%s seed %d diverged at example %s", s.optimizer, s.seed, s.diverged_at)
        return EXIT_DIVERGED
    print(f"results written to {out}")
    return EXIT_OK


def cmd_run_geoff(args) -> int:
    return _run(args, "geoff")


def cmd_run_mnist(args) -> int:
    return _run(args, "mnist")


def _activation(name: str):
    if name == "identity":
        return Identity()
    return ActivationKind.parse(name)


def cmd_grad_check(args) -> int:
    try:
        shape = NetShape(*(int(v) for v in args.shape.split(",")))
    except (TypeError, ValueError):
        raise ConfigError(f"--shape must be m,n,k with positive integers, got {args.shape!r}") from None
    if max(shape) > MAX_CHECK_SIZE:
        raise ConfigError(f"grad-check shapes are limited to {MAX_CHECK_SIZE} units per layer")
    if args.loss == "cross_entropy" and shape.k < 2:
        raise ConfigError("cross-entropy needs k >= 2 outputs")
    kind = _activation(args.activation)
    if args.corrupt_derivative is not None:
        kind = ScaledDerivative(kind, args.corrupt_derivative)
    if args.trials <= 0:
        log.warning("no trials requested; nothing was checked")
        return EXIT_OK
    worst = 0.0
    for t in range(args.trials):
        err = grad_check(shape, kind, args.loss, args.epsilon, seed=args.seed + t)
        worst = max(worst, err)
        print(f"trial {t}: max relative error {err:.3e}")
    ok = worst <= args.tolerance
    print(f"{'PASS' if ok else 'FAIL'}: worst {worst:.3e} (tolerance {args.tolerance:g})")
    return EXIT_OK if ok else 1


def cmd_export_features(args) -> int:
    values = read_config_values(args.config)
    values.update(_overrides(args))
    config = config_from_values(values)
    spec = next((s for s in config.optimizer_specs() if s.label == args.optimizer), None)
    if spec is None:
        raise ConfigError(f"optimizer {args.optimizer!r} is not listed in the config "
                          f"({[s.label for s in config.optimizer_specs()]})")
    seed = config.seeds[0] if args.seed is None else args.seed
    examples = build_stream(config, seed)
    run = run_single(config, spec, seed, examples=examples, keep_state=True)
    if run.summary.diverged:
        log.error("training diverged at example %s", run.summary.diverged_at)
        return EXIT_DIVERGED
    total = len(examples.X)
    if total == 0:
        raise ConfigError("the schedule has no examples to sample from")
    rng = np.random.default_rng(seed)
    idx = np.sort(rng.choice(total, size=args.count, replace=args.count > total))
    F = export_features(run.state.U, examples.X[idx], config.kind)
    labels = examples.labels[idx] if examples.labels is not None else examples.targets[idx]
    try:
        write_features(args.out, F, labels if config.problem == "mnist" else None)
    except OSError as e:
        log.error("cannot write %s: %s", args.out, e)
        return EXIT_OUTPUT
    print(f"wrote {F.shape[0]}x{F.shape[1]} activations to {args.out}")
    return EXIT_OK


def cmd_gen_config(args) -> int:
    if args.list:
        print("\n".join(bundled_configs()))
        return EXIT_OK
    values = read_config_values(args.name) if args.name else {}
    text = config_from_values(values).to_text()
    if args.out:
        try:
            Path(args.out).write_text(text)
        except OSError as e:
            log.error("cannot write %s: %s", args.out, e)
            return EXIT_OUTPUT
    else:
        sys.stdout.write(text)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="crossprop", description=__doc__.split("\n")[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    for name, fn, default in (("run-geoff", cmd_run_geoff, "paper-geoff"),
                              ("run-mnist", cmd_run_mnist, "paper-mnist")):
        p = sub.add_parser(name, help=f"run the {name[4:]} continual-learning protocol")
        p.add_argument("--config", default=default,
                       help=f"config file or bundled config name (default: {default})")
        p.add_argument("--out", help=f"output directory (default: ${OUTPUT_ENV}/{name[4:]} or results/{name[4:]})")
        p.add_argument("--parallel", type=int, default=1, metavar="N",
                       help="number of concurrent runs (default: 1)")
        _add_config_flags(p)
        p.set_defaults(func=fn)

    p = sub.add_parser("grad-check", help="compare backprop gradients with finite differences")
    p.add_argument("--shape", default="5,4,1", help="m,n,k (default: 5,4,1)")
    p.add_argument("--activation", default="tanh", choices=("tanh", "logistic", "identity"))
    p.add_argument("--loss", default="squared", choices=("squared", "cross_entropy"))
    p.add_argument("--trials", type=int, default=20, help="default: 20")
    p.add_argument("--epsilon", type=float, default=1e-5, help="finite-difference step (default: 1e-5)")
    p.add_argument("--seed", type=int, default=0, help="seed of the first trial (default: 0)")
    p.add_argument("--tolerance", type=float, default=GRAD_TOLERANCE, help=f"default: {GRAD_TOLERANCE:g}")
    p.add_argument("--corrupt-derivative", type=float, default=None, help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_grad_check)

    p = sub.add_parser("export-features", help="train one learner, then write hidden activations as CSV")
    p.add_argument("--config", default="paper-mnist",
                   help="config file or bundled config name (default: paper-mnist)")
    p.add_argument("--optimizer", default="crossprop_approx",
                   help="optimizer label from the config (default: crossprop_approx)")
    p.add_argument("--seed", type=int, default=None, help="run seed (default: first seed in the config)")
    p.add_argument("--count", type=int, default=2500, help="examples to export (default: 2500)")
    p.add_argument("--out", default="features.csv", help="output CSV (default: features.csv)")
    _add_config_flags(p)
    p.set_defaults(func=cmd_export_features)

    p = sub.add_parser("gen-config", help="print a complete config file")
    p.add_argument("name", nargs="?", help="bundled config name or config path (default: built-in defaults)")
    p.add_argument("--out", help="write to this file instead of stdout")
    p.add_argument("--list", action="store_true", help="list bundled configs")
    p.set_defaults(func=cmd_gen_config)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as e:
        log.error("config error: %s", e)
        return EXIT_CONFIG
    except IdxParseError as e:
        log.error("data error: %s", e)
        return EXIT_DATA
    except FileNotFoundError as e:
        log.error("data error: %s", e)
        return EXIT_DATA
    except ValueError as e:
        log.error("config error: %s", e)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
