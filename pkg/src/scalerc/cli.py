"""Command-line entry point: ``scalerc <command> ...``.

Every command writes its outputs through a staging directory, so a failing
run leaves no partial files, and drops a ``<output>.manifest.json`` next to
its primary output with the resolved arguments, seeds and library versions.

Exit codes: 0 success, 1 usage or configuration error, 2 numerical
divergence, 3 input/output error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import platform
import sys
from pathlib import Path
from typing import Any, Dict, Optional, Sequence

import numpy as np

from . import __version__
from .analysis import (
    ClassifierConfig,
    acf,
    bifurcation_scan,
    classify_attractor,
    delta_acf,
    divergence_rate,
    multistability_census,
    nrmse,
)
from .delayscan import scan_delay
from .desn import POST_RESCALE_DISCARD, run_closed_loop, set_delay, train
from .dynsys import (
    DivergenceError,
    IkedaParams,
    KsParams,
    MgParams,
    integrate_ikeda,
    integrate_ks,
    integrate_mackey_glass,
    ks_transient_episodes,
)
from .io import (
    FORMAT_VERSION,
    ArchiveError,
    ConfigError,
    fingerprint,
    load_config,
    load_model,
    read_field_csv,
    read_series_csv,
    save_model,
    staged_outputs,
    write_field_csv,
    write_series_csv,
    write_table_csv,
)
from .parallel import (
    KS_DESK,
    POST_SCALE_DISCARD,
    ParallelParams,
    run_closed_loop_parallel,
    scale_parallel,
    synchronize,
    train_parallel,
)
from .reservoir import IKEDA_TABLE2, MG_TABLE1, DesnParams

__all__ = ["main", "build_parser", "OUT_DIR_ENV"]

log = logging.getLogger("scalerc")

OUT_DIR_ENV = "SCALERC_OUT_DIR"
EXIT_OK, EXIT_USAGE, EXIT_DIVERGED, EXIT_IO = 0, 1, 2, 3
DESN_PRESETS = {"mg-table1": MG_TABLE1, "ikeda-table2": IKEDA_TABLE2}
KS_PRESETS = {"ks-default": KS_DESK, "ks-paper": ParallelParams()}
SYSTEMS = ("mackey-glass", "ikeda")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


# ------------------------------------------------------------- helpers

def _versions() -> Dict[str, str]:
    import numba
    import scipy

    return {
        "scalerc": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "numba": numba.__version__,
        "archive_format": str(FORMAT_VERSION),
    }


def _jsonable(value):
    if isinstance(value, Path):
        return str(value)
    if dataclasses.is_dataclass(value):
        return dataclasses.asdict(value)
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, np.generic):
        return value.item()
    return value


def _write_manifest(stage: staged_outputs, primary: str, args: argparse.Namespace,
                    extra: Optional[Dict[str, Any]] = None) -> None:
    resolved = {k: _jsonable(v) for k, v in sorted(vars(args).items()) if k != "func"}
    manifest = {
        "command": args.command,
        "arguments": resolved,
        "versions": _versions(),
        **(extra or {}),
    }
    name = Path(primary).name + ".manifest.json"
    target = Path(primary).with_name(name)
    text = json.dumps(manifest, indent=2, sort_keys=True) + "\n"
    stage.path(target).write_text(text)


def _system_params(name: str, args) -> Any:
    if name == "mackey-glass":
        return MgParams(T0=args.T0, tau=args.tau)
    if name == "ikeda":
        return IkedaParams(T0=args.T0, tau=args.tau, beta=args.feedback)
    raise UsageError(f"unknown system {name!r}")


def _load_desn(path):
    archive = load_model(path)
    if archive.kind != "desn":
        raise UsageError(f"{path} holds a {archive.kind} model, expected a delayed reservoir")
    return archive


def _load_parallel(path):
    archive = load_model(path)
    if archive.kind != "parallel":
        raise UsageError(f"{path} holds a {archive.kind} model, expected a parallel reservoir")
    return archive


def _desn_overrides(args) -> Dict[str, Any]:
    names = ("K", "D", "alpha", "beta", "gamma", "rho", "sparsity", "bias_scale",
             "noise_std", "ridge_lambda", "n_init", "n_train", "seed")
    return {n: getattr(args, n) for n in names if getattr(args, n, None) is not None}


def _resolve_desn_params(args) -> DesnParams:
    base = DESN_PRESETS[args.preset]
    if args.config:
        cfg = load_config(args.config)
        if cfg.preset is not None and cfg.preset not in DESN_PRESETS:
            raise ConfigError(f"preset {cfg.preset!r} is not a delayed-reservoir preset")
        base = DESN_PRESETS.get(cfg.preset, base)
        changes = dict(cfg.reservoir)
        if "seed" not in changes:
            changes["seed"] = cfg.seed
        base = dataclasses.replace(base, **changes)
    return dataclasses.replace(base, **_desn_overrides(args))


# ------------------------------------------------------------ commands

def cmd_simulate(args, stage):
    if args.system == "ks":
        params = KsParams.from_size(args.L_pi)
        transient = 1000 if args.transient is None else args.transient
        out = integrate_ks(params, n_transient=transient, n_samples=args.samples, seed=args.seed)
        write_field_csv(stage.path(args.out), out)
        return {"seeds": {"initial_field": args.seed}}
    params = _system_params(args.system, args)
    transient = 5000 if args.transient is None else args.transient
    integrate = integrate_mackey_glass if args.system == "mackey-glass" else integrate_ikeda
    out = integrate(params, n_transient=transient, n_samples=args.samples, seed=args.seed)
    write_series_csv(stage.path(args.out), out)
    return {"seeds": {"history": args.seed}, "system": dataclasses.asdict(params)}


def cmd_train(args, stage):
    data = read_series_csv(args.data)
    params = _resolve_desn_params(args)
    model = train(data, params)
    digest = fingerprint(data.values)
    lineage = {"weights_seed": params.seed, "data_file": Path(args.data).name}
    save_model(stage.path(args.out), model, lineage=lineage, data_hash=digest)
    return {"seeds": lineage, "params": dataclasses.asdict(params), "data_hash": digest}


def cmd_rescale(args, stage):
    archive = _load_desn(args.model)
    model = set_delay(archive.model, args.delay)
    save_model(stage.path(args.out), dataclasses.replace(archive, model=model))
    return {"trained_D": model.trained_D, "D": model.D}


def cmd_continue(args, stage):
    archive = _load_desn(args.model)
    model = archive.model
    discard = args.discard
    if discard is None:
        discard = POST_RESCALE_DISCARD if model.D != model.trained_D else 0
    series, advanced = run_closed_loop(model, args.steps, discard, return_model=True)
    write_series_csv(stage.path(args.out), series)
    if args.save_model:
        save_model(stage.path(args.save_model), dataclasses.replace(archive, model=advanced))
    return {"D": model.D, "trained_D": model.trained_D, "discard": discard}


def _producer(args):
    if args.model:
        return _load_desn(args.model).model
    if not args.system:
        raise UsageError("give --model or --system")
    return _system_params(args.system, args)


def cmd_bifurcate(args, stage):
    producer = _producer(args)
    if args.d_min > args.d_max:
        raise UsageError("--d-min must not exceed --d-max")
    diagram = bifurcation_scan(producer, range(args.d_min, args.d_max + 1), args.steps,
                               args.discard, seed=args.seed)
    rows = []
    for D, entry in sorted(diagram.entries.items()):
        kind = entry.attractor.kind.value
        period = entry.attractor.period if entry.attractor.period is not None else ""
        if entry.extrema:
            rows.extend((D, kind, period, v) for v in entry.extrema)
        else:
            rows.append((D, kind, period, float("nan")))
    write_table_csv(stage.path(args.out), ["D", "kind", "period", "extremum"], rows)
    return {"seeds": {"history": args.seed}}


def cmd_estimate_delay(args, stage):
    data = read_series_csv(args.data)
    preset = DESN_PRESETS[args.preset] if args.preset else None
    result = scan_delay(data, range(args.d_min, args.d_max + 1), args.budget, seed=args.seed,
                        preset=preset, workers=args.threads)
    write_table_csv(stage.path(args.out), ["D", "nrmse"], result.rows())
    estimate = result.estimate
    print(f"estimate {estimate}")
    return {"estimate": estimate, "seeds": {"search": args.seed}}


def cmd_census(args, stage):
    producer = _producer(args)
    rows = []
    for D in args.delay:
        c = multistability_census(producer, D, n_init=args.n_init, seed=args.seed,
                                  n_steps=args.steps, n_discard=args.discard)
        rows.append((D, c.n_limit_cycle, c.n_chaotic, c.n_fixed, c.n_divergent))
    write_table_csv(stage.path(args.out),
                    ["D", "limit_cycle", "chaotic", "fixed_point", "divergent"], rows)
    return {"seeds": {"initial_conditions": args.seed}}


def cmd_analyze(args, stage):
    a = read_series_csv(args.a)
    b = read_series_csv(args.b) if args.b else None
    if args.metric in ("delta-acf", "nrmse", "divergence") and b is None:
        raise UsageError(f"{args.metric} needs --b")
    if args.metric == "acf":
        r = acf(a, args.max_lag)
        rows = list(enumerate(r))
        columns = ["lag", "acf"]
        print(f"acf computed to lag {args.max_lag}")
    else:
        if args.metric == "delta-acf":
            value = delta_acf(a, b, args.max_lag)
        elif args.metric == "nrmse":
            value = nrmse(b, a)
        elif args.metric == "divergence":
            value = divergence_rate(a, b)
        else:
            cls = classify_attractor(a, ClassifierConfig(max_lag=args.max_lag))
            value = cls.kind.value
        rows, columns = [(args.metric, value)], ["metric", "value"]
        print(f"{args.metric} {value}")
    if args.out:
        write_table_csv(stage.path(args.out), columns, rows)
    return {}


def _ks_params(args) -> ParallelParams:
    base = KS_PRESETS[args.preset]
    names = ("K", "rho", "gamma", "sparsity", "ridge_lambda", "noise_std", "n_init", "n_train", "seed")
    changes = {n: getattr(args, n) for n in names if getattr(args, n, None) is not None}
    return dataclasses.replace(base, G=args.G, **changes)


def cmd_ks_train(args, stage):
    params = _ks_params(args)
    if args.data:
        fields = [read_field_csv(p) for p in args.data]
        hashes = [fingerprint(f.grid) for f in fields]
        data = fields[0] if len(fields) == 1 else fields
    else:
        ks = KsParams.from_size(args.G)
        data = ks_transient_episodes(ks, args.generate, seed=args.data_seed)
        hashes = [fingerprint(np.concatenate([e.grid for e in data], axis=1))]
    model = train_parallel(data, params)
    lineage = {"weights_seed": params.seed, "data_seed": args.data_seed,
               "data_files": [Path(p).name for p in args.data or []]}
    save_model(stage.path(args.out), model, lineage=lineage, data_hash=",".join(hashes))
    return {"seeds": lineage, "params": dataclasses.asdict(params)}


def cmd_ks_scale(args, stage):
    archive = _load_parallel(args.model)
    model = scale_parallel(archive.model, args.G)
    save_model(stage.path(args.out), dataclasses.replace(archive, model=model))
    return {"trained_G": model.trained_G, "G": model.G}


def cmd_ks_continue(args, stage):
    archive = _load_parallel(args.model)
    model = archive.model
    if args.sync:
        model = synchronize(model, read_field_csv(args.sync))
    discard = args.discard
    if discard is None:
        discard = POST_SCALE_DISCARD if model.G != model.trained_G else 0
    out = run_closed_loop_parallel(model, args.steps, discard)
    write_field_csv(stage.path(args.out), out)
    return {"G": model.G, "trained_G": model.trained_G, "discard": discard}


# -------------------------------------------------------------- parser

def _add_desn_overrides(p):
    for name, kind in (("K", int), ("D", int), ("alpha", float), ("beta", float), ("gamma", float),
                       ("rho", float), ("sparsity", float), ("bias_scale", float),
                       ("noise_std", float), ("ridge_lambda", float), ("n_init", int),
                       ("n_train", int), ("seed", int)):
        p.add_argument("--" + name.replace("_", "-"), dest=name, type=kind, default=None)


def _add_system(p, required=False):
    p.add_argument("--system", choices=SYSTEMS, required=required)
    p.add_argument("--tau", type=float, default=100.0)
    p.add_argument("--T0", type=float, default=10.0)
    p.add_argument("--feedback", type=float, default=0.4, help="Ikeda feedback gain")


def _common_options() -> argparse.ArgumentParser:
    # a fresh parent per parser: parents share action objects, and defaults
    # set on one would leak into the others
    common = _Parser(add_help=False)
    common.add_argument("--threads", type=int, default=argparse.SUPPRESS,
                        help="worker and BLAS thread cap (default 1)")
    common.add_argument("--out-dir", default=argparse.SUPPRESS,
                        help=f"directory for relative output paths (env {OUT_DIR_ENV})")
    common.add_argument("--log-level", default=argparse.SUPPRESS)
    return common


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="scalerc", description="Size-scalable reservoir computing experiments.",
                     parents=[_common_options()])
    parser.set_defaults(threads=1, out_dir=None, log_level="WARNING")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    _sub_add = sub.add_parser

    def add_parser(name, **kw):
        return _sub_add(name, parents=[_common_options()], **kw)

    sub.add_parser = add_parser

    p = sub.add_parser("simulate", help="ground-truth data")
    p.add_argument("--system", choices=SYSTEMS + ("ks",), required=True)
    p.add_argument("--tau", type=float, default=100.0)
    p.add_argument("--T0", type=float, default=10.0)
    p.add_argument("--feedback", type=float, default=0.4)
    p.add_argument("--L-pi", dest="L_pi", type=int, default=10, help="KS domain length in units of pi")
    p.add_argument("--samples", type=int, required=True)
    p.add_argument("--transient", type=int, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="simulate.csv")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("train", help="fit a delayed reservoir")
    p.add_argument("--data", required=True)
    p.add_argument("--preset", choices=sorted(DESN_PRESETS), default="mg-table1")
    p.add_argument("--config", default=None)
    _add_desn_overrides(p)
    p.add_argument("--out", default="model.bin")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("rescale", help="change the loop delay of a trained model")
    p.add_argument("--model", required=True)
    p.add_argument("--delay", type=int, required=True)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_rescale)

    p = sub.add_parser("continue", help="closed-loop continuation")
    p.add_argument("--model", required=True)
    p.add_argument("--steps", type=int, required=True)
    p.add_argument("--discard", type=int, default=None)
    p.add_argument("--out", default="continuation.csv")
    p.add_argument("--save-model", default=None, help="store the advanced model here")
    p.set_defaults(func=cmd_continue)

    p = sub.add_parser("bifurcate", help="extrema and attractor class over a delay range")
    p.add_argument("--model", default=None)
    _add_system(p)
    p.add_argument("--d-min", type=int, required=True)
    p.add_argument("--d-max", type=int, required=True)
    p.add_argument("--steps", type=int, default=5000)
    p.add_argument("--discard", type=int, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="bifurcation.csv")
    p.set_defaults(func=cmd_bifurcate)

    p = sub.add_parser("estimate-delay", help="loop-delay scan of one-step accuracy")
    p.add_argument("--data", required=True)
    p.add_argument("--d-min", type=int, required=True)
    p.add_argument("--d-max", type=int, required=True)
    p.add_argument("--budget", type=int, default=50)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--preset", choices=sorted(DESN_PRESETS), default=None,
                   help="score a preset at every delay instead of tuning")
    p.add_argument("--out", default="delay_scan.csv")
    p.set_defaults(func=cmd_estimate_delay)

    p = sub.add_parser("census", help="attractor counts over random initial conditions")
    p.add_argument("--model", default=None)
    _add_system(p)
    p.add_argument("--delay", type=int, nargs="+", required=True)
    p.add_argument("--n-init", type=int, default=100)
    p.add_argument("--steps", type=int, default=4096)
    p.add_argument("--discard", type=int, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="census.csv")
    p.set_defaults(func=cmd_census)

    p = sub.add_parser("analyze", help="series diagnostics")
    p.add_argument("metric", choices=("acf", "delta-acf", "nrmse", "divergence", "classify"))
    p.add_argument("--a", required=True, help="reference series CSV")
    p.add_argument("--b", default=None, help="second series CSV")
    p.add_argument("--max-lag", type=int, default=1100)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("ks-train", help="fit a parallel reservoir on KS data")
    p.add_argument("--data", nargs="+", default=None, help="field CSVs; several act as episodes")
    p.add_argument("--generate", type=int, default=50000,
                   help="without --data: chaotic KS samples to synthesize")
    p.add_argument("--data-seed", type=int, default=0)
    p.add_argument("--preset", choices=sorted(KS_PRESETS), default="ks-default")
    p.add_argument("--G", type=int, default=10)
    for name, kind in (("K", int), ("rho", float), ("gamma", float), ("sparsity", float),
                       ("ridge_lambda", float), ("noise_std", float), ("n_init", int),
                       ("n_train", int), ("seed", int)):
        p.add_argument("--" + name.replace("_", "-"), dest=name, type=kind, default=None)
    p.add_argument("--out", default="ks_model.bin")
    p.set_defaults(func=cmd_ks_train)

    p = sub.add_parser("ks-scale", help="insert or remove subnetworks")
    p.add_argument("--model", required=True)
    p.add_argument("--G", type=int, required=True)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_ks_scale)

    p = sub.add_parser("ks-continue", help="closed-loop KS prediction")
    p.add_argument("--model", required=True)
    p.add_argument("--steps", type=int, required=True)
    p.add_argument("--discard", type=int, default=None)
    p.add_argument("--sync", default=None, help="field CSV whose last columns synchronize the model")
    p.add_argument("--out", default="ks_continuation.csv")
    p.set_defaults(func=cmd_ks_continue)
    return parser


def _default_out(args):
    if getattr(args, "out", "unset") is None and args.command in ("rescale", "ks-scale"):
        stem = Path(args.model).stem
        suffix = f"-D{args.delay}" if args.command == "rescale" else f"-G{args.G}"
        args.out = str(Path(args.model).with_name(stem + suffix + ".bin"))


def main(argv: Optional[Sequence[str]] = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        if not args.command:
            raise UsageError("a command is required")
        if args.threads < 1:
            raise UsageError("--threads must be >= 1")
    except UsageError as exc:
        print(f"scalerc: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=args.log_level.upper(), format="%(levelname)s %(name)s: %(message)s")
    _default_out(args)
    out_dir = args.out_dir or os.environ.get(OUT_DIR_ENV) or "."
    try:
        from threadpoolctl import threadpool_info, threadpool_limits

        # only ever lower the BLAS pools: some builds crash when raised past
        # the thread count they started with
        current = [p["num_threads"] for p in threadpool_info()]
        cap = min([args.threads] + current)
        with threadpool_limits(limits=cap), staged_outputs(out_dir) as stage:
            extra = args.func(args, stage) or {}
            primary = getattr(args, "out", None)
            if primary:
                _write_manifest(stage, primary, args, extra)
    except (UsageError, ConfigError) as exc:
        print(f"scalerc: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DivergenceError as exc:
        print(f"scalerc: diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (OSError, ArchiveError) as exc:
        print(f"scalerc: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        print(f"scalerc: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
