"""Command-line entry point: ``rvconduct {simulate,test,estimate,jacobian}``.

Exit codes: 0 success, 1 runtime or convergence failure, 2 usage or
configuration error.
"""
from __future__ import annotations

import argparse
import itertools
import json
import logging
import sys
from pathlib import Path
from typing import Any, Optional, Sequence

import numpy as np
import pandas as pd

from .empirical import EmpiricalSpec, SchemaError, estimate_demand, read_dataset, read_hypotheses, run_pairwise
from .heatmap import JacobianConfig, write_jacobians
from .instruments import IV_FORMS
from .model import ConfigError, ConvergenceError, MonteCarloConfig
from .simulate import run_grid, to_csv
from .supply import NumericalError

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2
log = logging.getLogger("rvconduct")


class UsageError(Exception):
    pass


def _load_json(path: str) -> Any:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise UsageError(f"cannot read {path}: {exc.strerror}") from exc
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise UsageError(f"{path}: line {exc.lineno}, column {exc.colno}: {exc.msg}") from exc


def expand_grid(raw: Any) -> list[dict]:
    """A single cell, a list of cells, or ``{"base": {...}, "grid": {field: [values]}}``."""
    if isinstance(raw, list):
        return [dict(c) for c in raw]
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object or a list of objects")
    if "grid" not in raw:
        return [dict(raw)]
    base = dict(raw.get("base", {}))
    grid = raw["grid"]
    if not isinstance(grid, dict) or not grid:
        raise ConfigError("'grid' must map field names to lists of values")
    extra = set(raw) - {"base", "grid"}
    if extra:
        raise ConfigError(f"unknown top-level field(s): {', '.join(sorted(extra))}")
    keys = list(grid)
    cells = []
    for combo in itertools.product(*(grid[k] for k in keys)):
        cell = dict(base)
        cell.update(zip(keys, combo))
        cells.append(cell)
    return cells


def _write(text: str, output: Optional[str]) -> None:
    if output in (None, "-"):
        sys.stdout.write(text)
    else:
        Path(output).write_text(text, encoding="utf-8")


def _frame_csv(frame: pd.DataFrame, index: bool = False) -> str:
    return frame.to_csv(index=index, float_format="%.17g", lineterminator="\n")


# --- subcommands ---------------------------------------------------------------


def cmd_simulate(args) -> int:
    cells = expand_grid(_load_json(args.config))
    if args.seed is not None:
        for c in cells:
            c["master_seed"] = args.seed
    configs = []
    for i, c in enumerate(cells):
        try:
            configs.append(MonteCarloConfig.from_dict(c))
        except ConfigError as exc:
            raise ConfigError(f"cell {i}: {exc}") from exc
    frame = run_grid(configs, workers=args.threads)
    _write(to_csv(frame), args.output)
    bad = int(frame["unreliable"].sum())
    if bad and not args.allow_partial:
        log.error("%d of %d cells unreliable (too many failed replicates); rerun with --allow-partial to accept", bad, len(frame))
        return EXIT_RUNTIME
    return EXIT_OK


def _spec_from_args(args) -> EmpiricalSpec:
    return EmpiricalSpec(
        attributes=args.attributes,
        categories=args.categories or [],
        fixed_effects=args.fe or [],
        cluster=args.cluster,
        iv_form=args.iv_form,
        include_constant=not args.no_constant,
        count_ivs=args.count_ivs,
    )


def cmd_test(args) -> int:
    spec = _spec_from_args(args)
    df = read_dataset(args.dataset, spec)
    if args.hypotheses:
        hypotheses = read_hypotheses(args.hypotheses)
    elif "suspected_group_id" in df.columns:
        pairs = df[["firm_id", "suspected_group_id"]].astype(str).drop_duplicates()
        if pairs["firm_id"].duplicated().any():
            raise SchemaError("suspected_group_id must be constant within firm_id")
        hypotheses = {
            "observed": {f: f for f in pairs["firm_id"]},
            "suspected": dict(zip(pairs["firm_id"], pairs["suspected_group_id"])),
        }
    else:
        raise UsageError("pass --hypotheses or include a suspected_group_id column")
    result = run_pairwise(df, hypotheses, spec)
    out = args.output
    if out in (None, "-"):
        sys.stdout.write(_frame_csv(result.t, index=True))
    else:
        _write(_frame_csv(result.t, index=True), out)
        path = Path(out)
        _write(_frame_csv(result.long), str(path.with_name(path.stem + "_long" + path.suffix)))
    return EXIT_OK


def cmd_estimate(args) -> int:
    spec = _spec_from_args(args)
    df = read_dataset(args.dataset, spec, need_shares=True)
    fit, table = estimate_demand(df, spec, args.model, args.rc_attribute, args.iv_scope, args.iv_group)
    _write(_frame_csv(table), args.output)
    return EXIT_OK if fit.converged else EXIT_RUNTIME


def cmd_jacobian(args) -> int:
    raw = _load_json(args.config) if args.config else {}
    if not isinstance(raw, dict):
        raise ConfigError("jacobian config must be a JSON object")
    if args.phi is not None:
        raw["phis"] = args.phi
    if args.seed is not None:
        raw["seed"] = args.seed
    cfg = JacobianConfig.from_dict(raw)
    paths = write_jacobians(cfg, args.output or ".")
    for p in paths:
        print(p)
    return EXIT_OK


# --- parser --------------------------------------------------------------------


def _global_flags(parser: argparse.ArgumentParser, suppress: bool) -> None:
    default = argparse.SUPPRESS if suppress else None
    parser.add_argument("--seed", type=int, default=default, help="override the master seed")
    parser.add_argument("--threads", type=int, default=argparse.SUPPRESS if suppress else 1,
                        help="worker processes for simulations")
    parser.add_argument("--output", "-o", default=default, help="output file (directory for jacobian)")


def _dataset_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("dataset", help="CSV with market_id, product_id, firm_id, price[, share]")
    p.add_argument("--attributes", nargs="+", required=True, help="exogenous product attributes")
    p.add_argument("--categories", nargs="*", help="categorical columns for interacted instruments")
    p.add_argument("--fe", nargs="*", help="fixed-effect columns to absorb")
    p.add_argument("--cluster", help="cluster column for robust variances")
    p.add_argument("--iv-form", default="SumOrder1", choices=("SumOrder1",) + IV_FORMS)
    p.add_argument("--no-constant", action="store_true", help="drop the intercept column")
    p.add_argument("--count-ivs", action="store_true", help="add rival product counts")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rvconduct", description="Testing firm conduct with RV tests.")
    _global_flags(parser, suppress=False)
    parser.add_argument("--verbose", "-v", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    common = argparse.ArgumentParser(add_help=False)
    _global_flags(common, suppress=True)

    p = sub.add_parser("simulate", parents=[common], help="run Monte Carlo cells from a JSON config")
    p.add_argument("config")
    p.add_argument("--allow-partial", action="store_true", help="exit 0 even if some cells are unreliable")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("test", parents=[common], help="pairwise RV conduct tests on a dataset")
    _dataset_flags(p)
    p.add_argument("--hypotheses", help="JSON {name: {firm_id: group}}")
    p.set_defaults(func=cmd_test)

    p = sub.add_parser("estimate", parents=[common], help="estimate logit or RC logit demand")
    _dataset_flags(p)
    p.add_argument("--model", choices=("logit", "rc"), default="logit")
    p.add_argument("--rc-attribute", help="attribute carrying the random coefficient")
    p.add_argument("--iv-scope", choices=("own", "other", "both"), default="both")
    p.add_argument("--iv-group", default="firm_id", help="ownership column for instrument sums")
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("jacobian", parents=[common], help="nested-logit price Jacobians, one CSV per phi")
    p.add_argument("config", nargs="?", help="JSON overriding the default market")
    p.add_argument("--phi", type=float, nargs="+", help="internalization weights")
    p.set_defaults(func=cmd_jacobian)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s: %(message)s")
    if args.threads < 1:
        print("error: --threads must be positive", file=sys.stderr)
        return EXIT_USAGE
    try:
        return args.func(args)
    except (UsageError, ConfigError, SchemaError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ConvergenceError, NumericalError, np.linalg.LinAlgError, ArithmeticError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
