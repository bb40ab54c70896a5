"""Product-market panels from CSV: schema checks, conduct hypotheses, instruments, pairwise tests."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Optional

import numpy as np
import pandas as pd

from .conduct import GmmDemandFit, PairwiseResult, estimate_demand_logit, estimate_demand_rc, pairwise_matrix, t_iv_rv
from .instruments import SCOPES, InstrumentMatrix, build_ivs, interaction_ivs, product_count_ivs, summation_ivs

REQUIRED_COLUMNS = ("market_id", "product_id", "firm_id", "price")
CONSTANT = "const"


class SchemaError(ValueError):
    """Dataset or hypothesis file violates the expected layout."""


@dataclass
class EmpiricalSpec:
    """Which columns play which role in the first-stage regressions."""

    attributes: list[str]
    categories: list[str] = field(default_factory=list)
    fixed_effects: list[str] = field(default_factory=list)
    cluster: Optional[str] = None
    iv_form: str = "SumOrder1"
    include_constant: bool = True
    count_ivs: bool = False


def validate_dataset(df: pd.DataFrame, spec: Optional[EmpiricalSpec] = None, need_shares: bool = False) -> pd.DataFrame:
    missing = [c for c in REQUIRED_COLUMNS if c not in df.columns]
    if missing:
        raise SchemaError(f"missing required column(s): {', '.join(missing)}")
    if df.duplicated(["market_id", "product_id"]).any():
        raise SchemaError("(market_id, product_id) pairs must be unique")
    price = pd.to_numeric(df["price"], errors="coerce")
    if price.isna().any() or (price <= 0).any():
        raise SchemaError("prices must be positive numbers")
    if "share" in df.columns:
        share = pd.to_numeric(df["share"], errors="coerce")
        if share.isna().any() or (share <= 0).any():
            raise SchemaError("shares must be positive")
        if (share.groupby(df["market_id"]).sum() >= 1).any():
            raise SchemaError("inside shares must sum to less than one in every market")
    elif need_shares:
        raise SchemaError("demand estimation needs a 'share' column (the conduct test does not)")
    if spec is not None:
        wanted = list(spec.attributes) + list(spec.categories) + list(spec.fixed_effects)
        if spec.cluster:
            wanted.append(spec.cluster)
        absent = [c for c in wanted if c not in df.columns]
        if absent:
            raise SchemaError(f"configured column(s) not in dataset: {', '.join(absent)}")
    return df.sort_values(["market_id", "product_id"], kind="stable").reset_index(drop=True)


def read_dataset(path: str | Path, spec: Optional[EmpiricalSpec] = None, need_shares: bool = False) -> pd.DataFrame:
    return validate_dataset(pd.read_csv(path, float_precision="round_trip"), spec, need_shares)


def write_dataset(df: pd.DataFrame, path: str | Path) -> None:
    df.to_csv(path, index=False, float_format="%.17g")


def read_hypotheses(path: str | Path) -> dict[str, dict[str, str]]:
    """``{name: {firm_id: group_label}}`` from JSON; keys are kept as strings."""
    raw = json.loads(Path(path).read_text())
    if not isinstance(raw, Mapping) or not raw:
        raise SchemaError("hypothesis file must be a non-empty JSON object")
    return {str(name): {str(k): str(v) for k, v in mapping.items()} for name, mapping in raw.items()}


def hypothesis_groups(df: pd.DataFrame, hypotheses: Mapping[str, Mapping]) -> dict[str, np.ndarray]:
    """Per-observation integer group codes for each hypothesis."""
    firms = df["firm_id"].astype(str).to_numpy()
    known = set(firms)
    out = {}
    for name, mapping in hypotheses.items():
        mapping = {str(k): str(v) for k, v in mapping.items()}
        unknown = sorted(set(mapping) - known)
        if unknown:
            raise SchemaError(f"hypothesis {name!r} maps unknown firm id {unknown[0]!r}")
        unmapped = sorted(known - set(mapping))
        if unmapped:
            raise SchemaError(f"hypothesis {name!r} does not map firm id {unmapped[0]!r}")
        labels = np.array([mapping[f] for f in firms])
        out[name] = np.unique(labels, return_inverse=True)[1].ravel()
    return out


def attribute_matrix(df: pd.DataFrame, spec: EmpiricalSpec) -> tuple[np.ndarray, list[str]]:
    cols = [df[a].to_numpy(dtype=float) for a in spec.attributes]
    names = list(spec.attributes)
    if spec.include_constant:
        cols.insert(0, np.ones(len(df)))
        names.insert(0, CONSTANT)
    return np.column_stack(cols), names


def empirical_ivs(df: pd.DataFrame, group: np.ndarray, spec: EmpiricalSpec) -> InstrumentMatrix:
    """Own-group sums of every attribute plus category-restricted sums.

    With a constant column among the attributes, the first-order sums include
    the rival product count, which varies when product sets differ across
    markets. Higher-order forms only add the count when ``count_ivs`` is set.
    """
    X, names = attribute_matrix(df, spec)
    market = df["market_id"].to_numpy()
    if spec.iv_form == "SumOrder1":
        z = summation_ivs(market, group, X, (1,), "own", "suspected", names)
    else:
        skip = int(spec.include_constant)
        z = build_ivs(market, group, X[:, skip:], spec.iv_form, "own", "suspected", names[skip:])
    if spec.categories:
        cats = [df[c].astype(str).to_numpy() for c in spec.categories]
        z = z.hstack(interaction_ivs(market, group, X, cats, spec.categories, "suspected", names))
    if spec.count_ivs and not (spec.include_constant and spec.iv_form == "SumOrder1"):
        z = z.hstack(product_count_ivs(market, group, mode="suspected"))
    return z


def _design(df: pd.DataFrame, spec: EmpiricalSpec):
    X, names = attribute_matrix(df, spec)
    fe = [df[c].astype(str).to_numpy() for c in spec.fixed_effects]
    clusters = df[spec.cluster].to_numpy() if spec.cluster else None
    return X, names, fe, clusters


def run_pairwise(df: pd.DataFrame, hypotheses: Mapping[str, Mapping], spec: EmpiricalSpec) -> PairwiseResult:
    groups = hypothesis_groups(df, hypotheses)
    X, _, fe, clusters = _design(df, spec)
    return pairwise_matrix(
        groups,
        df["price"].to_numpy(dtype=float),
        X,
        lambda g: empirical_ivs(df, g, spec),
        fe=fe,
        clusters=clusters,
    )


def run_t_iv(df: pd.DataFrame, spec: EmpiricalSpec, comp_group: np.ndarray, coll_group: np.ndarray):
    X, _, fe, clusters = _design(df, spec)
    return t_iv_rv(
        df["price"].to_numpy(dtype=float),
        X,
        empirical_ivs(df, comp_group, spec),
        empirical_ivs(df, coll_group, spec),
        fe=fe,
        clusters=clusters,
    )


def demand_ivs(df: pd.DataFrame, spec: EmpiricalSpec, scope: str = "both", group_column: str = "firm_id") -> InstrumentMatrix:
    """Attribute sums over same-group rivals, other groups, or both, for demand estimation."""
    X, names = attribute_matrix(df, spec)
    skip = int(spec.include_constant)
    market = df["market_id"].to_numpy()
    group = df[group_column].astype(str).to_numpy()
    scopes = SCOPES if scope == "both" else (scope,)
    if any(sc not in SCOPES for sc in scopes):
        raise SchemaError(f"instrument scope must be own, other or both, got {scope!r}")
    z = InstrumentMatrix.empty(len(df))
    for sc in scopes:
        if spec.iv_form == "SumOrder1":
            z = z.hstack(summation_ivs(market, group, X, (1,), sc, "observed", names))
        else:
            z = z.hstack(build_ivs(market, group, X[:, skip:], spec.iv_form, sc, "observed", names[skip:]))
    return z


def estimate_demand(
    df: pd.DataFrame,
    spec: EmpiricalSpec,
    model: str = "logit",
    rc_attribute: Optional[str] = None,
    scope: str = "both",
    group_column: str = "firm_id",
) -> tuple[GmmDemandFit, pd.DataFrame]:
    """Fit logit or one-coefficient RC logit demand; returns the fit and a tidy parameter table."""
    if "share" not in df.columns:
        raise SchemaError("demand estimation needs a 'share' column (the conduct test does not)")
    X, names = attribute_matrix(df, spec)
    Z = demand_ivs(df, spec, scope, group_column)
    args = (df["share"].to_numpy(dtype=float), df["market_id"].to_numpy(), df["price"].to_numpy(dtype=float))
    if model == "logit":
        fit = estimate_demand_logit(*args, X, Z)
    elif model == "rc":
        attr = rc_attribute or spec.attributes[0]
        if attr not in df.columns:
            raise SchemaError(f"random-coefficient attribute {attr!r} not in dataset")
        fit = estimate_demand_rc(args[0], args[1], args[2], df[attr].to_numpy(dtype=float), X, Z)
    else:
        raise SchemaError(f"model must be 'logit' or 'rc', got {model!r}")
    rows = [("alpha", fit.alpha)] + [(f"beta[{n}]", float(b)) for n, b in zip(names, fit.beta)]
    if fit.sigma_x is not None:
        rows.append((f"sigma[{attr}]", fit.sigma_x))
    table = pd.DataFrame(rows, columns=["parameter", "estimate"])
    table["objective"] = fit.objective
    table["converged"] = int(fit.converged)
    table["n_obs"] = len(df)
    table["n_instruments"] = Z.k
    return fit, table
