"""BLP-style instruments built from product attributes and an ownership index.

All builders work on stacked product-market observations: ``market`` and
``group`` are per-observation ids and ``x`` holds one attribute column per
characteristic. Nothing here looks at prices or shares.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .model import IV_FORMS, ConfigError

SUM_ORDERS = {"SumOrder2": (1, 2), "SumOrder3": (1, 2, 3)}
DIFF_ORDERS = {"DiffOrder2": ("local", "quad"), "DiffOrder3": ("local", "quad", "cubic")}
MODES = ("observed", "suspected")
SCOPES = ("own", "other")


@dataclass(frozen=True)
class InstrumentMatrix:
    values: np.ndarray
    labels: tuple[str, ...]

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.ndim == 1:
            values = values[:, None]
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "labels", tuple(self.labels))
        if values.shape[1] != len(self.labels):
            raise ValueError("one label per column required")
        if len(set(self.labels)) != len(self.labels):
            raise ValueError("instrument labels must be unique")
        if not np.all(np.isfinite(values)):
            raise ValueError("instrument matrix has non-finite entries")

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def k(self) -> int:
        return self.values.shape[1]

    def hstack(self, other: "InstrumentMatrix") -> "InstrumentMatrix":
        return InstrumentMatrix(np.hstack([self.values, other.values]), self.labels + other.labels)

    @classmethod
    def empty(cls, n: int) -> "InstrumentMatrix":
        return cls(np.zeros((n, 0)), ())


def _as_columns(x: np.ndarray, names: Optional[Sequence[str]]) -> tuple[np.ndarray, list[str]]:
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    if names is None:
        names = ["x"] if x.shape[1] == 1 else [f"x{i + 1}" for i in range(x.shape[1])]
    if len(names) != x.shape[1]:
        raise ValueError("one name per attribute column required")
    return x, list(names)


def _label(family: str, order, mode: str, attr: str, n_attr: int) -> str:
    base = f"{family}_{order}_{mode}"
    return base if n_attr == 1 and attr == "x" else f"{base}[{attr}]"


def _cell_index(*keys: np.ndarray) -> np.ndarray:
    codes = [np.unique(np.asarray(k), return_inverse=True)[1].ravel() for k in keys]
    return np.unique(np.column_stack(codes), axis=0, return_inverse=True)[1].ravel()


def summation_ivs(
    market: np.ndarray,
    group: np.ndarray,
    x: np.ndarray,
    orders: Sequence[int] = (1, 2),
    scope: str = "own",
    mode: str = "observed",
    names: Optional[Sequence[str]] = None,
) -> InstrumentMatrix:
    """Sums of ``x**r`` over same-group rivals (``own``) or other groups (``other``).

    Own side excludes product ``j`` itself; the two sides add up to the sum
    over every other product in the market. Columns are ordered by power
    first, then attribute.
    """
    if scope not in SCOPES:
        raise ValueError(f"scope must be one of {SCOPES}")
    X, names = _as_columns(x, names)
    cell = _cell_index(market, group)
    mkt = _cell_index(market)
    family = "sum" if scope == "own" else "sumother"
    cols, labels = [], []
    for r in orders:
        for a, name in enumerate(names):
            v = X[:, a] ** r
            in_group = np.bincount(cell, weights=v)[cell]
            if scope == "own":
                col = in_group - v
            else:
                col = np.bincount(mkt, weights=v)[mkt] - in_group
            cols.append(col)
            labels.append(_label(family, r, mode, name, len(names)))
    return InstrumentMatrix(np.column_stack(cols) if cols else np.zeros((len(X), 0)), labels)


def product_count_ivs(market, group, scope: str = "own", mode: str = "observed") -> InstrumentMatrix:
    """Number of same-group rivals (or other-group products) in the market."""
    ones = np.ones(len(np.asarray(market)))
    z = summation_ivs(market, group, ones, orders=(1,), scope=scope, mode=mode, names=["count"])
    return InstrumentMatrix(z.values, [f"count_0_{mode}" if scope == "own" else f"countother_0_{mode}"])


def differentiation_ivs(
    market: np.ndarray,
    group: np.ndarray,
    x: np.ndarray,
    orders: Sequence[str] = ("local", "quad"),
    scope: str = "own",
    mode: str = "observed",
    names: Optional[Sequence[str]] = None,
) -> InstrumentMatrix:
    """Local counts and polynomial distance sums over same-group (or other-group) products.

    ``local`` counts products with ``|x_k - x_j| < sd_t`` (strict), where
    ``sd_t`` is the sample standard deviation of the attribute in market t.
    In a market with no spread every identical rival counts as nearby.
    ``quad`` and ``cubic`` sum ``(x_k - x_j)**2`` and ``(x_k - x_j)**3``.
    """
    if scope not in SCOPES:
        raise ValueError(f"scope must be one of {SCOPES}")
    for o in orders:
        if o not in ("local", "quad", "cubic"):
            raise ValueError(f"unknown differentiation order {o!r}")
    X, names = _as_columns(x, names)
    market = np.asarray(market)
    group = np.asarray(group)
    out = np.zeros((len(X), len(orders) * len(names)))
    for m in np.unique(market):
        idx = np.flatnonzero(market == m)
        if len(idx) < 2:
            raise ConfigError(f"market {m} has a single product; attribute spread undefined")
        g = group[idx]
        same = g[:, None] == g[None, :]
        mask = same & ~np.eye(len(idx), dtype=bool) if scope == "own" else ~same
        for a in range(len(names)):
            xm = X[idx, a]
            sd = xm.std(ddof=1)
            diff = xm[None, :] - xm[:, None]  # diff[j, k] = x_k - x_j
            for o_i, o in enumerate(orders):
                if o == "local":
                    # zero spread: identical products count as nearby
                    term = (np.abs(diff) < sd if sd > 0 else diff == 0).astype(float)
                elif o == "quad":
                    term = diff**2
                else:
                    term = diff**3
                out[idx, o_i * len(names) + a] = (term * mask).sum(axis=1)
    family = "diff" if scope == "own" else "diffother"
    labels = [_label(family, o, mode, n, len(names)) for o in orders for n in names]
    return InstrumentMatrix(out, labels)


def build_ivs(market, group, x, form: str, scope: str = "own", mode: str = "observed", names=None) -> InstrumentMatrix:
    if form in SUM_ORDERS:
        return summation_ivs(market, group, x, SUM_ORDERS[form], scope, mode, names)
    if form in DIFF_ORDERS:
        return differentiation_ivs(market, group, x, DIFF_ORDERS[form], scope, mode, names)
    raise ConfigError(f"iv_form must be one of {IV_FORMS}, got {form!r}")


def iv_set_for_test(market, firm, effective, x, form: str = "SumOrder2", names=None):
    """``(z_comp, z_coll)``: own-side instruments under observed and suspected ownership."""
    z_comp = build_ivs(market, firm, x, form, "own", "observed", names)
    z_coll = build_ivs(market, effective, x, form, "own", "suspected", names)
    return z_comp, z_coll


def own_other_ivs(market, firm, x, form: str = "SumOrder2", names=None):
    """``(z_own, z_other)`` under the observed firm index."""
    return (
        build_ivs(market, firm, x, form, "own", "observed", names),
        build_ivs(market, firm, x, form, "other", "observed", names),
    )


def interaction_ivs(
    market: np.ndarray,
    group: np.ndarray,
    x: np.ndarray,
    categories: Sequence[np.ndarray],
    category_names: Sequence[str],
    mode: str = "observed",
    names: Optional[Sequence[str]] = None,
) -> InstrumentMatrix:
    """Own-group attribute sums restricted to rivals sharing category values.

    For each non-empty subset of the categorical columns (each single column
    and their joint combination) one block of first-order sums is produced.
    With two categories that is three blocks, e.g. package, soup and
    package-by-soup.
    """
    from itertools import combinations

    X, names = _as_columns(x, names)
    group = np.asarray(group)
    cats = [np.asarray(c) for c in categories]
    blocks = InstrumentMatrix.empty(len(X))
    for size in range(1, len(cats) + 1):
        for combo in combinations(range(len(cats)), size):
            cell = _cell_index(group, *[cats[i] for i in combo])
            tag = "x".join(category_names[i] for i in combo)
            z = summation_ivs(market, cell, X, (1,), "own", mode, names)
            labels = [lab.replace("sum_", f"sum-{tag}_", 1) for lab in z.labels]
            blocks = blocks.hstack(InstrumentMatrix(z.values, labels))
    return blocks
