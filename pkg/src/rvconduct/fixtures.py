"""Synthetic stand-ins for the car and instant-noodle panels.

Both fixtures are logit markets with product-level attributes fixed over time
and product sets that vary across markets (entry, exit and regional
availability), so own-group attribute sums move even after product fixed
effects are absorbed. Prices solve the Bertrand-Nash conditions under a
chosen conduct hypothesis.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import pandas as pd

from .demand import Quadrature, logit_shares
from .empirical import EmpiricalSpec
from .model import ConductSpec, DemandParams, build_ownership
from .supply import solve_prices


@dataclass
class Fixture:
    data: pd.DataFrame
    hypotheses: dict[str, dict[str, str]]
    spec: EmpiricalSpec
    true_hypothesis: str


def _price_markets(
    frame: pd.DataFrame,
    delta_bar: np.ndarray,
    mc: np.ndarray,
    conduct_group: dict[str, str],
    alpha: float,
) -> tuple[np.ndarray, np.ndarray]:
    params = DemandParams(alpha=alpha, beta=(0.0, 0.0))
    quad = Quadrature.gauss_hermite(1)
    price = np.empty(len(frame))
    share = np.empty(len(frame))
    firms = frame["firm_id"].astype(str).to_numpy()
    for _, idx in frame.groupby("market_id", sort=True).indices.items():
        f = firms[idx]
        codes = np.unique(f, return_inverse=True)[1]
        groups = np.unique([conduct_group[v] for v in f], return_inverse=True)[1]
        H = build_ownership(codes, ConductSpec(1.0, groups))
        p = solve_prices(mc[idx], delta_bar[idx], np.zeros(len(idx)), params, quad, H)
        price[idx] = p
        share[idx] = logit_shares(delta_bar[idx] - alpha * p)[0]
    return price, share


def _panel(products: pd.DataFrame, markets: pd.DataFrame, available: np.ndarray) -> pd.DataFrame:
    rows = np.argwhere(available)
    frame = pd.concat(
        [markets.iloc[rows[:, 0]].reset_index(drop=True), products.iloc[rows[:, 1]].reset_index(drop=True)],
        axis=1,
    )
    return frame


def car_fixture(seed: int = 0, years: int = 8, provinces: int = 32) -> Fixture:
    """13 brands under 9 parent companies; prices set jointly within parent.

    Hypotheses: brand, parent company, German brands merged (on top of
    parents), domestic vs foreign, and full collusion.
    """
    rng = np.random.default_rng(seed)
    brands = [f"B{i:02d}" for i in range(13)]
    parent = {b: b for b in brands}
    for members, label in ((["B00", "B01", "B02"], "P_HK"), (["B07", "B08"], "P_VW"), (["B04", "B05"], "P_RN")):
        for b in members:
            parent[b] = label
    german = {"B07", "B08", "B09", "B10"}
    domestic = {"B00", "B01", "B02", "B03", "B04", "B05"}
    n_products = 64
    brand_of = np.array([brands[i % 13] for i in range(n_products)])
    products = pd.DataFrame(
        {
            "product_id": np.arange(n_products),
            "firm_id": brand_of,
            "fuel_economy": rng.uniform(size=n_products),
            "acceleration": rng.uniform(size=n_products),
            "size": rng.uniform(size=n_products),
            "segment": rng.choice([f"seg{i}" for i in range(7)], size=n_products),
            "fuel": rng.choice(["gasoline", "diesel", "lpg", "ev", "hev"], size=n_products),
        }
    )
    markets = pd.DataFrame(
        [(y * provinces + r, y, r) for y in range(years) for r in range(provinces)],
        columns=["market_id", "year", "province"],
    )
    entry = rng.integers(0, years // 2, size=n_products)
    exit_ = rng.integers(years // 2, years + 1, size=n_products)
    yr = markets["year"].to_numpy()[:, None]
    available = (yr >= entry) & (yr < exit_) & (rng.uniform(size=(len(markets), n_products)) < 0.7)
    df = _panel(products, markets, available)
    xq = df[["fuel_economy", "acceleration", "size"]].to_numpy()
    xi_j = rng.normal(0.0, 0.3, n_products)
    omega_j = rng.normal(0.0, 0.3, n_products)
    pid = df["product_id"].to_numpy()
    delta_bar = -1.0 + xq @ np.array([0.5, 1.0, 1.0]) + xi_j[pid] + rng.normal(0.0, 0.1, len(df))
    mc = 1.0 + xq @ np.array([0.5, 0.8, 1.0]) + omega_j[pid] + 0.05 * df["year"].to_numpy() \
        + rng.normal(0.0, 0.1, len(df))
    true_groups = {b: parent[b] for b in brands}
    df["price"], df["share"] = _price_markets(df, delta_bar, mc, true_groups, alpha=1.0)
    df["year_fuel"] = df["year"].astype(str) + "_" + df["fuel"]
    hypotheses = {
        "brand": {b: b for b in brands},
        "parent": true_groups,
        "german": {b: ("GER" if b in german else parent[b]) for b in brands},
        "domestic_foreign": {b: ("DOM" if b in domestic else "FOR") for b in brands},
        "full": {b: "ALL" for b in brands},
    }
    spec = EmpiricalSpec(
        attributes=["fuel_economy", "acceleration", "size"],
        categories=["segment", "fuel"],
        fixed_effects=["product_id", "year_fuel", "province"],
        cluster="market_id",
    )
    return Fixture(df, hypotheses, spec, "parent")


def noodle_fixture(seed: int = 0, regions: int = 5, months: int = 48) -> Fixture:
    """Four producers pricing competitively; 70 products with six nutrition attributes."""
    rng = np.random.default_rng(seed)
    counts = {"N": 30, "O": 15, "P": 10, "S": 15}
    firm = np.concatenate([[f] * n for f, n in counts.items()])
    n_products = len(firm)
    nutrients = ["cholesterol", "calorie", "sugar", "fat", "protein", "sodium"]
    products = pd.DataFrame({"product_id": np.arange(n_products), "firm_id": firm})
    for name in nutrients:
        products[name] = rng.uniform(size=n_products)
    products["package"] = rng.choice(["pouch", "cup"], size=n_products)
    products["soup"] = rng.choice(["red", "white", "soupless"], size=n_products)
    markets = pd.DataFrame(
        [(m * regions + r, m, r) for m in range(months) for r in range(regions)],
        columns=["market_id", "month", "region"],
    )
    available = rng.uniform(size=(len(markets), n_products)) < 0.75
    df = _panel(products, markets, available)
    pid = df["product_id"].to_numpy()
    X = df[nutrients].to_numpy()
    delta_bar = -1.5 + X @ rng.uniform(0.0, 0.5, len(nutrients)) + rng.normal(0.0, 0.3, n_products)[pid] \
        + rng.normal(0.0, 0.1, len(df))
    mc = 0.5 + X @ rng.uniform(0.0, 0.3, len(nutrients)) + rng.normal(0.0, 0.2, n_products)[pid] \
        + 0.01 * df["month"].to_numpy() + rng.normal(0.0, 0.1, len(df))
    firms = list(counts)
    df["price"], df["share"] = _price_markets(df, delta_bar, mc, {f: f for f in firms}, alpha=1.0)
    hypotheses = {
        "competition": {f: f for f in firms},
        "full": {f: "ALL" for f in firms},
        "N-O-P": {f: ("C" if f in "NOP" else f) for f in firms},
        "N-O-S": {f: ("C" if f in "NOS" else f) for f in firms},
        "N-P-S": {f: ("C" if f in "NPS" else f) for f in firms},
    }
    spec = EmpiricalSpec(
        attributes=nutrients,
        categories=["package", "soup"],
        fixed_effects=["product_id", "month", "region"],
        cluster="market_id",
    )
    return Fixture(df, hypotheses, spec, "competition")
