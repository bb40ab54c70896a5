"""Monte Carlo data-generating process and experiment harness.

Randomness comes from Philox streams seeded by ``SeedSequence(master_seed,
spawn_key=(structure, replicate, ...))``. The structure hash covers the
primitives (J, F, rho, DGP mode and parameter bundles) but not the conduct
cell (phi, F_c), the market count T, or the instrument form. Cells that differ
only in conduct therefore share their draws (common random numbers), and a
panel with fewer markets is a prefix of one with more.
"""
from __future__ import annotations

import hashlib
import io
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np
import pandas as pd

from .conduct import estimate_demand_logit, estimate_demand_rc, t_iv_rv, t_markup_rv
from .demand import DomainError, Quadrature, rc_shares
from .instruments import InstrumentMatrix, iv_set_for_test, own_other_ivs
from .model import (
    ConductSpec,
    ConfigError,
    ConvergenceError,
    Market,
    MonteCarloConfig,
    assign_firms,
    build_ownership,
    effective_index,
)
from .regression import RankError, first_stage
from .supply import NumericalError, solve_prices

ESTIMATE_SETS = ("comp", "coll", "own", "other", "both")
UNRELIABLE_SHARE = 0.2
_FIRM_TAG, _MARKET_TAG = 0, 1


def structure_key(config: MonteCarloConfig) -> int:
    """32-bit hash of the primitives that determine the random draws."""
    payload = {
        "J": config.J,
        "F": config.F,
        "rho": config.rho,
        "mode": config.endogenous_mode,
        "demand": asdict(config.demand),
        "cost": asdict(config.cost),
        "shocks": asdict(config.shocks),
    }
    digest = hashlib.sha256(json.dumps(payload, sort_keys=True, default=list).encode()).digest()
    return int.from_bytes(digest[:4], "little")


def _rng(config: MonteCarloConfig, *key: int) -> np.random.Generator:
    seq = np.random.SeedSequence(config.master_seed, spawn_key=(structure_key(config), *key))
    return np.random.Generator(np.random.Philox(seq))


def replicate_firms(config: MonteCarloConfig, replicate: int) -> np.ndarray:
    return assign_firms(config.J, config.F, _rng(config, replicate, _FIRM_TAG))


def _draw_market(config: MonteCarloConfig, replicate: int, market: int):
    rng = _rng(config, replicate, _MARKET_TAG, market)
    J = config.J
    x = rng.uniform(size=J)
    w = rng.uniform(size=J)
    if config.rho is not None and config.endogenous_mode == "trivariate":
        sh = config.shocks
        cov = np.array(
            [
                [sh.var_xi, config.rho, 0.0],
                [config.rho, sh.var_xi, sh.cov_xi_omega],
                [0.0, sh.cov_xi_omega, sh.var_omega],
            ]
        )
        try:
            L = np.linalg.cholesky(cov)
        except np.linalg.LinAlgError as exc:
            raise ConfigError(f"trivariate covariance not positive definite for rho={config.rho}") from exc
        x, xi, omega = L @ rng.standard_normal((3, J))
        return x, w, xi, omega
    L = np.linalg.cholesky(config.shocks.cov + 1e-300 * np.eye(2))
    xi, omega = L @ rng.standard_normal((2, J))
    if config.rho is not None:
        raw = x + config.rho * xi
        x = (raw - raw.min()) / (raw.max() - raw.min())
    return x, w, xi, omega


@dataclass
class Panel:
    """T equally sized markets stored as ``(T, J)`` arrays."""

    firm: np.ndarray
    effective: np.ndarray
    x: np.ndarray
    w: np.ndarray
    xi: np.ndarray
    omega: np.ndarray
    mc: np.ndarray
    price: np.ndarray
    share: np.ndarray
    phi: float

    @property
    def T(self) -> int:
        return self.x.shape[0]

    @property
    def J(self) -> int:
        return self.x.shape[1]

    @property
    def market(self) -> np.ndarray:
        return np.repeat(np.arange(self.T), self.J)

    @property
    def firm_flat(self) -> np.ndarray:
        return np.tile(self.firm, self.T)

    @property
    def effective_flat(self) -> np.ndarray:
        return np.tile(self.effective, self.T)

    @property
    def outside_share(self) -> np.ndarray:
        return 1.0 - self.share.sum(axis=1)

    def ownership(self, phi: float, effective: Optional[np.ndarray] = None) -> np.ndarray:
        group = self.effective if effective is None else effective
        return build_ownership(self.firm, ConductSpec(phi, group))

    def market_view(self, t: int) -> Market:
        return Market(
            market_id=t,
            firm_id=self.firm,
            effective_firm_id=self.effective,
            x=self.x[t],
            w=self.w[t],
            xi=self.xi[t],
            omega=self.omega[t],
            mc=self.mc[t],
            price=self.price[t],
            share=self.share[t],
        )

    def to_frame(self) -> pd.DataFrame:
        """Long table in the dataset schema used by the command-line tools."""
        return pd.DataFrame(
            {
                "market_id": self.market,
                "product_id": np.tile(np.arange(self.J), self.T),
                "firm_id": self.firm_flat,
                "suspected_group_id": self.effective_flat,
                "price": self.price.ravel(),
                "share": self.share.ravel(),
                "x": self.x.ravel(),
                "w": self.w.ravel(),
            }
        )


def generate_panel(config: MonteCarloConfig, replicate: int, markets: Optional[Sequence[int]] = None) -> Panel:
    """Draw primitives and solve equilibrium prices for the requested markets."""
    idx = list(range(config.T)) if markets is None else list(markets)
    firm = replicate_firms(config, replicate)
    effective = effective_index(firm, config.F, config.F_c)
    draws = [_draw_market(config, replicate, t) for t in idx]
    x, w, xi, omega = (np.array([d[i] for d in draws]) for i in range(4))
    g = config.cost.gamma
    mc = g[0] + g[1] * x + g[2] * w + omega
    dem = config.demand
    quad = Quadrature.gauss_hermite(dem.quad_nodes)
    delta_bar = dem.beta[0] + dem.beta[1] * x + xi
    H = build_ownership(firm, ConductSpec(config.phi, effective))
    price = solve_prices(mc, delta_bar, x, dem, quad, H)
    share = rc_shares(delta_bar - dem.alpha * price, x, dem.sigma_x, quad)
    return Panel(firm, effective, x, w, xi, omega, mc, price, share, config.phi)


def gen_market(config: MonteCarloConfig, market_index: int, replicate_index: int) -> Market:
    """One market of one replicate; deterministic in its keys."""
    if not 0 <= market_index < config.T:
        raise ConfigError(f"market index {market_index} outside 0..{config.T - 1}")
    panel = generate_panel(config, replicate_index, [market_index])
    m = panel.market_view(0)
    return Market(**{**m.__dict__, "market_id": market_index})


# --- per-replicate statistics ----------------------------------------------------


@dataclass
class ReplicateResult:
    replicate_index: int
    converged: bool = True
    fstat_comp: float = math.nan
    fstat_coll: float = math.nan
    t_iv_rv: float = math.nan
    p_iv_collusion: float = math.nan
    t_markup_rv: float = math.nan
    p_markup_collusion: float = math.nan
    median_outside_share: float = math.nan
    fstat: dict = field(default_factory=dict)
    abs_err_alpha: dict = field(default_factory=dict)
    abs_err_sigma: dict = field(default_factory=dict)
    flags: dict = field(default_factory=dict)


def _estimation_ivs(name: str, z_comp, z_coll, z_own, z_other) -> InstrumentMatrix:
    if name == "comp":
        return z_comp
    if name == "coll":
        return z_coll
    if name == "own":
        return z_own
    if name == "other":
        return z_other
    return z_own.hstack(z_other)


def run_replicate(config: MonteCarloConfig, replicate: int) -> ReplicateResult:
    out = ReplicateResult(replicate)
    try:
        panel = generate_panel(config, replicate)
    except (ConvergenceError, NumericalError, FloatingPointError) as exc:
        out.converged = False
        out.flags["equilibrium"] = str(exc)
        return out
    market = panel.market
    x = panel.x.ravel()
    p = panel.price.ravel()
    s = panel.share.ravel()
    X_exog = np.column_stack([np.ones_like(x), x])
    z_comp, z_coll = iv_set_for_test(market, panel.firm_flat, panel.effective_flat, x, config.iv_form)
    need_own = bool(config.markup_test or {"own", "other", "both"} & set(config.estimate_sets + config.fstat_sets))
    z_own = z_other = None
    if need_own:
        z_own, z_other = own_other_ivs(market, panel.firm_flat, x, config.iv_form)
    out.median_outside_share = float(np.median(panel.outside_share))
    out.fstat_comp = first_stage(p, X_exog, z_comp.values).excluded_f
    out.fstat_coll = first_stage(p, X_exog, z_coll.values).excluded_f
    rv = t_iv_rv(p, X_exog, z_comp, z_coll)
    if rv.degenerate:
        out.flags["t_iv_rv"] = "degenerate"
    else:
        out.t_iv_rv, out.p_iv_collusion = rv.t_stat, rv.p_collusion
    for name in config.fstat_sets:
        Z = _estimation_ivs(name, z_comp, z_coll, z_own, z_other)
        out.fstat[name] = first_stage(p, X_exog, Z.values).excluded_f
    dem = config.demand
    for name in config.estimate_sets:
        Z = _estimation_ivs(name, z_comp, z_coll, z_own, z_other)
        try:
            fit = _estimate(config, s, market, p, x, X_exog, Z)
        except (RankError, ConvergenceError, DomainError, np.linalg.LinAlgError) as exc:
            out.flags[f"estimate_{name}"] = str(exc)
            continue
        out.abs_err_alpha[name] = abs(fit.alpha - dem.alpha)
        if fit.sigma_x is not None:
            out.abs_err_sigma[name] = abs(fit.sigma_x - dem.sigma_x)
    if config.markup_test:
        try:
            Z = z_own.hstack(z_other)
            fit = _estimate(config, s, market, p, x, X_exog, Z)
            H1 = np.broadcast_to(panel.ownership(0.0), (panel.T, panel.J, panel.J))
            H2 = np.broadcast_to(panel.ownership(1.0), (panel.T, panel.J, panel.J))
            mk = t_markup_rv(p, s, x, market, fit, H1, H2, X_exog, Z)
            if mk.degenerate:
                out.flags["t_markup_rv"] = "degenerate"
            else:
                out.t_markup_rv, out.p_markup_collusion = mk.t_stat, mk.p_collusion
        except (RankError, ConvergenceError, DomainError, NumericalError, np.linalg.LinAlgError) as exc:
            out.flags["t_markup_rv"] = str(exc)
    return out


def _estimate(config, s, market, p, x, X_exog, Z):
    if config.demand.sigma_x == 0.0:
        return estimate_demand_logit(s, market, p, X_exog, Z)
    quad = Quadrature.gauss_hermite(config.demand.quad_nodes)
    return estimate_demand_rc(s, market, p, x, X_exog, Z, config.sigma_bounds, quad=quad)


# --- aggregation ---------------------------------------------------------------


@dataclass
class CellSummary:
    config: MonteCarloConfig
    n_replicates: int
    n_converged: int
    unreliable: bool
    stats: dict

    def row(self) -> dict:
        return {**config_columns(self.config), "n_replicates": self.n_replicates,
                "n_converged": self.n_converged, "unreliable": int(self.unreliable), **self.stats}


def _median(values: Iterable[float]) -> float:
    arr = np.array([v for v in values if v is not None and np.isfinite(v)], dtype=float)
    return float(np.median(arr)) if arr.size else math.nan


AGGREGATE_COLUMNS = (
    ["median_fstat_comp", "median_fstat_coll", "share_fstat2_gt_fstat1", "median_t_iv_rv",
     "median_p_iv_collusion", "median_t_markup_rv", "median_p_markup_collusion", "median_outside_share"]
    + [f"median_fstat_{k}" for k in ("own", "other", "both")]
    + [f"median_abs_err_alpha_{k}" for k in ESTIMATE_SETS]
    + [f"median_abs_err_sigma_{k}" for k in ESTIMATE_SETS]
)


def summarize(config: MonteCarloConfig, results: Sequence[ReplicateResult]) -> CellSummary:
    ok = [r for r in sorted(results, key=lambda r: r.replicate_index) if r.converged]
    stats: dict = {}
    stats["median_fstat_comp"] = _median(r.fstat_comp for r in ok)
    stats["median_fstat_coll"] = _median(r.fstat_coll for r in ok)
    pairs = [(r.fstat_comp, r.fstat_coll) for r in ok if np.isfinite(r.fstat_comp) and np.isfinite(r.fstat_coll)]
    stats["share_fstat2_gt_fstat1"] = float(np.mean([b > a for a, b in pairs])) if pairs else math.nan
    stats["median_t_iv_rv"] = _median(r.t_iv_rv for r in ok)
    stats["median_p_iv_collusion"] = _median(r.p_iv_collusion for r in ok)
    stats["median_t_markup_rv"] = _median(r.t_markup_rv for r in ok)
    stats["median_p_markup_collusion"] = _median(r.p_markup_collusion for r in ok)
    stats["median_outside_share"] = _median(r.median_outside_share for r in ok)
    for k in ("own", "other", "both"):
        stats[f"median_fstat_{k}"] = _median(r.fstat.get(k, math.nan) for r in ok)
    for k in ESTIMATE_SETS:
        stats[f"median_abs_err_alpha_{k}"] = _median(r.abs_err_alpha.get(k, math.nan) for r in ok)
        stats[f"median_abs_err_sigma_{k}"] = _median(r.abs_err_sigma.get(k, math.nan) for r in ok)
    n = len(results)
    unreliable = (n - len(ok)) > UNRELIABLE_SHARE * n
    return CellSummary(config, n, len(ok), unreliable, {c: stats[c] for c in AGGREGATE_COLUMNS})


def _task(args):
    config, rep = args
    return config, rep, run_replicate(config, rep)


def _execute(tasks: list[tuple[MonteCarloConfig, int]], workers: int) -> dict:
    results: dict = {}
    if workers <= 1 or len(tasks) <= 1:
        for cfg, rep in tasks:
            results[(cfg.to_json(), rep)] = run_replicate(cfg, rep)
        return results
    with ProcessPoolExecutor(max_workers=workers) as pool:
        for cfg, rep, res in pool.map(_task, tasks, chunksize=max(1, len(tasks) // (8 * workers))):
            results[(cfg.to_json(), rep)] = res
    return results


def run_cell(config: MonteCarloConfig, workers: int = 1) -> CellSummary:
    results = _execute([(config, r) for r in range(config.S)], workers)
    return summarize(config, [results[(config.to_json(), r)] for r in range(config.S)])


def run_grid(configs: Sequence[MonteCarloConfig], workers: int = 1) -> pd.DataFrame:
    """Run every cell and return one summary row per cell in input order."""
    configs = list(configs)
    if not configs:
        raise ConfigError("empty configuration grid")
    keys = [c.to_json() for c in configs]
    if len(set(keys)) != len(keys):
        dup = next(k for k in keys if keys.count(k) > 1)
        raise ConfigError(f"duplicate cell in grid: {dup}")
    tasks = [(c, r) for c in configs for r in range(c.S)]
    results = _execute(tasks, workers)
    rows = [summarize(c, [results[(k, r)] for r in range(c.S)]).row() for c, k in zip(configs, keys)]
    return pd.DataFrame(rows)


def config_columns(config: MonteCarloConfig) -> dict:
    d = config.demand
    return {
        "J": config.J, "F": config.F, "T": config.T, "phi": config.phi, "F_c": config.F_c,
        "S": config.S, "master_seed": config.master_seed,
        "rho": math.nan if config.rho is None else config.rho,
        "alpha": d.alpha, "beta1": d.beta[0], "beta2": d.beta[1], "sigma_x": d.sigma_x,
        "gamma1": config.cost.gamma[0], "gamma2": config.cost.gamma[1], "gamma3": config.cost.gamma[2],
        "var_xi": config.shocks.var_xi, "var_omega": config.shocks.var_omega,
        "cov_xi_omega": config.shocks.cov_xi_omega,
        "iv_form": config.iv_form, "endogenous_mode": config.endogenous_mode,
    }


def to_csv(frame: pd.DataFrame) -> str:
    buf = io.StringIO()
    frame.to_csv(buf, index=False, float_format="%.6g", lineterminator="\n")
    return buf.getvalue()
