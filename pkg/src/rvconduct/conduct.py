"""Rivers-Vuong conduct tests and the demand estimation that feeds the markup test."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Mapping, Optional, Sequence

import numpy as np
import pandas as pd
from scipy import optimize, stats

from .demand import DomainError, Quadrature, invert_shares
from .instruments import InstrumentMatrix
from .model import ConvergenceError, DemandParams
from .regression import RankError, first_stage, independent_columns, ols
from .supply import recover_mc

log = logging.getLogger(__name__)

DEGENERATE_TOL = 1e-12
CRITICAL_ONE_SIDED = 1.65


@dataclass(frozen=True)
class RVResult:
    q1: float
    q2: float
    sigma_hat: float
    t_stat: float
    n: int
    n_clusters: Optional[int]
    p_collusion: float
    p_competition: float
    degenerate: bool

    @property
    def decision(self) -> str:
        if self.degenerate:
            return "degenerate"
        if self.t_stat > CRITICAL_ONE_SIDED:
            return "model2"
        if self.t_stat < -CRITICAL_ONE_SIDED:
            return "model1"
        return "inconclusive"


def _rv_from_influence(q1: float, q2: float, psi: np.ndarray, clusters=None, scale: float = 1.0) -> RVResult:
    """Assemble an RV result from per-observation influence terms of ``q1 - q2``."""
    n = len(psi)
    if clusters is None:
        sigma2 = float(np.mean((psi - psi.mean()) ** 2))
        G = None
    else:
        inv = np.unique(np.asarray(clusters), return_inverse=True)[1].ravel()
        G = int(inv.max()) + 1
        centred = np.bincount(inv, weights=psi - psi.mean())
        sigma2 = float(centred @ centred) / n
    sigma = np.sqrt(max(sigma2, 0.0))
    degenerate = sigma <= DEGENERATE_TOL * max(scale, 1e-300)
    t = float("nan") if degenerate else float(np.sqrt(n) * (q1 - q2) / sigma)
    return _result(q1, q2, sigma, t, n, G, degenerate)


def _result(q1, q2, sigma, t, n, G, degenerate) -> RVResult:
    if degenerate:
        p_coll = p_comp = float("nan")
    else:
        p_coll = float(stats.norm.sf(t))
        p_comp = float(stats.norm.cdf(t))
    return RVResult(float(q1), float(q2), float(sigma), t, int(n), G, p_coll, p_comp, bool(degenerate))


def _values(z) -> np.ndarray:
    return z.values if isinstance(z, InstrumentMatrix) else np.asarray(z, dtype=float)


def t_iv_rv(
    price: np.ndarray,
    X_exog: np.ndarray,
    z_comp,
    z_coll,
    fe: Sequence[np.ndarray] = (),
    clusters: Optional[np.ndarray] = None,
) -> RVResult:
    """First-stage price regression RV test.

    Fits price on ``[X_exog, z]`` for each instrument set, regresses the
    squared-residual difference ``e1**2 - e2**2`` on a constant and returns
    the constant's t statistic (HC1, or CR1 with ``clusters``). Positive
    values favour the collusion-side instruments ``z_coll``.
    """
    Zc, Zk = _values(z_comp), _values(z_coll)
    fit1 = first_stage(price, X_exog, Zc, fe=fe)
    fit2 = first_stage(price, X_exog, Zk, fe=fe)
    e1, e2 = fit1.residuals, fit2.residuals
    d = e1**2 - e2**2
    n = len(d)
    q1, q2 = float(np.mean(e1**2)), float(np.mean(e2**2))
    identical = Zc.shape == Zk.shape and np.array_equal(Zc, Zk)
    if identical or np.all(d == 0.0):
        return _result(q1, q2, 0.0, float("nan"), n, None, True)
    ones = np.ones((n, 1))
    if clusters is None:
        fit = ols(d, ones, ["const"], vcov="HC1")
    else:
        fit = ols(d, ones, ["const"], vcov="CR1", clusters=clusters)
    se = float(np.sqrt(fit.vcov[0, 0]))
    sigma = se * np.sqrt(n)
    if sigma <= DEGENERATE_TOL * max(q1, q2, 1e-300):
        return _result(q1, q2, sigma, float("nan"), n, fit.n_clusters, True)
    return _result(q1, q2, sigma, float(fit.coef[0] / se), n, fit.n_clusters, False)


# --- demand estimation -------------------------------------------------------


@dataclass
class GmmDemandFit:
    alpha: float
    beta: np.ndarray
    sigma_x: Optional[float]
    objective: float
    weight: str = "(Z'Z/n)^-1, one step"
    converged: bool = True
    n_evaluations: int = 0
    failed_points: int = 0
    delta: Optional[np.ndarray] = field(default=None, repr=False)

    def demand_params(self, quad_nodes: int = 9) -> DemandParams:
        return DemandParams(
            alpha=self.alpha,
            beta=tuple(self.beta),
            sigma_x=0.0 if self.sigma_x is None else self.sigma_x,
            quad_nodes=quad_nodes,
        )


class _LinearIV:
    """Concentrates the linear parameters out of the one-step GMM objective."""

    def __init__(self, X_exog: np.ndarray, price: np.ndarray, Z: np.ndarray):
        X_exog = np.atleast_2d(np.asarray(X_exog, dtype=float).T).T
        self.X = np.column_stack([X_exog, -np.asarray(price, dtype=float)])
        Zt = np.column_stack([X_exog, np.asarray(Z, dtype=float).reshape(len(self.X), -1)])
        Zt = Zt[:, independent_columns(Zt)]
        if Zt.shape[1] < self.X.shape[1]:
            raise RankError(
                f"under-identified: {Zt.shape[1]} instruments for {self.X.shape[1]} parameters"
            )
        self.n = len(self.X)
        self.Qz, _ = np.linalg.qr(Zt)
        Xh = self.Qz.T @ self.X
        A = Xh.T @ Xh
        if np.linalg.matrix_rank(A) < A.shape[0]:
            raise RankError("under-identified: instruments do not span price")
        self.Xh = Xh
        self.A = A

    def fit(self, delta: np.ndarray) -> tuple[np.ndarray, float, np.ndarray]:
        dh = self.Qz.T @ delta
        theta = np.linalg.solve(self.A, self.Xh.T @ dh)
        xi = delta - self.X @ theta
        pxi = self.Qz.T @ xi
        return theta, float(pxi @ pxi) / self.n, xi


def _rectangular(market: np.ndarray) -> Optional[tuple[int, int]]:
    """``(T, J)`` if observations are sorted in equal-sized market blocks."""
    market = np.asarray(market)
    change = np.flatnonzero(market[1:] != market[:-1]) + 1
    starts = np.concatenate([[0], change])
    sizes = np.diff(np.concatenate([starts, [len(market)]]))
    if len(np.unique(market)) != len(starts) or np.any(sizes != sizes[0]):
        return None
    return len(starts), int(sizes[0])


def invert_flat(share, x, market, params: DemandParams, quad: Quadrature, delta0=None) -> np.ndarray:
    """Share inversion for stacked observations (vectorized when markets are equal-sized blocks)."""
    share = np.asarray(share, dtype=float)
    x = np.asarray(x, dtype=float)
    shape = _rectangular(market)
    if shape is not None:
        d0 = None if delta0 is None else np.asarray(delta0).reshape(shape)
        return invert_shares(share.reshape(shape), x.reshape(shape), params, quad, d0).ravel()
    out = np.empty_like(share)
    for m in np.unique(market):
        idx = np.flatnonzero(np.asarray(market) == m)
        d0 = None if delta0 is None else np.asarray(delta0)[idx]
        out[idx] = invert_shares(share[idx], x[idx], params, quad, d0)
    return out


def estimate_demand_logit(share, market, price, X_exog, Z) -> GmmDemandFit:
    """Linear IV-GMM for plain logit; ``X_exog`` is ``[1, x]``."""
    share = np.asarray(share, dtype=float)
    market = np.asarray(market)
    codes = np.unique(market, return_inverse=True)[1].ravel()
    inside = np.bincount(codes, weights=share)
    if np.any(share <= 0) or np.any(inside >= 1):
        raise DomainError("shares must be positive with inside sums below one")
    delta = np.log(share) - np.log1p(-inside)[codes]
    iv = _LinearIV(X_exog, price, _values(Z))
    theta, obj, _ = iv.fit(delta)
    return GmmDemandFit(alpha=float(theta[-1]), beta=theta[:-1], sigma_x=None, objective=obj, delta=delta)


def estimate_demand_rc(
    share,
    market,
    price,
    x,
    X_exog,
    Z,
    sigma_bounds: tuple[float, float] = (0.0, 20.0),
    grid_points: int = 41,
    quad: Optional[Quadrature] = None,
    xatol: float = 1e-6,
) -> GmmDemandFit:
    """Nested fixed point GMM with one random coefficient on ``x``.

    A coarse grid over ``sigma_bounds`` locates the basin; a bounded scalar
    search then refines inside the neighbouring grid cells. Trial values where
    the share inversion fails score ``+inf``.
    """
    quad = quad or Quadrature.gauss_hermite(9)
    iv = _LinearIV(X_exog, price, _values(Z))
    lo, hi = map(float, sigma_bounds)
    warm: dict[str, np.ndarray] = {}
    failures = 0
    evals = 0

    def objective(sigma: float) -> float:
        nonlocal failures, evals
        evals += 1
        params = DemandParams(alpha=1.0, beta=(0.0, 0.0), sigma_x=max(float(sigma), 0.0))
        try:
            delta = invert_flat(share, x, market, params, quad, warm.get("delta"))
        except (ConvergenceError, FloatingPointError, DomainError) as exc:
            failures += 1
            log.debug("inversion failed at sigma=%.4f: %s", sigma, exc)
            return float("inf")
        warm["delta"] = delta
        return iv.fit(delta)[1]

    grid = np.linspace(lo, hi, grid_points)
    values = np.array([objective(s) for s in grid])
    if not np.any(np.isfinite(values)):
        raise ConvergenceError("share inversion failed at every trial sigma")
    i = int(np.argmin(values))
    a, b = grid[max(i - 1, 0)], grid[min(i + 1, len(grid) - 1)]
    warm.pop("delta", None)
    res = optimize.minimize_scalar(objective, bounds=(a, b), method="bounded", options={"xatol": xatol})
    best_s, best_v = (float(res.x), float(res.fun)) if res.fun <= values[i] else (float(grid[i]), float(values[i]))
    params = DemandParams(alpha=1.0, beta=(0.0, 0.0), sigma_x=best_s)
    delta = invert_flat(share, x, market, params, quad)
    theta, obj, _ = iv.fit(delta)
    return GmmDemandFit(
        alpha=float(theta[-1]),
        beta=theta[:-1],
        sigma_x=best_s,
        objective=obj,
        converged=bool(res.success) or best_v == values[i],
        n_evaluations=evals,
        failed_points=failures,
        delta=delta,
    )


# --- markup-based test --------------------------------------------------------


def t_markup_rv(
    price: np.ndarray,
    share: np.ndarray,
    x: np.ndarray,
    market: np.ndarray,
    fit: GmmDemandFit,
    H1: np.ndarray,
    H2: np.ndarray,
    cost_X: np.ndarray,
    Z,
    clusters: Optional[np.ndarray] = None,
    residualize: bool = False,
    quad: Optional[Quadrature] = None,
) -> RVResult:
    """RV test comparing the GMM fit of two conduct models' implied costs.

    ``H1`` and ``H2`` are stacked per-market ownership matrices of shape
    ``(T, J, J)`` for equal-sized markets sorted by market. For each model,
    markups come from the first-order conditions at the estimated demand, and
    the cost residual is the OLS residual of ``p - eta`` on ``cost_X``. The
    variance uses the influence terms ``2 g_m' W z_i w^m_i`` differenced
    across models; with ``residualize`` the instruments are first projected
    off ``cost_X``, which accounts for the cost-parameter estimation step.
    Positive values favour model 2.
    """
    quad = quad or Quadrature.gauss_hermite(9)
    shape = _rectangular(market)
    if shape is None:
        raise ValueError("markup test expects equal-sized markets sorted by market id")
    T, J = shape
    params = fit.demand_params(quad.nodes.size)
    delta = fit.delta
    if delta is None or fit.sigma_x is not None:
        delta = invert_flat(share, x, market, params, quad)
    P = np.asarray(price, dtype=float).reshape(T, J)
    S = np.asarray(share, dtype=float).reshape(T, J)
    Xr = np.asarray(x, dtype=float).reshape(T, J)
    D = np.asarray(delta).reshape(T, J)
    Zv = _values(Z)
    n = len(Zv)
    cost_X = np.asarray(cost_X, dtype=float)
    if residualize:
        Zv = Zv - cost_X @ np.linalg.lstsq(cost_X, Zv, rcond=None)[0]
    ZtZ = Zv.T @ Zv
    if np.linalg.matrix_rank(ZtZ) < ZtZ.shape[0]:
        raise RankError("instrument cross-product matrix is singular")
    W = n * np.linalg.inv(ZtZ)
    q, g, omega = [], [], []
    for H in (H1, H2):
        _, eta = recover_mc(P, S, Xr, params, quad, H, delta=D)
        resid = ols(P.ravel() - eta.ravel(), cost_X).residuals
        g_m = Zv.T @ resid / n
        q.append(float(g_m @ W @ g_m))
        g.append(g_m)
        omega.append(resid)
    psi = 2.0 * (Zv * omega[0][:, None]) @ (W @ g[0]) - 2.0 * (Zv * omega[1][:, None]) @ (W @ g[1])
    return _rv_from_influence(q[0], q[1], psi, clusters, scale=max(q[0], q[1]))


# --- pairwise matrices -------------------------------------------------------


@dataclass
class PairwiseResult:
    names: tuple[str, ...]
    t: pd.DataFrame
    long: pd.DataFrame


def pairwise_matrix(
    hypotheses: Mapping[str, np.ndarray],
    price: np.ndarray,
    X_exog: np.ndarray,
    iv_builder: Callable[[np.ndarray], InstrumentMatrix],
    fe: Sequence[np.ndarray] = (),
    clusters: Optional[np.ndarray] = None,
) -> PairwiseResult:
    """All pairwise first-stage RV tests among conduct hypotheses.

    ``hypotheses`` maps a name to a per-observation effective-group id.
    Entry ``(r, c)`` uses the column hypothesis for the competition-side
    instruments and the row hypothesis for the collusion side, so a positive
    value is evidence for the row model and the matrix is antisymmetric.
    """
    names = tuple(hypotheses)
    if len(names) < 2:
        raise ValueError("need at least two hypotheses")
    z = {h: iv_builder(np.asarray(hypotheses[h])) for h in names}
    k = len(names)
    mat = np.full((k, k), np.nan)
    rows = []
    for r in range(k):
        for c in range(r + 1, k):
            res = t_iv_rv(price, X_exog, z[names[c]], z[names[r]], fe=fe, clusters=clusters)
            mat[r, c] = res.t_stat
            mat[c, r] = -res.t_stat
            rows.append((names[r], names[c], res.t_stat, res.p_collusion, res.p_competition, res.degenerate))
            rows.append((names[c], names[r], -res.t_stat, res.p_competition, res.p_collusion, res.degenerate))
    long = pd.DataFrame(rows, columns=["row", "col", "t", "p_collusion", "p_competition", "degenerate"])
    return PairwiseResult(names, pd.DataFrame(mat, index=list(names), columns=list(names)), long)
