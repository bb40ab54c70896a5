"""Bertrand-Nash pricing under an arbitrary ownership matrix.

Demand enters the pricing problem only through a *kernel* returning, at a
price vector, the shares ``s``, a symmetric cross-moment matrix ``G`` and a
scale ``lam`` such that the share-price Jacobian is ``-lam * (diag(s) - G)``.
Logit, random-coefficient logit and nested logit all have this form, which is
what the zeta-markup fixed point of Morrow and Skerlos exploits.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .demand import DomainError, Quadrature, invert_shares, share_moments
from .model import ConductSpec, ConfigError, ConvergenceError, DemandParams, build_ownership

PRICE_TOL = 1e-12
PRICE_MAX_ITER = 10000
DAMPING_SWITCH = 2000

Kernel = Callable[[np.ndarray], tuple[np.ndarray, np.ndarray, float]]


class NumericalError(ArithmeticError):
    """Singular pricing system."""


def rc_kernel(delta_bar: np.ndarray, x: np.ndarray, params: DemandParams, quad: Quadrature) -> Kernel:
    """Kernel for (random-coefficient) logit; ``delta_bar`` is mean utility net of price."""

    def kernel(p):
        s, G = share_moments(delta_bar - params.alpha * p, x, params.sigma_x, quad)
        return s, G, params.alpha

    return kernel


def markups_from_kernel(s: np.ndarray, G: np.ndarray, lam: float, H: np.ndarray) -> np.ndarray:
    """``eta = -[H * ds/dp]^{-1} s`` for the kernel decomposition of ds/dp."""
    eye = np.eye(s.shape[-1])
    M = lam * H * (s[..., :, None] * eye - np.swapaxes(G, -1, -2))
    try:
        eta = np.linalg.solve(M, s[..., None])[..., 0]
    except np.linalg.LinAlgError as exc:
        raise NumericalError("singular ownership-weighted share Jacobian") from exc
    if not np.all(np.isfinite(eta)):
        raise NumericalError("non-finite markups")
    return eta


def foc_residual(p: np.ndarray, mc: np.ndarray, kernel: Kernel, H: np.ndarray) -> np.ndarray:
    s, G, lam = kernel(p)
    return p - mc - markups_from_kernel(s, G, lam, H)


def solve_prices_kernel(
    mc: np.ndarray,
    kernel: Kernel,
    H: np.ndarray,
    p0: Optional[np.ndarray] = None,
    tol: float = PRICE_TOL,
    max_iter: int = PRICE_MAX_ITER,
) -> np.ndarray:
    """Equilibrium prices via the zeta-markup fixed point ``p <- mc + zeta(p)``.

    Full steps first; after ``DAMPING_SWITCH`` iterations the update is damped
    by one half. Works on stacked markets; iteration stops once every market
    moves less than ``tol`` in sup-norm.
    """
    mc = np.asarray(mc, dtype=float)
    p = mc.copy() if p0 is None else np.array(p0, dtype=float)
    change = np.inf
    for it in range(max_iter):
        s, G, lam = kernel(p)
        eta = p - mc
        zeta = 1.0 / lam + np.einsum("...jk,...k->...j", H * np.swapaxes(G, -1, -2), eta) / s
        step = mc + zeta - p
        if it >= DAMPING_SWITCH:
            step = 0.5 * step
        change = float(np.max(np.abs(step)))
        if not np.isfinite(change):
            break
        p = p + step
        if change < tol:
            return p
    raise ConvergenceError("price fixed point did not converge", change)


def solve_prices(
    mc: np.ndarray,
    delta_bar: np.ndarray,
    x: np.ndarray,
    params: DemandParams,
    quad: Quadrature,
    H: np.ndarray,
    **kwargs,
) -> np.ndarray:
    """Bertrand-Nash prices for (random-coefficient) logit demand.

    ``delta_bar`` is the mean utility excluding price, ``x beta + xi``.
    """
    return solve_prices_kernel(mc, rc_kernel(delta_bar, x, params, quad), H, **kwargs)


def markup_logit_closed_form(
    delta: np.ndarray,
    firm: np.ndarray,
    effective: np.ndarray,
    alpha: float,
    regime: str = "competition",
) -> np.ndarray:
    """Constant-within-entity logit markups under competition or full collusion."""
    e = np.exp(np.asarray(delta, dtype=float))
    total = 1.0 + e.sum()
    if regime == "competition":
        ids = np.asarray(firm)
    elif regime == "full_collusion":
        ids = np.asarray(effective)
    else:
        raise ValueError(f"unknown regime {regime!r}")
    block = np.array([e[ids == i].sum() for i in ids])
    denom = total - block
    if np.any(denom <= 0):
        raise DomainError("non-positive markup denominator")
    return total / denom / alpha


def recover_mc(
    prices: np.ndarray,
    shares: np.ndarray,
    x: np.ndarray,
    params: DemandParams,
    quad: Quadrature,
    H: np.ndarray,
    delta: Optional[np.ndarray] = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Marginal costs and markups implied by conduct ``H`` at the given demand.

    Returns ``(mc, eta)`` with ``mc = p - eta``.
    """
    if delta is None:
        delta = invert_shares(shares, x, params, quad)
    s, G = share_moments(delta, x, params.sigma_x, quad)
    eta = markups_from_kernel(s, G, params.alpha, H)
    return np.asarray(prices) - eta, eta


# --- nested logit -----------------------------------------------------------


@dataclass(frozen=True)
class NestedLogitParams:
    sigma_nest: float
    group: np.ndarray

    def __post_init__(self):
        if not 0.0 <= self.sigma_nest < 1.0:
            raise ConfigError(f"nesting parameter must lie in [0, 1), got {self.sigma_nest}")
        object.__setattr__(self, "group", np.asarray(self.group, dtype=int))


def nested_logit_shares(delta: np.ndarray, nl: NestedLogitParams):
    """Returns ``(s, s_within, s_group_of_product)``."""
    sig = nl.sigma_nest
    g = nl.group
    labels, inv = np.unique(g, return_inverse=True)
    v = np.asarray(delta, dtype=float) / (1.0 - sig)
    m = v.max()
    ev = np.exp(v - m)
    Dg = np.bincount(inv, weights=ev, minlength=len(labels))
    s_within = ev / Dg[inv]
    # log of D_g^(1 - sigma) in original units
    log_incl = (1.0 - sig) * (np.log(Dg) + m)
    mm = max(0.0, log_incl.max())
    num = np.exp(log_incl - mm)
    s_groups = num / (np.exp(-mm) + num.sum())
    s_g = s_groups[inv]
    return s_within * s_g, s_within, s_g


def nested_logit_share_derivatives(delta: np.ndarray, nl: NestedLogitParams) -> np.ndarray:
    """``A[j, k] = d s_j / d delta_k`` (symmetric)."""
    s, _, s_g = nested_logit_shares(delta, nl)
    sig = nl.sigma_nest
    same = (nl.group[:, None] == nl.group[None, :]).astype(float)
    B = same * np.outer(s, s) / s_g[:, None]
    return (np.diag(s) - sig * B - (1.0 - sig) * np.outer(s, s)) / (1.0 - sig)


def nested_logit_kernel(delta_bar: np.ndarray, alpha: float, nl: NestedLogitParams) -> Kernel:
    sig = nl.sigma_nest
    same = (nl.group[:, None] == nl.group[None, :]).astype(float)

    def kernel(p):
        s, _, s_g = nested_logit_shares(delta_bar - alpha * p, nl)
        G = (1.0 - sig) * np.outer(s, s) + sig * same * np.outer(s, s) / s_g[:, None]
        return s, G, alpha / (1.0 - sig)

    return kernel


def _nested_logit_dA(delta: np.ndarray, nl: NestedLogitParams) -> np.ndarray:
    """Third-order tensor ``dA[j, k, m] = d A[j, k] / d delta_m``."""
    s, _, s_g = nested_logit_shares(delta, nl)
    A = nested_logit_share_derivatives(delta, nl)
    sig = nl.sigma_nest
    g = nl.group
    same = (g[:, None] == g[None, :]).astype(float)
    # d s_g(j) / d delta_m, indexed by product j
    dsg = same @ A
    dB = same[:, :, None] * (
        A[:, None, :] * (s / s_g)[None, :, None]
        + (s / s_g)[:, None, None] * A[None, :, :]
        - (np.outer(s, s) / s_g[:, None] ** 2)[:, :, None] * dsg[:, None, :]
    )
    eye = np.eye(len(s))
    dA = eye[:, :, None] * A[:, None, :] - sig * dB - (1.0 - sig) * (
        A[:, None, :] * s[None, :, None] + s[:, None, None] * A[None, :, :]
    )
    return dA / (1.0 - sig)


def nested_logit_foc(p, x, xi, alpha, beta, gamma, nl: NestedLogitParams, H) -> np.ndarray:
    """FOC system ``s + (H * ds/dp)' (p - mc)``; zero at equilibrium."""
    delta = beta[0] + beta[1] * np.asarray(x) + xi - alpha * np.asarray(p)
    s = nested_logit_shares(delta, nl)[0]
    A = nested_logit_share_derivatives(delta, nl)
    mc = gamma[0] + gamma[1] * np.asarray(x)
    return s - alpha * (H * A) @ (np.asarray(p) - mc)


def solve_nested_logit_prices(x, xi, alpha, beta, gamma, nl: NestedLogitParams, H, **kwargs):
    delta_bar = beta[0] + beta[1] * np.asarray(x) + xi
    mc = gamma[0] + gamma[1] * np.asarray(x)
    return solve_prices_kernel(mc, nested_logit_kernel(delta_bar, alpha, nl), H, **kwargs)


def nested_logit_price_jacobian(
    x: np.ndarray,
    xi: np.ndarray,
    firm: np.ndarray,
    alpha: float,
    beta: tuple[float, float],
    gamma: tuple[float, float],
    nl: NestedLogitParams,
    conduct: ConductSpec,
    prices: Optional[np.ndarray] = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Equilibrium response of prices to the attribute, ``J[j, k] = dp_j / dx_k``.

    Utility is ``beta0 + beta1 x - alpha p + xi`` with nested-logit taste
    shocks, marginal cost ``gamma0 + gamma1 x``. Uses the implicit function
    theorem on the FOC system, ``dp/dx = -[dF/dp]^{-1} dF/dx``, with analytic
    derivatives of the nested-logit shares. Returns ``(jacobian, prices)``.
    """
    x = np.asarray(x, dtype=float)
    H = build_ownership(firm, conduct)
    if prices is None:
        prices = solve_nested_logit_prices(x, xi, alpha, beta, gamma, nl, H)
    delta = beta[0] + beta[1] * x + xi - alpha * prices
    eta = prices - (gamma[0] + gamma[1] * x)
    A = nested_logit_share_derivatives(delta, nl)
    dA = _nested_logit_dA(delta, nl)
    HA = H * A
    # dF_j/d delta_m with the markup held fixed
    K = A - alpha * np.einsum("jk,jkm,k->jm", H, dA, eta)
    dF_dp = -alpha * K - alpha * HA
    dF_dx = beta[1] * K + alpha * gamma[1] * HA
    try:
        jac = -np.linalg.solve(dF_dp, dF_dx)
    except np.linalg.LinAlgError as exc:
        raise NumericalError("singular FOC Jacobian in prices") from exc
    return jac, prices
