"""Logit and one-random-coefficient logit: shares, price derivatives, inversion.

Every function accepts a single market (arrays of shape ``(J,)``) or a stack
of equally sized markets (shape ``(T, J)``); products are always the last axis.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .model import ConvergenceError, DemandParams

INVERSION_TOL = 1e-12
INVERSION_MAX_ITER = 5000


class DomainError(ValueError):
    """Shares outside the open simplex."""


@dataclass(frozen=True)
class Quadrature:
    """Nodes and weights integrating against the standard normal density."""

    nodes: np.ndarray
    weights: np.ndarray

    @classmethod
    def gauss_hermite(cls, n: int = 9) -> "Quadrature":
        x, w = np.polynomial.hermite.hermgauss(n)
        w = w / w.sum()
        return cls(nodes=np.sqrt(2.0) * x, weights=w)

    def integrate(self, f) -> float:
        return float(np.sum(self.weights * f(self.nodes)))


def _logsumexp_shares(u: np.ndarray, axis: int) -> np.ndarray:
    # outside option has utility 0
    m = np.maximum(u.max(axis=axis, keepdims=True), 0.0)
    e = np.exp(u - m)
    return e / (np.exp(-m) + e.sum(axis=axis, keepdims=True))


def logit_shares(delta: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Inside shares and outside share for plain logit."""
    s = _logsumexp_shares(np.asarray(delta, dtype=float), axis=-1)
    return s, 1.0 - s.sum(axis=-1)


def node_shares(delta: np.ndarray, x: np.ndarray, sigma_x: float, quad: Quadrature) -> np.ndarray:
    """Per-node conditional choice probabilities, shape ``(..., J, nodes)``."""
    delta = np.asarray(delta, dtype=float)
    u = delta[..., None] + sigma_x * np.asarray(x, dtype=float)[..., None] * quad.nodes
    return _logsumexp_shares(u, axis=-2)


def rc_shares(delta: np.ndarray, x: np.ndarray, sigma_x: float, quad: Quadrature) -> np.ndarray:
    """Random-coefficient logit shares integrated over the quadrature nodes."""
    if sigma_x == 0.0:
        return logit_shares(delta)[0]
    return node_shares(delta, x, sigma_x, quad) @ quad.weights


def share_moments(delta, x, sigma_x: float, quad: Quadrature) -> tuple[np.ndarray, np.ndarray]:
    """Shares ``s`` and the cross-moment matrix ``G_jk = E[s_ij s_ik]``.

    The share-price Jacobian is ``-alpha * (diag(s) - G)``.
    """
    if sigma_x == 0.0:
        s = logit_shares(delta)[0]
        return s, s[..., :, None] * s[..., None, :]
    sn = node_shares(delta, x, sigma_x, quad)
    s = sn @ quad.weights
    G = np.einsum("...jn,...kn,n->...jk", sn, sn, quad.weights)
    return s, G


def share_price_jacobian(delta, x, params: DemandParams, quad: Quadrature) -> np.ndarray:
    """``D[..., j, k] = d s_j / d p_k``."""
    s, G = share_moments(delta, x, params.sigma_x, quad)
    eye = np.eye(s.shape[-1])
    return -params.alpha * (s[..., :, None] * eye - G)


def _check_shares(S: np.ndarray) -> None:
    if not np.all(np.isfinite(S)) or np.any(S <= 0):
        raise DomainError("observed shares must be strictly positive")
    if np.any(S.sum(axis=-1) >= 1):
        raise DomainError("inside shares must sum to less than one in every market")


def invert_shares(
    S: np.ndarray,
    x: np.ndarray,
    params: DemandParams,
    quad: Quadrature,
    delta0: Optional[np.ndarray] = None,
    tol: float = INVERSION_TOL,
    max_iter: int = INVERSION_MAX_ITER,
    history: Optional[list] = None,
) -> np.ndarray:
    """Mean utilities matching observed shares (Berry inversion).

    Logit is inverted in closed form. With a random coefficient the plain
    contraction ``delta <- delta + log S - log s(delta)`` runs until the
    sup-norm of the log-share residual drops below ``tol``. If ``history`` is
    given, the residual norm of each iteration is appended to it.
    """
    S = np.asarray(S, dtype=float)
    _check_shares(S)
    log_S = np.log(S)
    log_s0 = np.log1p(-S.sum(axis=-1, keepdims=True))
    if params.sigma_x == 0.0:
        return log_S - log_s0
    delta = (log_S - log_s0) if delta0 is None else np.array(delta0, dtype=float)
    # exp(sigma x nu) does not change across iterations; reuse it while safely in range
    mu = params.sigma_x * np.asarray(x, dtype=float)[..., None] * quad.nodes
    E = np.exp(mu) if np.max(np.abs(mu)) < 300.0 else None
    resid = np.inf
    for _ in range(max_iter):
        if E is not None and np.max(delta) < 300.0:
            ed = np.exp(delta)
            denom = 1.0 + (ed[..., None, :] @ E)[..., 0, :]
            s = ed * (E @ (quad.weights / denom)[..., :, None])[..., 0]
        else:
            s = rc_shares(delta, x, params.sigma_x, quad)
        step = log_S - np.log(s)
        resid = float(np.max(np.abs(step))) if step.size else 0.0
        if history is not None:
            history.append(resid)
        if not np.isfinite(resid):
            break
        delta = delta + step
        if resid < tol:
            return delta
    raise ConvergenceError("share inversion did not converge", resid)
