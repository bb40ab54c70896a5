"""Least squares with fixed-effect absorption and classical / HC1 / CR1 covariances."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy import sparse
from scipy.sparse.csgraph import connected_components

from .model import ConvergenceError

VCOV_KINDS = ("classical", "HC1", "CR1")
COLLINEAR_TOL = 1e-9
FE_TOL = 1e-10
FE_MAX_SWEEPS = 10000


class RankError(ValueError):
    """Design matrix is rank deficient beyond the drop policy."""


@dataclass
class RegressionFit:
    coef: np.ndarray
    labels: tuple[str, ...]
    residuals: np.ndarray
    ssr: float
    n: int
    k: int
    absorbed_dof: int
    vcov_kind: str
    vcov: np.ndarray
    dropped: tuple[str, ...] = ()
    excluded_f: Optional[float] = None
    f_df: Optional[tuple[int, int]] = None
    n_clusters: Optional[int] = None

    @property
    def mean_ssr(self) -> float:
        return self.ssr / self.n

    @property
    def dof(self) -> int:
        return self.n - self.k - self.absorbed_dof

    @property
    def se(self) -> np.ndarray:
        return np.sqrt(np.diag(self.vcov))

    @property
    def tstats(self) -> np.ndarray:
        return self.coef / self.se

    def param(self, label: str) -> float:
        return float(self.coef[self.labels.index(label)])


def _labels(X: np.ndarray, labels: Optional[Sequence[str]]) -> list[str]:
    if labels is None:
        return [f"c{i}" for i in range(X.shape[1])]
    if len(labels) != X.shape[1]:
        raise ValueError("one label per column required")
    return list(labels)


def independent_columns(X: np.ndarray, tol: float = COLLINEAR_TOL) -> np.ndarray:
    """Indices of a maximal independent column subset, keeping earlier columns first."""
    keep: list[int] = []
    basis = np.zeros((X.shape[0], 0))
    for j in range(X.shape[1]):
        col = X[:, j]
        norm = np.linalg.norm(col)
        if norm == 0.0:
            continue
        r = col - basis @ (basis.T @ col)
        r = r - basis @ (basis.T @ r)
        rn = np.linalg.norm(r)
        if rn > tol * norm:
            keep.append(j)
            basis = np.column_stack([basis, r / rn])
    return np.array(keep, dtype=int)


def _as_2d(X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    return X[:, None] if X.ndim == 1 else X


def ols(
    y: np.ndarray,
    X: np.ndarray,
    labels: Optional[Sequence[str]] = None,
    vcov: str = "classical",
    clusters: Optional[np.ndarray] = None,
    absorbed_dof: int = 0,
) -> RegressionFit:
    """OLS of ``y`` on ``X``; columns linearly dependent on earlier ones are dropped.

    Small-sample factors: HC1 uses n/(n-k), CR1 uses G/(G-1) (n-1)/(n-k),
    with k counting absorbed fixed-effect parameters too.
    """
    if vcov not in VCOV_KINDS:
        raise ValueError(f"vcov must be one of {VCOV_KINDS}")
    y = np.asarray(y, dtype=float)
    X = _as_2d(X)
    names = _labels(X, labels)
    keep = independent_columns(X)
    dropped = tuple(names[j] for j in range(X.shape[1]) if j not in set(keep.tolist()))
    Xk = X[:, keep]
    n, k = Xk.shape
    k_all = k + absorbed_dof
    if n <= k_all:
        raise RankError(f"need more observations ({n}) than parameters ({k_all})")
    if k:
        coef, *_ = np.linalg.lstsq(Xk, y, rcond=None)
        XtX_inv = np.linalg.inv(Xk.T @ Xk)
    else:
        coef = np.zeros(0)
        XtX_inv = np.zeros((0, 0))
    resid = y - Xk @ coef
    ssr = float(resid @ resid)
    n_clusters = None
    if vcov == "classical":
        V = XtX_inv * (ssr / (n - k_all))
    elif vcov == "HC1":
        meat = (Xk * resid[:, None] ** 2).T @ Xk
        V = XtX_inv @ meat @ XtX_inv * (n / (n - k_all))
    else:
        if clusters is None:
            raise ValueError("CR1 needs cluster ids")
        inv = np.unique(np.asarray(clusters), return_inverse=True)[1].ravel()
        n_clusters = int(inv.max()) + 1
        if n_clusters < 2:
            raise ValueError("CR1 needs at least two clusters")
        scores = np.zeros((n_clusters, k))
        np.add.at(scores, inv, Xk * resid[:, None])
        meat = scores.T @ scores
        factor = n_clusters / (n_clusters - 1) * (n - 1) / (n - k_all)
        V = XtX_inv @ meat @ XtX_inv * factor
    V = 0.5 * (V + V.T)
    return RegressionFit(
        coef=coef,
        labels=tuple(names[j] for j in keep),
        residuals=resid,
        ssr=ssr,
        n=n,
        k=k,
        absorbed_dof=absorbed_dof,
        vcov_kind=vcov,
        vcov=V,
        dropped=dropped,
        n_clusters=n_clusters,
    )


# --- fixed effects ---------------------------------------------------------


def _codes(col) -> np.ndarray:
    return np.unique(np.asarray(col), return_inverse=True)[1].ravel()


def _fe_dof(codes: list[np.ndarray]) -> int:
    """Parameters absorbed by the fixed effects.

    Exact for one or two dimensions (levels minus connected components);
    each further dimension contributes its levels minus one.
    """
    if not codes:
        return 0
    levels = [int(c.max()) + 1 for c in codes]
    if len(codes) == 1:
        return levels[0]
    n = len(codes[0])
    a, b = codes[0], codes[1] + levels[0]
    graph = sparse.coo_matrix((np.ones(n), (a, b)), shape=(sum(levels[:2]),) * 2)
    n_comp = connected_components(graph, directed=False)[0]
    return levels[0] + levels[1] - n_comp + sum(l - 1 for l in levels[2:])


def absorb_fe(
    y: np.ndarray,
    X: np.ndarray,
    fe: Sequence[np.ndarray],
    tol: float = FE_TOL,
    max_sweeps: int = FE_MAX_SWEEPS,
) -> tuple[np.ndarray, np.ndarray, int]:
    """Within-transform ``y`` and ``X`` by alternating projections.

    Returns the demeaned ``(y, X)`` and the number of absorbed parameters.
    """
    y = np.asarray(y, dtype=float)
    X = _as_2d(X)
    if not fe:
        return y.copy(), X.copy(), 0
    codes = [_codes(c) for c in fe]
    counts = [np.bincount(c) for c in codes]
    M = np.column_stack([y, X])

    def sweep(M):
        for c, cnt in zip(codes, counts):
            sums = np.zeros((len(cnt), M.shape[1]))
            np.add.at(sums, c, M)
            M = M - (sums / cnt[:, None])[c]
        return M

    if len(codes) == 1:
        M = sweep(M)
    else:
        for _ in range(max_sweeps):
            new = sweep(M)
            change = float(np.max(np.abs(new - M))) if new.size else 0.0
            M = new
            if change < tol:
                break
        else:
            raise ConvergenceError("fixed-effect absorption did not converge", change)
    return M[:, 0], M[:, 1:], _fe_dof(codes)


def regress(
    y,
    X,
    labels=None,
    fe: Sequence[np.ndarray] = (),
    vcov: str = "classical",
    clusters=None,
) -> RegressionFit:
    """OLS after absorbing fixed effects (constant columns vanish and are dropped)."""
    y_t, X_t, dof = absorb_fe(y, X, list(fe))
    return ols(y_t, X_t, labels, vcov=vcov, clusters=clusters, absorbed_dof=dof)


def excluded_f(unrestricted: RegressionFit, restricted: RegressionFit, q: int) -> float:
    """Classical Wald F for ``q`` exclusion restrictions."""
    if q <= 0:
        return 0.0
    if unrestricted.ssr <= 0.0:
        return float("inf")
    num = max(restricted.ssr - unrestricted.ssr, 0.0) / q
    return num / (unrestricted.ssr / unrestricted.dof)


def first_stage(
    p: np.ndarray,
    X_exog: np.ndarray,
    Z: np.ndarray,
    exog_labels: Optional[Sequence[str]] = None,
    z_labels: Optional[Sequence[str]] = None,
    fe: Sequence[np.ndarray] = (),
    vcov: str = "classical",
    clusters=None,
    robust_f: bool = False,
) -> RegressionFit:
    """Regression of price on ``[X_exog, Z]`` with the excluded-instrument F attached.

    By default the F statistic is the classical nested-model F. With
    ``robust_f`` it is the Wald statistic over the Z coefficients using the
    fit's own covariance, divided by the number of restrictions.
    """
    X_exog = _as_2d(X_exog)
    Z = _as_2d(Z)
    xl = list(exog_labels) if exog_labels is not None else [f"x{i}" for i in range(X_exog.shape[1])]
    zl = list(z_labels) if z_labels is not None else [f"z{i}" for i in range(Z.shape[1])]
    y_t, M_t, dof = absorb_fe(p, np.column_stack([X_exog, Z]), list(fe))
    full = ols(y_t, M_t, xl + zl, vcov=vcov, clusters=clusters, absorbed_dof=dof)
    restricted = ols(y_t, M_t[:, : X_exog.shape[1]], xl, absorbed_dof=dof)
    z_kept = [i for i, lab in enumerate(full.labels) if lab in set(zl)]
    q = len(z_kept)
    if robust_f and q:
        b = full.coef[z_kept]
        V = full.vcov[np.ix_(z_kept, z_kept)]
        F = float(b @ np.linalg.solve(V, b)) / q
    else:
        F = excluded_f(full, restricted, q)
    full.excluded_f = F
    full.f_df = (q, full.dof)
    return full


def tsls(
    y: np.ndarray,
    X_exog: np.ndarray,
    X_endog: np.ndarray,
    Z: np.ndarray,
    labels: Optional[Sequence[str]] = None,
    fe: Sequence[np.ndarray] = (),
    vcov: str = "classical",
    clusters=None,
) -> RegressionFit:
    """Two-stage least squares, ``(X' P_Z X)^{-1} X' P_Z y`` with ``Z`` = [X_exog, Z].

    Coefficients are ordered exogenous first, then endogenous.
    """
    X_exog = _as_2d(X_exog)
    X_endog = _as_2d(X_endog)
    Z = _as_2d(Z)
    kx = X_exog.shape[1] + X_endog.shape[1]
    names = _labels(np.zeros((1, kx)), labels)
    n_ex = X_exog.shape[1]
    y_t, M, dof = absorb_fe(y, np.column_stack([X_exog, X_endog, Z]), list(fe))
    X = M[:, :kx]
    Zfull = np.column_stack([M[:, :n_ex], M[:, kx:]])
    xkeep = independent_columns(X)
    X = X[:, xkeep]
    names = [names[j] for j in xkeep]
    Zk = Zfull[:, independent_columns(Zfull)]
    if Zk.shape[1] < X.shape[1]:
        raise RankError(
            f"under-identified: {Zk.shape[1]} instruments for {X.shape[1]} regressors"
        )
    # projection via least squares of X on Z
    Xhat = Zk @ np.linalg.lstsq(Zk, X, rcond=None)[0]
    A = Xhat.T @ X
    if np.linalg.matrix_rank(A) < A.shape[0]:
        raise RankError("under-identified: instruments do not span the endogenous regressors")
    coef = np.linalg.solve(A, Xhat.T @ y_t)
    resid = y_t - X @ coef
    n, k = X.shape
    ssr = float(resid @ resid)
    A_inv = np.linalg.inv(A)
    if vcov == "classical":
        V = A_inv * ssr / (n - k - dof)
    elif vcov == "HC1":
        meat = (Xhat * resid[:, None] ** 2).T @ Xhat
        V = A_inv @ meat @ A_inv.T * n / (n - k - dof)
    else:
        inv = _codes(clusters)
        G = int(inv.max()) + 1
        scores = np.zeros((G, k))
        np.add.at(scores, inv, Xhat * resid[:, None])
        V = A_inv @ (scores.T @ scores) @ A_inv.T * G / (G - 1) * (n - 1) / (n - k - dof)
    return RegressionFit(
        coef=coef,
        labels=tuple(names),
        residuals=resid,
        ssr=ssr,
        n=n,
        k=k,
        absorbed_dof=dof,
        vcov_kind=vcov,
        vcov=0.5 * (V + V.T),
    )
