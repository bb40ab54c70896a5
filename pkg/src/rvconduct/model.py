"""Core data types: parameter bundles, Monte Carlo configurations, markets and
ownership structure."""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from typing import Any, Mapping, Optional

import numpy as np


class ConfigError(ValueError):
    """Invalid configuration or structural input."""


class ConvergenceError(RuntimeError):
    """An iterative routine failed to converge; carries the last residual."""

    def __init__(self, message: str, residual: float = float("nan")):
        super().__init__(f"{message} (last residual {residual:.3e})")
        self.residual = residual


IV_FORMS = ("SumOrder2", "SumOrder3", "DiffOrder2", "DiffOrder3")


@dataclass(frozen=True)
class DemandParams:
    alpha: float = 1.0
    beta: tuple[float, ...] = (-4.5, 6.0)
    sigma_x: float = 0.0
    quad_nodes: int = 9

    def __post_init__(self):
        object.__setattr__(self, "beta", tuple(float(b) for b in self.beta))
        if self.sigma_x < 0:
            raise ConfigError("sigma_x must be non-negative")
        if self.quad_nodes < 1:
            raise ConfigError("quad_nodes must be at least 1")


@dataclass(frozen=True)
class CostParams:
    gamma: tuple[float, ...] = (2.0, 1.0, 0.2)

    def __post_init__(self):
        object.__setattr__(self, "gamma", tuple(float(g) for g in self.gamma))
        if len(self.gamma) != 3:
            raise ConfigError("gamma must hold (intercept, attribute, cost shifter)")


@dataclass(frozen=True)
class ShockParams:
    var_xi: float = 0.2
    var_omega: float = 0.2
    cov_xi_omega: float = 0.1

    def __post_init__(self):
        if self.var_xi < 0 or self.var_omega < 0:
            raise ConfigError("shock variances must be non-negative")
        if self.var_xi * self.var_omega < self.cov_xi_omega**2 - 1e-15:
            raise ConfigError("shock covariance matrix is not positive semidefinite")

    @property
    def cov(self) -> np.ndarray:
        return np.array([[self.var_xi, self.cov_xi_omega], [self.cov_xi_omega, self.var_omega]])


@dataclass(frozen=True)
class ConductSpec:
    """Internalization weight plus the product -> effective-firm map."""

    phi: float
    effective_group: np.ndarray

    def __post_init__(self):
        if not 0.0 <= self.phi <= 1.0:
            raise ConfigError(f"phi must lie in [0, 1], got {self.phi}")
        object.__setattr__(self, "effective_group", np.asarray(self.effective_group, dtype=int))


@dataclass(frozen=True)
class MonteCarloConfig:
    """One experiment cell: market structure, conduct, replicate count, primitives."""

    J: int
    F: int
    T: int
    phi: float
    F_c: int
    S: int
    master_seed: int
    rho: Optional[float] = None
    demand: DemandParams = field(default_factory=DemandParams)
    cost: CostParams = field(default_factory=CostParams)
    shocks: ShockParams = field(default_factory=ShockParams)
    iv_form: str = "SumOrder2"
    # run options
    endogenous_mode: str = "minmax"
    estimate_sets: tuple[str, ...] = ()
    fstat_sets: tuple[str, ...] = ()
    markup_test: bool = False
    sigma_bounds: tuple[float, float] = (0.0, 20.0)

    def __post_init__(self):
        object.__setattr__(self, "estimate_sets", tuple(self.estimate_sets))
        object.__setattr__(self, "fstat_sets", tuple(self.fstat_sets))
        object.__setattr__(self, "sigma_bounds", tuple(float(b) for b in self.sigma_bounds))
        if not 1 <= self.F <= self.J:
            raise ConfigError(f"need 1 <= F <= J, got F={self.F}, J={self.J}")
        if not 1 <= self.F_c <= self.F:
            raise ConfigError(f"need 1 <= F_c <= F, got F_c={self.F_c}, F={self.F}")
        if self.T < 1 or self.S < 1:
            raise ConfigError("T and S must be positive")
        if not 0.0 <= self.phi <= 1.0:
            raise ConfigError(f"phi must lie in [0, 1], got {self.phi}")
        if self.iv_form not in IV_FORMS:
            raise ConfigError(f"iv_form must be one of {IV_FORMS}, got {self.iv_form!r}")
        if self.endogenous_mode not in ("minmax", "trivariate"):
            raise ConfigError("endogenous_mode must be 'minmax' or 'trivariate'")
        known = {"comp", "coll", "own", "other", "both"}
        for name in (*self.estimate_sets, *self.fstat_sets):
            if name not in known:
                raise ConfigError(f"unknown instrument set {name!r}")
        if len(self.demand.beta) != 2:
            raise ConfigError("the simulator uses beta = (intercept, attribute)")

    def to_dict(self) -> dict[str, Any]:
        out = dataclasses.asdict(self)
        out["demand"]["beta"] = list(self.demand.beta)
        out["cost"]["gamma"] = list(self.cost.gamma)
        out["estimate_sets"] = list(self.estimate_sets)
        out["fstat_sets"] = list(self.fstat_sets)
        out["sigma_bounds"] = list(self.sigma_bounds)
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "MonteCarloConfig":
        data = dict(data)
        required = ("J", "F", "T", "phi", "F_c", "S", "master_seed")
        for name in required:
            if name not in data:
                raise ConfigError(f"missing required field {name!r}")
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - names
        if unknown:
            raise ConfigError(f"unknown field(s): {', '.join(sorted(unknown))}")
        if "demand" in data and isinstance(data["demand"], Mapping):
            data["demand"] = DemandParams(**data["demand"])
        if "cost" in data and isinstance(data["cost"], Mapping):
            data["cost"] = CostParams(**data["cost"])
        if "shocks" in data and isinstance(data["shocks"], Mapping):
            data["shocks"] = ShockParams(**data["shocks"])
        for name in ("J", "F", "T", "F_c", "S", "master_seed"):
            value = data[name]
            if isinstance(value, bool) or int(value) != value:
                raise ConfigError(f"field {name!r} must be an integer")
            data[name] = int(value)
        data["phi"] = float(data["phi"])
        if data.get("rho") is not None:
            data["rho"] = float(data["rho"])
        try:
            return cls(**data)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def from_json(cls, text: str) -> "MonteCarloConfig":
        return cls.from_dict(json.loads(text))

    def replace(self, **changes) -> "MonteCarloConfig":
        return dataclasses.replace(self, **changes)


@dataclass(frozen=True)
class Market:
    market_id: int
    firm_id: np.ndarray
    effective_firm_id: np.ndarray
    x: np.ndarray
    w: np.ndarray
    xi: np.ndarray
    omega: np.ndarray
    mc: np.ndarray
    price: np.ndarray
    share: np.ndarray
    market_size: float = 1.0

    @property
    def J(self) -> int:
        return len(self.price)

    @property
    def outside_share(self) -> float:
        return float(1.0 - self.share.sum())


def assign_firms(J: int, F: int, rng: np.random.Generator) -> np.ndarray:
    """Product -> firm map (0-based firm ids, products sorted by firm).

    Each firm owns floor(J/F) or ceil(J/F) products; which firms get the extra
    product is drawn from ``rng``.
    """
    if F < 1 or F > J:
        raise ConfigError(f"need 1 <= F <= J, got F={F}, J={J}")
    counts = np.full(F, J // F)
    extra = J - counts.sum()
    if extra:
        counts[rng.choice(F, size=extra, replace=False)] += 1
    return np.repeat(np.arange(F), counts)


def effective_index(firm: np.ndarray, F: int, F_c: int) -> np.ndarray:
    """Merge the first ``F - F_c + 1`` firms into one effective firm.

    Effective ids reuse the lowest member firm id, so with F=6 and F_c=4 the
    groups are labelled 0, 3, 4, 5 (1, 4, 5, 6 in one-based terms).
    """
    if not 1 <= F_c <= F:
        raise ConfigError(f"need 1 <= F_c <= F, got F_c={F_c}, F={F}")
    firm = np.asarray(firm, dtype=int)
    n_merged = F - F_c + 1
    return np.where(firm < n_merged, 0, firm)


def _same(ids: np.ndarray) -> np.ndarray:
    ids = np.asarray(ids)
    return (ids[:, None] == ids[None, :]).astype(float)


def build_ownership(firm: np.ndarray, conduct: ConductSpec) -> np.ndarray:
    """Dense J x J ownership matrix: 1 own firm, phi colluding partner, 0 otherwise."""
    firm = np.asarray(firm)
    group = conduct.effective_group
    if firm.shape != group.shape:
        raise ConfigError("firm and effective-group maps must cover the same products")
    for f in np.unique(firm):
        if len(np.unique(group[firm == f])) > 1:
            raise ConfigError(f"firm {f} is split across effective groups")
    b_firm = _same(firm)
    b_eff = _same(group)
    return b_firm + conduct.phi * (b_eff - b_firm)
