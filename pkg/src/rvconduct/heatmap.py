"""Price-attribute Jacobians for a nested-logit market at several internalization weights."""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Mapping

import numpy as np
import pandas as pd

from .model import ConductSpec, ConfigError, assign_firms
from .supply import NestedLogitParams, nested_logit_price_jacobian, nested_logit_shares


@dataclass(frozen=True)
class JacobianConfig:
    J: int = 60
    F: int = 6
    G: int = 3
    sigma_nest: float = 0.2
    alpha: float = 1.0
    beta: tuple[float, float] = (-3.0, 7.0)
    gamma: tuple[float, float] = (1.0, 6.5)
    xi_sd: float = 0.2
    n_colluding: int = 3
    seed: int = 0
    phis: tuple[float, ...] = (0.0, 0.2, 0.5, 0.8, 1.0)

    def __post_init__(self):
        object.__setattr__(self, "beta", tuple(float(b) for b in self.beta))
        object.__setattr__(self, "gamma", tuple(float(g) for g in self.gamma))
        object.__setattr__(self, "phis", tuple(float(p) for p in self.phis))
        if not 0.0 <= self.sigma_nest < 1.0:
            raise ConfigError(f"sigma_nest must lie in [0, 1), got {self.sigma_nest}")
        if not 1 <= self.F <= self.J:
            raise ConfigError("need 1 <= F <= J")
        if not 1 <= self.G <= self.J:
            raise ConfigError("need 1 <= G <= J")
        if not 1 <= self.n_colluding <= self.F:
            raise ConfigError("need 1 <= n_colluding <= F")
        if any(not 0.0 <= p <= 1.0 for p in self.phis):
            raise ConfigError("every phi must lie in [0, 1]")

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "JacobianConfig":
        names = set(cls.__dataclass_fields__)
        unknown = set(data) - names
        if unknown:
            raise ConfigError(f"unknown field(s): {', '.join(sorted(unknown))}")
        return cls(**data)

    @classmethod
    def from_json(cls, text: str) -> "JacobianConfig":
        return cls.from_dict(json.loads(text))


@dataclass
class JacobianMarket:
    firm: np.ndarray
    group: np.ndarray
    effective: np.ndarray
    x: np.ndarray
    xi: np.ndarray


def draw_market(cfg: JacobianConfig) -> JacobianMarket:
    """Primitives shared by every phi; products sorted by firm, then group."""
    rng = np.random.default_rng(cfg.seed)
    firm = assign_firms(cfg.J, cfg.F, rng)
    group = rng.integers(0, cfg.G, size=cfg.J)
    order = np.lexsort((group, firm))
    firm, group = firm[order], group[order]
    effective = np.where(firm < cfg.n_colluding, 0, firm)
    x = rng.uniform(size=cfg.J)
    xi = rng.normal(0.0, cfg.xi_sd, size=cfg.J)
    return JacobianMarket(firm, group, effective, x, xi)


def jacobians(cfg: JacobianConfig) -> dict[float, tuple[np.ndarray, np.ndarray, float]]:
    """``{phi: (dp/dx, prices, outside share)}``."""
    mkt = draw_market(cfg)
    nl = NestedLogitParams(cfg.sigma_nest, mkt.group)
    out = {}
    for phi in cfg.phis:
        jac, p = nested_logit_price_jacobian(
            mkt.x, mkt.xi, mkt.firm, cfg.alpha, cfg.beta, cfg.gamma, nl, ConductSpec(phi, mkt.effective)
        )
        delta = cfg.beta[0] + cfg.beta[1] * mkt.x + mkt.xi - cfg.alpha * p
        s = nested_logit_shares(delta, nl)[0]
        out[phi] = (jac, p, float(1.0 - s.sum()))
    return out


def jacobian_frame(jac: np.ndarray, mkt: JacobianMarket) -> pd.DataFrame:
    """Matrix with product ids as row/column labels and firm/group annotations as leading columns."""
    J = len(mkt.x)
    frame = pd.DataFrame(jac, columns=[f"x_{k}" for k in range(J)])
    frame.insert(0, "group", mkt.group)
    frame.insert(0, "firm", mkt.firm)
    frame.insert(0, "product", np.arange(J))
    return frame


def write_jacobians(cfg: JacobianConfig, outdir: str | Path) -> list[Path]:
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    mkt = draw_market(cfg)
    paths = []
    for phi, (jac, _, _) in jacobians(cfg).items():
        path = outdir / f"jacobian_phi_{phi:g}.csv"
        jacobian_frame(jac, mkt).to_csv(path, index=False, float_format="%.6g")
        paths.append(path)
    return paths
