import numpy as np
import pytest

from rvconduct.demand import Quadrature
from rvconduct.model import ConductSpec, DemandParams, assign_firms, build_ownership


def random_market(rng, J=None, F=None, sigma_x=0.0, phi=None):
    """Small random pricing problem: primitives, ownership and demand parameters."""
    J = J or int(rng.integers(2, 9))
    F = F or int(rng.integers(1, J + 1))
    firm = assign_firms(J, F, rng)
    n_merged = int(rng.integers(1, F + 1))
    effective = np.where(firm < n_merged, 0, firm)
    phi = float(rng.choice([0.0, 0.25, 0.5, 0.75, 1.0])) if phi is None else phi
    x = rng.uniform(size=J)
    params = DemandParams(alpha=float(rng.uniform(0.5, 2.0)), beta=(-3.0, 4.0), sigma_x=sigma_x)
    delta_bar = params.beta[0] + params.beta[1] * x + rng.normal(0.0, 0.5, J)
    mc = 1.0 + x + np.abs(rng.normal(0.0, 0.3, J))
    H = build_ownership(firm, ConductSpec(phi, effective))
    return dict(firm=firm, effective=effective, phi=phi, x=x, params=params, delta_bar=delta_bar, mc=mc, H=H)


@pytest.fixture
def quad():
    return Quadrature.gauss_hermite(9)


_CRITERIA: dict[int, list] = {}


@pytest.fixture
def report():
    """Record ``(name, ok, detail)`` sub-checks for one acceptance criterion."""

    def record(criterion, items):
        _CRITERIA[criterion] = list(items)

    return record


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        items = _CRITERIA[n]
        verdict = "PASS" if all(ok for _, ok, _ in items) else "FAIL"
        detail = "; ".join(f"{'ok' if ok else 'FAILED'} {name} [{d}]" for name, ok, d in items)
        terminalreporter.write_line(f"CRITERION {n}: {verdict} ({detail})")
