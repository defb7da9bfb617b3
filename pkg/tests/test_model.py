import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hughes1d.model import (
    CostModel,
    DomainError,
    FluxModel,
    PiecewiseConstantDensity,
    Scenario,
    VelocityModel,
    check_hypotheses,
    cost_eval,
    critical_density,
    density_cost_integral,
    density_mass,
    flux_eval,
    l1_distance,
)

V = VelocityModel()
F = FluxModel(V)
FIG2 = PiecewiseConstantDensity.from_blocks([(-1, 0, 0.25), (0, 1, 0.6)])
FIG4 = PiecewiseConstantDensity.from_blocks([(-0.8, -0.5, 0.8), (-0.3, 0.3, 0.6), (0.4, 0.75, 0.9)])


def test_flux_values():
    assert flux_eval(F, 0.0) == 0.0
    assert flux_eval(F, 1.0) == 0.0
    assert flux_eval(F, 0.5) == 0.25


def test_flux_rejects_out_of_range():
    with pytest.raises(DomainError):
        flux_eval(F, 1.2)
    with pytest.raises(DomainError):
        flux_eval(F, -0.1)


@pytest.mark.parametrize("rho_max, v_max", [(1.0, 1.0), (2.0, 1.0), (2.0, 3.0)])
def test_critical_density_matches_grid_argmax(rho_max, v_max):
    vel = VelocityModel(rho_max=rho_max, v_max=v_max)
    grid = np.linspace(0.0, rho_max, 1_000_001)
    oracle = grid[np.argmax(grid * vel.v(grid))]
    assert critical_density(vel) == pytest.approx(oracle, abs=2 * rho_max / 1e6)
    rh = critical_density(vel)
    assert np.all(FluxModel(vel).f(rh) >= FluxModel(vel).f(grid) - 1e-15)


def test_critical_density_custom_by_root_finding():
    vel = VelocityModel(kind="custom", func=lambda r: (1 - r) ** 2, deriv=lambda r: -2 * (1 - r),
                        deriv2=lambda r: 2.0 + 0.0 * r)
    # f = r (1-r)^2 peaks at 1/3
    assert critical_density(vel) == pytest.approx(1 / 3, abs=1e-12)


def test_cost_values():
    lin = CostModel.linear(1.0)
    rec = CostModel.reciprocal()
    assert cost_eval(lin, 0.0, V) == 1.0
    assert cost_eval(rec, 0.0, V) == 1.0
    assert cost_eval(lin, 0.6, V) == pytest.approx(1.6)
    assert cost_eval(rec, 0.6, V) == pytest.approx(2.5, rel=1e-15)
    with pytest.raises(DomainError):
        cost_eval(rec, 1.0, V)


def test_hypotheses_linear_models():
    rep = check_hypotheses(V, CostModel.linear(1.0))
    assert rep.H1 and rep.H2 and rep.H2_prime
    assert not rep.H1_strict  # c'' = 0
    assert CostModel.linear(1.0).d2c(0.3, V) == 0.0


def test_hypotheses_report_h2_prime_violation():
    # v = (1-r)^2: v' + r v'' = -2 + 4r > 0 for r > 1/2
    vel = VelocityModel(kind="custom", func=lambda r: (1 - r) ** 2, deriv=lambda r: -2 * (1 - r),
                        deriv2=lambda r: 2.0 + 0.0 * r)
    rep = check_hypotheses(vel, CostModel.reciprocal())
    assert rep.H2 and not rep.H2_prime
    first = rep.violations["H2_prime"]
    assert 0.5 < first < 0.5 + 2e-4


def test_reciprocal_cost_is_strictly_convex():
    rep = check_hypotheses(V, CostModel.reciprocal())
    assert rep.H1 and rep.H1_strict


def test_masses():
    uni = PiecewiseConstantDensity([-1, 1], [0.6])
    assert density_mass(uni, -1, 1) == pytest.approx(1.2)
    assert density_mass(PiecewiseConstantDensity.empty(), -1, 1) == 0.0
    assert density_mass(FIG4, -1, 1) == pytest.approx(0.8 * 0.3 + 0.6 * 0.6 + 0.9 * 0.35, abs=1e-15)


def test_cost_integrals():
    assert density_cost_integral(PiecewiseConstantDensity.empty(), CostModel.linear(1), V, -1, 1) == 2.0
    half = PiecewiseConstantDensity([-1, 1], [0.5])
    assert density_cost_integral(half, CostModel.linear(1), V, -1, 0) == pytest.approx(1.5)
    assert density_cost_integral(FIG2, CostModel.reciprocal(), V, -1, 0) == pytest.approx(4 / 3, abs=1e-15)


blocks = st.lists(st.tuples(st.floats(0.01, 0.5), st.floats(0.0, 0.99)), min_size=1, max_size=6)


def _density(pieces):
    x, bps, vals = -1.0, [-1.0], []
    for w, v in pieces:
        x += w
        bps.append(x)
        vals.append(v)
    return PiecewiseConstantDensity(bps, vals)


@settings(max_examples=60, deadline=None)
@given(blocks, st.floats(-2, 2), st.floats(-2, 2), st.floats(-2, 2))
def test_cost_integral_additive(pieces, a, b, c):
    a, b, c = sorted((a, b, c))
    rho = _density(pieces)
    for cost in (CostModel.linear(2.0), CostModel.reciprocal()):
        lhs = density_cost_integral(rho, cost, V, a, b) + density_cost_integral(rho, cost, V, b, c)
        assert lhs == pytest.approx(density_cost_integral(rho, cost, V, a, c), abs=1e-12)


@settings(max_examples=60, deadline=None)
@given(blocks)
def test_full_mass_is_closed_form(pieces):
    rho = _density(pieces)
    assert density_mass(rho) == float(np.dot(np.diff(rho.breakpoints), rho.values))


@settings(max_examples=40, deadline=None)
@given(st.floats(0.0, 0.999))
def test_cost_at_least_one(r):
    assert cost_eval(CostModel.reciprocal(), r, V) >= 1.0
    assert cost_eval(CostModel.linear(3.0), r, V) >= 1.0


def test_flux_positive_inside():
    r = np.linspace(0, 1, 10_001)[1:-1]
    assert np.all(F.f(r) > 0)


def test_density_utilities():
    rho = PiecewiseConstantDensity([-1, 0, 0.5, 1], [0.2, 0.2, 0.0])
    assert rho.canonical() == PiecewiseConstantDensity([-1, 0.5], [0.2])
    assert rho.reflect().reflect() == rho
    assert rho.left_limit(-1.0) == 0.0 and rho.right_limit(-1.0) == 0.2
    assert FIG2.total_variation() == pytest.approx(0.25 + 0.35 + 0.6)
    assert FIG2.total_variation(-1, 1) == pytest.approx(0.35)
    assert l1_distance(FIG2, FIG2) == 0.0
    assert l1_distance(FIG2, PiecewiseConstantDensity.empty(), -1, 0) == pytest.approx(0.25)


def test_scenario_validation():
    with pytest.raises(ValueError):
        Scenario(V, CostModel.reciprocal(), PiecewiseConstantDensity([-2, 0], [0.3]))
    with pytest.raises(ValueError):
        Scenario(V, CostModel.reciprocal(), FIG2, horizon=0.0)
    s = Scenario(V, CostModel.reciprocal(), FIG2)
    assert s.with_(horizon=3.0).horizon == 3.0
    assert math.isclose(s.flux.rho_hat, 0.5)
