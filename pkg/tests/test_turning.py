import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hughes1d.model import CostModel, PiecewiseConstantDensity, VelocityModel, density_cost_integral
from hughes1d.turning import (
    TurningOperator,
    balance_function,
    balance_xi,
    discrete_lipschitz,
    memory_xi,
    particle_density_inside,
    particle_zeta,
    relaxation_xi_step,
    subjective_density,
)

V = VelocityModel()
REC = CostModel.reciprocal()
FIG2 = PiecewiseConstantDensity.from_blocks([(-1, 0, 0.25), (0, 1, 0.6)])


def bisect_balance(rho, cost):
    g = lambda x: density_cost_integral(rho, cost, V, -1, x) - density_cost_integral(rho, cost, V, x, 1)
    lo, hi = -1.0, 1.0
    while hi - lo > 1e-13:
        mid = 0.5 * (lo + hi)
        lo, hi = (mid, hi) if g(mid) < 0 else (lo, mid)
    return 0.5 * (lo + hi)


def test_balance_trivial_cases():
    assert balance_xi(PiecewiseConstantDensity.empty(), REC, V) == 0.0
    even = PiecewiseConstantDensity([-0.7, -0.2, 0.2, 0.7], [0.5, 0.1, 0.5])
    assert balance_xi(even, CostModel.linear(2.0), V) == pytest.approx(0.0, abs=1e-15)


def test_balance_fig2_reciprocal():
    xi = balance_xi(FIG2, REC, V)
    assert xi == pytest.approx(7 / 30, abs=1e-12)
    assert xi == pytest.approx(bisect_balance(FIG2, REC), abs=1e-12)


def test_density_outside_corridor_is_ignored():
    rho = PiecewiseConstantDensity([-1.5, -0.5, 0.3, 1.4], [0.9, 0.2, 0.7])
    assert balance_xi(rho, REC, V) == balance_xi(rho.restrict(-1, 1), REC, V)


blocks = st.lists(st.tuples(st.floats(0.01, 0.5), st.floats(0.0, 0.95)), min_size=1, max_size=8)


def _density(pieces, start=-1.0):
    x, bps, vals = start, [start], []
    for w, v in pieces:
        x += w
        bps.append(x)
        vals.append(v)
    return PiecewiseConstantDensity(bps, vals)


@settings(max_examples=80, deadline=None)
@given(blocks, st.sampled_from([CostModel.linear(0.0), CostModel.linear(1.0), CostModel.linear(5.0), REC]))
def test_balance_residual_and_reflection(pieces, cost):
    rho = _density(pieces)
    xi = balance_xi(rho, cost, V)
    res = density_cost_integral(rho, cost, V, -1, xi) - density_cost_integral(rho, cost, V, xi, 1)
    assert abs(res) <= 1e-12
    assert balance_xi(rho.reflect(), cost, V) == pytest.approx(-xi, abs=1e-14)
    nodes, vals = balance_function(rho, cost, V)
    assert np.all(np.diff(vals) / np.diff(nodes) >= 2 - 1e-12)


def test_particle_zeta_trivial():
    assert particle_zeta([-3.0, -2.0, 1.5], 0.1, 1.0) == 0.0
    assert particle_zeta([-0.5, 0.1, 0.2], 0.1, 0.0) == 0.0
    x = np.array([-0.9, -0.4, -0.1, 0.1, 0.4, 0.9])
    assert particle_zeta(x, 0.05, 3.0) == pytest.approx(0.0, abs=1e-15)


def test_particle_zeta_hand_value():
    # density 0.5 on (-0.5, 0), cost 2 there: weighted length 2.5, half reached at -0.5 + 0.75 / 2
    assert particle_zeta([-0.5, 0.0], 0.25, 2.0) == pytest.approx(-0.125, abs=1e-15)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(-0.99, 0.99), min_size=3, max_size=30, unique=True), st.floats(0.1, 3.0))
def test_particle_zeta_close_to_reconstructed_balance(xs, alpha):
    x = np.sort(np.asarray(xs))
    gaps = np.diff(x)
    if gaps.min() < 1e-3:
        return
    m = 0.9 * gaps.min()  # keeps densities below 1
    z = particle_zeta(x, m, alpha)
    rho = particle_density_inside(x, m)
    xi = balance_xi(rho, CostModel.linear(alpha), V)
    assert abs(z - xi) <= alpha * m + 1e-12


def test_memory_examples():
    assert memory_xi([(0.0, FIG2), (1.0, FIG2)], 1.0, REC, V, 1.0) == pytest.approx(balance_xi(FIG2, REC, V), abs=1e-14)
    empty = PiecewiseConstantDensity.empty()
    assert memory_xi([(0.0, empty), (0.5, empty)], 2.0, REC, V, 0.5) == 0.0
    rho0 = PiecewiseConstantDensity([-1, 0], [0.5])
    rho1 = PiecewiseConstantDensity([0, 1], [0.4])
    r = subjective_density([(0.0, rho0), (1.0, rho1)], 1.0, 1.0)
    e = math.exp(-1.0)
    expected = PiecewiseConstantDensity([-1, 0, 1], [e * 0.5, (1 - e) * 0.4])
    assert np.allclose(r(np.array([-0.5, 0.5])), expected(np.array([-0.5, 0.5])), atol=1e-15)
    assert memory_xi([(0.0, rho0), (1.0, rho1)], 1.0, REC, V, 1.0) == pytest.approx(balance_xi(expected, REC, V), abs=1e-14)


def test_memory_fast_rate_approaches_instantaneous():
    hist = [(0.0, PiecewiseConstantDensity([-1, 1], [0.8])), (0.5, PiecewiseConstantDensity.empty()), (1.0, FIG2)]
    assert abs(memory_xi(hist, 1e3, REC, V, 1.0) - balance_xi(FIG2, REC, V)) <= 1e-3


def test_memory_rejects_bad_input():
    with pytest.raises(ValueError):
        memory_xi([], 1.0, REC, V, 0.0)
    with pytest.raises(ValueError):
        memory_xi([(0.0, FIG2)], 0.0, REC, V, 0.0)


def test_relaxation_step():
    empty = PiecewiseConstantDensity.empty()
    assert relaxation_xi_step(0.5, empty, 1.0, REC, V, 0.1) == pytest.approx(0.4, abs=1e-15)
    root = balance_xi(FIG2, REC, V)
    assert relaxation_xi_step(root, FIG2, 0.5, REC, V, 0.1) == pytest.approx(root, abs=1e-14)
    with pytest.raises(ValueError):
        relaxation_xi_step(0.0, empty, 0.1, REC, V, 0.2)


def test_relaxation_converges_for_small_epsilon():
    eps = 1e-3
    dt = 0.2 * eps  # slope of B is at most 2 c_max = 5 here
    xi = 0.0
    for _ in range(200):
        xi = relaxation_xi_step(xi, FIG2, eps, REC, V, dt)
    assert xi == pytest.approx(balance_xi(FIG2, REC, V), abs=1e-6)


def test_discrete_lipschitz():
    assert discrete_lipschitz([(0, 0.2), (1, 0.2), (2, 0.2)]) == 0.0
    assert discrete_lipschitz([(0, 0), (0.5, 0.5), (1, 1)]) == pytest.approx(1.0)
    assert discrete_lipschitz([(0, 0), (0.5, 0.0), (0.6, 1.0), (1.0, 1.0)], jump_times=[0.6]) == 0.0
    with pytest.raises(ValueError):
        discrete_lipschitz([(0, 0)])


def test_operator_validation():
    with pytest.raises(ValueError):
        TurningOperator("memory", delta=0.0)
    with pytest.raises(ValueError):
        TurningOperator("relaxation", epsilon=-1.0)
    with pytest.raises(ValueError):
        TurningOperator("nonsense")
