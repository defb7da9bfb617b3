import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.integrate import solve_ivp

from hughes1d import dpa
from hughes1d.model import CostModel, PiecewiseConstantDensity, Scenario, VelocityModel
from hughes1d.turning import particle_zeta

V = VelocityModel()
REC = CostModel.reciprocal()
FIG1 = PiecewiseConstantDensity.from_blocks([(-1, 1, 0.6)])
FIG2 = PiecewiseConstantDensity.from_blocks([(-1, 0, 0.25), (0, 1, 0.6)])
FIG3 = PiecewiseConstantDensity.from_blocks([(-1, 0, 0.1), (0, 1, 0.9)])
FIG4 = PiecewiseConstantDensity.from_blocks([(-0.8, -0.5, 0.8), (-0.3, 0.3, 0.6), (0.4, 0.75, 0.9)])


def scen(datum, cost, **kw):
    return Scenario(V, cost, datum, **kw)


def test_init_examples():
    s = dpa.init_particles(FIG1, n=2)
    assert np.allclose(s.x, [-1, -0.5, 0, 0.5, 1], atol=1e-15) and s.m == pytest.approx(0.3)
    s = dpa.init_particles(PiecewiseConstantDensity.from_blocks([(0.4, 0.75, 0.9)]), n=1)
    assert np.allclose(s.x, [0.4, 0.575, 0.75], atol=1e-15) and s.m == pytest.approx(0.1575)


def test_init_gaps_are_straddled():
    s = dpa.init_particles(FIG4, n=10)
    for a, b in [(-0.5, -0.3), (0.3, 0.4)]:
        assert not np.any((s.x > a) & (s.x < b))
        i = int(np.searchsorted(s.x, a, side="right")) - 1
        assert s.x[i] <= a and s.x[i + 1] >= b


def test_init_rejects_empty_datum():
    with pytest.raises(ValueError):
        dpa.init_particles(PiecewiseConstantDensity.empty(), n=3)


blocks = st.lists(st.tuples(st.floats(0.02, 0.4), st.floats(0.0, 0.95)), min_size=1, max_size=5)


@settings(max_examples=40, deadline=None)
@given(blocks, st.integers(1, 9))
def test_init_places_mass_quantiles(pieces, n):
    x, bps, vals = -1.0, [-1.0], []
    for w, v in pieces:
        x += w
        bps.append(x)
        vals.append(v)
    rho = PiecewiseConstantDensity(bps, vals)
    if rho.mass() < 1e-6:
        return
    s = dpa.init_particles(rho, n=n)
    cum = np.array([rho.restrict(-2, xi).mass() for xi in s.x])
    assert np.allclose(cum, np.arange(s.N + 1) * s.m, atol=1e-12)
    assert np.diff(s.x).min() >= s.m / V.rho_max - 1e-12


def test_velocity_branches():
    x = np.array([0.0, 0.4])
    m = 0.2  # gap m / 0.5
    sp = dpa.velocities(x, 0, m, V)
    assert sp[0] == pytest.approx(V.v(0.5)) and sp[1] == V.v_max
    x = np.array([-0.9, -0.6, -0.2])
    assert np.all(dpa.velocities(x, 3, 0.05, V) < 0)
    x = np.array([0.0, 0.1])
    assert dpa.velocities(x, 0, 0.1, V)[0] == pytest.approx(0.0, abs=1e-15)
    with pytest.raises(dpa.InvariantViolation):
        dpa.velocities(np.array([0.0, 0.05]), 0, 0.1, V)


def test_reconstruction():
    s = dpa.ParticleState(np.linspace(-0.5, 0.5, 11), 0.05)
    rho = dpa.reconstruct_density(s)
    assert np.allclose(rho.values, 0.5) and rho.mass() == pytest.approx(0.5, abs=1e-15)
    s = dpa.ParticleState(np.array([0.0, 0.1]), 0.1)
    assert dpa.reconstruct_density(s).values[0] == pytest.approx(1.0)
    s = dpa.ParticleState(np.linspace(-0.5, 0.5, 11), 0.05, zeta=0.03)
    g = dpa.reconstruct_density(s, dpa.GENERAL_COST)
    assert g(np.array([0.05]))[0] == 0.0 and g.mass() == pytest.approx(0.45)


def test_zeta_definitions_agree():
    s = dpa.init_particles(FIG2, n=7)
    x = s.x * 0.9 + 0.05
    a = dpa.linear_zeta(x, s.m, 2.0)
    assert a == pytest.approx(particle_zeta(x, s.m, 2.0), abs=1e-15)
    assert a == pytest.approx(dpa.discrete_zeta(x, s.m, CostModel.linear(2.0), V), abs=1e-14)


def test_even_datum_with_odd_count_stays_symmetric():
    traj = dpa.run(scen(FIG1, REC), N=2 ** 9 - 1, horizon=1.0)
    assert np.abs(traj.trace.turning[:, 1]).max() <= 1e-10
    for x in traj.particle_positions:
        assert np.abs(x + x[::-1]).max() <= 1e-9
    assert not traj.trace.events_of("DirectionSwitch")


def test_even_count_puts_a_particle_on_the_axis():
    # N = 2^n is even: the middle quantile sits at 0 and joins the right group
    traj = dpa.run(scen(FIG1, CostModel.linear(1.0)), n=9, horizon=1.0)
    z = np.abs(traj.trace.turning[:, 1]).max()
    assert 0 < z <= traj.m


def _standalone_ftl(x0, m, sign, times):
    """Follow-the-leader integration of one group, leader at the front."""
    def rhs(t, x):
        out = np.empty_like(x)
        if sign > 0:
            out[-1] = V.v_max
            out[:-1] = V.v(m / np.diff(x))
        else:
            out[0] = -V.v_max
            out[1:] = -V.v(m / np.diff(x))
        return out
    sol = solve_ivp(rhs, (0, times[-1]), x0, method="DOP853", rtol=1e-13, atol=1e-14, t_eval=times)
    return sol.y.T


def test_zero_alpha_matches_standalone_ftl():
    traj = dpa.run(scen(FIG2, CostModel.linear(0.0)), n=9, horizon=1.0, snapshot_dt=0.1)
    assert np.all(traj.trace.turning[:, 1] == 0.0)
    x0 = traj.particle_positions[0]
    k = int(np.searchsorted(x0, 0.0))
    times = np.array(traj.particle_times)
    ref = np.hstack([_standalone_ftl(x0[:k], traj.m, -1, times), _standalone_ftl(x0[k:], traj.m, 1, times)])
    assert np.abs(np.array(traj.particle_positions) - ref).max() <= 1e-9


def test_rightward_group_evacuation_time():
    rho = PiecewiseConstantDensity.from_blocks([(0.2, 0.6, 0.5)])
    traj = dpa.run(scen(rho, CostModel.linear(0.0)), n=8, horizon=10.0)
    assert not traj.trace.events_of("ExitLeft")
    # every particle moves at least at v(0.5) = 0.5
    assert traj.T_mic <= 0.8 / 0.5
    # the tail shock meets the front fan at t = 0.8 and then follows x = 0.6 + t - sqrt(0.8 t)
    s = (np.sqrt(0.8) + np.sqrt(0.8 + 1.6)) / 2
    assert traj.T_mic == pytest.approx(s * s, abs=0.02)


@pytest.mark.parametrize("datum", [FIG2, FIG3, FIG4], ids=["fig2", "fig3", "fig4"])
def test_run_invariants(datum):
    traj = dpa.run(scen(datum, CostModel.linear(1.0)), n=8, horizon=50.0, snapshot_dt=0.1)
    assert traj.T_mic is not None and traj.T_mic < 50
    for x in traj.particle_positions:
        assert np.diff(x).min() >= traj.m / V.rho_max - 1e-9
    M = datum.mass()
    for rho in traj.trace.densities:
        assert rho.mass() == pytest.approx(M, abs=1e-12)
        assert rho.sup() <= datum.sup() + 1e-9
    # exited particles never come back
    exited = {}
    for e in traj.events:
        if e.kind.startswith("Exit"):
            exited[e.index] = e.t
    for t, x in zip(traj.particle_times, traj.particle_positions):
        for i, te in exited.items():
            if t >= te:
                assert abs(x[i]) >= 1.0
    exits = [e.t for e in traj.trace.events_of("ExitLeft", "ExitRight")]
    for e in traj.trace.events_of("TurningJump", "DirectionSwitch"):
        assert min(abs(e.t - s) for s in exits) <= 1e-10


def test_snapshot_times_increase_and_last_is_evacuation():
    traj = dpa.run(scen(FIG4, CostModel.linear(0.0)), n=6, horizon=50.0, snapshot_dt=0.5)
    assert np.all(np.diff(traj.trace.times) > 0)
    assert traj.trace.times[-1] == traj.T_mic
    assert np.all(np.abs(traj.particle_positions[-1]) >= 1.0)


def test_reciprocal_fig3_particles_turn_back():
    traj = dpa.run(scen(FIG3, REC), n=8, horizon=1.0)
    switches = traj.trace.events_of("DirectionSwitch")
    assert switches
    # left movers join the right group: the left group shrinks
    assert all(e.new < e.old for e in switches)


def test_memory_and_relaxation_operators_run():
    for kind in ("memory", "relaxation"):
        sc = scen(FIG2, CostModel.linear(1.0), turning_kind=kind, turning_delta=5.0, turning_epsilon=0.5)
        traj = dpa.run(sc, n=6, horizon=0.3)
        z = traj.trace.turning[:, 1]
        assert np.all(np.abs(z) <= 1) and np.all(np.isfinite(z))


def test_sweep_alpha():
    rows = dpa.sweep_alpha(scen(FIG1, CostModel.linear(0.0)), [1.0, 0.0, 0.5], n=6)
    assert [r[0] for r in rows] == [0.0, 0.5, 1.0]
    assert len({r[1] for r in rows}) == 1
    rows = dpa.sweep_alpha(scen(FIG1, CostModel.linear(0.0)), [-1.0, 0.0], n=5)
    assert rows[0][1] is None and rows[0][2] and rows[1][1] is not None
