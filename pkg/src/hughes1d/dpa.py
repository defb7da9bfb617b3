"""Deterministic particle approximation (follow-the-leader) of the Hughes model.

Particles carry equal mass ``m``.  Those left of the turning point follow
their left neighbour towards -1, the others follow their right neighbour
towards +1.  The turning point is recomputed from the particle positions
after every accepted step; exits through +-1 and changes of group
membership are located in time and logged.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.optimize import brentq

from .model import CostModel, PiecewiseConstantDensity, Scenario, VelocityModel
from .trace import Event, SolutionTrace
from .turning import balance_root, balance_xi, inside_range, relaxation_xi_step

log = logging.getLogger(__name__)

LINEAR_COST = "LinearCost"
GENERAL_COST = "GeneralCost"


class InvariantViolation(RuntimeError):
    pass


class EventBracketError(RuntimeError):
    def __init__(self, msg, state=None):
        super().__init__(msg)
        self.state = state


@dataclass
class ParticleState:
    x: np.ndarray
    m: float
    zeta: float = 0.0
    t: float = 0.0

    @property
    def N(self) -> int:
        return self.x.size - 1

    @property
    def turning_index(self) -> int:
        """Largest i with x_i < zeta (-1 if none)."""
        return int(np.searchsorted(self.x, self.zeta, side="left")) - 1


def init_particles(rho: PiecewiseConstantDensity, n: Optional[int] = None, N: Optional[int] = None) -> ParticleState:
    """Place N + 1 particles at the mass quantiles i M / N of the datum."""
    rho = rho.canonical()
    M = rho.mass()
    if M <= 0:
        raise ValueError("datum has no mass")
    if N is None:
        if n is None:
            raise ValueError("give n or N")
        N = 2 ** n
    if N < 1:
        raise ValueError("need at least one gap")
    m = M / N
    bp, vals = rho.breakpoints, rho.values
    cum = np.concatenate(([0.0], np.cumsum(np.diff(bp) * vals)))
    targets = np.arange(N + 1) * m
    j = np.clip(np.searchsorted(cum, targets, side="left") - 1, 0, vals.size - 1)
    with np.errstate(divide="ignore", invalid="ignore"):
        x = bp[j] + (targets - cum[j]) / vals[j]
    x[0], x[-1] = bp[0], bp[-1]
    if np.any(np.diff(x) <= 0):
        raise InvariantViolation("initial particles not strictly ordered")
    return ParticleState(x, m)


def velocities(x: np.ndarray, k: int, m: float, velocity: VelocityModel, check: bool = True) -> np.ndarray:
    """Speeds of the follow-the-leader system; particles 0..k-1 go left, k..N go right."""
    gaps = np.diff(x)
    if check and gaps.size and gaps.min() < m / velocity.rho_max * (1 - 1e-9) - 1e-15:
        raise InvariantViolation(f"particles overlap: min gap {gaps.min()} < m/rho_max = {m / velocity.rho_max}")
    R = np.minimum(m / gaps, velocity.rho_max)
    vg = velocity.v(R)
    # phantom gaps carry no density, so both leaders move at v_max
    left = -np.concatenate(([velocity.v_max], vg))
    right = np.concatenate((vg, [velocity.v_max]))
    out = np.where(np.arange(x.size) < k, left, right)
    return out


def discrete_zeta(x: np.ndarray, m: float, cost: CostModel, velocity: VelocityModel) -> float:
    """Balance root of the full discrete density m / gap restricted to (-1, 1)."""
    lo, hi = inside_range(x)
    if hi - lo < 1:
        return 0.0
    xs = x[lo:hi + 1]
    nodes = np.empty(xs.size + 2)
    nodes[0], nodes[-1], nodes[1:-1] = -1.0, 1.0, xs
    R = np.minimum(m / np.diff(xs), velocity.rho_max * (1 - 1e-15))
    w = np.ones(nodes.size - 1)
    w[1:-1] = cost.c(R, velocity)
    return balance_root(nodes, w)


def linear_zeta(x: np.ndarray, m: float, alpha: float) -> float:
    lo, hi = inside_range(x)
    if alpha == 0 or hi - lo < 1:
        return 0.0
    xs = x[lo:hi + 1]
    nodes = np.empty(xs.size + 2)
    nodes[0], nodes[-1], nodes[1:-1] = -1.0, 1.0, xs
    w = np.ones(nodes.size - 1)
    w[1:-1] += alpha * m / np.diff(xs)
    return balance_root(nodes, w)


def reconstruct_density(state: ParticleState, mode: str = LINEAR_COST) -> PiecewiseConstantDensity:
    """Discrete density m / gap; in GeneralCost mode the gap between the two groups is empty."""
    x = state.x
    vals = state.m / np.diff(x)
    if mode == GENERAL_COST:
        k = int(np.searchsorted(x, state.zeta, side="left"))
        if 1 <= k <= vals.size:
            vals = vals.copy()
            vals[k - 1] = 0.0
    elif mode != LINEAR_COST:
        raise ValueError(f"unknown mode {mode!r}")
    return PiecewiseConstantDensity(x, vals)


@dataclass
class DpaTrajectory:
    trace: SolutionTrace
    particle_times: list
    particle_positions: list
    m: float
    N: int
    mode: str
    T_mic: Optional[float] = None

    @property
    def events(self):
        return self.trace.events


def _rk4(x, k, m, vel, h):
    f = lambda y: velocities(y, k, m, vel, check=False)
    k1 = f(x)
    k2 = f(x + 0.5 * h * k1)
    k3 = f(x + 0.5 * h * k2)
    k4 = f(x + h * k3)
    return x + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)


class DpaSolver:
    """Event-driven integrator of the particle system."""

    def __init__(self, scenario: Scenario, n: Optional[int] = None, N: Optional[int] = None,
                 mode: Optional[str] = None, h_factor: float = 0.1, time_tol: float = 1e-10,
                 hysteresis: Optional[float] = None):
        self.sc = scenario
        self.vel, self.cost = scenario.velocity, scenario.cost
        if mode is None:
            mode = LINEAR_COST if scenario.cost.kind == "linear" else GENERAL_COST
        self.mode = mode
        N = N if N is not None else scenario.dpa_N
        n = n if n is not None else scenario.dpa_n
        st = init_particles(scenario.initial, n=None if N else n, N=N)
        self.x, self.m, self.t = st.x.copy(), st.m, 0.0
        self.h = h_factor * self.m / (self.vel.rho_max * self.vel.v_max)
        self.time_tol = time_tol
        if hysteresis is None:
            hysteresis = 0.0 if mode == LINEAR_COST else 0.5
        # in units of the smallest admissible gap m / rho_max
        self.eta = hysteresis * self.m / self.vel.rho_max
        self.kind = scenario.turning_kind or ("particle" if mode == LINEAR_COST else "balance")
        self.inside = (self.x > -1.0) & (self.x < 1.0)
        self.events: list = []
        self._memory = None
        self.zeta = self._zeta(self.x)
        if self.kind == "memory":
            self._memory = self._grid_density(self.x, self.zeta)
            self.zeta = self._memory_zeta()
        self.k = int(np.searchsorted(self.x, self.zeta, side="left"))
        for i in np.flatnonzero(~self.inside):
            self.events.append(Event(0.0, "ExitLeft" if self.x[i] <= -1 else "ExitRight", int(i)))

    # turning point -----------------------------------------------------
    def _zeta(self, x) -> float:
        if self.mode == LINEAR_COST:
            return linear_zeta(x, self.m, self.cost.alpha)
        return discrete_zeta(x, self.m, self.cost, self.vel)

    _GRID = 2048

    def _grid_density(self, x, zeta):
        """Cell averages of the reconstructed density on a uniform grid of (-1, 1)."""
        rho = reconstruct_density(ParticleState(x, self.m, zeta), self.mode)
        edges = np.linspace(-1.0, 1.0, self._GRID + 1)
        bp, vals = rho.breakpoints, rho.values
        cum = np.concatenate(([0.0], np.cumsum(np.diff(bp) * vals)))
        mass = np.interp(edges, bp, cum, left=0.0, right=cum[-1])
        return np.diff(mass) / np.diff(edges)

    def _memory_zeta(self):
        edges = np.linspace(-1.0, 1.0, self._GRID + 1)
        return balance_xi(PiecewiseConstantDensity(edges, self._memory), self.cost, self.vel)

    def _advance_operator(self, x_new, dt):
        """Turning point after a step of length dt for the memory / relaxation operators."""
        if self.kind == "relaxation":
            eps = self.sc.turning_epsilon
            rho = reconstruct_density(ParticleState(x_new, self.m, self.zeta), self.mode).restrict(-1, 1)
            z, left = self.zeta, dt
            while left > 0:
                sub = min(left, 0.5 * eps / self._max_cost(rho))
                z = relaxation_xi_step(z, rho, eps, self.cost, self.vel, sub)
                left -= sub
            return min(max(z, -1.0), 1.0)
        w = math.exp(-self.sc.turning_delta * dt)
        self._memory = w * self._memory + (1 - w) * self._grid_density(x_new, self.zeta)
        return self._memory_zeta()

    def _max_cost(self, rho):
        top = min(rho.sup(), self.vel.rho_max * (1 - 1e-12))
        return float(self.cost.c(top, self.vel))

    # stepping ----------------------------------------------------------
    def _group(self, x, zeta) -> int:
        """Size of the left group; a particle changes side once zeta has passed it by more than eta."""
        lo = int(np.searchsorted(x, zeta - self.eta, side="left"))
        hi = int(np.searchsorted(x, zeta + self.eta, side="left"))
        return min(max(self.k, lo), hi)

    def _exit_time(self, x0, h):
        """Earliest crossing of +-1 by a particle inside (-1, 1) within the step, or None."""
        x1 = _rk4(x0, self.k, self.m, self.vel, h)
        near = self.vel.v_max * self.time_tol
        out = self.inside & ((x1 <= -1.0 + near) | (x1 >= 1.0 - near))
        if not out.any():
            return None, x1
        best = None
        for i in np.flatnonzero(out):
            wall = -1.0 if x1[i] < 0 else 1.0
            g = lambda tau: _rk4(x0, self.k, self.m, self.vel, tau)[i] - wall
            if abs(x0[i] - wall) <= near:
                tau = 0.0  # reached the wall at the end of the previous step
            elif abs(x1[i] - wall) <= near:
                tau = h
            else:
                tau = brentq(g, 0.0, h, xtol=1e-14, rtol=1e-15)
            if best is None or tau < best[0] or (tau == best[0] and wall < best[2]):
                best = (tau, int(i), wall)
        return best, x1

    def _switch_time(self, x0, h, k0):
        """Bisect the first time in (0, h] where the group count changes."""
        lo, hi = 0.0, h
        while hi - lo > self.time_tol:
            mid = 0.5 * (lo + hi)
            xm = _rk4(x0, self.k, self.m, self.vel, mid)
            if self._group(xm, self._zeta(xm)) != k0:
                hi = mid
            else:
                lo = mid
        return hi

    def _regroup(self, t):
        k_new = self._group(self.x, self.zeta)
        if k_new != self.k:
            for i in range(min(k_new, self.k), max(k_new, self.k)):
                self.events.append(Event(t, "DirectionSwitch", i, old=float(self.k), new=float(k_new)))
            self.k = k_new

    def step(self, dt_max: float):
        """Advance by at most dt_max, stopping exactly at the first event."""
        h = min(self.h, dt_max)
        x0 = self.x
        instant = self.kind in ("particle", "balance")
        exit_, x1 = self._exit_time(x0, h)
        tau = h if exit_ is None else exit_[0]
        if instant:
            probe = tau if exit_ is None else tau * (1 - 1e-12)
            xp = x1 if exit_ is None else _rk4(x0, self.k, self.m, self.vel, probe)
            if self._group(xp, self._zeta(xp)) != self.k:
                ts = self._switch_time(x0, probe, self.k)
                self.x = _rk4(x0, self.k, self.m, self.vel, ts)
                self.t += ts
                self.zeta = self._zeta(self.x)
                self._regroup(self.t)
                return
        x_new = x1 if exit_ is None else _rk4(x0, self.k, self.m, self.vel, tau)
        self.t += tau
        if exit_ is not None:
            x_new[exit_[1]] = exit_[2]
            # every particle at or past a wall at this instant leaves now, left exits first
            near = self.vel.v_max * self.time_tol
            gone = np.flatnonzero(self.inside & ((x_new <= -1.0 + near) | (x_new >= 1.0 - near)))
            gone = sorted(gone, key=lambda i: (x_new[i] > 0, x_new[i]))
            zeta_before = self.zeta if not instant else self._zeta_inside(x_new, gone)
            for i in gone:
                wall = -1.0 if x_new[i] < 0 else 1.0
                x_new[i] = wall
                self.inside[i] = False
                self.events.append(Event(self.t, "ExitLeft" if wall < 0 else "ExitRight", int(i)))
        self.x = x_new
        z = self._zeta(self.x) if instant else self._advance_operator(self.x, tau)
        if exit_ is not None and abs(z - zeta_before) > 1e-12:
            self.events.append(Event(self.t, "TurningJump", int(gone[0]), old=zeta_before, new=z))
        self.zeta = z
        self._regroup(self.t)

    def _zeta_inside(self, x, idx):
        """Turning point just before the particles idx leave."""
        y = x.copy()
        for i in idx:
            y[i] = math.nextafter(-1.0, 0.0) if y[i] < 0 else math.nextafter(1.0, 0.0)
        return self._zeta(y)

    @property
    def evacuated(self) -> bool:
        return not self.inside.any()

    def state(self) -> ParticleState:
        return ParticleState(self.x.copy(), self.m, self.zeta, self.t)

    def density(self) -> PiecewiseConstantDensity:
        return reconstruct_density(self.state(), self.mode)


def run(scenario: Scenario, n: Optional[int] = None, N: Optional[int] = None, horizon: Optional[float] = None,
        snapshot_dt: Optional[float] = None, mode: Optional[str] = None, h_factor: float = 0.1,
        keep_particles: bool = True) -> DpaTrajectory:
    """Integrate until the horizon or until the corridor is empty."""
    solver = DpaSolver(scenario, n=n, N=N, mode=mode, h_factor=h_factor)
    T = scenario.horizon if horizon is None else horizon
    dts = scenario.snapshot_dt if snapshot_dt is None else snapshot_dt
    tr = SolutionTrace("DPA")
    tr.meta.update(m=solver.m, N=solver.x.size - 1, mode=solver.mode, operator=solver.kind,
                   xi_datum=balance_xi(scenario.initial, scenario.cost, scenario.velocity), zeta0=solver.zeta)
    ptimes, ppos = [], []
    turning = [(0.0, solver.zeta)]

    def snap():
        tr.add_snapshot(solver.t, solver.density())
        if keep_particles:
            ptimes.append(solver.t)
            ppos.append(solver.x.copy())

    snap()
    k = 1
    T_mic = 0.0 if solver.evacuated else None
    while solver.t < T and T_mic is None:
        target = min(k * dts, T)
        while solver.t < target - 1e-14 and T_mic is None:
            solver.step(target - solver.t)
            turning.append((solver.t, solver.zeta))
            if solver.evacuated:
                T_mic = solver.t
        if T_mic is None:
            solver.t = target  # remove round-off drift at snapshot times
            snap()
            k += 1
    if T_mic is not None and (not tr.times or solver.t > tr.times[-1]):
        snap()
    tr.turning = np.asarray(turning)
    tr.events = solver.events
    tr.meta["T_mic"] = T_mic
    if abs(tr.meta["xi_datum"] - tr.meta["zeta0"]) > 0:
        log.info("turning point of the datum %.6g differs from the particle one %.6g",
                 tr.meta["xi_datum"], tr.meta["zeta0"])
    return DpaTrajectory(tr, ptimes, ppos, solver.m, solver.x.size - 1, solver.mode, T_mic)


def sweep_alpha(scenario: Scenario, alphas: Sequence[float], n: Optional[int] = None,
                horizon: float = 50.0) -> list:
    """(alpha, T_mic, error) rows, sorted by alpha."""
    rows = []
    for a in sorted(float(a) for a in alphas):
        try:
            traj = run(scenario.with_(cost=CostModel.linear(a)), n=n, horizon=horizon, keep_particles=False,
                       snapshot_dt=horizon)
            rows.append((a, traj.T_mic, None))
        except Exception as exc:  # a failed run is recorded, the sweep goes on
            rows.append((a, None, repr(exc)))
    return rows
