"""Self-consistency and cross-scheme checks on solution traces.

Every checker is a pure function of its inputs.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .model import CostModel, FluxModel, PiecewiseConstantDensity, Scenario, VelocityModel, l1_distance
from .trace import Event, SolutionTrace

__all__ = [
    "SolutionTrace",
    "Event",
    "HypothesisReport",
    "BilinearTestFunction",
    "hat_function",
    "check_conservation",
    "check_max_principle",
    "check_rh_turning",
    "entropy_residual",
    "entropy_sweep",
    "classify_hypotheses",
    "compare_traces",
    "convergence_study",
    "JUMP_EVENTS",
]

JUMP_EVENTS = ("TurningJump", "Reanchor")


def check_conservation(trace: SolutionTrace) -> float:
    m = np.array([rho.mass() for rho in trace.densities])
    return float(np.abs(m - m[0]).max()) if m.size else 0.0


def check_max_principle(trace: SolutionTrace, datum: PiecewiseConstantDensity) -> float:
    bound = datum.sup() if datum.values.size else 0.0
    sups = [rho.sup() if rho.values.size else 0.0 for rho in trace.densities]
    return float(max(sups) - bound) if sups else 0.0


def check_rh_turning(trace: SolutionTrace, flux: FluxModel) -> float:
    """Largest |f(r+) + f(r-) - xi' (r+ - r-)| over sampled intervals with distinct traces.

    Samples are taken right after every change of the turning point, so the traces of a sample
    hold until the next one and xi' is the difference quotient over that interval. Intervals that
    end on a logged jump are skipped.
    """
    tr = trace.traces
    if tr is None or len(tr) < 3:
        raise ValueError("need at least three turning samples with traces")
    jumps = np.array(sorted(e.t for e in trace.events if e.kind in JUMP_EVENTS
                            and (e.old is None or e.new is None or e.old != e.new)))
    worst = 0.0
    for (t0, x0, rm, rp), (t1, x1, _, _) in zip(tr[:-1], tr[1:]):
        if rm == rp or t1 - t0 <= 1e-12:
            continue
        if jumps.size and np.any((jumps > t0) & (jumps <= t1 + 1e-15)):
            continue
        s = (x1 - x0) / (t1 - t0)
        worst = max(worst, abs(float(flux.f(rp)) + float(flux.f(rm)) - s * (rp - rm)))
    return worst


@dataclass(frozen=True)
class BilinearTestFunction:
    """Nonnegative tensor-product piecewise bilinear function on a (t, x) grid, zero outside it."""
    ts: np.ndarray
    xs: np.ndarray
    values: np.ndarray  # shape (len(ts), len(xs))

    def __post_init__(self):
        ts, xs, v = (np.asarray(a, dtype=float) for a in (self.ts, self.xs, self.values))
        object.__setattr__(self, "ts", ts)
        object.__setattr__(self, "xs", xs)
        object.__setattr__(self, "values", v)
        if v.shape != (ts.size, xs.size):
            raise ValueError("values must have shape (len(ts), len(xs))")
        if np.any(np.diff(ts) <= 0) or np.any(np.diff(xs) <= 0):
            raise ValueError("grid must be increasing")
        if np.any(v < 0):
            raise ValueError("test function must be nonnegative")
        if np.any(v[0] != 0) or np.any(v[-1] != 0) or np.any(v[:, 0] != 0) or np.any(v[:, -1] != 0):
            raise ValueError("test function must vanish on the grid boundary")
        if ts[0] <= 0:
            raise ValueError("support must lie in t > 0")

    def __call__(self, t, x):
        t, x = np.broadcast_arrays(np.asarray(t, float), np.asarray(x, float))
        out = np.zeros(t.shape)
        inside = (t > self.ts[0]) & (t < self.ts[-1]) & (x > self.xs[0]) & (x < self.xs[-1])
        if not np.any(inside):
            return out
        ti, xi = t[inside], x[inside]
        i = np.clip(np.searchsorted(self.ts, ti, side="right") - 1, 0, self.ts.size - 2)
        j = np.clip(np.searchsorted(self.xs, xi, side="right") - 1, 0, self.xs.size - 2)
        a = (ti - self.ts[i]) / (self.ts[i + 1] - self.ts[i])
        b = (xi - self.xs[j]) / (self.xs[j + 1] - self.xs[j])
        v = self.values
        out[inside] = ((1 - a) * (1 - b) * v[i, j] + a * (1 - b) * v[i + 1, j]
                       + (1 - a) * b * v[i, j + 1] + a * b * v[i + 1, j + 1])
        return out

    def line_integral(self, t0: float, t1: float, x0: float, s: float, weight: float = 1.0) -> float:
        """Exact integral of phi(t, x0 + s (t - t0)) over [t0, t1].

        Along a straight line phi is quadratic inside each grid cell, so three Gauss points per
        cell piece integrate it exactly.
        """
        lo, hi = max(t0, self.ts[0]), min(t1, self.ts[-1])
        if hi <= lo:
            return 0.0
        cuts = [lo, hi]
        cuts += [t for t in self.ts if lo < t < hi]
        if s != 0.0:
            cuts += [t0 + (x - x0) / s for x in self.xs if lo < t0 + (x - x0) / s < hi]
        cuts = np.unique(cuts)
        g, w = np.polynomial.legendre.leggauss(3)
        a, b = cuts[:-1], cuts[1:]
        tt = (0.5 * (b - a))[:, None] * g[None, :] + (0.5 * (a + b))[:, None]
        vals = self(tt, x0 + s * (tt - t0))
        return float(weight * np.sum((0.5 * (b - a))[:, None] * w[None, :] * vals))


def hat_function(tc: float, xc: float, ht: float, hx: float) -> BilinearTestFunction:
    """Tensor-product hat of half-widths ht, hx centred at (tc, xc)."""
    return BilinearTestFunction([tc - ht, tc, tc + ht], [xc - hx, xc, xc + hx],
                                [[0, 0, 0], [0, 1, 0], [0, 0, 0]])


def entropy_residual(trace: SolutionTrace, k: float, phi: BilinearTestFunction, flux: FluxModel) -> float:
    """Left-hand side of the Kruzhkov inequality with the turning-point term.

    The trace must carry its straight space-time fronts. For a piecewise constant solution the
    double integral equals, front by front, the integral of (s [eta] - [q]) phi along the front,
    where eta = |rho - k| and q = sign(rho - k)(F(rho) - F(k)) with F = -f left of the turning
    point and F = f right of it. The turning term 2 f(k) phi(t, xi(t)) is added along the turning
    fronts (side 0).
    """
    if trace.fronts is None:
        raise ValueError("the trace carries no space-time fronts")
    if not 0.0 <= k <= flux.rho_max:
        raise ValueError("k outside [0, rho_max]")
    fk = float(flux.f(k))

    def q(rho, sign):
        return math.copysign(1.0, rho - k) * sign * (float(flux.f(rho)) - fk) if rho != k else 0.0

    total = 0.0
    for t0, t1, x0, s, rl, rr, side in trace.fronts:
        if side == 0:
            weight = s * (abs(rr - k) - abs(rl - k)) - (q(rr, 1.0) - q(rl, -1.0)) + 2.0 * fk
        else:
            weight = s * (abs(rr - k) - abs(rl - k)) - (q(rr, side) - q(rl, side))
        if weight != 0.0:
            total += phi.line_integral(t0, t1, x0, s, weight)
    return total


def entropy_sweep(trace: SolutionTrace, phis: Sequence[BilinearTestFunction], flux: FluxModel,
                  n_k: int = 17) -> tuple:
    """Smallest residual over an equispaced k-sweep and the given test functions, with its (k, index)."""
    worst = (math.inf, None, None)
    for k in np.linspace(0.0, flux.rho_max, n_k):
        for i, phi in enumerate(phis):
            r = entropy_residual(trace, float(k), phi, flux)
            if r < worst[0]:
                worst = (r, float(k), i)
    return worst


def away_from_turning(trace: SolutionTrace, count: int, t_range=(0.05, 0.95), margin: float = 0.05,
                      ht: float = 0.05, hx: float = 0.05, seed: int = 0) -> list:
    """Hat functions whose support keeps a margin from the sampled turning path."""
    rng = np.random.default_rng(seed)
    tt = np.asarray(trace.turning)
    out, tries = [], 0
    while len(out) < count and tries < 10_000:
        tries += 1
        tc = rng.uniform(t_range[0] + ht, t_range[1] - ht)
        xc = rng.uniform(-1.0 + hx, 1.0 - hx)
        sel = (tt[:, 0] >= tc - ht - 1e-12) & (tt[:, 0] <= tc + ht + 1e-12)
        xi = np.interp([tc - ht, tc + ht], tt[:, 0], tt[:, 1])
        path = np.concatenate((tt[sel, 1], xi))
        if np.all(np.abs(path - xc) > hx + margin):
            out.append(hat_function(tc, xc, ht, hx))
    return out


@dataclass
class HypothesisReport:
    symmetric: bool
    smallBV_traces: Optional[bool]
    smallBV_noTraces: Optional[bool]
    classV: Optional[bool]
    C: float
    L: float
    tv: float
    tv_c: float
    sup: float
    l1: float
    notes: list = field(default_factory=list)


def _interior_tv(values: np.ndarray) -> float:
    return float(np.abs(np.diff(values)).sum()) if values.size > 1 else 0.0


def classify_hypotheses(scenario: Scenario, samples: int = 4097) -> HypothesisReport:
    rho = scenario.initial.restrict(-1.0, 1.0).canonical()
    vel, cost = scenario.velocity, scenario.cost
    notes = []
    bp, vals = rho.breakpoints, rho.values
    sup = rho.sup() if vals.size else 0.0
    l1 = rho.mass()
    # values on (-1, 1) with vacuum filling any uncovered end
    full_b = np.concatenate(([-1.0], bp, [1.0])) if vals.size else np.array([-1.0, 1.0])
    full_v = np.concatenate(([0.0], vals, [0.0])) if vals.size else np.array([0.0])
    keep = np.diff(full_b) > 0
    pieces_v = full_v[keep]
    pieces_b = np.concatenate((full_b[:-1][keep], [1.0]))
    symmetric = bool(np.array_equal(pieces_b, -pieces_b[::-1]) and np.array_equal(pieces_v, pieces_v[::-1]))
    tv = _interior_tv(pieces_v)

    at_max = sup >= vel.rho_max
    if cost.kind == "linear":
        C, L = cost.alpha * sup, 0.0
        cv = 1.0 + cost.alpha * pieces_v
    else:
        if at_max:
            C = L = math.inf
        else:
            r = np.linspace(0.0, sup, samples)
            C = float(max(np.max(np.asarray(cost.dc(r, vel), float) * r), 0.0))
            L = float(max(np.max(np.asarray(cost.d2c(r, vel), float) * r), 0.0))
            notes.append("C and L maximised on a sample grid including both endpoints")
        cv = np.asarray(cost.c(np.minimum(pieces_v, vel.rho_max), vel), float) if not at_max else None
    tv_c = _interior_tv(cv) if cv is not None else math.inf

    reciprocal_linear_v = cost.kind == "reciprocal" and vel.kind == "linear" and vel.rho_max == vel.v_max == 1.0
    if not reciprocal_linear_v:
        traces = None
        notes.append("traces condition stated for v = 1 - rho with c = 1 / v only")
    elif at_max:
        traces = None
        notes.append("traces condition undefined: the datum reaches rho_max")
    else:
        c_half = float(cost.c(0.5, vel))
        c_l, c_r = float(cost.c(pieces_v[0], vel)), float(cost.c(pieces_v[-1], vel))
        lhs = 3 * sup + tv_c + max(c_l - c_half, 0.0) + max(c_r - c_half, 0.0)
        traces = bool(lhs < 2.0)

    if at_max:
        no_traces = None
        notes.append("small-BV condition needs sup < rho_max")
    else:
        no_traces = bool(0.5 * vel.v_max * (L * tv + 3 * C) < float(vel.v(sup)))
        if cost.kind == "linear":
            notes.append("linear cost has c'' = 0; the strict-convexity hypothesis of that result fails")

    if cost.kind == "linear":
        a = cost.alpha
        if a == 0:
            class_v = bool(not np.any((pieces_v > 0) & (pieces_b[:-1] <= 0) & (pieces_b[1:] >= 0)))
        else:
            h = 0.5 * a * l1
            pos = pieces_v > 0
            overlap = np.any(pos & (pieces_b[:-1] <= h) & (pieces_b[1:] >= -h))
            class_v = bool(l1 < 2.0 / a and not overlap)
    else:
        class_v = None
    return HypothesisReport(symmetric, traces, no_traces, class_v, float(C), float(L), tv, tv_c, float(sup),
                            float(l1), notes)


def _common_index(a: SolutionTrace, b: SolutionTrace, t: float, tol: float = 1e-9) -> tuple:
    for tr in (a, b):
        if not tr.times:
            raise ValueError("empty trace")
    if t < max(a.times[0], b.times[0]) - tol or t > min(a.times[-1], b.times[-1]) + tol:
        raise ValueError(f"time {t} not covered by both traces")
    common = [x for x in a.times if np.min(np.abs(np.asarray(b.times) - x)) <= tol]
    if not common:
        raise ValueError("traces share no snapshot time")
    ta = min(common, key=lambda x: abs(x - t))
    return a.snapshot_index(ta), b.snapshot_index(ta)


def compare_traces(a: SolutionTrace, b: SolutionTrace, t: float) -> float:
    i, j = _common_index(a, b, t)
    return l1_distance(a.densities[i], b.densities[j], -1.0, 1.0)


@dataclass
class ConvergenceRow:
    n_coarse: int
    n_fine: int
    l1: Optional[float]
    error: Optional[str] = None


def convergence_study(scenario: Scenario, scheme: str, ns: Sequence[int], t: float = 1.0,
                      runner: Optional[Callable] = None) -> tuple:
    """Consecutive L1 differences at time t; returns (rows, per-level info)."""
    if len(ns) < 2:
        raise ValueError("need at least two levels")
    if runner is None:
        runner = _default_runner(scheme)
    traces, info = {}, {}
    for n in ns:
        try:
            traces[n], info[n] = runner(scenario, n, t)
        except Exception as exc:  # recorded per level
            traces[n], info[n] = None, {"error": repr(exc)}
    rows = []
    for a, b in zip(ns[:-1], ns[1:]):
        if traces[a] is None or traces[b] is None:
            rows.append(ConvergenceRow(a, b, None, info[a].get("error") or info[b].get("error")))
            continue
        rows.append(ConvergenceRow(a, b, compare_traces(traces[a], traces[b], t)))
    return rows, info


def _default_runner(scheme: str):
    scheme = scheme.upper()
    if scheme == "DPA":
        from . import dpa

        def run(sc, n, t):
            traj = dpa.run(sc, n=n, horizon=t, keep_particles=False)
            return traj.trace, {"T_mic": traj.T_mic}
        return run
    if scheme == "WFT":
        from . import wft

        def run(sc, n, t):
            res = wft.run(sc, n=n, horizon=t)
            return res.trace, {"tv_max": float(res.tv[:, 1].max()), "fronts_max": max(c for _, c in res.front_counts)}
        return run
    raise ValueError(f"unknown scheme {scheme!r}")
