"""Turning-point operators.

All operators reduce to the root of the balance function

    B(xi) = int_{-1}^{xi} c(rho) - int_{xi}^{1} c(rho),

which is piecewise linear and strictly increasing (slope 2 c >= 2), so the
root is found exactly on the piece where B changes sign.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .model import CostModel, PiecewiseConstantDensity, VelocityModel

TURNING_KINDS = ("balance", "particle", "memory", "relaxation")


@dataclass(frozen=True)
class TurningOperator:
    kind: str = "balance"
    alpha: float = 0.0
    delta: float = 1.0
    epsilon: float = 1.0

    def __post_init__(self):
        if self.kind not in TURNING_KINDS:
            raise ValueError(f"unknown turning operator {self.kind!r}")
        if self.kind == "memory" and self.delta <= 0:
            raise ValueError("memory rate delta must be positive")
        if self.kind == "relaxation" and self.epsilon <= 0:
            raise ValueError("relaxation time epsilon must be positive")
        if self.kind == "particle" and self.alpha < 0:
            raise ValueError("alpha must be nonnegative")


def _clip_nodes(rho: PiecewiseConstantDensity):
    """Nodes of the balance function on [-1, 1] and the density on each piece."""
    bp = rho.breakpoints
    inner = bp[(bp > -1.0) & (bp < 1.0)] if bp.size else bp
    nodes = np.concatenate(([-1.0], inner, [1.0]))
    mids = 0.5 * (nodes[:-1] + nodes[1:])
    return nodes, rho(mids)


def balance_root(nodes: np.ndarray, weights: np.ndarray) -> float:
    """Root of 2 C(x) - C(1) where C is the running integral of the step weights."""
    widths = np.diff(nodes)
    cum = np.concatenate(([0.0], np.cumsum(widths * weights)))
    half = 0.5 * cum[-1]
    j = int(np.searchsorted(cum, half, side="left")) - 1
    j = min(max(j, 0), weights.size - 1)
    return float(nodes[j] + (half - cum[j]) / weights[j])


def balance_function(rho: PiecewiseConstantDensity, cost: CostModel, velocity: VelocityModel):
    """(nodes, values) of the piecewise-linear balance function on [-1, 1]."""
    nodes, vals = _clip_nodes(rho)
    w = np.asarray(cost.c(vals, velocity), dtype=float)
    cum = np.concatenate(([0.0], np.cumsum(np.diff(nodes) * w)))
    return nodes, 2.0 * cum - cum[-1]


def balance_residual(rho: PiecewiseConstantDensity, cost: CostModel, velocity: VelocityModel, xi: float) -> float:
    from .model import density_cost_integral
    return density_cost_integral(rho, cost, velocity, -1.0, xi) - density_cost_integral(rho, cost, velocity, xi, 1.0)


def balance_xi(rho: PiecewiseConstantDensity, cost: CostModel, velocity: VelocityModel) -> float:
    """Point of equal cost-weighted distance to both exits."""
    nodes, vals = _clip_nodes(rho)
    return balance_root(nodes, np.asarray(cost.c(vals, velocity), dtype=float))


def inside_range(positions: np.ndarray) -> tuple[int, int]:
    """Indices (first, last) of particles strictly inside (-1, 1); last < first when fewer than one."""
    lo = int(np.searchsorted(positions, -1.0, side="right"))
    hi = int(np.searchsorted(positions, 1.0, side="left")) - 1
    return lo, hi


def particle_zeta(positions: Sequence[float], m: float, alpha: float) -> float:
    """Turning point of the linear-cost particle model.

    Only the discrete density between the first and the last particle strictly
    inside (-1, 1) carries extra cost; everything else weighs 1.
    """
    x = np.asarray(positions, dtype=float)
    lo, hi = inside_range(x)
    if alpha == 0 or hi - lo < 1:
        return 0.0
    xs = x[lo:hi + 1]
    nodes = np.concatenate(([-1.0], xs, [1.0]))
    w = np.ones(nodes.size - 1)
    w[1:-1] = 1.0 + alpha * m / np.diff(xs)
    return balance_root(nodes, w)


def particle_density_inside(positions: Sequence[float], m: float) -> PiecewiseConstantDensity:
    """Discrete density restricted to the hull of the particles inside (-1, 1)."""
    x = np.asarray(positions, dtype=float)
    lo, hi = inside_range(x)
    if hi - lo < 1:
        return PiecewiseConstantDensity.empty()
    xs = x[lo:hi + 1]
    return PiecewiseConstantDensity(xs, m / np.diff(xs))


def subjective_density(history: Sequence[tuple[float, PiecewiseConstantDensity]], delta: float,
                       t: float) -> PiecewiseConstantDensity:
    """Exponentially weighted average delta * int_{-inf}^t rho(s) exp(-delta (t - s)) ds.

    Snapshot k is held on (t_{k-1}, t_k]; the first snapshot also covers all
    earlier times.
    """
    if not history:
        raise ValueError("empty history")
    times = [h[0] for h in history]
    if any(b <= a for a, b in zip(times, times[1:])):
        raise ValueError("history times must be strictly increasing")
    weights = []
    prev = -math.inf
    for tk, _ in history:
        hi = min(tk, t)
        if hi <= prev:
            weights.append(0.0)
            continue
        w_hi = 1.0 if hi >= t else math.exp(-delta * (t - hi))
        w_lo = 0.0 if prev == -math.inf else math.exp(-delta * (t - prev))
        weights.append(w_hi - w_lo)
        prev = hi
        if hi >= t:
            break
    # the last available snapshot is held until t
    if prev < t:
        weights[-1] += 1.0 - math.exp(-delta * (t - prev))
    used = [(w, history[k][1]) for k, w in enumerate(weights) if w > 0]
    return weighted_sum(used)


def weighted_sum(terms: Iterable[tuple[float, PiecewiseConstantDensity]]) -> PiecewiseConstantDensity:
    terms = [(w, r) for w, r in terms if r.values.size]
    if not terms:
        return PiecewiseConstantDensity.empty()
    pts = np.unique(np.concatenate([r.breakpoints for _, r in terms]))
    mids = 0.5 * (pts[:-1] + pts[1:])
    vals = sum(w * r(mids) for w, r in terms)
    return PiecewiseConstantDensity(pts, vals)


def memory_xi(history, delta: float, cost: CostModel, velocity: VelocityModel, t: float) -> float:
    """Balance root of the subjective density built from a time-stamped history."""
    if delta <= 0:
        raise ValueError("delta must be positive")
    return balance_xi(subjective_density(history, delta, t), cost, velocity)


def relaxation_xi_step(xi: float, rho: PiecewiseConstantDensity, epsilon: float, cost: CostModel,
                       velocity: VelocityModel, dt: float) -> float:
    """One explicit Euler step of the relaxed turning-point ODE.

    The update is xi - dt * B(xi) / epsilon so that xi is attracted to the
    balance root.
    """
    if epsilon <= 0 or dt <= 0:
        raise ValueError("epsilon and dt must be positive")
    if dt > epsilon:
        raise ValueError(f"dt={dt} exceeds epsilon={epsilon}")
    return xi - dt * balance_residual(rho, cost, velocity, xi) / epsilon


def discrete_lipschitz(samples: Sequence[tuple[float, float]], jump_times: Iterable[float] = (),
                       tol: float = 1e-10) -> float:
    """Largest |d xi / d t| over consecutive samples whose interval holds no jump."""
    s = np.asarray(samples, dtype=float)
    if s.ndim != 2 or s.shape[0] < 2:
        raise ValueError("need at least two samples")
    t, x = s[:, 0], s[:, 1]
    dt = np.diff(t)
    ok = dt > 0
    jt = np.sort(np.asarray(list(jump_times), dtype=float))
    if jt.size:
        # pair (t_i, t_{i+1}] contains a jump
        a = np.searchsorted(jt, t[:-1] + tol, side="left")
        b = np.searchsorted(jt, t[1:] + tol, side="left")
        ok &= b == a
    if not np.any(ok):
        return 0.0
    return float(np.max(np.abs(np.diff(x)[ok] / dt[ok])))
