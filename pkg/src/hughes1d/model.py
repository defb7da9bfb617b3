"""Constitutive functions, piecewise-constant densities and the scenario record."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.optimize import brentq


class DomainError(ValueError):
    pass


@dataclass(frozen=True)
class VelocityModel:
    """Speed law v on [0, rho_max].

    ``kind`` is ``"linear"`` (v = v_max (1 - rho/rho_max)) or ``"custom"``, in
    which case ``func``, ``deriv`` and ``deriv2`` must be given.
    """

    rho_max: float = 1.0
    v_max: float = 1.0
    kind: str = "linear"
    func: Optional[Callable[[float], float]] = None
    deriv: Optional[Callable[[float], float]] = None
    deriv2: Optional[Callable[[float], float]] = None

    def __post_init__(self):
        if self.rho_max <= 0 or self.v_max <= 0:
            raise ValueError("rho_max and v_max must be positive")
        if self.kind not in ("linear", "custom"):
            raise ValueError(f"unknown velocity kind {self.kind!r}")
        if self.kind == "custom" and None in (self.func, self.deriv, self.deriv2):
            raise ValueError("custom velocity needs func, deriv and deriv2")

    def v(self, rho):
        if self.kind == "linear":
            return self.v_max * (1.0 - rho / self.rho_max)
        return self.func(rho)

    def dv(self, rho):
        if self.kind == "linear":
            return -self.v_max / self.rho_max + 0.0 * rho
        return self.deriv(rho)

    def d2v(self, rho):
        if self.kind == "linear":
            return 0.0 * rho
        return self.deriv2(rho)


@dataclass(frozen=True)
class CostModel:
    """Running cost c(rho): ``linear`` (1 + alpha rho), ``reciprocal`` (1/v) or ``custom``."""

    kind: str = "linear"
    alpha: float = 0.0
    func: Optional[Callable[[float], float]] = None
    deriv: Optional[Callable[[float], float]] = None
    deriv2: Optional[Callable[[float], float]] = None

    def __post_init__(self):
        if self.kind not in ("linear", "reciprocal", "custom"):
            raise ValueError(f"unknown cost kind {self.kind!r}")
        if self.kind == "linear" and self.alpha < 0:
            raise ValueError("alpha must be nonnegative")
        if self.kind == "custom" and None in (self.func, self.deriv):
            raise ValueError("custom cost needs func and deriv")

    @classmethod
    def linear(cls, alpha: float) -> "CostModel":
        return cls("linear", alpha)

    @classmethod
    def reciprocal(cls) -> "CostModel":
        return cls("reciprocal")

    def c(self, rho, velocity: VelocityModel):
        if self.kind == "linear":
            return 1.0 + self.alpha * rho
        if self.kind == "reciprocal":
            v = velocity.v(rho)
            if np.any(np.asarray(v) <= 0):
                raise DomainError("reciprocal cost undefined at rho_max")
            return velocity.v_max / v
        return self.func(rho)

    def dc(self, rho, velocity: VelocityModel):
        if self.kind == "linear":
            return self.alpha + 0.0 * rho
        if self.kind == "reciprocal":
            v = velocity.v(rho)
            return -velocity.v_max * velocity.dv(rho) / v ** 2
        return self.deriv(rho)

    def d2c(self, rho, velocity: VelocityModel):
        if self.kind == "linear":
            return 0.0 * rho
        if self.kind == "reciprocal":
            v, dv, d2v = velocity.v(rho), velocity.dv(rho), velocity.d2v(rho)
            return velocity.v_max * (2.0 * dv ** 2 / v ** 3 - d2v / v ** 2)
        if self.deriv2 is None:
            raise ValueError("custom cost without second derivative")
        return self.deriv2(rho)


class FluxModel:
    """f(rho) = rho v(rho) together with its critical density."""

    def __init__(self, velocity: VelocityModel):
        self.velocity = velocity
        self.rho_max = velocity.rho_max
        self.rho_hat = critical_density(velocity)

    def f(self, rho):
        return rho * self.velocity.v(rho)

    def df(self, rho):
        return self.velocity.v(rho) + rho * self.velocity.dv(rho)

    def d2f(self, rho):
        return 2.0 * self.velocity.dv(rho) + rho * self.velocity.d2v(rho)

    def __call__(self, rho):
        return flux_eval(self, rho)


def flux_eval(model: FluxModel, rho: float) -> float:
    if rho < 0 or rho > model.rho_max:
        raise DomainError(f"density {rho} outside [0, {model.rho_max}]")
    return model.f(rho)


def critical_density(velocity: VelocityModel) -> float:
    """Maximiser of rho v(rho), by bracketed root finding on f'."""
    if velocity.kind == "linear":
        return 0.5 * velocity.rho_max
    g = lambda r: velocity.v(r) + r * velocity.dv(r)
    # f' may also vanish at rho_max, so bracket the first sign change
    grid = np.linspace(0.0, velocity.rho_max, 1025)
    k = int(np.argmax(np.asarray(g(grid)) <= 0))
    if g(grid[k]) == 0:
        return float(grid[k])
    return brentq(g, grid[k - 1], grid[k], xtol=1e-14, rtol=4 * np.finfo(float).eps)


def cost_eval(cost: CostModel, rho: float, velocity: VelocityModel) -> float:
    if rho < 0 or rho > velocity.rho_max:
        raise DomainError(f"density {rho} outside [0, {velocity.rho_max}]")
    if cost.kind == "reciprocal" and rho >= velocity.rho_max:
        raise DomainError("reciprocal cost undefined at rho_max")
    return float(cost.c(rho, velocity))


@dataclass
class HypothesisReport:
    H1: bool
    H1_strict: bool  # c'' > 0 variant
    H2: bool
    H2_prime: bool
    violations: dict = field(default_factory=dict)


def check_hypotheses(velocity: VelocityModel, cost: CostModel, samples: int = 10_000) -> HypothesisReport:
    """Check (H1), (H2), (H2') on a dense sample grid; report the first violation of each."""
    r = np.linspace(0.0, velocity.rho_max, samples)
    viol = {}

    def first(mask, name):
        idx = np.flatnonzero(mask)
        if idx.size:
            viol[name] = float(r_c[idx[0]]) if name.startswith("H1") else float(r[idx[0]])
            return False
        return True

    # the reciprocal cost blows up at rho_max, drop that endpoint
    r_c = r[:-1] if cost.kind == "reciprocal" else r
    c = np.array([cost.c(x, velocity) for x in r_c], dtype=float)
    dc = np.array([cost.dc(x, velocity) for x in r_c], dtype=float)
    try:
        d2c = np.array([cost.d2c(x, velocity) for x in r_c], dtype=float)
    except ValueError:
        d2c = np.full_like(c, np.nan)
    h1 = abs(c[0] - 1.0) < 1e-12
    if not h1:
        viol["H1"] = 0.0
    h1 = h1 and first(dc < -1e-12, "H1") and first(d2c < -1e-12, "H1")
    h1_strict = h1 and first(~(d2c > 0), "H1_strict")

    v = np.array([velocity.v(x) for x in r], dtype=float)
    dv = np.array([velocity.dv(x) for x in r], dtype=float)
    d2v = np.array([velocity.d2v(x) for x in r], dtype=float)
    h2 = abs(v[0] - velocity.v_max) < 1e-12 and abs(v[-1]) < 1e-12
    if not h2:
        viol["H2"] = 0.0
    h2 = h2 and first(np.concatenate((np.diff(v) >= 0, [False])), "H2")
    df = v + r * dv
    rho_hat = r[np.argmax(r * v)]
    interior = (r > 0) & (r < velocity.rho_max) & (np.abs(r - rho_hat) > 2 * velocity.rho_max / samples)
    h2 = h2 and first(interior & (df * (rho_hat - r) <= 0), "H2")
    h2p = h2 and first(dv + r * d2v > 1e-12, "H2_prime")
    return HypothesisReport(bool(h1), bool(h1_strict), bool(h2), bool(h2p), viol)


class PiecewiseConstantDensity:
    """Step function on the real line: ``values[j]`` on ``[breakpoints[j], breakpoints[j+1])``, 0 outside."""

    __slots__ = ("breakpoints", "values")

    def __init__(self, breakpoints: Sequence[float], values: Sequence[float]):
        b = np.asarray(breakpoints, dtype=float)
        v = np.asarray(values, dtype=float)
        if b.size == 0:
            if v.size:
                raise ValueError("values without breakpoints")
        elif v.size != b.size - 1:
            raise ValueError("need len(values) == len(breakpoints) - 1")
        if b.size > 1 and np.any(np.diff(b) <= 0):
            raise ValueError("breakpoints must be strictly increasing")
        if np.any(v < 0):
            raise ValueError("negative density")
        self.breakpoints = b
        self.values = v

    @classmethod
    def empty(cls) -> "PiecewiseConstantDensity":
        return cls([], [])

    @classmethod
    def from_blocks(cls, blocks: Sequence[tuple]) -> "PiecewiseConstantDensity":
        """Build from disjoint ``(left, right, value)`` triples, zero in the gaps."""
        blocks = sorted(blocks)
        bps, vals = [], []
        for left, right, value in blocks:
            if right <= left:
                raise ValueError(f"empty block ({left}, {right})")
            if bps and left < bps[-1]:
                raise ValueError("overlapping blocks")
            if bps and left > bps[-1]:
                vals.append(0.0)
                bps.append(left)
            elif not bps:
                bps.append(left)
            vals.append(value)
            bps.append(right)
        return cls(bps, vals)

    def __repr__(self):
        return f"PiecewiseConstantDensity({self.breakpoints.tolist()}, {self.values.tolist()})"

    def __eq__(self, other):
        if not isinstance(other, PiecewiseConstantDensity):
            return NotImplemented
        a, b = self.canonical(), other.canonical()
        return np.array_equal(a.breakpoints, b.breakpoints) and np.array_equal(a.values, b.values)

    @property
    def is_empty(self) -> bool:
        return self.values.size == 0 or not np.any(self.values > 0)

    def canonical(self) -> "PiecewiseConstantDensity":
        """Merge equal neighbours and strip zero pieces at both ends."""
        if self.values.size == 0:
            return self
        b, v = self.breakpoints, self.values
        keep = np.ones(b.size, dtype=bool)
        keep[1:-1] = v[1:] != v[:-1]
        b, v = b[keep], v[np.flatnonzero(keep[:-1])]
        nz = np.flatnonzero(v > 0)
        if nz.size == 0:
            return PiecewiseConstantDensity.empty()
        return PiecewiseConstantDensity(b[nz[0]:nz[-1] + 2], v[nz[0]:nz[-1] + 1])

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        if self.values.size == 0:
            return np.zeros_like(x)
        idx = np.searchsorted(self.breakpoints, x, side="right") - 1
        inside = (idx >= 0) & (idx < self.values.size)
        out = np.zeros_like(x)
        out[inside] = self.values[idx[inside]]
        return out

    def left_limit(self, x: float) -> float:
        if self.values.size == 0:
            return 0.0
        idx = np.searchsorted(self.breakpoints, x, side="left") - 1
        return float(self.values[idx]) if 0 <= idx < self.values.size else 0.0

    def right_limit(self, x: float) -> float:
        return float(self(np.array([x]))[0])

    def restrict(self, a: float, b: float) -> "PiecewiseConstantDensity":
        """Same function on [a, b], zero elsewhere."""
        if self.values.size == 0 or b <= a:
            return PiecewiseConstantDensity.empty()
        bp = self.breakpoints
        lo, hi = max(a, bp[0]), min(b, bp[-1])
        if hi <= lo:
            return PiecewiseConstantDensity.empty()
        inner = bp[(bp > lo) & (bp < hi)]
        new_bp = np.concatenate(([lo], inner, [hi]))
        mids = 0.5 * (new_bp[:-1] + new_bp[1:])
        return PiecewiseConstantDensity(new_bp, self(mids))

    def reflect(self) -> "PiecewiseConstantDensity":
        """x -> -x."""
        return PiecewiseConstantDensity(-self.breakpoints[::-1], self.values[::-1])

    def mass(self, a: float = -math.inf, b: float = math.inf) -> float:
        return density_mass(self, a, b)

    def sup(self) -> float:
        return float(self.values.max()) if self.values.size else 0.0

    def total_variation(self, a: float = -math.inf, b: float = math.inf) -> float:
        """TV of the function restricted to the open interval (a, b)."""
        r = self.restrict(a, b) if (math.isfinite(a) or math.isfinite(b)) else self
        if r.values.size == 0:
            return 0.0
        ext = np.concatenate(([0.0], r.values, [0.0]))
        jumps = np.abs(np.diff(ext))
        # jumps sitting exactly at a or b are not inside (a, b)
        if math.isfinite(a) and r.breakpoints[0] <= a:
            jumps[0] = 0.0
        if math.isfinite(b) and r.breakpoints[-1] >= b:
            jumps[-1] = 0.0
        return float(jumps.sum())

    def map_values(self, fn) -> "PiecewiseConstantDensity":
        return PiecewiseConstantDensity(self.breakpoints.copy(), np.asarray([fn(x) for x in self.values], float))


def _piece_overlaps(rho: PiecewiseConstantDensity, a: float, b: float) -> np.ndarray:
    bp = rho.breakpoints
    return np.clip(np.minimum(bp[1:], b) - np.maximum(bp[:-1], a), 0.0, None)


def density_mass(rho: PiecewiseConstantDensity, a: float = -math.inf, b: float = math.inf) -> float:
    """Exact integral of rho over [a, b]."""
    if a > b:
        raise ValueError("need a <= b")
    if rho.values.size == 0:
        return 0.0
    return float(np.dot(_piece_overlaps(rho, a, b), rho.values))


def density_cost_integral(rho: PiecewiseConstantDensity, cost: CostModel, velocity: VelocityModel,
                          a: float, b: float) -> float:
    """Exact integral of c(rho(y)) over [a, b] (c(0) = 1 off the support)."""
    if a > b:
        raise ValueError("need a <= b")
    if rho.values.size == 0:
        return float(b - a)
    w = _piece_overlaps(rho, a, b)
    cv = np.asarray(cost.c(rho.values, velocity), dtype=float)
    return float((b - a) + np.dot(w, cv - 1.0))


def l1_distance(p: PiecewiseConstantDensity, q: PiecewiseConstantDensity,
                a: float = -math.inf, b: float = math.inf) -> float:
    """Exact L1 distance of two step functions on [a, b]."""
    pts = np.unique(np.concatenate((p.breakpoints, q.breakpoints)))
    if math.isfinite(a):
        pts = np.unique(np.concatenate((pts[pts > a], [a])))
    if math.isfinite(b):
        pts = np.unique(np.concatenate((pts[pts < b], [b])))
    if pts.size < 2:
        return 0.0
    mids = 0.5 * (pts[:-1] + pts[1:])
    return float(np.dot(np.diff(pts), np.abs(p(mids) - q(mids))))


@dataclass(frozen=True)
class Scenario:
    velocity: VelocityModel
    cost: CostModel
    initial: PiecewiseConstantDensity
    horizon: float = 1.0
    dpa_n: int = 11
    dpa_N: Optional[int] = None
    wft_n: int = 10
    wft_mode: str = "rh"
    turning_kind: Optional[str] = None
    turning_delta: float = 1.0
    turning_epsilon: float = 1.0
    snapshot_dt: float = 0.05
    name: str = "custom"

    def __post_init__(self):
        if self.horizon <= 0:
            raise ValueError("horizon must be positive")
        bp = self.initial.canonical().breakpoints
        if bp.size and (bp[0] < -1 or bp[-1] > 1):
            raise ValueError("initial density must be supported in [-1, 1]")
        if self.initial.values.size and self.initial.sup() > self.velocity.rho_max:
            raise ValueError("initial density exceeds rho_max")
        if self.wft_mode not in ("rh", "q"):
            raise ValueError("wft mode must be 'rh' or 'q'")
        if self.turning_kind not in (None, "balance", "particle", "memory", "relaxation"):
            raise ValueError(f"unknown turning kind {self.turning_kind!r}")

    @property
    def flux(self) -> FluxModel:
        return FluxModel(self.velocity)

    def with_(self, **changes) -> "Scenario":
        from dataclasses import replace
        return replace(self, **changes)
