"""Riemann problems for the signed LWR fluxes and at the turning point.

The turning-point solver builds the local self-similar structure at
``xi(0)`` from the time derivative of the balance relation.  Writing
``sigma`` for the turning speed and ``a``/``b`` for the states on either
side of ``xi(0)``, the balance requires

    sigma (c(a) + c(b)) + I_L(sigma) - I_R(sigma) = Psi,

where ``Psi`` is the rate at which the waves issued at -1, 0, 1 change the
right-minus-left cost integral, and ``I_L``/``I_R`` are the cost defects of
the local waves on each side.  Vacuum traces, a non-classical shock on the
left and its mirror image form a single family parametrised by ``sigma``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.integrate import quad
from scipy.optimize import brentq

from .model import CostModel, DomainError, FluxModel, VelocityModel

LEFTWARD = -1
RIGHTWARD = +1

VACUUM = "Vacuum"
NONCLASSICAL_LEFT = "NonClassicalLeft"
NONCLASSICAL_RIGHT = "NonClassicalRight"
CONGESTED = "Congested"

VACUUM_OR_EQUAL = "VacuumOrEqualTraces"
DISCONTINUOUS = "DiscontinuousTraces"

NC_THEN_SHOCK = "NonClassicalThenShock"
VACUUM_BETWEEN = "VacuumBetweenShocks"
SHOCK_THEN_NC = "ShockThenNonClassical"


class RiemannError(RuntimeError):
    """Bracketing failure; ``samples`` holds (parameter, residual) pairs."""

    def __init__(self, msg, samples=()):
        super().__init__(msg)
        self.samples = list(samples)


@dataclass(frozen=True)
class Wave:
    kind: str  # "shock" | "rarefaction"
    left: float
    right: float
    sign: int
    speed_lo: float
    speed_hi: float

    @property
    def speed(self) -> float:
        return self.speed_lo

    def mirrored(self) -> "Wave":
        return Wave(self.kind, self.right, self.left, -self.sign, -self.speed_hi, -self.speed_lo)


@dataclass(frozen=True)
class WaveFan:
    waves: tuple = ()

    def __len__(self):
        return len(self.waves)

    def __iter__(self):
        return iter(self.waves)


@dataclass
class TurningSolution:
    classification: str
    trace_left: float
    trace_right: float
    xi_dot: float
    xi0: float = 0.0
    rho_M: Optional[float] = None
    psi: float = 0.0
    left_waves: tuple = ()
    right_waves: tuple = ()
    checks: dict = field(default_factory=dict)

    def rh_residual(self, flux: FluxModel) -> float:
        lo, hi = self.trace_left, self.trace_right
        return abs(flux.f(hi) + flux.f(lo) - self.xi_dot * (hi - lo))

    def admissibility_slack(self, flux: FluxModel) -> float:
        """Nonnegative when characteristics enter the turning curve."""
        lo, hi = self.trace_left, self.trace_right
        if lo < hi:
            return self.xi_dot - flux.df(hi)
        if lo > hi:
            return -flux.df(lo) - self.xi_dot
        return 0.0


def _check_concave(flux: FluxModel):
    r = np.linspace(0.0, flux.rho_max, 257)
    if np.any(np.asarray(flux.d2f(r)) >= 0):
        raise ValueError("flux must be strictly concave")


class _Kit:
    """Flux/cost evaluations with closed forms for the linear velocity."""

    def __init__(self, flux: FluxModel, cost: CostModel):
        self.flux, self.cost, self.vel = flux, cost, flux.velocity
        self.rho_max = flux.rho_max
        self.closed = self.vel.kind == "linear" and cost.kind in ("linear", "reciprocal")

    def c(self, r):
        return float(self.cost.c(r, self.vel))

    def f(self, r):
        return float(self.flux.f(r))

    def df(self, r):
        return float(self.flux.df(r))

    def v(self, r):
        return float(self.vel.v(r))

    def inv_df(self, slope: float) -> float:
        """Density where f' equals ``slope``."""
        if self.vel.kind == "linear":
            r = 0.5 * self.rho_max * (1.0 - slope / self.vel.v_max)
            return min(max(r, 0.0), self.rho_max)
        g = lambda r: self.df(r) - slope
        if g(0.0) <= 0:
            return 0.0
        if g(self.rho_max) >= 0:
            return self.rho_max
        return brentq(g, 0.0, self.rho_max, xtol=1e-15)

    def cost_primitive(self, r: float) -> float:
        """Antiderivative of c, used by the closed forms."""
        if self.cost.kind == "linear":
            return r + 0.5 * self.cost.alpha * r * r
        rm = self.rho_max
        return -rm * math.log1p(-r / rm)

    def fan_integral(self, sign: int, r0: float, r1: float, ref: float) -> float:
        """int_{r0}^{r1} (c(r) - c(ref)) * sign * f''(r) dr."""
        if r0 == r1:
            return 0.0
        if self.closed:
            d2f = -2.0 * self.vel.v_max / self.rho_max
            val = self.cost_primitive(r1) - self.cost_primitive(r0) - self.c(ref) * (r1 - r0)
            return sign * d2f * val
        g = lambda r: (self.c(r) - self.c(ref)) * sign * float(self.flux.d2f(r))
        return quad(g, r0, r1, epsabs=1e-13, epsrel=1e-10, limit=200)[0]


def _lwr(kit: _Kit, rl: float, rr: float, sign: int) -> WaveFan:
    if rl == rr:
        return WaveFan()
    shock = rl < rr if sign > 0 else rl > rr
    if shock:
        s = sign * (kit.f(rr) - kit.f(rl)) / (rr - rl)
        return WaveFan((Wave("shock", rl, rr, sign, s, s),))
    return WaveFan((Wave("rarefaction", rl, rr, sign, sign * kit.df(rl), sign * kit.df(rr)),))


def lwr_riemann(rho_l: float, rho_r: float, flux: FluxModel, direction: int = RIGHTWARD) -> WaveFan:
    """Lax-admissible solution of rho_t + direction * f(rho)_x = 0."""
    _check_concave(flux)
    for r in (rho_l, rho_r):
        if not 0.0 <= r <= flux.rho_max:
            raise DomainError(f"state {r} outside [0, {flux.rho_max}]")
    if direction not in (LEFTWARD, RIGHTWARD):
        raise ValueError("direction must be -1 or +1")
    return _lwr(_Kit(flux, CostModel.linear(0.0)), rho_l, rho_r, direction)


def _state_at(kit: _Kit, w: Wave, lam: float) -> float:
    """Density inside a rarefaction at speed ``lam`` (clamped to the fan)."""
    lam = min(max(lam, w.speed_lo), w.speed_hi)
    return kit.inv_df(w.sign * lam)


def _left_part(kit: _Kit, w: Wave, cut: float) -> float:
    """int_{-inf}^{cut} (c(rho(lam)) - c(left)) dlam for a single wave."""
    dc = kit.c(w.right) - kit.c(w.left)
    if w.kind == "shock":
        return max(cut - w.speed_lo, 0.0) * dc
    if cut <= w.speed_lo:
        return 0.0
    u = min(cut, w.speed_hi)
    ru = w.right if u == w.speed_hi else _state_at(kit, w, u)
    return kit.fan_integral(w.sign, w.left, ru, w.left) + max(cut - w.speed_hi, 0.0) * dc


def _right_part(kit: _Kit, w: Wave, cut: float) -> float:
    """int_{cut}^{inf} (c(rho(lam)) - c(right)) dlam for a single wave."""
    dc = kit.c(w.left) - kit.c(w.right)
    if w.kind == "shock":
        return max(w.speed_lo - cut, 0.0) * dc
    if cut >= w.speed_hi:
        return 0.0
    u = max(cut, w.speed_lo)
    ru = w.left if u == w.speed_lo else _state_at(kit, w, u)
    return kit.fan_integral(w.sign, ru, w.right, w.right) + max(w.speed_lo - cut, 0.0) * dc


def fan_left_part(kit, fan: WaveFan, cut: float) -> float:
    return sum(_left_part(kit, w, cut) for w in fan)


def fan_right_part(kit, fan: WaveFan, cut: float) -> float:
    return sum(_right_part(kit, w, cut) for w in fan)


def initial_turning_point(rho_L: float, rho_R: float, cost: CostModel, velocity: VelocityModel) -> float:
    """Balance point of the two-block datum rho_L on (-1, 0), rho_R on (0, 1)."""
    cl = float(cost.c(rho_L, velocity))
    cr = float(cost.c(rho_R, velocity))
    if rho_L >= rho_R:
        return -(cl - cr) / (2.0 * cl)
    return (cr - cl) / (2.0 * cr)


def _j_integral(kit: _Kit, r: float) -> float:
    """int_r^{rho_hat} (c - c(r))."""
    rh = kit.flux.rho_hat
    if kit.cost.kind == "linear":
        return 0.5 * kit.cost.alpha * (rh - r) ** 2
    if kit.closed:
        return kit.cost_primitive(rh) - kit.cost_primitive(r) - kit.c(r) * (rh - r)
    return quad(lambda x: kit.c(x) - kit.c(r), r, rh, epsabs=1e-13, epsrel=1e-10)[0]


def classify_vacuum(rho_L: float, rho_R: float, cost: CostModel, flux: FluxModel) -> str:
    """Literal evaluation of the three sufficient conditions for equal traces."""
    if rho_L < rho_R:
        rho_L, rho_R = rho_R, rho_L
    kit = _Kit(flux, cost)
    rh, rm = flux.rho_hat, flux.rho_max
    if rho_R > rh:
        return VACUUM_OR_EQUAL
    if rho_L <= rh:
        d = _j_integral(kit, rho_R) - _j_integral(kit, rho_L)
        return VACUUM_OR_EQUAL if rho_R - rm < d < rm - rho_L else DISCONTINUOUS
    return VACUUM_OR_EQUAL if _j_integral(kit, rho_R) < rm - rho_L else DISCONTINUOUS


def psi_star_classify(psi_star: float, rho_L: float, velocity: VelocityModel) -> str:
    if not 0.0 <= rho_L < velocity.rho_max:
        raise DomainError("rho_L must lie in [0, rho_max)")
    w = 2.0 * float(velocity.v(rho_L))
    if psi_star <= -w:
        return NC_THEN_SHOCK
    if psi_star >= w:
        return SHOCK_THEN_NC
    return VACUUM_BETWEEN


def external_rate(kit: _Kit, rho_L: float, rho_R: float, xi0: float) -> float:
    """Right-minus-left rate of change of the cost integrals caused by the waves at -1, 0, 1."""
    left_win = fan_right_part(kit, _lwr(kit, 0.0, rho_L, LEFTWARD), 0.0)
    right_win = fan_left_part(kit, _lwr(kit, rho_R, 0.0, RIGHTWARD), 0.0)
    if xi0 != 0.0:
        w0 = _lwr(kit, rho_L, rho_R, RIGHTWARD) if xi0 < 0 else _lwr(kit, rho_L, rho_R, LEFTWARD)
        part = fan_left_part(kit, w0, 0.0) + fan_right_part(kit, w0, 0.0)
        if xi0 < 0:
            right_win += part
        else:
            left_win += part
    return right_win - left_win


def _vacuum_speed(kit: _Kit, a: float, b: float, psi: float) -> float:
    return 0.5 * (psi + (1.0 - kit.c(b)) * kit.v(b) - (1.0 - kit.c(a)) * kit.v(a))


def _nc_left(kit: _Kit, a: float, b: float, psi: float, tol: float):
    """Left trace ``a``, right trace rho_M < a, sigma from Rankine-Hugoniot."""
    ca, cb = kit.c(a), kit.c(b)

    def sigma(rm):
        return (kit.f(rm) + kit.f(a)) / (rm - a)

    def resid(rm):
        s = sigma(rm)
        return -psi + s * (ca + cb) - fan_right_part(kit, _lwr(kit, rm, b, RIGHTWARD), s)

    lo, hi = 0.0, a
    r_lo = resid(lo)
    hi_probe = a - 1e-15 * max(a, 1.0)
    r_hi = resid(hi_probe) if hi_probe > 0 else -math.inf
    if not (r_lo >= 0 and r_hi <= 0):
        samples = [(x, resid(x)) for x in np.linspace(0, hi_probe, 9)]
        raise RiemannError(f"no bracket for rho_M on [0, {a})", samples)
    if r_lo == 0:
        hi = 0.0
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if resid(mid) > 0:
            lo = mid
        else:
            hi = mid
    rm = 0.5 * (lo + hi) if hi > lo else hi
    s = sigma(rm)
    return rm, s, _lwr(kit, rm, b, RIGHTWARD)


def solve_local(kit: _Kit, a: float, b: float, psi: float, tol: float = 1e-12) -> TurningSolution:
    """Turning-point structure for local states ``a | b`` and external rate ``psi``."""
    rm_ = kit.rho_max
    if a == rm_ and b == rm_:
        s = psi / (2.0 * kit.c(rm_))
        return TurningSolution(CONGESTED, rm_, rm_, s, psi=psi)
    sv = _vacuum_speed(kit, a, b, psi)
    lo = -kit.v(a) if a > 0 else -math.inf
    hi = kit.v(b) if b > 0 else math.inf
    if lo <= sv <= hi:
        return TurningSolution(VACUUM, 0.0, 0.0, sv, psi=psi, rho_M=0.0,
                               left_waves=tuple(_lwr(kit, a, 0.0, LEFTWARD)),
                               right_waves=tuple(_lwr(kit, 0.0, b, RIGHTWARD)))
    if sv < lo:
        rm, s, fan = _nc_left(kit, a, b, psi, tol)
        return TurningSolution(NONCLASSICAL_LEFT, a, rm, s, psi=psi, rho_M=rm, right_waves=tuple(fan))
    m = solve_local(kit, b, a, -psi, tol)
    return TurningSolution(NONCLASSICAL_RIGHT, m.trace_right, m.trace_left, -m.xi_dot, psi=psi,
                           rho_M=m.rho_M, left_waves=tuple(w.mirrored() for w in reversed(m.right_waves)))


def solve_turning_riemann(rho_L: float, rho_R: float, cost: CostModel, flux: FluxModel,
                          tol: float = 1e-12) -> TurningSolution:
    """Turning-point solution for rho_L on (-1, 0), rho_R on (0, 1)."""
    _check_concave(flux)
    for r in (rho_L, rho_R):
        if not 0.0 <= r <= flux.rho_max:
            raise DomainError(f"state {r} outside [0, {flux.rho_max}]")
    if rho_L < rho_R:
        m = solve_turning_riemann(rho_R, rho_L, cost, flux, tol)
        cls = {NONCLASSICAL_LEFT: NONCLASSICAL_RIGHT, NONCLASSICAL_RIGHT: NONCLASSICAL_LEFT}.get(
            m.classification, m.classification)
        return TurningSolution(cls, m.trace_right, m.trace_left, -m.xi_dot, xi0=-m.xi0, rho_M=m.rho_M,
                               psi=-m.psi, left_waves=tuple(w.mirrored() for w in reversed(m.right_waves)),
                               right_waves=tuple(w.mirrored() for w in reversed(m.left_waves)),
                               checks=dict(m.checks))
    kit = _Kit(flux, cost)
    xi0 = initial_turning_point(rho_L, rho_R, cost, flux.velocity)
    if rho_L == rho_R:
        if rho_L == flux.rho_max:
            sol = TurningSolution(CONGESTED, rho_L, rho_L, 0.0)
        else:
            sol = TurningSolution(VACUUM, 0.0, 0.0, 0.0, rho_M=0.0,
                                  left_waves=tuple(_lwr(kit, rho_L, 0.0, LEFTWARD)),
                                  right_waves=tuple(_lwr(kit, 0.0, rho_L, RIGHTWARD)))
    else:
        psi = external_rate(kit, rho_L, rho_R, xi0)
        b = rho_L if xi0 < 0 else rho_R
        sol = solve_local(kit, rho_L, b, psi, tol)
    sol.xi0 = xi0
    sol.checks = {"rh_residual": sol.rh_residual(flux), "admissibility_slack": sol.admissibility_slack(flux)}
    return sol
