"""Wave-front tracking for the Hughes model.

States live on the grid ``i * eps * rho_max``.  Fronts left of the turning
point solve rho_t - f(rho)_x = 0, those right of it rho_t + f(rho)_x = 0,
both with the piecewise linear interpolant of f.  The turning point is a
front of its own whose traces come from the local turning Riemann solver,
snapped to the grid.

Equal traces (vacuum, congestion) allow any turning speed without losing
mass, so there the turning point follows the balance relation exactly and
is re-anchored to the balance root when the vacuum has room.  Distinct
traces move at the Rankine-Hugoniot speed; the off-grid trace is replaced
by whichever neighbouring grid value steers the balance residual back to
zero.
"""
from __future__ import annotations

import heapq
import itertools
import logging
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .model import CostModel, FluxModel, PiecewiseConstantDensity, Scenario, VelocityModel
from .riemann import CONGESTED, NONCLASSICAL_LEFT, NONCLASSICAL_RIGHT, VACUUM, _Kit, solve_local
from .trace import Event, SolutionTrace
from .turning import balance_xi

log = logging.getLogger(__name__)

LEFT_OF_TURNING = -1
RIGHT_OF_TURNING = 1
RH_SPEED = "rh"
ENTROPY_FLUX_SPEED = "q"

SHOCK = "shock"
RAREFACTION = "rarefaction"
TURNING = "turning"


class ConfigurationError(ValueError):
    pass


class FrontCapExceeded(RuntimeError):
    pass


class InternalConsistencyError(RuntimeError):
    pass


class WftGrid:
    """Density grid of step eps * rho_max and the interpolated flux on it."""

    def __init__(self, n: int, flux: FluxModel):
        if n < 1:
            raise ValueError("n must be positive")
        self.n = n
        self.eps = 2.0 ** -n
        self.size = 2 ** n
        self.step = self.eps * flux.rho_max
        self.values = np.arange(self.size + 1) * self.step
        self.F = np.asarray(flux.f(self.values), dtype=float)
        self.F[0] = 0.0
        self.F[-1] = float(flux.f(flux.rho_max))
        self.flux = flux

    def rho(self, i: int) -> float:
        return i * self.step

    def snap(self, r: float) -> int:
        """Nearest grid index, ties rounded down."""
        q = r / self.step
        k = math.floor(q)
        return int(min(max(k + 1 if q - k > 0.5 else k, 0), self.size))

    def bracket(self, r: float) -> tuple:
        q = r / self.step
        k = round(q)
        if abs(q - k) <= 1e-9:
            k = int(min(max(k, 0), self.size))
            return (k,)
        lo = int(min(max(math.floor(q), 0), self.size))
        return (lo, min(lo + 1, self.size))

    def fn(self, r):
        return np.interp(r, self.values, self.F)


def discretize_datum(rho: PiecewiseConstantDensity, grid, flux: Optional[FluxModel] = None) -> PiecewiseConstantDensity:
    """Round every value to the nearest grid value, ties down; ``grid`` is a WftGrid or the level n."""
    if not isinstance(grid, WftGrid):
        grid = WftGrid(int(grid), flux if flux is not None else FluxModel(VelocityModel()))
    vals = np.array([grid.rho(grid.snap(v)) for v in rho.values])
    return PiecewiseConstantDensity(rho.breakpoints, vals)


def front_speed(left: float, right: float, side: int, flux: FluxModel, mode: str = RH_SPEED,
                cost: Optional[CostModel] = None, grid: Optional[WftGrid] = None) -> float:
    """Speed of a front between two states on one side of the turning point."""
    if left == right:
        raise ValueError("a front needs two different states")
    f = grid.fn if grid is not None else flux.f
    rarefaction = (left > right) if side > 0 else (left < right)
    if rarefaction and mode == ENTROPY_FLUX_SPEED:
        if cost is None or cost.kind != "reciprocal":
            raise ConfigurationError("entropy-flux speeds need the reciprocal cost")
        cl, cr = cost.c(left, flux.velocity), cost.c(right, flux.velocity)
        q = lambda c: -c + 2.0 * math.log(c)
        return side * (q(cr) - q(cl)) / (cr - cl)
    if mode not in (RH_SPEED, ENTROPY_FLUX_SPEED):
        raise ConfigurationError(f"unknown speed mode {mode!r}")
    return side * (float(f(right)) - float(f(left))) / (right - left)


def turning_speed(left: float, right: float, flux: FluxModel, psi: float = 0.0,
                  cost: Optional[CostModel] = None) -> float:
    """Rankine-Hugoniot speed of the turning point; equal traces use the balance slope psi / (2 c)."""
    if left != right:
        return (float(flux.f(right)) + float(flux.f(left))) / (right - left)
    if cost is None:
        raise ValueError("equal traces need the cost to close the balance")
    c = float(cost.c(min(left, flux.rho_max), flux.velocity)) if left < flux.rho_max or cost.kind == "linear" else math.inf
    return 0.0 if math.isinf(c) else psi / (2.0 * c)


class Front:
    __slots__ = ("id", "x0", "t0", "s", "ul", "ur", "kind", "side", "prev", "next", "alive", "ver", "w")

    def __init__(self, fid, x, t, s, ul, ur, kind, side):
        self.id, self.x0, self.t0, self.s = fid, x, t, s
        self.ul, self.ur, self.kind, self.side = ul, ur, kind, side
        self.prev = self.next = None
        self.alive, self.ver, self.w = True, 0, 0.0

    def x(self, t):
        return self.x0 + self.s * (t - self.t0)


@dataclass
class WftResult:
    trace: SolutionTrace
    grid: WftGrid
    datum: PiecewiseConstantDensity
    front_counts: list
    tv: np.ndarray
    segments: list  # (t0, t1, x0, s, ul, ur, side) for every finished front, in density units

    @property
    def events(self):
        return self.trace.events


class WftSolver:
    def __init__(self, scenario: Scenario, n: Optional[int] = None, mode: Optional[str] = None,
                 front_cap: int = 1_000_000, fuzz: float = 1e-13, keep_segments: bool = True):
        self.sc = scenario
        self.flux = scenario.flux
        self.cost = scenario.cost
        self.vel = scenario.velocity
        self.grid = WftGrid(scenario.wft_n if n is None else n, self.flux)
        self.mode = scenario.wft_mode if mode is None else mode
        if self.mode not in (RH_SPEED, ENTROPY_FLUX_SPEED):
            raise ConfigurationError(f"unknown speed mode {self.mode!r}")
        if self.mode == ENTROPY_FLUX_SPEED and self.cost.kind != "reciprocal":
            raise ConfigurationError("entropy-flux speeds need the reciprocal cost")
        self.kit = _Kit(self.flux, self.cost)
        self.cap, self.fuzz = front_cap, fuzz
        self.keep_segments = keep_segments
        self.segments: list = []
        self.events: list = []
        self.heap: list = []
        self.seq = itertools.count()
        self.ids = itertools.count()
        self.count = 0
        self.t = 0.0
        self.psi = 0.0  # rate of (right cost integral - left cost integral) from non-turning fronts
        self.B, self.tB, self.rate, self.bver = 0.0, 0.0, 0.0, 0
        self.thr = self.grid.eps
        c = np.asarray(self.cost.c(np.minimum(self.grid.values, self.flux.rho_max * (1 - 1e-15)), self.vel), float)
        self.C = c
        self.max_residual = 0.0
        self.datum = discretize_datum(scenario.initial, self.grid)
        self.turning_segments: list = []
        self._build()
        self._tstate = None
        self._track_turning()

    # bookkeeping ---------------------------------------------------------
    def _weight(self, fr: Front, t: float) -> float:
        """Contribution of a front to psi: side * s * (c_l - c_r) while inside (-1, 1)."""
        if fr.kind == TURNING:
            return 0.0
        x = fr.x(t)
        inside = (-1.0 < x < 1.0) or (x == -1.0 and fr.s > 0) or (x == 1.0 and fr.s < 0)
        if not inside:
            return 0.0
        return fr.side * fr.s * (self.C[fr.ul] - self.C[fr.ur])

    def _set_weight(self, fr: Front, w: float):
        self.psi += w - fr.w
        fr.w = w

    def _new(self, x, s, ul, ur, kind, side) -> Front:
        fr = Front(next(self.ids), x, self.t, s, ul, ur, kind, side)
        self.count += 1
        if self.count > self.cap:
            raise FrontCapExceeded(f"{self.count} fronts alive at t={self.t}")
        return fr

    def _kill(self, fr: Front):
        fr.alive = False
        self.count -= 1
        self._set_weight(fr, 0.0)
        if self.keep_segments and fr.kind != TURNING and self.t > fr.t0:
            self.segments.append((fr.t0, self.t, fr.x0, fr.s, fr.ul, fr.ur, fr.side))

    def _link_after(self, left: Optional[Front], fr: Front):
        nxt = left.next if left is not None else self.head
        fr.prev, fr.next = left, nxt
        if left is not None:
            left.next = fr
        else:
            self.head = fr
        if nxt is not None:
            nxt.prev = fr

    def _unlink(self, fr: Front):
        if fr.prev is not None:
            fr.prev.next = fr.next
        else:
            self.head = fr.next
        if fr.next is not None:
            fr.next.prev = fr.prev

    def _push_pair(self, a: Optional[Front], b: Optional[Front]):
        if a is None or b is None or a.s <= b.s:
            return
        tc = (b.x0 - b.s * b.t0 - a.x0 + a.s * a.t0) / (a.s - b.s)
        if tc < self.t:
            if self.t - tc > 1e-9:
                raise InternalConsistencyError(f"collision predicted in the past: {tc} < {self.t}")
            tc = self.t
        heapq.heappush(self.heap, (tc, b.x(tc), next(self.seq), "pair", a, a.ver, b, b.ver))

    def _push_walls(self, fr: Front):
        if fr.kind == TURNING or fr.s == 0.0:
            return
        x = fr.x(self.t)
        for wall in (-1.0, 1.0):
            dt = (wall - x) / fr.s
            if dt > 0:
                heapq.heappush(self.heap, (self.t + dt, wall, next(self.seq), "wall", fr, fr.ver, None, None))

    def _sync_balance(self):
        self.B += self.rate * (self.t - self.tB)
        self.tB = self.t

    def _turning_rate(self):
        T = self.T
        c = self.C[T.ul] + self.C[T.ur]
        return T.s * c - self.psi

    def _retime_balance(self):
        """Recompute the balance drift and schedule the next residual check."""
        self._sync_balance()
        self.rate = self._turning_rate()
        self.bver += 1
        if self.rate != 0.0:
            target = self.thr if self.rate > 0 else -self.thr
            if (target - self.B) * self.rate <= 0:
                # already past the threshold and still drifting out: look again one threshold later
                target = self.B + target
            dt = (target - self.B) / self.rate
            heapq.heappush(self.heap, (self.t + dt, self.T.x(self.t + dt), next(self.seq), "balance", None, self.bver, None, None))

    # Riemann problems ------------------------------------------------------
    def _fan(self, il: int, ir: int, side: int) -> list:
        """(speed, ul, ur, kind) of the classical solution between grid states on one side."""
        if il == ir:
            return []
        g = self.grid
        shock = (il < ir) if side > 0 else (il > ir)
        if shock:
            s = side * (g.F[ir] - g.F[il]) / ((ir - il) * g.step)
            return [(s, il, ir, SHOCK)]
        step = 1 if ir > il else -1
        out = []
        for j in range(il, ir, step):
            k = j + step
            if self.mode == ENTROPY_FLUX_SPEED:
                s = front_speed(g.rho(j), g.rho(k), side, self.flux, self.mode, self.cost)
            else:
                s = side * (g.F[k] - g.F[j]) / ((k - j) * g.step)
            out.append((s, j, k, RAREFACTION))
        return out

    def _fan_psi(self, fan, side):
        return sum(side * s * (self.C[l] - self.C[r]) for s, l, r, _ in fan)

    def _solve_turning(self, a: int, b: int):
        """Grid turning solution for local states a | b; returns (ul, ur, speed, left fan, right fan, cls)."""
        g = self.grid
        top = g.size
        psi = self.psi
        if a == top and b == top:
            c = self.C[top]
            s = 0.0 if not np.isfinite(c) else psi / (2 * c)
            return top, top, s, [], [], CONGESTED
        sol = solve_local(self.kit, g.rho(a), g.rho(b), psi)
        if sol.classification == VACUUM:
            lf = self._fan(a, 0, LEFT_OF_TURNING)
            rf = self._fan(0, b, RIGHT_OF_TURNING)
            total = psi + self._fan_psi(lf, LEFT_OF_TURNING) + self._fan_psi(rf, RIGHT_OF_TURNING)
            s = total / (2.0 * self.C[0])
            lo = max((f[0] for f in lf), default=-math.inf)
            hi = min((f[0] for f in rf), default=math.inf)
            if not lo <= s <= hi:
                self.events.append(Event(self.t, "TurningClamp", -1, old=s, new=min(max(s, lo), hi)))
                s = min(max(s, lo), hi)
            return 0, 0, s, lf, rf, VACUUM
        nc_left = sol.classification == NONCLASSICAL_LEFT
        best = None
        for gm in g.bracket(sol.rho_M):
            if nc_left:
                ul, ur = a, gm
                if ul == ur:
                    continue
                lf, rf = [], self._fan(gm, b, RIGHT_OF_TURNING)
            else:
                ul, ur = gm, b
                if ul == ur:
                    continue
                lf, rf = self._fan(a, gm, LEFT_OF_TURNING), []
            s = (g.F[ur] + g.F[ul]) / ((ur - ul) * g.step)
            lo = max((f[0] for f in lf), default=-math.inf)
            hi = min((f[0] for f in rf), default=math.inf)
            total = psi + self._fan_psi(lf, LEFT_OF_TURNING) + self._fan_psi(rf, RIGHT_OF_TURNING)
            rate = s * (self.C[ul] + self.C[ur]) - total
            bad = max(lo - s, s - hi, 0.0)
            steer = -self.B * rate  # positive when the drift pulls the residual back
            key = (bool(bad > 1e-12), -int(steer > 0) if self.B != 0 else 0, abs(float(rate)))
            if best is None or key < best[0]:
                best = (key, (ul, ur, s, lf, rf, sol.classification))
        if best is None:
            # the bracket collapsed onto the large trace; treat as an equal-trace front
            return self._solve_equal(a, b)
        if best[0][0]:
            self.events.append(Event(self.t, "TurningClamp", -1, old=best[1][2], new=best[1][2]))
        return best[1]

    def _solve_equal(self, a, b):
        lf = self._fan(a, 0, LEFT_OF_TURNING)
        rf = self._fan(0, b, RIGHT_OF_TURNING)
        total = self.psi + self._fan_psi(lf, LEFT_OF_TURNING) + self._fan_psi(rf, RIGHT_OF_TURNING)
        return 0, 0, total / (2.0 * self.C[0]), lf, rf, VACUUM

    # construction ------------------------------------------------------------
    def _build(self):
        g = self.grid
        d = self.datum
        xi = balance_xi(d, self.cost, self.vel)
        self.xi0 = xi
        bps, vals = list(d.breakpoints), [g.snap(v) for v in d.values]
        states = [0] + vals + [0]
        self.head = None
        last = None
        jumps = []
        a = b = None
        for i, x in enumerate(bps):
            ul, ur = states[i], states[i + 1]
            if abs(x - xi) <= 1e-14:
                a, b = ul, ur
                continue
            if ul != ur:
                jumps.append((x, ul, ur))
        if a is None:
            k = int(np.searchsorted(np.asarray(bps), xi, side="right"))
            a = b = states[k]
        for x, ul, ur in jumps:
            side = LEFT_OF_TURNING if x < xi else RIGHT_OF_TURNING
            for s, l, r, kind in self._fan(ul, ur, side):
                fr = self._new(x, s, l, r, kind, side)
                self._link_after(last, fr)
                last = fr
        # splice the turning point in
        prev = None
        node = self.head
        while node is not None and node.x0 < xi:
            prev, node = node, node.next
        for fr in self._iter():
            self._set_weight(fr, self._weight(fr, 0.0))
        self.T = self._new(xi, 0.0, a, b, TURNING, 0)
        self._link_after(prev, self.T)
        self._resolve_turning(self.T, a, b, incoming=0)
        for fr in self._iter():
            self._push_walls(fr)
            self._push_pair(fr, fr.next)

    def _iter(self):
        node = self.head
        while node is not None:
            yield node
            node = node.next

    def _resolve_turning(self, T: Front, a: int, b: int, incoming: int):
        """Replace the turning front T (already linked) by the local turning solution."""
        ul, ur, s, lf, rf, cls = self._solve_turning(a, b)
        x = T.x(self.t)
        T.x0, T.t0, T.s, T.ul, T.ur = x, self.t, s, ul, ur
        T.ver += 1
        left = T.prev
        for sp, l, r, kind in lf:
            fr = self._new(x, sp, l, r, kind, LEFT_OF_TURNING)
            self._link_after(left, fr)
            left = fr
            self._set_weight(fr, self._weight(fr, self.t))
        right = T
        for sp, l, r, kind in rf:
            fr = self._new(x, sp, l, r, kind, RIGHT_OF_TURNING)
            self._link_after(right, fr)
            right = fr
            self._set_weight(fr, self._weight(fr, self.t))
        if incoming and ((incoming < 0 and rf) or (incoming > 0 and lf)):
            self.events.append(Event(self.t, "TurningCrossing", T.id, old=float(incoming)))
        if cls in (NONCLASSICAL_LEFT, NONCLASSICAL_RIGHT):
            self.events.append(Event(self.t, "NonClassical", T.id, old=g_rho(self.grid, ul), new=g_rho(self.grid, ur)))
        self._retime_balance()
        return lf, rf

    # events ------------------------------------------------------------------
    def _cluster(self, a: Front, b: Front, t: float) -> list:
        x = b.x(t)
        tol = self.fuzz * (1.0 + abs(x))
        first, last = a, b
        while first.prev is not None and abs(first.prev.x(t) - x) <= tol:
            first = first.prev
        while last.next is not None and abs(last.next.x(t) - x) <= tol:
            last = last.next
        out = [first]
        while out[-1] is not last:
            out.append(out[-1].next)
        return out

    def _collide(self, a: Front, b: Front):
        t = self.t
        cl = self._cluster(a, b, t)
        x = b.x(t)
        ul, ur = cl[0].ul, cl[-1].ur
        left, right = cl[0].prev, cl[-1].next
        self._sync_balance()
        has_T = any(fr.kind == TURNING for fr in cl)
        for fr in cl:
            if fr.kind != TURNING:
                self._kill(fr)
            self._unlink(fr)
        if has_T:
            T = self.T
            ti = cl.index(T)
            incoming = (-1 if ti > 0 else 0) + (1 if ti < len(cl) - 1 else 0)
            # -1: fronts arrived from the left only, +1 from the right only, 0 both
            if ti > 0 and ti < len(cl) - 1:
                incoming = 0
            elif ti > 0:
                incoming = -1
            else:
                incoming = 1
            T.x0, T.t0 = x, t
            self._link_after(left, T)
            lf, rf = self._resolve_turning(T, ul, ur, incoming)
            self.events.append(Event(t, "TurningInteraction", T.id, old=float(ul), new=float(ur)))
            new = [T]
            node = T.prev
            for _ in lf:
                new.insert(0, node)
                node = node.prev
            node = T.next
            for _ in rf:
                new.append(node)
                node = node.next
            self._after_turning_change()
        else:
            side = cl[0].side
            new = []
            prev = left
            for s, l, r, kind in self._fan(ul, ur, side):
                fr = self._new(x, s, l, r, kind, side)
                self._link_after(prev, fr)
                prev = fr
                self._set_weight(fr, self._weight(fr, t))
                new.append(fr)
            self.events.append(Event(t, "Interaction", -1, old=float(ul), new=float(ur)))
            if self.T.kind == TURNING:
                self._refresh_turning_speed()
        for fr in new:
            if fr.kind != TURNING:
                self._push_walls(fr)
        if new:
            self._push_pair(new[0].prev, new[0])
            for p, q in zip(new, new[1:]):
                self._push_pair(p, q)
            self._push_pair(new[-1], new[-1].next)
        else:
            self._push_pair(left, right)

    def _after_turning_change(self):
        T = self.T
        self._push_pair(T.prev, T)
        self._push_pair(T, T.next)

    def _refresh_turning_speed(self):
        """Equal traces follow the balance relation, so their speed tracks psi."""
        T = self.T
        if T.ul != T.ur:
            self._retime_balance()
            return
        self._sync_balance()
        c = self.C[T.ul]
        s = 0.0 if not np.isfinite(c) else self.psi / (2.0 * c)
        lo = T.prev.s if T.prev is not None and T.prev.ur == T.ul and abs(T.prev.x(self.t) - T.x(self.t)) <= self.fuzz else -math.inf
        hi = T.next.s if T.next is not None and T.next.ul == T.ur and abs(T.next.x(self.t) - T.x(self.t)) <= self.fuzz else math.inf
        s = min(max(s, lo), hi)
        if s != T.s:
            T.x0, T.t0, T.s = T.x(self.t), self.t, s
            T.ver += 1
            self._after_turning_change()
        self._retime_balance()

    def _wall(self, fr: Front):
        self._sync_balance()
        self._set_weight(fr, self._weight(fr, self.t))
        self._refresh_turning_speed()

    def _balance_event(self):
        """The residual reached its threshold: try to re-anchor or re-dither."""
        T = self.T
        self._sync_balance()
        if T.ul == T.ur and self._reanchor():
            return
        a, b = T.ul, T.ur
        T.ver += 1
        self._resolve_turning(T, a, b, incoming=0)
        lf_rf = []
        node = T.prev
        while node is not None and node.t0 == self.t and node.x0 == T.x0:
            lf_rf.insert(0, node)
            node = node.prev
        lf_rf.append(T)
        node = T.next
        while node is not None and node.t0 == self.t and node.x0 == T.x0:
            lf_rf.append(node)
            node = node.next
        for fr in lf_rf:
            if fr is not T:
                self._push_walls(fr)
        self._push_pair(lf_rf[0].prev, lf_rf[0])
        for p, q in zip(lf_rf, lf_rf[1:]):
            self._push_pair(p, q)
        self._push_pair(lf_rf[-1], lf_rf[-1].next)
        self.events.append(Event(self.t, "Redither", T.id, old=float(a), new=float(b)))
        if self.B * self.rate > 0 and abs(self.B) >= 0.5 * self.thr:
            # no grid trace steers the residual back: move the turning point to the balance root
            self._relocate(balance_xi(self.profile(), self.cost, self.vel))

    def _relocate(self, root: float):
        """Jump the turning point to ``root`` without touching the density.

        Every discontinuity it passes, the old turning discontinuity included, changes side and
        is re-solved with that side's flux; the new location gets a fresh turning Riemann problem.
        """
        t, T = self.t, self.T
        old = T.x(t)
        tol = self.fuzz * (1.0 + abs(root))
        lo, hi = min(old, root) - tol, max(old, root) + tol
        first = last = T
        while first.prev is not None and first.prev.x(t) >= lo:
            first = first.prev
        while last.next is not None and last.next.x(t) <= hi:
            last = last.next
        L, R = first.prev, last.next
        jumps = []
        node = first
        while True:
            nxt = node.next
            if node.ul != node.ur:
                x = node.x(t)
                if jumps and abs(jumps[-1][0] - x) <= tol:
                    jumps[-1] = (jumps[-1][0], jumps[-1][1], node.ur)
                else:
                    jumps.append((x, node.ul, node.ur))
            if node is not T:
                self._kill(node)
            self._unlink(node)
            if node is last:
                break
            node = nxt
        jumps = [j for j in jumps if j[1] != j[2]]
        left = [j for j in jumps if j[0] < root - tol]
        right = [j for j in jumps if j[0] > root + tol]
        a = left[-1][2] if left else (L.ur if L is not None else 0)
        b = right[0][1] if right else (R.ul if R is not None else 0)
        prev = L
        for x, ul, ur in left:
            for sp, l, r, kind in self._fan(ul, ur, LEFT_OF_TURNING):
                fr = self._new(x, sp, l, r, kind, LEFT_OF_TURNING)
                self._link_after(prev, fr)
                self._set_weight(fr, self._weight(fr, t))
                prev = fr
        T.x0, T.t0, T.ul, T.ur = root, t, a, b
        T.ver += 1
        self._link_after(prev, T)
        self._resolve_turning(T, a, b, incoming=0)
        prev = R.prev if R is not None else self._tail()
        for x, ul, ur in right:
            for sp, l, r, kind in self._fan(ul, ur, RIGHT_OF_TURNING):
                fr = self._new(x, sp, l, r, kind, RIGHT_OF_TURNING)
                self._link_after(prev, fr)
                self._set_weight(fr, self._weight(fr, t))
                prev = fr
        node = L.next if L is not None else self.head
        self._push_pair(L, node)
        while node is not None and node is not R:
            if node.kind != TURNING and node.t0 == t:
                self._push_walls(node)
            self._push_pair(node, node.next)
            node = node.next
        self.events.append(Event(t, "Reanchor", T.id, old=old, new=root))
        self.B, self.tB = self.exact_residual(), t
        self._retime_balance()

    def _tail(self):
        node = self.head
        while node is not None and node.next is not None:
            node = node.next
        return node

    def profile(self, t: Optional[float] = None) -> PiecewiseConstantDensity:
        t = self.t if t is None else t
        xs, vals = [], []
        for fr in self._iter():
            x = fr.x(t)
            if xs and x <= xs[-1]:
                x = xs[-1]
                vals[-1] = self.grid.rho(fr.ur)
                continue
            xs.append(x)
            vals.append(self.grid.rho(fr.ur))
        if len(xs) < 2:
            return PiecewiseConstantDensity.empty()
        return PiecewiseConstantDensity(xs, vals[:-1])

    def exact_residual(self) -> float:
        from .turning import balance_residual
        return balance_residual(self.profile(), self.cost, self.vel, self.T.x(self.t))

    def _reanchor(self) -> bool:
        """Move a vacuum turning point onto the balance root when the vacuum contains it."""
        T = self.T
        if T.ul != T.ur:
            return False
        t = self.t
        root = balance_xi(self.profile(), self.cost, self.vel)
        lo = T.prev.x(t) if T.prev is not None else -math.inf
        hi = T.next.x(t) if T.next is not None else math.inf
        if not lo < root < hi:
            return False
        old = T.x(t)
        if root != old:
            T.x0, T.t0 = root, t
            T.ver += 1
            self.events.append(Event(t, "Reanchor", T.id, old=old, new=root))
            self._after_turning_change()
        self.B, self.tB = self.exact_residual(), t
        self._retime_balance()
        return True

    def _track_turning(self):
        """Close the current straight piece of the turning path whenever its motion or traces change."""
        T = self.T
        state = (T.x0, T.t0, T.s, T.ul, T.ur)
        if self._tstate is not None and state == self._tstate[1:]:
            return
        if self._tstate is not None:
            start, x0, t_ref, sp, ul, ur = self._tstate
            if self.t > start:
                self.turning_segments.append((start, self.t, x0 + sp * (start - t_ref), sp, ul, ur, 0))
        self._tstate = (self.t,) + state

    def advance(self) -> Optional[float]:
        """Process the earliest pending event; returns its time or None when the queue is empty."""
        while self.heap:
            tc, _, _, kind, a, av, b, bv = heapq.heappop(self.heap)
            if kind == "pair":
                if not (a.alive and b.alive and a.ver == av and b.ver == bv and a.next is b):
                    continue
            elif kind == "wall":
                if not (a.alive and a.ver == av):
                    continue
            elif kind == "balance" and av != self.bver:
                continue
            if tc < self.t - 1e-12:
                raise InternalConsistencyError(f"event at {tc} before current time {self.t}")
            self.t = max(self.t, tc)
            if kind == "pair":
                self._collide(a, b)
            elif kind == "wall":
                self._wall(a)
            else:
                self._balance_event()
            self._track_turning()
            return self.t
        return None

    def peek(self) -> float:
        while self.heap:
            tc, _, _, kind, a, av, b, bv = self.heap[0]
            stale = (kind == "pair" and not (a.alive and b.alive and a.ver == av and b.ver == bv and a.next is b)) \
                or (kind == "wall" and not (a.alive and a.ver == av)) or (kind == "balance" and av != self.bver)
            if not stale:
                return tc
            heapq.heappop(self.heap)
        return math.inf

    def total_variation(self) -> float:
        return sum(abs(fr.ur - fr.ul) for fr in self._iter()) * self.grid.step

    def run(self, horizon: float, snapshot_dt: float, tv_dt: Optional[float] = None) -> WftResult:
        tr = SolutionTrace("WFT")
        tr.meta.update(n=self.grid.n, eps=self.grid.eps, mode=self.mode, xi0=self.xi0,
                       xi_datum=balance_xi(self.sc.initial, self.cost, self.vel))
        tv_dt = tv_dt or snapshot_dt / 5
        turning, counts, tvs = [], [], []

        def sample():
            T = self.T
            turning.append((self.t, T.x(self.t), self.grid.rho(T.ul), self.grid.rho(T.ur)))

        marks = sorted(set([k * snapshot_dt for k in range(int(math.floor(horizon / snapshot_dt + 1e-9)) + 1)]
                           + [k * tv_dt for k in range(int(math.floor(horizon / tv_dt + 1e-9)) + 1)] + [horizon]))
        snaps = {round(k * snapshot_dt, 12) for k in range(int(math.floor(horizon / snapshot_dt + 1e-9)) + 1)}
        snaps.add(round(horizon, 12))
        residuals = []
        for mark in marks:
            while self.peek() <= mark:
                self.advance()
                if self.events and self.events[-1].kind in ("TurningInteraction", "Redither", "Reanchor"):
                    sample()
            self.t = mark
            self._sync_balance()
            tvs.append((mark, self.total_variation()))
            counts.append((mark, self.count))
            if round(mark, 12) in snaps:
                if self.T.ul == self.T.ur:
                    self._reanchor()
                    self._track_turning()
                exact = self.exact_residual()
                residuals.append((mark, exact))
                self.max_residual = max(self.max_residual, abs(exact))
                self.B, self.tB = exact, mark
                self._retime_balance()
                sample()
                if not tr.times or mark > tr.times[-1]:
                    tr.add_snapshot(mark, self.profile())
        for fr in self._iter():
            if self.keep_segments and fr.kind != TURNING and self.t > fr.t0:
                self.segments.append((fr.t0, self.t, fr.x0, fr.s, fr.ul, fr.ur, fr.side))
        self._tstate, last = None, self._tstate
        start, x0, t_ref, sp, ul, ur = last
        if self.t > start:
            self.turning_segments.append((start, self.t, x0 + sp * (start - t_ref), sp, ul, ur, 0))
        step = self.grid.step
        segs = [(t0, t1, x0, sp, ul * step, ur * step, side)
                for t0, t1, x0, sp, ul, ur, side in self.segments + self.turning_segments]
        tr.fronts = np.array(segs, dtype=float).reshape(-1, 7)
        tr.turning = np.array([(t, x) for t, x, _, _ in turning])
        tr.traces = np.array(turning)
        tr.events = self.events
        tr.meta.update(max_residual=self.max_residual, residuals=residuals, threshold=self.thr)
        return WftResult(tr, self.grid, self.datum, counts, np.array(tvs), self.segments)


def g_rho(grid: WftGrid, i: int) -> float:
    return grid.rho(i)


FrontList = WftSolver


def entropy_flux_q(rho, cost: CostModel, velocity) -> float:
    """q = -c + 2 ln c, the entropy flux behind the analytical rarefaction speed."""
    c = cost.c(rho, velocity)
    return -c + 2.0 * np.log(c)


def initial_fronts(scenario: Scenario, n: Optional[int] = None, mode: Optional[str] = None) -> FrontList:
    return WftSolver(scenario, n=n, mode=mode)


def advance(fronts: FrontList):
    """Process one event; returns the list and the events it logged."""
    k = len(fronts.events)
    fronts.advance()
    return fronts, fronts.events[k:]


def run(scenario: Scenario, n: Optional[int] = None, horizon: Optional[float] = None,
        snapshot_dt: Optional[float] = None, mode: Optional[str] = None, **kw) -> WftResult:
    solver = WftSolver(scenario, n=n, mode=mode, **kw)
    return solver.run(scenario.horizon if horizon is None else horizon,
                      scenario.snapshot_dt if snapshot_dt is None else snapshot_dt)
