"""Scheme-independent record of a run."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .model import PiecewiseConstantDensity


@dataclass
class Event:
    t: float
    kind: str
    index: int = -1
    old: Optional[float] = None
    new: Optional[float] = None


@dataclass
class SolutionTrace:
    scheme: str
    times: list = field(default_factory=list)
    densities: list = field(default_factory=list)
    turning: np.ndarray = field(default_factory=lambda: np.empty((0, 2)))
    traces: Optional[np.ndarray] = None  # (t, xi, rho_minus, rho_plus) where available
    # straight space-time fronts (t0, t1, x0, speed, rho_left, rho_right, side); side 0 marks the turning point
    fronts: Optional[np.ndarray] = None
    events: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def add_snapshot(self, t: float, rho: PiecewiseConstantDensity):
        if self.times and t <= self.times[-1]:
            raise ValueError("snapshot times must increase")
        self.times.append(float(t))
        self.densities.append(rho)

    def snapshot_index(self, t: float) -> int:
        if not self.times:
            raise ValueError("empty trace")
        return int(np.argmin(np.abs(np.asarray(self.times) - t)))

    def density_at(self, t: float) -> PiecewiseConstantDensity:
        return self.densities[self.snapshot_index(t)]

    def events_of(self, *kinds: str) -> list:
        return [e for e in self.events if e.kind in kinds]

    def jump_times(self) -> list:
        return [e.t for e in self.events if e.kind == "TurningJump"]
