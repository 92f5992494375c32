"""Built-in WEC test cases and the boundary conditions of their TPBVPs."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .excitation import FourierForce, case1_initial_conditions, non_periodic_force, periodic_force
from .model import ModelParams

FIXED_INITIAL = "fixed-initial"
FREE_INITIAL = "free-initial"


@dataclass(frozen=True)
class BoundarySpec:
    """Initial state of the buoy on ``[t0, tf]``.

    ``fixed-initial`` pins ``x1(t0)`` and ``x2(t0)``; ``free-initial`` leaves
    them free, replacing them with ``lam1(t0) = lam2(t0) = 0``. The final
    displacement and velocity are always free, so their costates vanish at
    ``tf``; ``x3(tf)`` follows from ``x3' = 1`` and ``lam3(tf) = 0`` closes
    the system.
    """

    mode: str = FIXED_INITIAL
    x1_0: float = 0.0
    x2_0: float = 0.0
    t0: float = 0.0
    tf: float = 50.0

    def __post_init__(self):
        if self.mode not in (FIXED_INITIAL, FREE_INITIAL):
            raise ValueError(f"unknown boundary mode {self.mode!r}")
        for name in ("x1_0", "x2_0", "t0", "tf"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"{name} must be finite")
        if not self.tf > self.t0:
            raise ValueError(f"tf ({self.tf}) must exceed t0 ({self.t0})")

    def residual(self, za, zb, t0: float | None = None):
        t0 = self.t0 if t0 is None else t0
        if self.mode == FIXED_INITIAL:
            start = [za[0] - self.x1_0, za[1] - self.x2_0]
        else:
            start = [za[3], za[4]]
        return np.array(start + [za[2] - t0, zb[3], zb[4], zb[5]])


@dataclass(frozen=True)
class CaseSpec:
    name: str
    params: ModelParams
    force: FourierForce
    boundary: BoundarySpec = field(default_factory=BoundarySpec)

    def with_epsilon(self, epsilon: float) -> "CaseSpec":
        return replace(self, params=self.params.with_epsilon(epsilon))


def builtin_cases() -> list[CaseSpec]:
    periodic = periodic_force()
    base = ModelParams()
    x1_0, x2_0 = case1_initial_conditions(periodic, base.c)
    return [
        CaseSpec("case1", replace(base, gamma=1.5e5), periodic, BoundarySpec(FIXED_INITIAL, x1_0, x2_0, 0.0, 50.0)),
        CaseSpec("case2", replace(base, gamma=1.5e5), periodic, BoundarySpec(FIXED_INITIAL, 0.0, 0.0, 0.0, 50.0)),
        CaseSpec("case3", replace(base, gamma=1.0e5), non_periodic_force(), BoundarySpec(FIXED_INITIAL, 0.0, 0.0, 0.0, 50.0)),
    ]


def get_case(name: str) -> CaseSpec:
    for case in builtin_cases():
        if case.name == name:
            return case
    raise KeyError(f"unknown case {name!r}; choose from case1, case2, case3")
