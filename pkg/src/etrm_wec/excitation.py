"""Excitation forces given as finite sine series."""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources
from typing import Iterable, Tuple

import numpy as np
import yaml


@dataclass(frozen=True, eq=False)
class FourierForce:
    """``f(t) = scale * sum_i a_i sin(omega_i t + phi_i)``."""

    amplitudes: np.ndarray
    omegas: np.ndarray
    phases: np.ndarray
    scale: float = 1.0
    name: str = field(default="", compare=False)

    def __post_init__(self):
        a, w, phi = (np.atleast_1d(np.asarray(v, dtype=float)) for v in (self.amplitudes, self.omegas, self.phases))
        if not (a.shape == w.shape == phi.shape) or a.ndim != 1:
            raise ValueError("amplitudes, omegas and phases must be 1-D arrays of equal length")
        if np.any(w < 0):
            raise ValueError("angular frequencies must be non-negative")
        if not np.all(np.isfinite(np.concatenate([a, w, phi, [self.scale]]))):
            raise ValueError("force coefficients must be finite")
        for arr in (a, w, phi):
            arr.setflags(write=False)
        object.__setattr__(self, "amplitudes", a)
        object.__setattr__(self, "omegas", w)
        object.__setattr__(self, "phases", phi)
        object.__setattr__(self, "scale", float(self.scale))

    @classmethod
    def from_terms(cls, terms: Iterable[Tuple[float, float, float]], scale: float = 1.0, name: str = ""):
        terms = list(terms)
        if not terms:
            return cls(np.zeros(0), np.zeros(0), np.zeros(0), scale, name)
        a, w, phi = zip(*terms)
        return cls(np.array(a), np.array(w), np.array(phi), scale, name)

    @property
    def terms(self):
        return list(zip(self.amplitudes.tolist(), self.omegas.tolist(), self.phases.tolist()))

    def __len__(self):
        return len(self.amplitudes)

    def __add__(self, other: "FourierForce") -> "FourierForce":
        return FourierForce(
            np.concatenate([self.scale * self.amplitudes, other.scale * other.amplitudes]),
            np.concatenate([self.omegas, other.omegas]),
            np.concatenate([self.phases, other.phases]),
        )

    def __call__(self, t):
        return force_eval(self, t)

    def derivative(self, t):
        return force_derivative(self, t)

    def second_derivative(self, t):
        return -self.scale * (np.sin(_arg(self, t)) @ (self.amplitudes * self.omegas**2))


def _arg(f: FourierForce, t):
    t = np.asarray(t, dtype=float)
    return np.multiply.outer(t, f.omegas) + f.phases


def force_eval(f: FourierForce, t):
    return f.scale * (np.sin(_arg(f, t)) @ f.amplitudes)


def force_derivative(f: FourierForce, t):
    return f.scale * (np.cos(_arg(f, t)) @ (f.amplitudes * f.omegas))


def case1_initial_conditions(f: FourierForce, c: float):
    """Steady-state displacement and velocity that start the buoy on the singular arc."""
    if np.any(f.omegas == 0):
        raise ValueError("steady-state initial conditions need every omega_i > 0")
    a = f.scale * f.amplitudes
    x1 = -np.sum(a * np.cos(f.phases) / f.omegas) / (2.0 * c)
    x2 = np.sum(a * np.sin(f.phases)) / (2.0 * c)
    return float(x1), float(x2)


@lru_cache(maxsize=None)
def coefficient_table() -> dict:
    text = resources.files("etrm_wec.data").joinpath("excitation.yaml").read_text()
    return yaml.safe_load(text)


def periodic_force() -> FourierForce:
    spec = coefficient_table()["periodic"]
    period = float(spec["period"])
    return FourierForce(
        amplitudes=np.array(spec["amplitudes"], dtype=float) * float(spec["amplitude_unit"]),
        omegas=np.array(spec["omega_pi_multiples"], dtype=float) * np.pi / period,
        phases=np.pi / np.array(spec["phase_pi_divisors"], dtype=float),
        scale=float(spec["scale"]),
        name="periodic",
    )


def non_periodic_force(scale: float | None = None) -> FourierForce:
    spec = coefficient_table()["non_periodic"]
    return FourierForce(
        amplitudes=spec["amplitudes"],
        omegas=spec["omegas"],
        phases=spec["phases"],
        scale=float(spec["scale"]) if scale is None else scale,
        name="non_periodic",
    )
