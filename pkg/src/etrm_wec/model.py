"""Regularised point-absorber dynamics, Hamiltonian and control law.

State/costate vectors are laid out as ``(x1, x2, x3, lam1, lam2, lam3)``:
displacement, velocity, clock state and their costates. Every function
accepts either a single 6-vector or a ``(6, m)`` array of column states.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .excitation import FourierForce

STATE_NAMES = ("x1", "x2", "x3", "lam1", "lam2", "lam3")


@dataclass(frozen=True)
class ModelParams:
    """Buoy constants, PTO force bound ``gamma`` and regularisation ``epsilon``."""

    m: float = 2.0e5
    k: float = 1.2e5
    c: float = 1.0e5
    gamma: float = 1.5e5
    epsilon: float = 1.0e-3

    def __post_init__(self):
        for name in ("m", "k", "c", "gamma", "epsilon"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0):
                raise ValueError(f"{name} must be positive and finite, got {value!r}")

    def with_epsilon(self, epsilon: float) -> "ModelParams":
        return replace(self, epsilon=float(epsilon))

    @property
    def glcc(self) -> float:
        """Legendre-Clebsch coefficient 2c/m of the singular arc (always > 0)."""
        return 2.0 * self.c / self.m


@dataclass(frozen=True)
class ControlSample:
    u_trig: np.ndarray
    u: np.ndarray
    h1: np.ndarray
    hamiltonian: np.ndarray


def switching_function(z, p: ModelParams):
    z = np.asarray(z, dtype=float)
    return -(z[4] + p.m * z[1]) / p.m


def optimal_trig_control(z, p: ModelParams):
    """Minimiser of ``gamma*H1*sin(v) + eps*lam1*cos(v)`` over v in (-pi, pi].

    Both stationary branches of the arctangent law are folded into a single
    quadrant-aware ``arctan2``, which is never undefined at ``lam1 = 0``.
    """
    z = np.asarray(z, dtype=float)
    a = p.gamma * switching_function(z, p)
    b = p.epsilon * z[3]
    v = np.arctan2(-a, -b)
    v = np.where(v <= -np.pi, np.pi, v)
    # H does not depend on the control at all here; pick zero PTO force.
    return np.where((a == 0.0) & (b == 0.0), 0.0, v)


def hamiltonian(z, u_trig, p: ModelParams, force: FourierForce):
    z = np.asarray(z, dtype=float)
    x1, x2, x3, lam1, lam2, lam3 = z
    s = np.sin(u_trig)
    return (
        -p.gamma * x2 * s
        + lam1 * (x2 + p.epsilon * np.cos(u_trig))
        + lam2 / p.m * (force(x3) - p.k * x1 - p.c * x2 - p.gamma * s)
        + lam3
    )


def optimal_control(z, p: ModelParams, force: FourierForce) -> ControlSample:
    z = np.asarray(z, dtype=float)
    v = optimal_trig_control(z, p)
    h = hamiltonian(z, v, p, force)
    if __debug__:
        # Cross-check against the explicit two-branch arctangent comparison.
        a = p.gamma * switching_function(z, p)
        b = p.epsilon * z[3]
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            base = np.arctan(a / b)
        for branch in (base, base + np.pi):
            ok = np.isfinite(branch)
            h_branch = hamiltonian(z, np.where(ok, branch, v), p, force)
            assert np.all(h <= h_branch + 1e-9 * (1.0 + np.abs(h_branch)))
    return ControlSample(u_trig=v, u=p.gamma * np.sin(v), h1=switching_function(z, p), hamiltonian=h)


def rhs_augmented(t, z, p: ModelParams, force: FourierForce):
    """Time derivative of the augmented state/costate vector.

    The system is autonomous: the excitation is driven by the clock state
    ``x3``, so ``t`` is accepted only for solver compatibility.
    """
    z = np.asarray(z, dtype=float)
    x1, x2, x3, lam1, lam2, lam3 = z
    v = optimal_trig_control(z, p)
    s = np.sin(v)
    return np.array(
        [
            x2 + p.epsilon * np.cos(v),
            (force(x3) - p.k * x1 - p.c * x2 - p.gamma * s) / p.m,
            np.ones_like(x1),
            p.k * lam2 / p.m,
            -lam1 + p.c * lam2 / p.m + p.gamma * s,
            -lam2 / p.m * force.derivative(x3),
        ]
    )


def jacobian_augmented(t, z, p: ModelParams, force: FourierForce):
    """Analytic ``d(rhs)/dz`` for column states, shaped ``(6, 6, m)``.

    At the isolated points where both control coefficients vanish the
    control is not differentiable; its derivative is taken as zero there.
    """
    z = np.asarray(z, dtype=float)
    x1, x2, x3, lam1, lam2, lam3 = z
    a = p.gamma * switching_function(z, p)
    b = p.epsilon * lam1
    r2 = a * a + b * b
    with np.errstate(divide="ignore", invalid="ignore"):
        inv_r3 = np.where(r2 > 0.0, r2**-1.5, 0.0)
    g, m, eps = p.gamma, p.m, p.epsilon
    # d sin(u_trig) and d cos(u_trig) with respect to x2, lam1, lam2
    ds_x2 = g * b * b * inv_r3
    ds_l1 = a * b * eps * inv_r3
    ds_l2 = ds_x2 / m
    dc_x2 = -g * a * b * inv_r3
    dc_l1 = -a * a * eps * inv_r3
    dc_l2 = dc_x2 / m

    J = np.zeros((6, 6) + x1.shape)
    J[0, 1] = 1.0 + eps * dc_x2
    J[0, 3] = eps * dc_l1
    J[0, 4] = eps * dc_l2
    J[1, 0] = -p.k / m
    J[1, 1] = (-p.c - g * ds_x2) / m
    J[1, 2] = force.derivative(x3) / m
    J[1, 3] = -g * ds_l1 / m
    J[1, 4] = -g * ds_l2 / m
    J[3, 4] = p.k / m
    J[4, 1] = g * ds_x2
    J[4, 3] = -1.0 + g * ds_l1
    J[4, 4] = p.c / m + g * ds_l2
    J[5, 2] = -lam2 * force.second_derivative(x3) / m
    J[5, 4] = -force.derivative(x3) / m
    return J


def singular_control_oracle(z, p: ModelParams, force: FourierForce):
    """Classical singular-arc PTO force from the unregularised problem.

    Only meaningful where the switching function is close to zero.
    """
    z = np.asarray(z, dtype=float)
    x1, x2, x3, _, lam2, _ = z
    return (
        p.k * lam2
        + p.m * p.k * x2
        + 2.0 * p.c * (force(x3) - p.c * x2 - p.k * x1)
        - p.m * force.derivative(x3)
    ) / (2.0 * p.c)


def trig_map_asymmetric(u_trig, u_min: float, u_max: float):
    """Map an angle onto ``[u_min, u_max]`` through a shifted sine."""
    if not u_min < u_max:
        raise ValueError(f"u_min ({u_min}) must be below u_max ({u_max})")
    c0 = 0.5 * (u_max + u_min)
    c1 = 0.5 * (u_max - u_min)
    return np.clip(c1 * np.sin(u_trig) + c0, u_min, u_max)
