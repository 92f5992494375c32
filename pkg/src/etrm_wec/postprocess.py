"""Energy, arc structure and optimality diagnostics of converged trajectories."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np
from scipy.integrate import cumulative_simpson, simpson

from .excitation import FourierForce
from .model import ControlSample, ModelParams, optimal_control, singular_control_oracle

DEFAULT_RESOLUTION = 2001
BANG_FRACTION = 0.05
MIN_DWELL = 0.25
PMP_TIMES = 64
PMP_CONTROLS = 1024
PMP_SLACK = 1e-12


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Dense samples of a solution together with the control it implies."""

    t: np.ndarray
    z: np.ndarray
    control: ControlSample
    energy: np.ndarray

    def __post_init__(self):
        if self.t.ndim != 1 or len(self.t) < 2 or np.any(np.diff(self.t) <= 0):
            raise ValueError("sample times must be strictly increasing")
        if self.z.shape != (6, len(self.t)):
            raise ValueError(f"state samples must have shape (6, {len(self.t)})")

    def __len__(self):
        return len(self.t)

    @property
    def u(self):
        return self.control.u

    @property
    def h1(self):
        return self.control.h1


def make_trajectory(t, z, p: ModelParams, force: FourierForce) -> Trajectory:
    t = np.asarray(t, dtype=float)
    z = np.asarray(z, dtype=float)
    control = optimal_control(z, p, force)
    power = control.u * z[1]
    if len(t) >= 3:
        energy = cumulative_simpson(power, x=t, initial=0.0)
    else:
        energy = np.concatenate([[0.0], np.cumsum(0.5 * (power[1:] + power[:-1]) * np.diff(t))])
    return Trajectory(t=t, z=z, control=control, energy=energy)


def sample_trajectory(solution, p: ModelParams, force: FourierForce, resolution: int = DEFAULT_RESOLUTION) -> Trajectory:
    """Evaluate ``solution`` on ``resolution`` evenly spaced times."""
    if resolution < 3:
        raise ValueError("resolution must be at least 3")
    t = np.linspace(solution.mesh[0], solution.mesh[-1], resolution)
    return make_trajectory(t, solution(t), p, force)


def harvested_energy(traj: Trajectory) -> float:
    """Composite Simpson quadrature of ``u * x2`` in joules."""
    if len(traj.t) < 3:
        raise ValueError("energy quadrature needs at least 3 samples")
    return float(simpson(traj.u * traj.z[1], x=traj.t))


class ArcKind(str, enum.Enum):
    BANG_PLUS = "BangPlus"
    BANG_MINUS = "BangMinus"
    SINGULAR = "Singular"

    @property
    def letter(self) -> str:
        return "S" if self is ArcKind.SINGULAR else "B"


@dataclass(frozen=True)
class ArcSegment:
    kind: ArcKind
    t_start: float
    t_end: float

    @property
    def duration(self) -> float:
        return self.t_end - self.t_start


@dataclass(frozen=True)
class ArcSequence:
    segments: tuple

    @property
    def label(self) -> str:
        return "-".join(s.kind.letter for s in self.segments)

    def __len__(self):
        return len(self.segments)

    def __iter__(self):
        return iter(self.segments)

    def of_kind(self, kind: ArcKind):
        return [s for s in self.segments if s.kind is kind]

    def to_list(self):
        return [{"kind": s.kind.value, "t_start": s.t_start, "t_end": s.t_end} for s in self.segments]


def label_samples(u, gamma: float, eta: float = BANG_FRACTION):
    u = np.asarray(u, dtype=float)
    bound = (1.0 - eta) * gamma
    return np.where(u >= bound, 1, np.where(u <= -bound, -1, 0))


_KIND = {1: ArcKind.BANG_PLUS, -1: ArcKind.BANG_MINUS, 0: ArcKind.SINGULAR}


def segments_from_labels(t, labels, tau_min: float = MIN_DWELL) -> ArcSequence:
    """Group a label stream into arcs, absorbing short arcs into neighbours.

    The shortest arc under ``tau_min`` is merged into its longer neighbour
    (ties go left) until every arc is long enough or only one remains.
    """
    t = np.asarray(t, dtype=float)
    labels = np.asarray(labels)
    if len(t) != len(labels) or len(t) < 2:
        raise ValueError("need at least two labelled samples")
    starts = np.r_[0, np.flatnonzero(labels[1:] != labels[:-1]) + 1]
    # Each arc owns its samples up to the next arc's first sample.
    edges = np.r_[t[starts], t[-1]]
    arcs = [[int(labels[i]), edges[j], edges[j + 1]] for j, i in enumerate(starts)]

    def fuse():
        out = [arcs[0]]
        for arc in arcs[1:]:
            if arc[0] == out[-1][0]:
                out[-1][2] = arc[2]
            else:
                out.append(arc)
        return out

    while len(arcs) > 1:
        durations = [a[2] - a[1] for a in arcs]
        j = int(np.argmin(durations))
        if durations[j] >= tau_min:
            break
        left = durations[j - 1] if j > 0 else -1.0
        right = durations[j + 1] if j + 1 < len(arcs) else -1.0
        arcs[j][0] = arcs[j - 1][0] if left >= right else arcs[j + 1][0]
        arcs = fuse()
    return ArcSequence(tuple(ArcSegment(_KIND[k], float(a), float(b)) for k, a, b in arcs))


def classify_arcs(traj: Trajectory, p: ModelParams, eta: float = BANG_FRACTION, tau_min: float = MIN_DWELL) -> ArcSequence:
    return segments_from_labels(traj.t, label_samples(traj.u, p.gamma, eta), tau_min)


@dataclass(frozen=True)
class DiagnosticsReport:
    hamiltonian_drift: float
    hamiltonian_scale: float
    pmp_violations: int
    pmp_probes: int
    singular_oracle_error: float
    singular_h1_max: float
    h1_scale: float

    @property
    def relative_drift(self) -> float:
        return self.hamiltonian_drift / self.hamiltonian_scale if self.hamiltonian_scale > 0 else 0.0

    def to_dict(self) -> dict:
        out = {}
        for key, value in self.__dict__.items():
            # JSON has no NaN; absent singular arcs are reported as null.
            out[key] = None if isinstance(value, float) and math.isnan(value) else value
        out["relative_drift"] = self.relative_drift
        return out


def pmp_violations(z, u_trig, p: ModelParams, n_controls: int = PMP_CONTROLS, slack: float = PMP_SLACK) -> int:
    """Count (time, probe) pairs where a grid control beats the chosen one.

    Only the control-dependent part of H differs between candidates, so the
    comparison uses ``gamma*H1*sin + eps*lam1*cos`` directly rather than
    subtracting two large Hamiltonian values.
    """
    z = np.asarray(z, dtype=float)
    a = p.gamma * (-(z[4] + p.m * z[1]) / p.m)
    b = p.epsilon * z[3]
    probes = -np.pi + 2.0 * np.pi * np.arange(1, n_controls + 1) / n_controls
    chosen = a * np.sin(u_trig) + b * np.cos(u_trig)
    trial = np.outer(a, np.sin(probes)) + np.outer(b, np.cos(probes))
    return int(np.count_nonzero(chosen[:, None] > trial + slack))


def diagnostics(
    traj: Trajectory,
    p: ModelParams,
    force: FourierForce,
    arcs: ArcSequence | None = None,
    edge_trim: float = 0.5 * MIN_DWELL,
) -> DiagnosticsReport:
    """Hamiltonian drift, PMP probe count and singular-arc oracle agreement.

    Singular-arc statistics ignore ``edge_trim`` seconds at each end of every
    singular arc, where the regularized control ramps between regimes.
    """
    arcs = arcs if arcs is not None else classify_arcs(traj, p)
    h = traj.control.hamiltonian
    idx = np.linspace(0, len(traj.t) - 1, PMP_TIMES).round().astype(int)
    violations = pmp_violations(traj.z[:, idx], traj.control.u_trig[idx], p)

    oracle_err = np.nan
    h1_sing = np.nan
    singular = np.zeros(len(traj.t), dtype=bool)
    for seg in arcs.of_kind(ArcKind.SINGULAR):
        # Skip the regularized switching ramps at both ends of the arc.
        singular |= (traj.t > seg.t_start + edge_trim) & (traj.t < seg.t_end - edge_trim)
    if singular.any():
        zs = traj.z[:, singular]
        u_sing = singular_control_oracle(zs, p, force)
        oracle_err = float(np.max(np.abs(traj.u[singular] - u_sing)) / p.gamma)
        h1_sing = float(np.max(np.abs(traj.h1[singular])))
    return DiagnosticsReport(
        hamiltonian_drift=float(np.max(np.abs(h - h[0]))),
        hamiltonian_scale=float(np.max(np.abs(h))),
        pmp_violations=violations,
        pmp_probes=len(idx) * PMP_CONTROLS,
        singular_oracle_error=oracle_err,
        singular_h1_max=h1_sing,
        h1_scale=float(np.max(np.abs(traj.h1))),
    )
