"""Two-set homotopy: stretch the horizon first, then shrink the regularization.

Set 1 starts from a crude guess on a 1 s horizon and marches ``tf`` out to
the case horizon at the initial ``epsilon``. Set 2 then lowers ``epsilon``
on log-spaced steps at the full horizon. Every converged solution is the
initial guess for the next problem.
"""

from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from typing import Callable, Iterable, Optional

import numpy as np

from . import bvp
from .cases import CaseSpec
from .model import jacobian_augmented, rhs_augmented
from .postprocess import harvested_energy, sample_trajectory

log = logging.getLogger(__name__)

FIXED = "fixed"
ADAPTIVE = "adaptive-halving"
TF_PHASE = "tf"
EPS_PHASE = "epsilon"


class ContinuationStall(RuntimeError):
    """A continuation step kept failing after all allowed step reductions."""

    def __init__(self, message: str, trace: "ContinuationTrace"):
        super().__init__(message)
        self.trace = trace


@dataclass(frozen=True)
class ContinuationSchedule:
    tf_start: float = 1.0
    tf_target: float = 50.0
    tf_steps: int = 10
    eps_start: float = 0.1
    eps_target: float = 1e-3
    eps_steps: int = 8
    step_policy: str = ADAPTIVE
    max_halvings: int = 8

    def __post_init__(self):
        values = (self.tf_start, self.tf_target, self.eps_start, self.eps_target)
        if not all(math.isfinite(v) and v > 0 for v in values):
            raise ValueError("schedule endpoints must be positive and finite")
        if self.tf_start > self.tf_target:
            raise ValueError("tf_start must not exceed tf_target")
        if self.eps_target > self.eps_start:
            raise ValueError("eps_target must not exceed eps_start")
        if self.tf_steps < 1 or self.eps_steps < 1:
            raise ValueError("step counts must be at least 1")
        if self.step_policy not in (FIXED, ADAPTIVE):
            raise ValueError(f"step_policy must be {FIXED!r} or {ADAPTIVE!r}")
        if self.max_halvings < 0:
            raise ValueError("max_halvings must be non-negative")

    def tf_values(self) -> list[float]:
        if self.tf_start == self.tf_target:
            return []
        return np.linspace(self.tf_start, self.tf_target, self.tf_steps + 1)[1:].tolist()

    def eps_values(self, extra: Iterable[float] = ()) -> list[float]:
        """Log-spaced targets below ``eps_start``, merged with ``extra`` stops."""
        if self.eps_start == self.eps_target:
            grid = []
        else:
            grid = np.geomspace(self.eps_start, self.eps_target, self.eps_steps + 1)[1:].tolist()
        merged = {float(e) for e in grid}
        merged.update(float(e) for e in extra if self.eps_target <= e < self.eps_start)
        return sorted(merged, reverse=True)


@dataclass(frozen=True)
class StepRecord:
    phase: str
    tf: float
    epsilon: float
    converged: bool
    newton_iterations: int = 0
    mesh_points: int = 0
    energy_J: Optional[float] = None
    seconds: float = 0.0
    message: str = ""


@dataclass
class ContinuationTrace:
    records: list = field(default_factory=list)
    solution: Optional[bvp.BvpSolution] = field(default=None, repr=False)

    def __len__(self):
        return len(self.records)

    def successes(self) -> list:
        return [r for r in self.records if r.converged]

    def at_epsilon(self, epsilon: float, tf: float) -> Optional[StepRecord]:
        """Latest converged record at ``(tf, epsilon)``, if any."""
        for rec in reversed(self.records):
            if rec.converged and math.isclose(rec.epsilon, epsilon, rel_tol=1e-9) and math.isclose(rec.tf, tf):
                return rec
        return None

    def to_dict(self) -> dict:
        return {"records": [asdict(r) for r in self.records]}

    def to_json(self, **kwargs) -> str:
        return json.dumps(self.to_dict(), **kwargs)


def build_problem(case: CaseSpec, tf: Optional[float] = None) -> bvp.BvpProblem:
    """TPBVP of the regularized necessary conditions on ``[t0, tf]``."""
    p, force, boundary = case.params, case.force, case.boundary
    tf = boundary.tf if tf is None else tf
    return bvp.BvpProblem(
        rhs=lambda t, z: rhs_augmented(t, z, p, force),
        bc=lambda za, zb: boundary.residual(za, zb),
        t0=boundary.t0,
        tf=tf,
        dimension=6,
        jac=lambda t, z: jacobian_augmented(t, z, p, force),
    )


def cold_start_guess(case: CaseSpec, tf: float, mesh_size: int):
    """Mesh and nodal guess: states ramp linearly from the initial values to
    zero, ``x3 = t`` and every costate is 0.1."""
    if mesh_size < 3:
        raise ValueError("mesh_size must be at least 3")
    b = case.boundary
    t = np.linspace(b.t0, tf, mesh_size)
    ramp = 1.0 - (t - b.t0) / (tf - b.t0)
    z = np.empty((6, mesh_size))
    z[0] = b.x1_0 * ramp
    z[1] = b.x2_0 * ramp
    z[2] = t
    z[3:] = 0.1
    return t, z


def rescale_guess(solution: bvp.BvpSolution, tf_new: float):
    """Stretch a solution on ``[t0, tf_old]`` onto ``[t0, tf_new]``."""
    if not tf_new > 0:
        raise ValueError("tf_new must be positive")
    t_old = solution.mesh
    t0 = t_old[0]
    t = t0 + (t_old - t0) * ((tf_new - t0) / (t_old[-1] - t0))
    z = solution.y_nodes.copy()
    z[2] = t
    return t, z


def extend_guess(solution: bvp.BvpSolution, tf_new: float):
    """Keep the solved part in place and hold the terminal values on the
    appended stretch. Used when the stretched guess fails to converge."""
    t_old = solution.mesh
    h = float(np.median(np.diff(t_old)))
    n_new = max(int(math.ceil((tf_new - t_old[-1]) / h)), 2)
    t_tail = np.linspace(t_old[-1], tf_new, n_new + 1)[1:]
    z_tail = np.repeat(solution.y_nodes[:, -1:], n_new, axis=1)
    z_tail[2] = t_tail
    return np.concatenate([t_old, t_tail]), np.hstack([solution.y_nodes, z_tail])


def run_continuation(
    case: CaseSpec,
    schedule: Optional[ContinuationSchedule] = None,
    settings: Optional[bvp.SolverSettings] = None,
    eps_stops: Iterable[float] = (),
    resolution: int = 2001,
    on_step: Optional[Callable[[StepRecord, bvp.BvpSolution], None]] = None,
):
    """Run both continuation sets and return ``(solution, trace)``.

    ``eps_stops`` adds extra epsilon values that Set 2 must land on exactly
    (used by epsilon sweeps). ``on_step`` is called after every converged
    step with its record and solution.
    """
    schedule = schedule or ContinuationSchedule()
    settings = settings or bvp.SolverSettings()
    trace = ContinuationTrace()
    adaptive = schedule.step_policy == ADAPTIVE

    def attempt(phase, tf, eps, guess):
        spec = case_at(eps)
        start = time.perf_counter()
        try:
            sol = bvp.solve(build_problem(spec, tf), guess[0], guess[1], settings)
        except bvp.BvpError as exc:
            trace.records.append(StepRecord(phase, tf, eps, False, seconds=time.perf_counter() - start, message=str(exc)))
            log.info("%s step tf=%g eps=%g failed: %s", phase, tf, eps, exc)
            return None
        energy = harvested_energy(sample_trajectory(sol, spec.params, spec.force, resolution))
        rec = StepRecord(
            phase, tf, eps, True, sol.newton_iterations, sol.mesh_points, energy, time.perf_counter() - start
        )
        trace.records.append(rec)
        log.info("%s step tf=%g eps=%g ok: %d nodes, E=%.6g J", phase, tf, eps, sol.mesh_points, energy)
        cold = trace.successes()[0].newton_iterations
        if rec.newton_iterations > cold:
            # Sanity indicator only: a warm start should not need more work than the cold start.
            log.info("warm start at tf=%g eps=%g took %d Newton iterations (cold start %d)", tf, eps, rec.newton_iterations, cold)
        if on_step is not None:
            on_step(rec, sol)
        return sol

    def case_at(eps):
        return case.with_epsilon(eps)

    def stall(phase, value):
        trace.solution = current
        raise ContinuationStall(f"{phase} continuation stalled at {value:g}", trace)

    eps = schedule.eps_start
    tf = schedule.tf_start
    current = attempt(TF_PHASE, tf, eps, cold_start_guess(case, tf, settings.initial_mesh_size))
    if current is None:
        stall(TF_PHASE, tf)

    # Set 1: horizon.
    for target in schedule.tf_values():
        halvings = 0
        while tf < target:
            step = target if halvings == 0 else tf + (target - tf) / 2**halvings
            new = attempt(TF_PHASE, step, eps, rescale_guess(current, step))
            if new is None:
                new = attempt(TF_PHASE, step, eps, extend_guess(current, step))
            if new is not None:
                current, tf = new, step
                halvings = max(halvings - 1, 0)
                continue
            halvings += 1
            if not adaptive or halvings > schedule.max_halvings:
                stall(TF_PHASE, step)

    # Set 2: regularization, with a secant predictor in log(eps).
    previous = None
    for target in schedule.eps_values(eps_stops):
        halvings = 0
        while eps > target:
            step = target if halvings == 0 else math.exp(math.log(eps) + (math.log(target) - math.log(eps)) / 2**halvings)
            # The previous mesh is reused as is: coarsening it drops the nodes
            # that resolve the steep switches and stalls the next solve.
            t, z = current.mesh, current.y_nodes
            if previous is not None:
                eps_prev, sol_prev = previous
                ratio = (math.log(step) - math.log(eps)) / (math.log(eps) - math.log(eps_prev))
                z = z + ratio * (z - sol_prev(t))
            new = attempt(EPS_PHASE, tf, step, (t, z))
            if new is not None:
                previous = (eps, current)
                current, eps = new, step
                halvings = max(halvings - 1, 0)
                continue
            halvings += 1
            if not adaptive or halvings > schedule.max_halvings:
                stall(EPS_PHASE, step)

    trace.solution = current
    return current, trace
