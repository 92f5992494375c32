"""Two-point boundary value solver built on three-stage Lobatto IIIA collocation.

The discretisation is the Simpson/Hermite form used by bvp4c-class solvers:
on every mesh interval the solution is a cubic that matches the ODE at both
ends and at the midpoint. Nodal values are the only unknowns, so the Newton
system is block bidiagonal plus the boundary rows, and it is factored with a
banded LU whenever the boundary conditions are separated.

The right-hand side is vectorised over nodes, following ``scipy.integrate``:
``rhs(t, y)`` takes ``t`` of shape ``(m,)`` and ``y`` of shape ``(n, m)`` and
returns an ``(n, m)`` array. ``bc(ya, yb)`` returns ``n`` residuals.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.interpolate import CubicHermiteSpline
from scipy.linalg import lapack
from scipy.sparse import coo_matrix
from scipy.sparse.linalg import splu

log = logging.getLogger(__name__)

EPS = np.finfo(float).eps
_SQRT_EPS = np.sqrt(EPS)

# Interior abscissae of 5-point Lobatto quadrature plus the quarter points.
# None of them is a collocation point, where the residual vanishes by design.
_SAMPLE_TAU = np.array([0.5 - np.sqrt(21.0) / 14.0, 0.25, 0.75, 0.5 + np.sqrt(21.0) / 14.0])

_ARMIJO_SIGMA = 0.1
_MIN_DAMPING = 2.0**-10


class BvpError(RuntimeError):
    """Base class for solver failures."""


class NoConvergence(BvpError):
    def __init__(self, message: str, residual: float = np.nan, iterate: Optional[np.ndarray] = None):
        super().__init__(f"{message} (last residual {residual:.3e})")
        self.residual = residual
        self.iterate = iterate


class MeshOverflow(BvpError):
    def __init__(self, requested: int, limit: int):
        super().__init__(f"mesh refinement needs {requested} nodes, limit is {limit}")
        self.requested = requested
        self.limit = limit


class SingularJacobian(BvpError):
    def __init__(self, node: int):
        super().__init__(f"singular collocation Jacobian near node {node}")
        self.node = node


@dataclass(frozen=True)
class SolverSettings:
    rel_tol: float = 1e-4
    abs_tol: float = 1e-4
    max_mesh: int = 10_000
    max_newton: int = 30
    initial_mesh_size: int = 11
    max_refinements: int = 40
    newton_retries: int = 2

    def __post_init__(self):
        if not (self.rel_tol > 0 and self.abs_tol > 0):
            raise ValueError("rel_tol and abs_tol must be positive")
        if self.initial_mesh_size < 3:
            raise ValueError("initial_mesh_size must be at least 3")
        if self.max_mesh < self.initial_mesh_size:
            raise ValueError("max_mesh must be >= initial_mesh_size")
        if self.max_newton < 1:
            raise ValueError("max_newton must be >= 1")


@dataclass
class BvpProblem:
    rhs: Callable[[np.ndarray, np.ndarray], np.ndarray]
    bc: Callable[[np.ndarray, np.ndarray], np.ndarray]
    t0: float
    tf: float
    dimension: int
    jac: Optional[Callable[[np.ndarray, np.ndarray], np.ndarray]] = None

    def __post_init__(self):
        if not self.tf > self.t0:
            raise ValueError(f"tf ({self.tf}) must exceed t0 ({self.t0})")
        if self.dimension < 1:
            raise ValueError("dimension must be positive")


@dataclass
class AssemblyStats:
    """Counts Jacobian entries written during assembly.

    ``out_of_band`` stays zero as long as only the block-bidiagonal entries
    and the boundary blocks are touched.
    """

    entries: int = 0
    out_of_band: int = 0
    banded_solves: int = 0
    sparse_solves: int = 0


@dataclass
class BvpSolution:
    mesh: np.ndarray
    y_nodes: np.ndarray
    yp_nodes: np.ndarray
    residual_norm: float
    interval_residuals: np.ndarray
    newton_iterations: int
    stats: AssemblyStats = field(default_factory=AssemblyStats)
    _spline: Optional[CubicHermiteSpline] = field(default=None, repr=False, compare=False)

    @property
    def mesh_points(self) -> int:
        return len(self.mesh)

    @property
    def interpolant(self) -> CubicHermiteSpline:
        if self._spline is None:
            self._spline = CubicHermiteSpline(self.mesh, self.y_nodes, self.yp_nodes, axis=1)
        return self._spline

    def __call__(self, t):
        return self.interpolant(t)

    def derivative(self, t):
        return self.interpolant(t, 1)


def _as_mesh(mesh) -> np.ndarray:
    t = np.asarray(mesh, dtype=float)
    if t.ndim != 1 or len(t) < 2:
        raise ValueError("mesh must be a 1-D array with at least two nodes")
    if np.any(np.diff(t) <= 0):
        raise ValueError("mesh must be strictly increasing")
    return t


def _fd_jacobian(rhs, t, y, f0):
    n, m = y.shape
    J = np.empty((n, n, m))
    for j in range(n):
        yp = y.copy()
        yp[j] += _SQRT_EPS * np.maximum(np.abs(y[j]), 1.0)
        step = yp[j] - y[j]
        J[:, j, :] = (rhs(t, yp) - f0) / step
    return J


def _rhs_jacobian(problem, t, y, f0):
    if problem.jac is not None:
        return np.asarray(problem.jac(t, y), dtype=float)
    return _fd_jacobian(problem.rhs, t, y, f0)


def _bc_jacobian(bc, ya, yb, r0):
    n = len(ya)
    Ja = np.empty((len(r0), n))
    Jb = np.empty((len(r0), n))
    for j in range(n):
        d = _SQRT_EPS * max(abs(ya[j]), 1.0)
        yp = ya.copy()
        yp[j] += d
        Ja[:, j] = (np.asarray(bc(yp, yb)) - r0) / (yp[j] - ya[j])
        d = _SQRT_EPS * max(abs(yb[j]), 1.0)
        yp = yb.copy()
        yp[j] += d
        Jb[:, j] = (np.asarray(bc(ya, yp)) - r0) / (yp[j] - yb[j])
    return Ja, Jb


def _collocation_residual(problem, t, y):
    h = np.diff(t)
    f = problem.rhs(t, y)
    y_mid = 0.5 * (y[:, 1:] + y[:, :-1]) - 0.125 * h * (f[:, 1:] - f[:, :-1])
    t_mid = t[:-1] + 0.5 * h
    f_mid = problem.rhs(t_mid, y_mid)
    res = y[:, 1:] - y[:, :-1] - h / 6.0 * (f[:, :-1] + 4.0 * f_mid + f[:, 1:])
    return res, f, t_mid, y_mid, f_mid


class _System:
    """Residual and Jacobian of the collocation equations on a fixed mesh."""

    def __init__(self, problem: BvpProblem, t: np.ndarray, stats: AssemblyStats):
        self.problem = problem
        self.t = t
        self.h = np.diff(t)
        self.n = problem.dimension
        self.N = len(t)
        self.stats = stats

    def residual(self, y):
        col, f, t_mid, y_mid, f_mid = _collocation_residual(self.problem, self.t, y)
        bc = np.asarray(self.problem.bc(y[:, 0], y[:, -1]), dtype=float)
        if bc.shape != (self.n,):
            raise ValueError(f"bc must return {self.n} residuals, got shape {bc.shape}")
        return col, bc, (f, t_mid, y_mid, f_mid)

    def blocks(self, y, col_parts, bc):
        """Per-interval derivative blocks of the collocation residual."""
        f, t_mid, y_mid, f_mid = col_parts
        n, h = self.n, self.h
        J = _rhs_jacobian(self.problem, self.t, y, f)
        J_mid = _rhs_jacobian(self.problem, t_mid, y_mid, f_mid)
        eye = np.eye(n)[:, :, None]
        # d y_mid / d y_i = I/2 + h/8 J_i ;  d y_mid / d y_{i+1} = I/2 - h/8 J_{i+1}
        dmid_left = 0.5 * eye + 0.125 * h * J[:, :, :-1]
        dmid_right = 0.5 * eye - 0.125 * h * J[:, :, 1:]
        left = -eye - h / 6.0 * (J[:, :, :-1] + 4.0 * np.einsum("abi,bci->aci", J_mid, dmid_left))
        right = eye - h / 6.0 * (J[:, :, 1:] + 4.0 * np.einsum("abi,bci->aci", J_mid, dmid_right))
        Ja, Jb = _bc_jacobian(self.problem.bc, y[:, 0], y[:, -1], bc)
        return left, right, Ja, Jb

    def factor(self, left, right, Ja, Jb):
        """LU-factor the Jacobian; returns ``solve(col, bc) -> J^-1 F`` shaped (n, N)."""
        rows_a = np.flatnonzero(~np.any(Jb != 0.0, axis=1))
        rows_b = np.setdiff1d(np.flatnonzero(~np.any(Ja != 0.0, axis=1)), rows_a)
        if len(rows_a) + len(rows_b) == self.n:
            return self._factor_banded(left, right, Ja, Jb, rows_a, rows_b)
        return self._factor_sparse(left, right, Ja, Jb)

    def _factor_banded(self, left, right, Ja, Jb, rows_a, rows_b):
        n, N = self.n, self.N
        p = len(rows_a)
        size = n * N
        lower, upper = p + n - 1, 2 * n - 1 - p
        # gbtrf wants ``lower`` spare rows on top for pivoting fill-in.
        ab = np.zeros((2 * lower + upper + 1, size), order="F")
        diag = lower + upper
        stats = self.stats

        def put(row, col_idx, values):
            offset = row - col_idx
            inside = (offset >= -upper) & (offset <= lower)
            stats.entries += values.size
            stats.out_of_band += int(np.count_nonzero(values[~inside]))
            ab[diag + offset[inside], col_idx[inside]] = values[inside]

        cols = np.arange(n)
        for k, r in enumerate(rows_a):
            put(np.full(n, k), cols, Ja[r])
        base = np.arange(N - 1) * n
        for a in range(n):
            for b in range(n):
                put(p + base + a, base + b, left[a, b])
                put(p + base + a, base + n + b, right[a, b])
        last = n * (N - 1)
        for k, r in enumerate(rows_b):
            put(np.full(n, p + last + k), last + cols, Jb[r])

        stats.banded_solves += 1
        lu, piv, info = lapack.dgbtrf(ab, lower, upper)
        if info > 0:
            raise SingularJacobian((info - 1) // n)
        if info < 0:
            raise ValueError(f"dgbtrf: illegal argument {-info}")

        def solve(col, bc):
            rhs = np.concatenate([bc[rows_a], col.T.ravel(), bc[rows_b]])
            x, info_s = lapack.dgbtrs(lu, lower, upper, rhs, piv)
            if info_s != 0 or not np.all(np.isfinite(x)):
                raise SingularJacobian(0)
            return x.reshape(N, n).T

        return solve

    def _factor_sparse(self, left, right, Ja, Jb):
        # Coupled boundary conditions break the band; fall back to sparse LU.
        n, N = self.n, self.N
        size = n * N
        base = np.arange(N - 1) * n
        a_idx, b_idx = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
        rows = [(base[None, None, :] + a_idx[:, :, None]).ravel()] * 2
        cols = [
            (base[None, None, :] + b_idx[:, :, None]).ravel(),
            (base[None, None, :] + n + b_idx[:, :, None]).ravel(),
        ]
        vals = [left.ravel(), right.ravel()]
        bc_row0 = n * (N - 1)
        rows += [(bc_row0 + a_idx).ravel()] * 2
        cols += [b_idx.ravel(), (bc_row0 + b_idx).ravel()]
        vals += [Ja.ravel(), Jb.ravel()]
        A = coo_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(size, size)
        ).tocsc()
        self.stats.entries += A.nnz
        self.stats.sparse_solves += 1
        try:
            lu = splu(A)
        except RuntimeError as exc:
            raise SingularJacobian(0) from exc

        def solve(col, bc):
            x = lu.solve(np.concatenate([col.T.ravel(), bc]))
            if not np.all(np.isfinite(x)):
                raise SingularJacobian(0)
            return x.reshape(N, n).T

        return solve


def _newton(problem, t, y, settings, stats):
    """Damped Newton iteration on the collocation equations.

    Step acceptance is an Armijo test on the Newton-preconditioned residual
    ``||J_k^-1 F(y)||`` with ``J_k`` frozen during backtracking (the natural
    level function), measured relative to the solver tolerances. Unlike the
    raw residual it is insensitive to the very different magnitudes of the
    unknowns.
    """
    system = _System(problem, t, stats)
    col, bc, parts = system.residual(y)
    iterations = 0
    phi = np.inf

    def size(d, y_ref):
        return d / (settings.abs_tol + settings.rel_tol * np.abs(y_ref))

    for iterations in range(1, settings.max_newton + 1):
        left, right, Ja, Jb = system.blocks(y, parts, bc)
        solve_lu = system.factor(left, right, Ja, Jb)
        delta = -solve_lu(col, bc)
        scaled = size(delta, y)
        phi0 = float(np.sum(scaled**2))
        step_size = float(np.max(np.abs(scaled)))

        alpha = 1.0
        while True:
            y_try = y + alpha * delta
            col_try, bc_try, parts_try = system.residual(y_try)
            if np.all(np.isfinite(col_try)) and np.all(np.isfinite(bc_try)):
                phi = float(np.sum(size(solve_lu(col_try, bc_try), y) ** 2))
                if phi <= (1.0 - 2.0 * _ARMIJO_SIGMA * alpha) * phi0:
                    break
            alpha *= 0.5
            if alpha < _MIN_DAMPING:
                if step_size < 1.0:
                    # The update is already below the requested tolerances.
                    return y, iterations
                raise NoConvergence("damped Newton stalled", np.sqrt(phi0), y)
        y, col, bc, parts = y_try, col_try, bc_try, parts_try
        log.debug("newton it=%d alpha=%.3g step=%.3e next=%.3e", iterations, alpha, step_size, np.sqrt(phi))
        if alpha == 1.0 and (step_size < 1e-2 or np.sqrt(phi) < 1e-3):
            return y, iterations
    raise NoConvergence(f"no convergence in {settings.max_newton} Newton iterations", np.sqrt(phi), y)


def _hermite(t, y, yp, t_eval):
    """Cubic Hermite values and slopes at ``t_eval`` (vectorised)."""
    idx = np.clip(np.searchsorted(t, t_eval, side="right") - 1, 0, len(t) - 2)
    h = t[idx + 1] - t[idx]
    s = (t_eval - t[idx]) / h
    y0, y1, d0, d1 = y[:, idx], y[:, idx + 1], yp[:, idx] * h, yp[:, idx + 1] * h
    h00 = 2 * s**3 - 3 * s**2 + 1
    h10 = s**3 - 2 * s**2 + s
    h01 = -2 * s**3 + 3 * s**2
    h11 = s**3 - s**2
    val = h00 * y0 + h10 * d0 + h01 * y1 + h11 * d1
    dh00 = 6 * s**2 - 6 * s
    dh10 = 3 * s**2 - 4 * s + 1
    dh01 = -6 * s**2 + 6 * s
    dh11 = 3 * s**2 - 2 * s
    der = (dh00 * y0 + dh10 * d0 + dh01 * y1 + dh11 * d1) / h
    return val, der


def estimate_residual(problem: BvpProblem, mesh, y_nodes, settings: Optional[SolverSettings] = None):
    """Scaled residual of the cubic interpolant on each mesh interval.

    The interpolant's defect ``S' - f(t, S)`` is sampled away from the
    collocation points, multiplied by the interval width (turning it into a
    local error in state units) and divided by ``|S| + abs_tol/rel_tol``.
    An interval is acceptable when its value is at most ``rel_tol``.
    """
    settings = settings or SolverSettings()
    t = _as_mesh(mesh)
    y = np.asarray(y_nodes, dtype=float)
    yp = problem.rhs(t, y)
    h = np.diff(t)
    t_s = (t[:-1, None] + _SAMPLE_TAU[None, :] * h[:, None]).ravel()
    S, dS = _hermite(t, y, yp, t_s)
    r = dS - problem.rhs(t_s, S)
    scaled = np.abs(r) / (settings.abs_tol / settings.rel_tol + np.abs(S))
    per_sample = scaled.max(axis=0).reshape(len(h), len(_SAMPLE_TAU))
    return h * per_sample.max(axis=1)


def refine_mesh(mesh, residuals, settings: Optional[SolverSettings] = None, coarsen: bool = False):
    """Subdivide intervals whose residual exceeds tolerance.

    Intervals above tolerance are halved, those above 100x tolerance are
    quartered. With ``coarsen=True`` adjacent pairs of intervals that are
    both far below tolerance are merged.
    """
    settings = settings or SolverSettings()
    t = _as_mesh(mesh)
    res = np.asarray(residuals, dtype=float)
    if res.shape != (len(t) - 1,):
        raise ValueError("residuals must align with mesh intervals")
    tol = settings.rel_tol

    keep = np.ones(len(t), dtype=bool)
    if coarsen:
        # Doubling an interval raises a 4th-order residual ~16x.
        small = res < tol / 32.0
        i = 0
        while i < len(res) - 1:
            if small[i] and small[i + 1]:
                keep[i + 1] = False
                i += 2
            else:
                i += 1

    pieces = np.where(res > 100.0 * tol, 4, np.where(res > tol, 2, 1))
    new = [t[:1]]
    for i in range(len(res)):
        if pieces[i] > 1:
            new.append(np.linspace(t[i], t[i + 1], pieces[i] + 1)[1:])
        elif keep[i + 1]:
            new.append(t[i + 1 : i + 2])
    out = np.concatenate(new)
    if len(out) > settings.max_mesh:
        raise MeshOverflow(len(out), settings.max_mesh)
    return out


def _checked_guess(problem: BvpProblem, mesh, y_guess):
    t = _as_mesh(mesh)
    if not (np.isclose(t[0], problem.t0) and np.isclose(t[-1], problem.tf)):
        raise ValueError(f"guess mesh must span [{problem.t0}, {problem.tf}]")
    t = t.copy()
    t[0], t[-1] = problem.t0, problem.tf
    y = np.array(y_guess, dtype=float, copy=True)
    if y.shape != (problem.dimension, len(t)):
        raise ValueError(f"guess must have shape ({problem.dimension}, {len(t)}), got {y.shape}")
    if not np.all(np.isfinite(y)):
        raise ValueError("guess contains non-finite values")
    return t, y


def collocate(problem: BvpProblem, mesh, y_guess, settings: Optional[SolverSettings] = None) -> BvpSolution:
    """Solve the collocation equations on ``mesh`` as given, without refinement.

    The returned ``residual_norm`` is reported but not enforced.
    """
    settings = settings or SolverSettings()
    t, y = _checked_guess(problem, mesh, y_guess)
    stats = AssemblyStats()
    y, iters = _newton(problem, t, y, settings, stats)
    res = estimate_residual(problem, t, y, settings)
    return BvpSolution(
        mesh=t,
        y_nodes=y,
        yp_nodes=problem.rhs(t, y),
        residual_norm=float(res.max()),
        interval_residuals=res,
        newton_iterations=iters,
        stats=stats,
    )


def solve(problem: BvpProblem, mesh, y_guess, settings: Optional[SolverSettings] = None) -> BvpSolution:
    """Solve ``problem`` starting from nodal guess ``y_guess`` on ``mesh``.

    Raises NoConvergence, MeshOverflow or SingularJacobian on failure.
    """
    settings = settings or SolverSettings()
    t, y = _checked_guess(problem, mesh, y_guess)

    stats = AssemblyStats()
    total_iterations = 0
    retries = 0
    for _ in range(settings.max_refinements):
        try:
            y, iters = _newton(problem, t, y, settings, stats)
        except NoConvergence as exc:
            if retries >= settings.newton_retries or len(t) >= settings.max_mesh:
                raise
            retries += 1
            # Restart from the last iterate, refined where it fits worst.
            y_start = exc.iterate if exc.iterate is not None and np.all(np.isfinite(exc.iterate)) else y
            res = estimate_residual(problem, t, y_start, settings)
            worst = res > min(settings.rel_tol, np.quantile(res, 0.9))
            t_new = np.sort(np.concatenate([t, t[:-1][worst] + 0.5 * np.diff(t)[worst]]))
            y, _ = _hermite(t, y_start, problem.rhs(t, y_start), t_new)
            t = t_new
            log.info("Newton failed; retrying on %d nodes", len(t))
            continue
        total_iterations += iters
        res = estimate_residual(problem, t, y, settings)
        log.debug("mesh %d nodes, max residual %.3e", len(t), res.max())
        if res.max() <= settings.rel_tol:
            yp = problem.rhs(t, y)
            return BvpSolution(
                mesh=t,
                y_nodes=y,
                yp_nodes=yp,
                residual_norm=float(res.max()),
                interval_residuals=res,
                newton_iterations=total_iterations,
                stats=stats,
            )
        t_new = refine_mesh(t, res, settings)
        yp = problem.rhs(t, y)
        y, _ = _hermite(t, y, yp, t_new)
        t = t_new
    raise NoConvergence(f"residual above tolerance after {settings.max_refinements} refinements", float(res.max()))
