"""Newton shooting for the mixed boundary-value problem u(0)=z', U(0)=s', v(T)=z''*, V(T)=s''*."""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace

import numpy as np

from .dynamics import (
    DEFAULT_ATOL,
    DEFAULT_METHOD,
    DEFAULT_RTOL,
    IntegrationError,
    Trajectory,
    integrate,
    raw_bb_block,
)
from .states import two_j
from .symbols import ChartSingularity

logger = logging.getLogger(__name__)

DEFAULT_NEWTON_TOL = 1e-10
SINGULAR_DET = 1e-12
MAX_HALVINGS = 10


class ShootingError(RuntimeError):
    """Newton shooting failed; ``residual`` holds the last residual norm."""

    def __init__(self, message, residual=np.nan, iterations=0):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


class CausticError(ShootingError):
    """The shooting Jacobian is singular (near a phase-space caustic)."""


class ContinuationError(RuntimeError):
    def __init__(self, message, param):
        super().__init__(f"{message} (at parameter {param!r})")
        self.param = param


@dataclass(frozen=True)
class BoundaryData:
    """Endpoint data of one propagator evaluation.

    ``z_final_conj`` and ``s_final_conj`` are the conjugated final labels
    z''* and s''*; they enter as independent inputs.
    """

    z_initial: complex
    s_initial: complex
    z_final_conj: complex
    s_final_conj: complex
    j: float = 0.5
    hbar: float = 1.0
    T: float = 0.0

    def __post_init__(self):
        if self.T < 0:
            raise ValueError("T must be non-negative")
        two_j(self.j)

    @classmethod
    def from_labels(cls, z_initial, s_initial, z_final, s_final, j=0.5, hbar=1.0, T=0.0):
        """Build from the physical final labels z'', s'' (conjugated here)."""
        return cls(complex(z_initial), complex(s_initial), complex(z_final).conjugate(),
                   complex(s_final).conjugate(), j, hbar, T)

    @property
    def z_final(self):
        return complex(self.z_final_conj).conjugate()

    @property
    def s_final(self):
        return complex(self.s_final_conj).conjugate()

    def with_time(self, T):
        return replace(self, T=float(T))


@dataclass
class TrajectorySolution:
    bd: BoundaryData
    v0: complex
    V0: complex
    trajectory: Trajectory
    tangent: np.ndarray
    residual: float
    iterations: int
    branch: int = 0

    @property
    def initial(self):
        return np.array([self.bd.z_initial, self.bd.s_initial, self.v0, self.V0], complex)

    @property
    def unknowns(self):
        return np.array([self.v0, self.V0], complex)


def default_guess(bd):
    return np.array([np.conj(bd.z_initial), np.conj(bd.s_initial)], complex)


def _shoot(sym, bd, x, rtol, atol, method):
    p0 = [bd.z_initial, bd.s_initial, x[0], x[1]]
    traj = integrate(sym, p0, bd.T, rtol=rtol, atol=atol, method=method, with_tangent=True)
    pT = traj.points[-1]
    res = np.array([pT[2] - bd.z_final_conj, pT[3] - bd.s_final_conj])
    return traj, res


def shooting_jacobian(sym, traj):
    """d(v(T), V(T)) / d(v(0), V(0)) with u(0), U(0) held fixed."""
    return raw_bb_block(sym, traj, traj.tangent_final)


def solve(sym, bd, guess=None, tol=DEFAULT_NEWTON_TOL, max_iter=50, *, rtol=DEFAULT_RTOL,
          atol=DEFAULT_ATOL, method=DEFAULT_METHOD, branch=0):
    """Solve the boundary-value problem by damped Newton iteration on (v(0), V(0))."""
    if tol <= 0:
        raise ValueError("tol must be positive")
    if sym.twoj != two_j(bd.j) or not np.isclose(sym.hbar, bd.hbar):
        raise ValueError("symbol and boundary data disagree on j or hbar")
    x = default_guess(bd) if guess is None else np.asarray(guess, complex).copy()
    if 1 + bd.s_initial * x[1] == 0:
        raise ChartSingularity((bd.z_initial, bd.s_initial, x[0], x[1]))

    if bd.T == 0:
        x = np.array([bd.z_final_conj, bd.s_final_conj], complex)
        traj, res = _shoot(sym, bd, x, rtol, atol, method)
        return TrajectorySolution(bd, x[0], x[1], traj, traj.tangent_final, 0.0, 0, branch)

    try:
        traj, res = _shoot(sym, bd, x, rtol, atol, method)
    except (IntegrationError, ChartSingularity) as exc:
        raise ShootingError(f"initial guess not integrable: {exc}") from exc
    norm = np.max(np.abs(res))
    it = 0
    while norm > tol:
        if it >= max_iter:
            raise ShootingError(f"no convergence after {max_iter} iterations, |R|={norm:.3e}",
                                norm, it)
        jac = shooting_jacobian(sym, traj)
        det = np.linalg.det(jac)
        if abs(det) < SINGULAR_DET:
            raise CausticError(f"singular shooting Jacobian (|det|={abs(det):.3e})", norm, it)
        step = -np.linalg.solve(jac, res)
        lam = 1.0
        for _ in range(MAX_HALVINGS + 1):
            trial = x + lam * step
            try:
                t_traj, t_res = _shoot(sym, bd, trial, rtol, atol, method)
                t_norm = np.max(np.abs(t_res))
                if np.isfinite(t_norm) and t_norm < norm:
                    break
            except (IntegrationError, ChartSingularity):
                pass
            lam *= 0.5
        else:
            raise ShootingError(f"line search failed after {MAX_HALVINGS} halvings, |R|={norm:.3e}",
                                norm, it)
        x, traj, res, norm = trial, t_traj, t_res, t_norm
        it += 1
        logger.debug("newton it=%d |R|=%.3e lambda=%g", it, norm, lam)

    return TrajectorySolution(bd, x[0], x[1], traj, traj.tangent_final, float(norm), it, branch)


@dataclass
class ContinuationStep:
    param: float
    solution: TrajectorySolution
    branch_jump: bool


def continuation(problem, params, guess=None, *, tol=DEFAULT_NEWTON_TOL, max_iter=50,
                 jump_ratio=10.0, max_subdivisions=6, **solve_kw):
    """Track one solution branch along a parameter path.

    ``problem(param)`` must return ``(sym, bd)``.  Each solve is warm-started by
    secant extrapolation of the previous two solutions; a failed step is
    retried on bisected sub-steps.  ``branch_jump`` marks steps whose rate of
    change of (v0, V0) per unit parameter exceeds ``jump_ratio`` times the
    previous rate.
    """
    params = [float(p) for p in params]
    if not params:
        return []
    out = []
    history = []  # (param, x) including sub-steps

    def solve_at(p, x_guess):
        sym, bd = problem(p)
        try:
            return solve(sym, bd, x_guess, tol=tol, max_iter=max_iter, **solve_kw)
        except (ShootingError, IntegrationError, ChartSingularity) as exc:
            raise ContinuationError(str(exc), p) from exc

    def predict(p):
        if len(history) >= 2:
            (p1, x1), (p2, x2) = history[-2], history[-1]
            if p2 != p1:
                return x2 + (x2 - x1) * (p - p2) / (p2 - p1)
        return history[-1][1]

    sol = solve_at(params[0], guess)
    history.append((params[0], sol.unknowns))
    out.append(ContinuationStep(params[0], sol, False))
    last_change = None
    branch = 0

    for p in params[1:]:
        p_prev, x_prev = history[-1]
        targets = [p]
        depth = 0
        while targets:
            target = targets[0]
            try:
                sol = solve_at(target, predict(target))
            except ContinuationError:
                if depth >= max_subdivisions:
                    raise
                depth += 1
                start = history[-1][0]
                targets.insert(0, 0.5 * (start + target))
                continue
            history.append((target, sol.unknowns))
            targets.pop(0)
        change = np.max(np.abs(sol.unknowns - x_prev)) / max(abs(p - p_prev), 1e-300)
        jump = bool(last_change is not None and change > jump_ratio * max(last_change, 1e-8))
        if jump:
            logger.warning("possible branch jump at parameter %g", p)
        last_change = change
        branch += jump
        sol.branch = branch
        out.append(ContinuationStep(p, sol, jump))
    return out
