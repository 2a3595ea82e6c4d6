"""Complexified equations of motion, tangent flow and the fluctuation-determinant flow.

Phase points are (u, U, v, V): ket labels (u, U) and bra labels (v, V) evolve as
independent complex variables.  The tangent matrix is propagated in the scaled
displacements

    xi = (du, sqrt(2j) dU / (1+UV), dv, sqrt(2j) dV / (1+UV)),

in which the linearised flow reads ``xi' = (i/hbar) P H xi`` with the bold-H
matrix of :func:`linearization` and the fixed pairing ``P`` below.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import solve_ivp

from .symbols import ChartSingularity

DEFAULT_RTOL = 1e-10
DEFAULT_ATOL = 1e-12
DEFAULT_METHOD = "RK45"
DEFAULT_BOUND = 1e6

# xi1' = -(i/h)(H xi)_3, xi2' = -(i/h)(H xi)_4, xi3' = (i/h)(H xi)_1, xi4' = (i/h)(H xi)_2
PAIRING = np.array(
    [[0, 0, -1, 0], [0, 0, 0, -1], [1, 0, 0, 0], [0, 1, 0, 0]], dtype=complex
)

# layout of the augmented state vector
_PT = slice(0, 4)
_KIN, _HINT, _HPLUS, _GEXP, _LOGW = 4, 5, 6, 7, 8
_NBASE = 9
_TAN = slice(_NBASE, _NBASE + 16)


class IntegrationError(RuntimeError):
    """Step-size underflow or other integrator failure."""


class TrajectoryDivergence(IntegrationError):
    """|u| or |v| exceeded the configured bound."""


@dataclass(frozen=True)
class PhasePoint:
    u: complex
    U: complex
    v: complex
    V: complex

    def __iter__(self):
        return iter((self.u, self.U, self.v, self.V))

    def as_array(self):
        return np.array([self.u, self.U, self.v, self.V], complex)

    @property
    def w(self):
        return 1 + self.U * self.V


def _pt(p):
    return np.asarray(list(p), dtype=complex)


def _check_spin(sym):
    if sym.twoj < 1:
        raise ValueError("spin dynamics needs j >= 1/2")


def eom(sym, pt):
    """Time derivative of (u, U, v, V)."""
    _check_spin(sym)
    u, U, v, V = _pt(pt)
    w = 1 + U * V
    if w == 0:
        raise ChartSingularity((u, U, v, V))
    _, g, _ = sym.derivatives((u, U, v, V))
    return _rates(sym, U, V, w, g)


def _rates(sym, U, V, w, g):
    ih = 1j / sym.hbar
    spin = ih * w * w / sym.twoj
    return np.array([-ih * g[2], -spin * g[3], ih * g[0], spin * g[1]])


def linearization(sym, pt):
    """Bold-H matrix of scaled second derivatives with spin connection terms."""
    _check_spin(sym)
    u, U, v, V = _pt(pt)
    w = 1 + U * V
    if w == 0:
        raise ChartSingularity((u, U, v, V))
    _, g, h = sym.derivatives((u, U, v, V))
    return _bold_h(sym, U, V, w, g, h)


def _bold_h(sym, U, V, w, g, h):
    d = w / math.sqrt(sym.twoj)
    H = np.empty((4, 4), complex)
    H[0, 0] = h[0, 0]
    H[0, 1] = d * h[0, 1]
    H[0, 2] = h[0, 2]
    H[0, 3] = d * h[0, 3]
    H[1, 1] = d * d * (h[1, 1] + 2 * V * g[1] / w)
    H[1, 2] = d * h[1, 2]
    H[1, 3] = d * d * (h[1, 3] + (V * g[3] + U * g[1]) / w)
    H[2, 2] = h[2, 2]
    H[2, 3] = d * h[2, 3]
    H[3, 3] = d * d * (h[3, 3] + 2 * U * g[3] / w)
    il = np.tril_indices(4, -1)
    H[il] = H.T[il]
    return H


def scale_factor(sym, U, V):
    """d = (1+UV)/sqrt(2j): raw spin displacement = d * scaled displacement."""
    return (1 + U * V) / math.sqrt(sym.twoj)


def _augmented_rhs(sym, with_tangent):
    hbar = sym.hbar
    tj = sym.twoj

    def rhs(t, y):
        u, U, v, V = y[0], y[1], y[2], y[3]
        w = 1 + U * V
        if w == 0:
            raise ChartSingularity((u, U, v, V))
        val, g, h = sym.derivatives((u, U, v, V))
        du, dU, dv, dV = _rates(sym, U, V, w, g)
        out = np.empty_like(y)
        out[0], out[1], out[2], out[3] = du, dU, dv, dV
        out[_KIN] = 0.5j * hbar * (du * v - dv * u) - 0.5j * hbar * tj * (U * dV - V * dU) / w
        out[_HINT] = val
        out[_HPLUS] = h[0, 2] + (w * w * h[1, 3] + w * (V * g[3] + U * g[1])) / tj
        out[_GEXP] = h[2, 0] + 0.5 * (
            (2 * w * U * g[1] + w * w * h[1, 3]) / tj + (2 * w * V * g[3] + w * w * h[1, 3]) / tj
        )
        out[_LOGW] = (dU * V + U * dV) / w
        if with_tangent:
            H = _bold_h(sym, U, V, w, g, h)
            M = y[_TAN].reshape(4, 4)
            out[_TAN] = ((1j / hbar) * (PAIRING @ H) @ M).ravel()
        return out

    return rhs


@dataclass
class Trajectory:
    """A solved complex trajectory with its accumulated integrals."""

    t: np.ndarray
    points: np.ndarray  # (len(t), 4): u, U, v, V
    kinetic: complex  # integral of the symplectic (kinetic) terms of the action
    h_integral: complex  # integral of H
    hplus_integral: complex  # integral of bold-H_13 + bold-H_24
    g_explicit_integral: complex  # integral of the explicit SK integrand
    log_w_change: complex  # continuous ln(1+U(T)V(T)) - ln(1+U(0)V(0))
    energy: np.ndarray
    tangent_final: np.ndarray | None = None
    dense: object = field(default=None, repr=False)
    hbar: float = 1.0
    twoj: int = 1
    rtol: float = DEFAULT_RTOL
    atol: float = DEFAULT_ATOL
    nfev: int = 0

    @property
    def T(self):
        return float(self.t[-1])

    @property
    def initial(self):
        return PhasePoint(*self.points[0])

    @property
    def final(self):
        return PhasePoint(*self.points[-1])

    @property
    def energy_drift(self):
        return float(np.max(np.abs(self.energy - self.energy[0])))

    def state(self, t):
        """Augmented state at time ``t`` (dense output)."""
        if self.dense is None:
            if np.isclose(t, self.t[0]):
                return None
            raise ValueError("trajectory has no dense output")
        return self.dense(t)

    def point_at(self, t):
        if self.T == 0:
            return self.points[0].copy()
        return self.dense(t)[_PT]

    def tangent_at(self, t):
        if self.T == 0:
            return np.eye(4, dtype=complex)
        y = self.dense(t)
        if len(y) <= _NBASE:
            raise ValueError("trajectory was integrated without the tangent flow")
        return y[_TAN].reshape(4, 4)

    def to_csv(self, path):
        """Write t, Re/Im of u, U, v, V and Re/Im of H along the stored samples."""
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["t", "re_u", "im_u", "re_U", "im_U", "re_v", "im_v", "re_V", "im_V",
                         "re_H", "im_H"])
            for t, p, e in zip(self.t, self.points, self.energy):
                row = [t]
                for x in p:
                    row += [x.real, x.imag]
                row += [e.real, e.imag]
                wr.writerow([f"{x:.17g}" for x in row])


def integrate(sym, p0, T, tol=None, *, rtol=None, atol=None, method=DEFAULT_METHOD,
              with_tangent=True, bound=DEFAULT_BOUND, max_step=np.inf, first_step=None):
    """Integrate the complexified flow from ``p0`` over [0, T].

    ``tol`` sets the relative tolerance (absolute tolerance is 1e-2 * tol)
    unless ``rtol``/``atol`` are given explicitly.
    """
    _check_spin(sym)
    if T < 0:
        raise ValueError("T must be non-negative")
    if tol is not None:
        rtol = rtol if rtol is not None else tol
        atol = atol if atol is not None else 1e-2 * tol
    rtol = DEFAULT_RTOL if rtol is None else rtol
    atol = DEFAULT_ATOL if atol is None else atol

    p0 = _pt(p0)
    n = _NBASE + (16 if with_tangent else 0)
    y0 = np.zeros(n, complex)
    y0[_PT] = p0
    if with_tangent:
        y0[_TAN] = np.eye(4, dtype=complex).ravel()
    e0 = sym(p0)

    if T == 0:
        return Trajectory(
            t=np.array([0.0]), points=p0[None, :], kinetic=0j, h_integral=0j,
            hplus_integral=0j, g_explicit_integral=0j, log_w_change=0j,
            energy=np.array([e0]), tangent_final=np.eye(4, dtype=complex) if with_tangent else None,
            hbar=sym.hbar, twoj=sym.twoj, rtol=rtol, atol=atol,
        )

    def blowup(t, y):
        return bound - max(abs(y[0]), abs(y[2]))

    blowup.terminal = True

    kwargs = {}
    if first_step is not None:
        kwargs["first_step"] = first_step
    sol = solve_ivp(_augmented_rhs(sym, with_tangent), (0.0, T), y0, method=method,
                    rtol=rtol, atol=atol, dense_output=True, events=blowup,
                    max_step=max_step, **kwargs)
    if sol.status == 1:
        raise TrajectoryDivergence(f"trajectory left |u|,|v| < {bound:g} at t={sol.t[-1]:.6g}")
    if sol.status != 0:
        raise IntegrationError(f"integration failed at t={sol.t[-1]:.6g}: {sol.message}")

    y = sol.y
    points = y[_PT].T.copy()
    energy = np.array([sym(p) for p in points])
    yT = y[:, -1]
    return Trajectory(
        t=sol.t, points=points, kinetic=yT[_KIN], h_integral=yT[_HINT],
        hplus_integral=yT[_HPLUS], g_explicit_integral=yT[_GEXP], log_w_change=yT[_LOGW],
        energy=energy,
        tangent_final=yT[_TAN].reshape(4, 4).copy() if with_tangent else None,
        dense=sol.sol, hbar=sym.hbar, twoj=sym.twoj, rtol=rtol, atol=atol, nfev=sol.nfev,
    )


def tangent(sym, traj, **kwargs):
    """Tangent matrix M(T) in scaled coordinates along ``traj``."""
    if traj.tangent_final is not None:
        return traj.tangent_final
    opts = dict(rtol=traj.rtol, atol=traj.atol)
    opts.update(kwargs)
    return integrate(sym, traj.points[0], traj.T, with_tangent=True, **opts).tangent_final


def raw_bb_block(sym, traj, M=None):
    """Lower-right block of the tangent matrix in raw (u, U, v, V) displacements."""
    M = tangent(sym, traj) if M is None else M
    p0, pT = traj.points[0], traj.points[-1]
    d0 = scale_factor(sym, p0[1], p0[3])
    dT = scale_factor(sym, pT[1], pT[3])
    return np.diag([1.0, dT]) @ M[2:, 2:] @ np.diag([1.0, 1.0 / d0])


def delta_closed_form(sym, traj, M=None):
    """Fluctuation determinant from the tangent matrix:

    (1+U(0)V(0))/(1+U(T)V(T)) * det Mbb(raw) * exp(-(i/hbar) int H+).
    """
    p0, pT = traj.points[0], traj.points[-1]
    mbb = raw_bb_block(sym, traj, M)
    w0 = 1 + p0[1] * p0[3]
    wT = 1 + pT[1] * pT[3]
    return (w0 / wT) * np.linalg.det(mbb) * np.exp(-1j / sym.hbar * traj.hplus_integral)


def determinant_matrix(H):
    """6x6 generator of the determinant vector (Delta, D11, D22, D12, D21, D0)."""
    hp = H[0, 2] + H[1, 3]
    return np.array([
        [0, -H[1, 1], -H[0, 0], -H[1, 0], -H[1, 0], 0],
        [H[3, 3], -2 * H[1, 3], 0, -H[3, 0], -H[3, 0], -H[0, 0]],
        [H[2, 2], 0, -2 * H[0, 2], -H[1, 2], -H[1, 2], -H[1, 1]],
        [H[3, 2], -H[1, 2], -H[3, 0], -hp, 0, H[1, 0]],
        [H[3, 2], -H[1, 2], -H[3, 0], 0, -hp, H[1, 0]],
        [0, H[2, 2], H[3, 3], -H[3, 2], -H[3, 2], -2 * hp],
    ], dtype=complex)


def antisymmetric_generator(H):
    """The 6x6 generator acting on (T34, T23, T41, T13, T42, T12)."""
    hp = H[0, 2] + H[1, 3]
    return determinant_matrix(H) + hp * np.eye(6)


DETERMINANT_INITIAL = np.array([1, 0, 0, 0, 0, 0], dtype=complex)


@dataclass
class DeterminantFlow:
    t: np.ndarray
    history: np.ndarray  # (len(t), 6)
    delta_flow: complex
    delta_closed: complex

    @property
    def relative_mismatch(self):
        return abs(self.delta_flow - self.delta_closed) / max(abs(self.delta_closed), 1e-300)


def determinant_flow(sym, traj, d0=DETERMINANT_INITIAL, rtol=None, atol=None,
                     method=DEFAULT_METHOD):
    """Evolve the six-component determinant vector and compare with the closed form."""
    rtol = traj.rtol if rtol is None else rtol
    atol = traj.atol if atol is None else atol
    d0 = np.asarray(d0, complex)
    if traj.T == 0:
        return DeterminantFlow(np.array([0.0]), d0[None, :], d0[0], 1.0 + 0j)
    base = _augmented_rhs(sym, True)
    n = _NBASE + 16

    def rhs(t, y):
        out = np.empty_like(y)
        out[:n] = base(t, y[:n])
        U, V = y[1], y[3]
        w = 1 + U * V
        _, g, h = sym.derivatives(y[:4])
        H = _bold_h(sym, U, V, w, g, h)
        out[n:] = (1j / sym.hbar) * determinant_matrix(H) @ y[n:]
        return out

    y0 = np.zeros(n + 6, complex)
    y0[_PT] = traj.points[0]
    y0[_TAN] = np.eye(4, dtype=complex).ravel()
    y0[n:] = d0
    sol = solve_ivp(rhs, (0.0, traj.T), y0, method=method, rtol=rtol, atol=atol)
    if sol.status != 0:
        raise IntegrationError(sol.message)
    yT = sol.y[:, -1]
    aux = Trajectory(
        t=sol.t, points=sol.y[_PT].T.copy(), kinetic=yT[_KIN], h_integral=yT[_HINT],
        hplus_integral=yT[_HPLUS], g_explicit_integral=yT[_GEXP], log_w_change=yT[_LOGW],
        energy=np.array([]), tangent_final=yT[_TAN].reshape(4, 4), hbar=sym.hbar,
        twoj=sym.twoj, rtol=rtol, atol=atol,
    )
    closed = delta_closed_form(sym, aux, aux.tangent_final)
    return DeterminantFlow(sol.t, sol.y[n:].T.copy(), yT[n], closed)
