"""Finite-N discretised objects: stationarity equations and the banded fluctuation matrix.

Variables per intermediate time slice m = 1..N-1 are ordered (u, U, v, V).
The Hamiltonian enters at mixed indices, H(m) = H(u^m, U^m, v^{m+1}, V^{m+1}).
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import lapack

from .dynamics import delta_closed_form

logger = logging.getLogger(__name__)

BANDWIDTH = 7
DENSE_CHECK_MAX_N = 8


class LUBreakdown(ArithmeticError):
    def __init__(self, message, N):
        super().__init__(f"{message} (N={N})")
        self.N = N


def sample_path(sol, N):
    """Trajectory values at t_m = m T/N, m = 0..N, shape (N+1, 4)."""
    tr = sol.trajectory
    if N < 1:
        raise ValueError("N must be >= 1")
    if tr.T == 0:
        return np.repeat(tr.points[:1], N + 1, axis=0)
    ts = np.linspace(0.0, tr.T, N + 1)
    pts = np.asarray(tr.dense(ts))[:4].T.copy()
    # pin the boundary labels exactly
    pts[0, :2] = tr.points[0, :2]
    pts[-1, 2:] = tr.points[-1, 2:]
    return pts


def _mixed(pts):
    """Points (u^m, U^m, v^{m+1}, V^{m+1}) for m = 0..N-1."""
    return np.column_stack([pts[:-1, 0], pts[:-1, 1], pts[1:, 2], pts[1:, 3]])


def _symbol_data(sym, mixed):
    n = len(mixed)
    grads = np.empty((n, 4), complex)
    hess = np.empty((n, 4, 4), complex)
    for m, p in enumerate(mixed):
        _, grads[m], hess[m] = sym.derivatives(p)
    return grads, hess


@dataclass
class StationarityResidual:
    N: int
    eps: float
    max_abs: float  # max |dF/dx| over all interior variables
    scaled: float  # max_abs / eps


def discrete_stationarity_residual(sym, sol, N):
    """Residual of the discrete critical-point equations on the sampled continuum path.

    The O(1) measure terms of the spin integrand are dropped (their effect on
    the critical path is of relative order 1/j).
    """
    pts = sample_path(sol, N)
    eps = sol.bd.T / N
    hbar = sol.bd.hbar
    tj = sym.twoj
    mixed = _mixed(pts)
    grads, _ = _symbol_data(sym, mixed)
    u, U, v, V = pts.T
    wm = 1 + mixed[:, 1] * mixed[:, 3]  # 1 + U^m V^{m+1}, m = 0..N-1
    w = 1 + U * V
    k = np.arange(1, N)
    c = 1j * eps / hbar
    r_u = v[k + 1] - v[k] - c * grads[k, 0]
    r_U = tj * (V[k + 1] / wm[k] - V[k] / w[k]) - c * grads[k, 1]
    r_v = u[k - 1] - u[k] - c * grads[k - 1, 2]
    r_V = tj * (U[k - 1] / wm[k - 1] - U[k] / w[k]) - c * grads[k - 1, 3]
    if N < 2:
        mx = 0.0
    else:
        mx = float(max(np.max(np.abs(r)) for r in (r_u, r_U, r_v, r_V)))
    return StationarityResidual(N, eps, mx, mx / eps if eps > 0 else 0.0)


@dataclass
class DiscreteFluctuationMatrix:
    """-delta^2 F in band storage (LAPACK layout with ``BANDWIDTH`` extra rows on top)."""

    N: int
    band: np.ndarray  # (3*BANDWIDTH + 1, n)
    B: np.ndarray  # B^m, m = 1..N-1
    Bcal: np.ndarray  # 1-based script-B^m, m = 0..N-1
    scaled: bool
    form: str

    @property
    def size(self):
        return self.band.shape[1]

    @property
    def b(self):
        return 1.0 / np.sqrt(self.B)

    def to_dense(self):
        n = self.size
        kl = ku = BANDWIDTH
        out = np.zeros((n, n), complex)
        for j in range(n):
            for i in range(max(0, j - ku), min(n, j + kl + 1)):
                out[i, j] = self.band[kl + ku + i - j, j]
        return out

    def log_scale_compensation(self):
        """ln of det(unscaled)/det(scaled) = sum over m of 2 ln B^m."""
        return complex(np.sum(2 * np.log(self.B.astype(complex))))


def fluctuation_matrix(sym, sol, N, *, scaled=True, form="large_j"):
    """Assemble -delta^2 F at the sampled continuum path.

    ``form="large_j"`` uses B^m = 2j/(1+V^m U^m)^2 (measure term dropped),
    ``form="exact"`` keeps the measure and uses 2(j+1).  With ``scaled`` the
    spin displacements are rescaled by b^m = 1/sqrt(B^m).
    """
    if N < 2:
        raise ValueError("N must be >= 2")
    if form not in ("large_j", "exact"):
        raise ValueError(f"unknown form {form!r}")
    pts = sample_path(sol, N)
    eps = sol.bd.T / N
    hbar = sol.bd.hbar
    tj = sym.twoj
    tjp = tj if form == "large_j" else tj + 2
    mixed = _mixed(pts)
    _, hess = _symbol_data(sym, mixed)
    w = 1 + pts[:, 1] * pts[:, 3]
    wm = 1 + mixed[:, 1] * mixed[:, 3]
    if np.any(w == 0) or np.any(wm == 0):
        from .symbols import ChartSingularity

        raise ChartSingularity(pts[np.argmin(np.abs(w))])
    U, V = pts[:, 1], pts[:, 3]
    c = 1j * eps / hbar
    n = 4 * (N - 1)
    kl = ku = BANDWIDTH
    band = np.zeros((2 * kl + ku + 1, n), complex)

    def put(i, j, val):
        band[kl + ku + i - j, j] += val
        if i != j:
            band[kl + ku + j - i, i] += val

    B = tjp / w[1:N] ** 2
    Bcal = tj / wm ** 2
    scale = np.ones(n, complex)
    if scaled:
        s = 1.0 / np.sqrt(B.astype(complex))
        scale[1::4] = s
        scale[3::4] = s

    for m in range(1, N):
        iu, iU, iv, iV = (4 * (m - 1) + k for k in range(4))
        h, hp = hess[m], hess[m - 1]
        # on-slice couplings
        put(iu, iv, 1.0)
        put(iU, iV, B[m - 1])
        put(iU, iU, tj * V[m + 1] ** 2 / wm[m] ** 2 - tjp * V[m] ** 2 / w[m] ** 2 + c * h[1, 1])
        put(iV, iV, tj * U[m - 1] ** 2 / wm[m - 1] ** 2 - tjp * U[m] ** 2 / w[m] ** 2
            + c * hp[3, 3])
        put(iu, iu, c * h[0, 0])
        put(iu, iU, c * h[0, 1])
        put(iv, iv, c * hp[2, 2])
        put(iv, iV, c * hp[2, 3])
        if m < N - 1:
            ju, jU, jv, jV = (4 * m + k for k in range(4))
            # u^m, U^m against v^{m+1}, V^{m+1} through H(m) and the overlaps
            put(iu, jv, -1.0 + c * h[0, 2])
            put(iu, jV, c * h[0, 3])
            put(iU, jv, c * h[1, 2])
            put(iU, jV, -Bcal[m] + c * h[1, 3])

    if scaled:
        for j in range(n):
            lo, hi = max(0, j - ku), min(n, j + kl + 1)
            rows = kl + ku + np.arange(lo, hi) - j
            band[rows, j] *= scale[lo:hi] * scale[j]
    return DiscreteFluctuationMatrix(N, band, B, Bcal, scaled, form)


def banded_logdet(mat):
    """(log|det|, phase) of the banded matrix by LU with partial pivoting."""
    lu, ipiv, info = lapack.zgbtrf(mat.band.copy(), BANDWIDTH, BANDWIDTH)
    if info < 0:
        raise ValueError(f"zgbtrf: illegal argument {-info}")
    if info > 0:
        raise LUBreakdown(f"zero pivot at position {info}", mat.N)
    diag = lu[2 * BANDWIDTH]
    swaps = np.count_nonzero(ipiv != np.arange(len(ipiv)))
    logabs = float(np.sum(np.log(np.abs(diag))))
    phase = (-1) ** swaps * np.prod(diag / np.abs(diag))
    return logabs, complex(phase)


def banded_det(mat):
    logabs, phase = banded_logdet(mat)
    return phase * math.exp(logabs)


@dataclass
class DeterminantRow:
    N: int
    det: complex
    delta: complex
    ratio: complex

    @property
    def error(self):
        return abs(self.ratio - 1)


def determinant_compare(sym, sol, N_list, form="large_j"):
    """Compare the finite-N fluctuation determinant with the continuum Delta(T)."""
    delta = delta_closed_form(sym, sol.trajectory)
    rows = []
    for N in N_list:
        mat = fluctuation_matrix(sym, sol, N, form=form)
        det = banded_det(mat)
        if N <= DENSE_CHECK_MAX_N:
            dense = np.linalg.det(mat.to_dense())
            if abs(dense - det) > 1e-10 * max(1.0, abs(det)):
                logger.warning("banded and dense determinants differ at N=%d", N)
        rows.append(DeterminantRow(N, det, delta, det / delta))
        logger.debug("N=%d det=%s ratio=%s", N, det, det / delta)
    return rows
