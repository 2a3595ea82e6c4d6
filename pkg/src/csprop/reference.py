"""Exact propagators on truncated Fock x spin spaces, and the exact spin-1/2 propagator
in a prescribed (possibly complex) field."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as la
from scipy.integrate import solve_ivp
from scipy.sparse.linalg import expm_multiply

from .states import DEFAULT_TAIL, TruncationError, fock_vector, required_nmax, spin_vector, two_j
from .symbols import matrix_rep

DENSE_LIMIT = 4000

PAULI = (
    np.array([[0, 1], [1, 0]], complex),
    np.array([[0, -1j], [1j, 0]], complex),
    np.array([[1, 0], [0, -1]], complex),
)


@dataclass(frozen=True)
class HilbertConfig:
    n_max: int
    j: float = 0.5
    hbar: float = 1.0
    tail: float = DEFAULT_TAIL

    def __post_init__(self):
        if self.n_max < 1:
            raise ValueError("n_max must be >= 1")
        two_j(self.j)

    @property
    def dim(self):
        return (self.n_max + 1) * (two_j(self.j) + 1)


def suggest_nmax(bd, spec=None, tail=DEFAULT_TAIL, margin=10):
    """A Fock cut-off that keeps both endpoint coherent vectors within ``tail``."""
    n = max(required_nmax(bd.z_initial, tail), required_nmax(bd.z_final, tail))
    extra = spec.max_boson_power() if spec is not None else 0
    return n + margin + extra


def coherent_vector(z, s, cfg):
    fv, _ = fock_vector(z, cfg.n_max, tail=cfg.tail, check=True)
    return np.kron(fv, spin_vector(s, cfg.j))


def exact_propagator(spec, cfg, bd, method="expm"):
    """<z'', s''| exp(-i H T / hbar) |z', s'> on the truncated space.

    ``method`` is ``"expm"`` (dense Pade scaling-squaring) or ``"evolve"``
    (sparse action of the exponential on the initial state).  ``"auto"``
    picks ``expm`` up to :data:`DENSE_LIMIT` states.
    """
    if not np.isclose(cfg.hbar, bd.hbar) or two_j(cfg.j) != two_j(bd.j):
        raise ValueError("Hilbert config and boundary data disagree on j or hbar")
    try:
        psi_i = coherent_vector(bd.z_initial, bd.s_initial, cfg)
        psi_f = coherent_vector(bd.z_final, bd.s_final, cfg)
    except TruncationError as exc:
        raise TruncationError(
            f"{exc}; need n_max >= {exc.n_required}", exc.tail_mass, exc.n_required
        ) from exc
    if bd.T == 0 or len(spec) == 0:
        return complex(np.vdot(psi_f, psi_i))
    H = matrix_rep(spec, cfg.j, cfg.n_max)
    if method == "auto":
        method = "expm" if cfg.dim <= DENSE_LIMIT else "evolve"
    gen = (-1j * bd.T / cfg.hbar) * H
    if method == "expm":
        out = la.expm(gen.toarray()) @ psi_i
    elif method == "evolve":
        out = expm_multiply(gen.tocsc(), psi_i)
    else:
        raise ValueError(f"unknown method {method!r}")
    return complex(np.vdot(psi_f, out))


@dataclass
class SpinHalfEvolution:
    t: np.ndarray
    W: np.ndarray  # (len(t), 2, 2) in the (m=+1/2, m=-1/2) basis
    K: complex

    @property
    def a(self):
        return self.W[:, 0, 0]

    @property
    def b(self):
        return self.W[:, 0, 1]


def spin_half_evolve(field, T, rtol=1e-11, atol=1e-13):
    """Integrate dW/dt = -(i/2) sigma . C(t) W from W(0) = 1."""
    def rhs(t, y):
        c = field(t)
        gen = c[0] * PAULI[0] + c[1] * PAULI[1] + c[2] * PAULI[2]
        return (-0.5j * gen @ y.reshape(2, 2)).ravel()

    y0 = np.eye(2, dtype=complex).ravel()
    if T == 0:
        return np.array([0.0]), y0.reshape(1, 2, 2)
    sol = solve_ivp(rhs, (0.0, T), y0, method="DOP853", rtol=rtol, atol=atol)
    if sol.status != 0:
        raise RuntimeError(f"spin-1/2 evolution failed: {sol.message}")
    return sol.t, sol.y.T.reshape(-1, 2, 2)


def spin_half_exact(field, s_initial, s_final_conj, T, **kw):
    """Exact <s''|W(T)|s'> for spin 1/2 with labels s' and s''*.

    W is used entry by entry, so complex fields evaluated along complex
    trajectories are handled without assuming the SU(2) form of W.
    """
    t, W = spin_half_evolve(field, T, **kw)
    WT = W[-1]
    s1 = complex(s_initial)
    s2c = complex(s_final_conj)
    num = WT[1, 1] + s1 * WT[1, 0] + s2c * WT[0, 1] + s2c * s1 * WT[0, 0]
    den = np.sqrt((1 + abs(s2c) ** 2) * (1 + abs(s1) ** 2))
    return SpinHalfEvolution(t, W, complex(num / den))
