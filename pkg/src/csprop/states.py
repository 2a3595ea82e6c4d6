"""Canonical and SU(2) coherent-state labels, overlaps and basis expansions."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln

DEFAULT_TAIL = 1e-12

# exact factorial tables are used below this size, log-gamma above
_LOG_SPACE_FROM = 20


class TruncationError(ValueError):
    """Raised when a Fock expansion discards more norm than allowed."""

    def __init__(self, message, tail_mass, n_required=None):
        super().__init__(message)
        self.tail_mass = tail_mass
        self.n_required = n_required


def two_j(j) -> int:
    """Return 2j as an int, rejecting sizes that are not half-integers."""
    tj = round(2 * float(j))
    if tj < 0 or abs(2 * float(j) - tj) > 1e-12:
        raise ValueError(f"spin size must be a non-negative half-integer, got {j}")
    return tj


@dataclass(frozen=True)
class CanonicalLabel:
    z: complex

    @classmethod
    def from_phase_space(cls, q, p, b, c, hbar=1.0):
        return cls(qp_to_label(q, p, b, c, hbar=hbar))


@dataclass(frozen=True)
class SpinLabel:
    s: complex
    twoj: int

    def __post_init__(self):
        if self.twoj < 0:
            raise ValueError("2j must be non-negative")
        if not np.isfinite(self.s):
            raise ValueError("stereographic label must be finite")

    @property
    def j(self) -> float:
        return self.twoj / 2


def overlap_canonical(z1, z2):
    """<z1|z2> for canonical coherent states."""
    z1 = complex(z1)
    z2 = complex(z2)
    return np.exp(-0.5 * abs(z1) ** 2 + z1.conjugate() * z2 - 0.5 * abs(z2) ** 2)


def overlap_spin(s1, s2, j):
    """<s1|s2> for SU(2) coherent states of spin j."""
    tj = two_j(j)
    s1 = complex(s1)
    s2 = complex(s2)
    num = (1 + s1.conjugate() * s2) ** tj
    den = ((1 + abs(s1) ** 2) * (1 + abs(s2) ** 2)) ** (tj / 2)
    return num / den


def normalization_lambda(z1, z2, s1, s2, j) -> float:
    """Real normalization term 1/2(|z'|^2+|z''|^2) + j ln[(1+|s'|^2)(1+|s''|^2)]."""
    return 0.5 * (abs(z1) ** 2 + abs(z2) ** 2) + 0.5 * two_j(j) * (
        math.log1p(abs(s1) ** 2) + math.log1p(abs(s2) ** 2)
    )


def log_factorial(n):
    n = np.asarray(n)
    small = np.array([math.lgamma(k + 1) for k in range(_LOG_SPACE_FROM + 1)])
    out = np.where(n <= _LOG_SPACE_FROM, small[np.minimum(n, _LOG_SPACE_FROM)], gammaln(n + 1.0))
    return out


def log_binom(n, k):
    k = np.asarray(k)
    return log_factorial(n) - log_factorial(k) - log_factorial(n - k)


def fock_vector(z, n_max, tail=DEFAULT_TAIL, check=True):
    """Number-basis components of |z> up to n_max.

    Returns ``(vector, tail_mass)``. When ``check`` is set a
    :class:`TruncationError` is raised if the discarded norm exceeds ``tail``.
    """
    if n_max < 0:
        raise ValueError("n_max must be >= 0")
    z = complex(z)
    n = np.arange(n_max + 1)
    if z == 0:
        vec = np.zeros(n_max + 1, dtype=complex)
        vec[0] = 1.0
        return vec, 0.0
    logmag = -0.5 * abs(z) ** 2 + n * math.log(abs(z)) - 0.5 * log_factorial(n)
    vec = np.exp(logmag) * np.exp(1j * n * np.angle(z))
    tail_mass = max(0.0, 1.0 - float(np.sum(np.abs(vec) ** 2)))
    if check and tail_mass > tail:
        raise TruncationError(
            f"Fock truncation n_max={n_max} discards {tail_mass:.3e} of |{z}>",
            tail_mass,
            required_nmax(z, tail),
        )
    return vec, tail_mass


def required_nmax(z, tail=DEFAULT_TAIL) -> int:
    """Smallest n_max whose Poisson tail beyond n_max is below ``tail``."""
    mean = abs(complex(z)) ** 2
    n = 0
    # accumulate Poisson weights in log space; stop once the remainder is small
    logw = -mean
    acc = math.exp(logw)
    while 1.0 - acc > tail * 0.5:
        n += 1
        logw += math.log(mean) - math.log(n) if mean > 0 else -math.inf
        acc += math.exp(logw)
        if n > 10_000:
            break
    return max(n, 1)


def spin_vector(s, j):
    """J_z-basis components (m = -j..j) of |s>."""
    tj = two_j(j)
    s = complex(s)
    if not np.isfinite(s):
        raise ValueError("stereographic label must be finite")
    k = np.arange(tj + 1)
    if s == 0:
        vec = np.zeros(tj + 1, dtype=complex)
        vec[0] = 1.0
        return vec
    logmag = 0.5 * log_binom(tj, k) + k * math.log(abs(s)) - 0.5 * tj * math.log1p(abs(s) ** 2)
    return np.exp(logmag) * np.exp(1j * k * np.angle(s))


def qp_to_label(q, p, b, c, hbar=1.0, rtol=4 * np.finfo(float).eps):
    """Canonical label z = (q/b + i p/c)/sqrt(2), with widths satisfying b c = hbar."""
    if b <= 0 or c <= 0:
        raise ValueError("widths b and c must be positive")
    if abs(b * c - hbar) > rtol * max(abs(hbar), 1.0):
        raise ValueError(f"widths must satisfy b*c = hbar, got b*c = {b * c!r}")
    return complex(q / b, p / c) / math.sqrt(2.0)
