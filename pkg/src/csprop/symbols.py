"""Normal-ordered boson x spin operators and their analytically continued Q-symbols.

An operator term ``coeff * a†^m a^n * J+^p Jz^q J-^r`` has the off-diagonal
coherent-state symbol

    <z1,s1| term |z2,s2> / <z1,s1|z2,s2>  =  coeff * v^m u^n * P(U, V)

with ket labels (u, U) = (z2, s2) and bra labels (v, V) = (z1*, s1*).  The spin
factor is obtained exactly by letting the differential realisation of the spin
operators on the unnormalised ket e^{U J+}|-j> act on the kernel (1+VU)^{2j}:

    J+ -> d/dU,    Jz -> -j + U d/dU,    J- -> 2jU - U^2 d/dU.

Every intermediate is a finite sum of ``V^a U^b (1+VU)^(2j-k)``, so after
dividing by the kernel the symbol is a sum of monomials
``u^alpha U^beta v^gamma V^delta (1+UV)^(-kappa)``.  That family is closed under
differentiation, which is how the exact first and second derivatives are built.
"""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .states import log_factorial, two_j

MAX_BOSON_POWER = 8
MAX_SPIN_POWER = 4

# variable order used throughout: chi_1..chi_4 = u, U, v, V
VARIABLES = ("u", "U", "v", "V")
U_IDX, CAPU_IDX, V_IDX, CAPV_IDX = range(4)


class ChartSingularity(ArithmeticError):
    """Raised where 1 + U V vanishes (stereographic chart breaks down)."""

    def __init__(self, point):
        super().__init__(f"chart singularity 1+UV=0 at (u,U,v,V)={tuple(point)}")
        self.point = tuple(point)


class PowerLimitError(ValueError):
    pass


@dataclass(frozen=True)
class OperatorTerm:
    coeff: complex
    m: int = 0
    n: int = 0
    p: int = 0
    q: int = 0
    r: int = 0

    def __post_init__(self):
        for name in "mnpqr":
            if getattr(self, name) < 0:
                raise ValueError(f"power {name} must be non-negative")

    @property
    def has_boson(self):
        return self.m > 0 or self.n > 0

    @property
    def has_spin(self):
        return self.p > 0 or self.q > 0 or self.r > 0

    def to_record(self):
        c = complex(self.coeff)
        return {"coeff_re": c.real, "coeff_im": c.imag, "m": self.m, "n": self.n,
                "p": self.p, "q": self.q, "r": self.r}

    @classmethod
    def from_record(cls, rec):
        return cls(complex(rec.get("coeff_re", 0.0), rec.get("coeff_im", 0.0)),
                   int(rec.get("m", 0)), int(rec.get("n", 0)), int(rec.get("p", 0)),
                   int(rec.get("q", 0)), int(rec.get("r", 0)))


@dataclass(frozen=True)
class OperatorSpec:
    """A Hamiltonian as a sum of normal-ordered boson x spin monomials."""

    terms: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "terms", tuple(self.terms))

    def __add__(self, other):
        return OperatorSpec(self.terms + other.terms)

    def __iter__(self):
        return iter(self.terms)

    def __len__(self):
        return len(self.terms)

    def scaled(self, factor):
        return OperatorSpec(tuple(OperatorTerm(t.coeff * factor, t.m, t.n, t.p, t.q, t.r)
                                  for t in self.terms))

    def boson_part(self):
        """Terms without spin operators."""
        return OperatorSpec(tuple(t for t in self.terms if not t.has_spin))

    def spin_part(self):
        """Terms without boson operators."""
        return OperatorSpec(tuple(t for t in self.terms if not t.has_boson and t.has_spin))

    def is_separable(self):
        return not any(t.has_boson and t.has_spin for t in self.terms)

    def max_boson_power(self):
        return max((max(t.m, t.n) for t in self.terms), default=0)

    def to_records(self):
        return [t.to_record() for t in self.terms]

    @classmethod
    def from_records(cls, records):
        return cls(tuple(OperatorTerm.from_record(r) for r in records))


def harmonic(omega, hbar=1.0):
    """hbar*omega a†a."""
    return OperatorSpec((OperatorTerm(hbar * omega, m=1, n=1),))


def spin_z(omega0, hbar=1.0):
    """hbar*omega0 Jz."""
    return OperatorSpec((OperatorTerm(hbar * omega0, q=1),))


def jaynes_cummings(omega, omega0, g, hbar=1.0):
    """hbar*omega a†a + hbar*omega0 Jz + hbar*g (a† J- + a J+)."""
    terms = [OperatorTerm(hbar * omega, m=1, n=1), OperatorTerm(hbar * omega0, q=1)]
    if g != 0:
        terms += [OperatorTerm(hbar * g, m=1, r=1), OperatorTerm(hbar * g, n=1, p=1)]
    return OperatorSpec(tuple(terms))


# --------------------------------------------------------------------------
# exact spin-word tables


def _apply_dU(poly, tj):
    out = defaultdict(float)
    for (a, b, k), c in poly.items():
        if b:
            out[(a, b - 1, k)] += b * c
        if tj - k:
            out[(a + 1, b, k + 1)] += (tj - k) * c
    return out


def _apply_jplus(poly, tj):
    return _apply_dU(poly, tj)


def _apply_jz(poly, tj):
    out = defaultdict(float)
    for key, c in poly.items():
        out[key] += -0.5 * tj * c
    for (a, b, k), c in _apply_dU(poly, tj).items():
        out[(a, b + 1, k)] += c
    return out


def _apply_jminus(poly, tj):
    out = defaultdict(float)
    for (a, b, k), c in poly.items():
        out[(a, b + 1, k)] += tj * c
    for (a, b, k), c in _apply_dU(poly, tj).items():
        out[(a, b + 2, k)] -= c
    return out


def spin_word_table(p, q, r, tj):
    """Exact symbol of J+^p Jz^q J-^r as {(a, b, k): c} meaning sum c V^a U^b (1+UV)^-k.

    The word acts on the ket with J-^r first; in the differential realisation
    the leftmost letter's operator is applied first.
    """
    poly = {(0, 0, 0): 1.0}
    for _ in range(p):
        poly = _apply_jplus(poly, tj)
    for _ in range(q):
        poly = _apply_jz(poly, tj)
    for _ in range(r):
        poly = _apply_jminus(poly, tj)
    return {key: c for key, c in poly.items() if c != 0.0}


# --------------------------------------------------------------------------
# monomial tables: rows of (coeff, alpha, beta, gamma, delta, kappa) meaning
# coeff * u^alpha U^beta v^gamma V^delta (1+UV)^-kappa


def _table_from_dict(d):
    d = {k: c for k, c in d.items() if c != 0}
    if not d:
        return np.zeros(1, complex), np.zeros((1, 5), int)
    keys = sorted(d)
    return np.array([d[k] for k in keys], complex), np.array(keys, int).reshape(-1, 5)


def _differentiate(coeffs, exps, var):
    out = defaultdict(complex)
    for c, e in zip(coeffs, exps):
        if c == 0:
            continue
        e = list(int(x) for x in e)
        if e[var]:
            f = list(e)
            f[var] -= 1
            out[tuple(f)] += c * e[var]
        if var in (CAPU_IDX, CAPV_IDX) and e[4]:
            # d/dU (1+UV)^-k = -k V (1+UV)^-(k+1), symmetric for V
            other = CAPV_IDX if var == CAPU_IDX else CAPU_IDX
            f = list(e)
            f[other] += 1
            f[4] += 1
            out[tuple(f)] += -c * e[4]
    return _table_from_dict(out)


# multi-indices of order <= 2, as sorted tuples of variable indices
DERIVATIVE_KEYS = [()] + [(i,) for i in range(4)] + [
    (i, k) for i in range(4) for k in range(i, 4)
]


def _normalize_deriv(deriv):
    """Accept index tuples like () / (0,) / (0, 2), 4-long count vectors, or names like 'uV'."""
    if isinstance(deriv, str):
        idx = tuple(sorted(VARIABLES.index(ch) for ch in deriv))
    else:
        deriv = tuple(int(x) for x in deriv)
        if len(deriv) == 4:
            if any(x < 0 for x in deriv):
                raise ValueError(f"unsupported derivative {deriv!r}")
            idx = tuple(i for i, cnt in enumerate(deriv) for _ in range(cnt))
        else:
            idx = tuple(sorted(deriv))
    if len(idx) > 2 or any(not 0 <= i < 4 for i in idx):
        raise ValueError(f"unsupported derivative {deriv!r}")
    return idx


@dataclass(frozen=True, eq=False)
class SymbolFunction:
    """Exact rational Q-symbol H(u, U, v, V) with derivatives through second order."""

    twoj: int
    hbar: float
    tables: dict = field(repr=False)
    spec: OperatorSpec = field(default=None, repr=False)

    def __post_init__(self):
        keys = list(DERIVATIVE_KEYS)
        coeffs, exps, seg = [], [], []
        for i, key in enumerate(keys):
            c, e = self.tables[key]
            coeffs.append(c)
            exps.append(e)
            seg.append(np.full(len(c), i))
        starts = np.cumsum([0] + [len(c) for c in coeffs[:-1]])
        object.__setattr__(self, "_keys", keys)
        object.__setattr__(self, "_coeffs", np.concatenate(coeffs))
        object.__setattr__(self, "_exps", np.concatenate(exps).T.copy())
        object.__setattr__(self, "_starts", starts)
        object.__setattr__(self, "_index", {k: i for i, k in enumerate(keys)})

    @property
    def j(self):
        return self.twoj / 2

    def _all_values(self, point):
        u, U, v, V = (complex(x) for x in point)
        w = 1.0 + U * V
        if abs(w) < 1e-300 or not np.isfinite(w):
            raise ChartSingularity(point)
        e = self._exps
        mono = (
            self._coeffs
            * np.power(u, e[0])
            * np.power(U, e[1])
            * np.power(v, e[2])
            * np.power(V, e[3])
            * np.power(1.0 / w, e[4])
        )
        return np.add.reduceat(mono, self._starts)

    def __call__(self, point, deriv=()):
        return symbol_eval(self, point, deriv)

    def derivatives(self, point):
        """Value, gradient (4,) and Hessian (4, 4) at ``point``."""
        vals = self._all_values(point)
        idx = self._index
        grad = np.array([vals[idx[(i,)]] for i in range(4)])
        hess = np.empty((4, 4), complex)
        for i in range(4):
            for k in range(i, 4):
                hess[i, k] = hess[k, i] = vals[idx[(i, k)]]
        return vals[idx[()]], grad, hess

    def table(self, deriv=()):
        return self.tables[_normalize_deriv(deriv)]


def _build_value_table(spec, tj):
    out = defaultdict(complex)
    for t in spec:
        if t.m > MAX_BOSON_POWER or t.n > MAX_BOSON_POWER:
            raise PowerLimitError(f"boson power exceeds {MAX_BOSON_POWER}: {t}")
        if max(t.p, t.q, t.r) > MAX_SPIN_POWER:
            raise PowerLimitError(f"spin power exceeds {MAX_SPIN_POWER}: {t}")
        for (a, b, k), c in spin_word_table(t.p, t.q, t.r, tj).items():
            out[(t.n, b, t.m, a, k)] += complex(t.coeff) * c
    return _table_from_dict(out)


def q_symbol(spec, j, hbar=1.0):
    """Build the exact Q-symbol of ``spec`` for spin size ``j``."""
    tj = two_j(j)
    if hbar <= 0:
        raise ValueError("hbar must be positive")
    tables = {(): _build_value_table(spec, tj)}
    for i in range(4):
        tables[(i,)] = _differentiate(*tables[()], i)
    for i in range(4):
        for k in range(i, 4):
            tables[(i, k)] = _differentiate(*tables[(i,)], k)
    return SymbolFunction(tj, float(hbar), tables, spec)


def symbol_eval(sym, point, deriv=()):
    """Exact value of a derivative (order <= 2) of ``sym`` at (u, U, v, V)."""
    key = _normalize_deriv(deriv)
    return sym._all_values(point)[sym._index[key]]


# --------------------------------------------------------------------------
# finite matrix representation


def boson_matrix(m, n, n_max):
    """Projected a†^m a^n on Fock(0..n_max); exact matrix elements, no edge artefacts."""
    rows, cols, vals = [], [], []
    for l in range(n, n_max + 1):
        k = l - n + m
        if k > n_max:
            continue
        logval = 0.5 * (log_factorial(l) - log_factorial(l - n)) + 0.5 * (
            log_factorial(k) - log_factorial(l - n)
        )
        rows.append(k)
        cols.append(l)
        vals.append(np.exp(logval))
    return sp.csr_matrix((vals, (rows, cols)), shape=(n_max + 1, n_max + 1), dtype=complex)


def spin_matrices(j):
    """(J+, Jz, J-) in the basis m = -j..j."""
    tj = two_j(j)
    jj = tj / 2
    mvals = -jj + np.arange(tj + 1)
    jz = np.diag(mvals).astype(complex)
    jp = np.zeros((tj + 1, tj + 1), complex)
    for k in range(tj):
        m = mvals[k]
        jp[k + 1, k] = np.sqrt(jj * (jj + 1) - m * (m + 1))
    return jp, jz, jp.T.copy()


def spin_word_matrix(p, q, r, j):
    jp, jz, jm = spin_matrices(j)
    mp = np.linalg.matrix_power
    return mp(jp, p) @ mp(jz, q) @ mp(jm, r)


def matrix_rep(spec, j, n_max):
    """Sparse matrix of ``spec`` on Fock(n_max+1) x Spin(2j+1)."""
    if n_max < spec.max_boson_power():
        raise ValueError("n_max must be at least the largest boson power")
    dim_s = two_j(j) + 1
    out = sp.csr_matrix(((n_max + 1) * dim_s, (n_max + 1) * dim_s), dtype=complex)
    for t in spec:
        out = out + complex(t.coeff) * sp.kron(
            boson_matrix(t.m, t.n, n_max), sp.csr_matrix(spin_word_matrix(t.p, t.q, t.r, j)),
            format="csr",
        )
    return out.tocsr()

