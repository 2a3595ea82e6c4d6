"""Assembly of the semiclassical canonical-spin propagator and its limiting forms."""

from __future__ import annotations

import cmath
import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .dynamics import IntegrationError
from .reference import spin_half_exact
from .shooting import (
    BoundaryData,
    ContinuationError,
    ShootingError,
    continuation,
    solve,
)
from .states import normalization_lambda, overlap_canonical, overlap_spin
from .symbols import ChartSingularity, OperatorSpec, OperatorTerm, q_symbol

MAGNITUDE_SLACK = 1e-6
SK_MISMATCH = 1e-6
# finite-difference settings for the action-derivative checks
FD_STEP_SECOND = 1e-4
FD_STEP_FIRST = 1e-6
FD_RTOL = 1e-13
FD_ATOL = 1e-15


_SOLVER_ERRORS = (ShootingError, IntegrationError, ChartSingularity)


class InternalConsistencyError(ArithmeticError):
    pass


class BranchTrackingError(ArithmeticError):
    pass


@dataclass
class PropagatorResult:
    T: float
    K: complex
    S: complex
    G: complex
    Lambda: float
    prefactor: complex
    residual: float = 0.0
    iterations: int = 0
    energy_drift: float = 0.0
    branch: int = 0
    det_mbb: float = 1.0
    contributing: bool = True
    hbar: float = 1.0
    extra: dict = field(default_factory=dict)

    @property
    def exponent(self):
        return 1j * (self.S + self.G) / self.hbar - self.Lambda

    def to_record(self):
        rec = {}
        for key, val in asdict(self).items():
            if key == "extra":
                continue
            if isinstance(val, complex):
                rec[f"re_{key}"] = val.real
                rec[f"im_{key}"] = val.imag
            else:
                rec[key] = val
        return rec


def _endpoints(sol):
    tr = sol.trajectory
    return tr.points[0], tr.points[-1]


def action(sol):
    """Complex action S of a converged solution (hbar units)."""
    tr = sol.trajectory
    hbar = tr.hbar
    j = tr.twoj / 2
    p0, pT = _endpoints(sol)
    w0 = 1 + p0[1] * p0[3]
    # ln(1+U''V'') continued along the trajectory from the principal ln(1+U'V')
    log_w0 = cmath.log(w0)
    log_wT = log_w0 + tr.log_w_change
    boundary = -0.5j * hbar * (p0[0] * p0[2] + pT[0] * pT[2]) - 1j * hbar * j * (log_w0 + log_wT)
    return complex(tr.kinetic - tr.h_integral + boundary)


def sk_phase(sol, check=True):
    """Solari-Kochetov term G, from the bold-H trace and from the explicit integrand."""
    tr = sol.trajectory
    g_plus = 0.5 * tr.hplus_integral
    g_explicit = 0.5 * tr.g_explicit_integral
    if check:
        scale = max(abs(g_plus), abs(g_explicit))
        if abs(g_plus - g_explicit) > SK_MISMATCH * scale and abs(g_plus - g_explicit) > 1e-14:
            raise InternalConsistencyError(
                f"SK term forms disagree: {g_plus} vs {g_explicit}"
            )
    return complex(g_plus)


def _bb_det_scaled(tr, t):
    M = tr.tangent_at(t)
    return M[2, 2] * M[3, 3] - M[2, 3] * M[3, 2]


def _prefactor_squared(tr, t):
    # (1+U(t)V(t))/(1+U'V') / det Mbb(raw) equals 1/det of the scaled block
    return 1.0 / _bb_det_scaled(tr, t)


def tracked_sqrt(values_fn, grid, max_refine=30, max_jump=math.pi / 2):
    """sqrt of a nonvanishing complex function, continued along ``grid`` from value 1 at grid[0].

    The grid is refined wherever arg changes by more than ``max_jump`` between
    neighbours, so the root's argument changes by less than pi/4 per step.
    """
    grid = list(grid)
    vals = [values_fn(t) for t in grid]
    i = 0
    refinements = 0
    while i < len(grid) - 1:
        jump = abs(cmath.phase(vals[i + 1] / vals[i]))
        if jump > max_jump:
            if refinements >= max_refine * len(grid) or grid[i + 1] - grid[i] < 1e-14:
                raise BranchTrackingError(f"cannot resolve root branch near t={grid[i]:.6g}")
            mid = 0.5 * (grid[i] + grid[i + 1])
            grid.insert(i + 1, mid)
            vals.insert(i + 1, values_fn(mid))
            refinements += 1
            continue
        i += 1
    arg = cmath.phase(vals[0])
    for a, b in zip(vals[:-1], vals[1:]):
        arg += cmath.phase(b / a)
    return math.sqrt(abs(vals[-1])) * cmath.exp(0.5j * arg)


def prefactor(sol, method="tangent", *, sym=None, fd_step=FD_STEP_SECOND, reference=None):
    """Prefactor [(1+U''V'')/(1+U'V') / det Mbb]^(1/2).

    ``method="tangent"`` uses the tangent matrix, with the root continued in
    time along the trajectory from 1 at T=0.  ``method="action_derivatives"``
    uses [(1+U''V'')(1+U'V')/(2j) det Sigma]^(1/2) with Sigma from finite
    differences of the action; its root sign is aligned with ``reference``
    (defaults to the tangent value).
    """
    tr = sol.trajectory
    if method == "tangent":
        if tr.T == 0:
            return 1.0 + 0j
        det = _bb_det_scaled(tr, tr.T)
        if abs(det) < 1e-300:
            raise ShootingError("prefactor diverges: det Mbb vanishes (caustic)")
        return complex(tracked_sqrt(lambda t: _prefactor_squared(tr, t), tr.t))
    if method == "action_derivatives":
        if sym is None:
            raise ValueError("the action-derivative prefactor needs the symbol")
        sq = prefactor_squared_from_action(sym, sol, fd_step)
        root = cmath.sqrt(sq)
        ref = prefactor(sol, "tangent") if reference is None else reference
        return root if abs(root - ref) <= abs(root + ref) else -root
    raise ValueError(f"unknown prefactor method {method!r}")


def _resolve_action(sym, sol, bd, rtol=FD_RTOL, atol=FD_ATOL, method="DOP853"):
    s = solve(sym, bd, sol.unknowns, rtol=rtol, atol=atol, method=method, tol=1e-13)
    return action(s), s


def action_hessian_fd(sym, sol, h=FD_STEP_SECOND, **kw):
    """Mixed second derivatives d2S/d(u',U') d(v'',V'') by centred differences.

    Returns a 2x2 array [[S_uv, S_uV], [S_Uv, S_UV]]; each entry costs four
    boundary-value solves.
    """
    bd = sol.bd
    first = ("z_initial", "s_initial")
    second = ("z_final_conj", "s_final_conj")
    out = np.empty((2, 2), complex)
    for a, fa in enumerate(first):
        for b, fb in enumerate(second):
            acc = 0j
            for sa in (1, -1):
                for sb in (1, -1):
                    kwargs = {fa: getattr(bd, fa) + sa * h, fb: getattr(bd, fb) + sb * h}
                    S, _ = _resolve_action(sym, sol, replace(bd, **kwargs), **kw)
                    acc += sa * sb * S
            out[a, b] = acc / (4 * h * h)
    return out


def sigma_matrix(sym, sol, h=FD_STEP_SECOND):
    return (1j / sol.bd.hbar) * action_hessian_fd(sym, sol, h)


def prefactor_squared_from_action(sym, sol, h=FD_STEP_SECOND):
    p0, pT = _endpoints(sol)
    w0 = 1 + p0[1] * p0[3]
    wT = 1 + pT[1] * pT[3]
    sigma = sigma_matrix(sym, sol, h)
    return complex(wT * w0 / sol.trajectory.twoj * np.linalg.det(sigma))


@dataclass
class ActionGradientCheck:
    names: tuple
    finite_difference: np.ndarray
    expected: np.ndarray

    @property
    def relative_errors(self):
        return np.abs(self.finite_difference - self.expected) / np.maximum(
            np.abs(self.expected), 1e-300)


def action_gradient_check(sym, sol, h=FD_STEP_FIRST):
    """Centred differences of S in z', z''*, s', s''* and T against the endpoint values
    -i hbar v', -i hbar u'', -2i hbar j V'/(1+U'V'), -2i hbar j U''/(1+U''V''), -H."""
    bd = sol.bd
    hbar = bd.hbar
    j = bd.j
    p0, pT = _endpoints(sol)
    expected = np.array([
        -1j * hbar * p0[2],
        -1j * hbar * pT[0],
        -2j * hbar * j * p0[3] / (1 + p0[1] * p0[3]),
        -2j * hbar * j * pT[1] / (1 + pT[1] * pT[3]),
        -sol.trajectory.energy[-1],
    ])
    names = ("z_initial", "z_final_conj", "s_initial", "s_final_conj", "T")
    fd = np.empty(5, complex)
    for k, name in enumerate(names):
        vals = []
        for sgn in (1, -1):
            bdk = replace(bd, **{name: getattr(bd, name) + sgn * h})
            vals.append(_resolve_action(sym, sol, bdk)[0])
        fd[k] = (vals[0] - vals[1]) / (2 * h)
    return ActionGradientCheck(names, fd, expected)


def assemble(sol, sym=None):
    """Semiclassical propagator K = prefactor * exp(i(S+G)/hbar - Lambda).

    ``sym`` is accepted for symmetry with the other entry points and is unused.
    """
    bd = sol.bd
    tr = sol.trajectory
    S = action(sol)
    G = sk_phase(sol)
    lam = normalization_lambda(bd.z_initial, bd.z_final, bd.s_initial, bd.s_final, bd.j)
    pref = prefactor(sol, "tangent")
    expo = 1j * (S + G) / bd.hbar - lam
    K = pref * cmath.exp(expo)
    p0, pT = _endpoints(sol)
    # raw block = diag(1, d(T)) Mbb diag(1, 1/d(0)), d = (1+UV)/sqrt(2j)
    det_mbb = abs(_bb_det_scaled(tr, tr.T) * (1 + pT[1] * pT[3]) / (1 + p0[1] * p0[3]))
    contributing = abs(K) <= 1 + MAGNITUDE_SLACK
    drift = tr.energy_drift if len(tr.energy) else 0.0
    res = PropagatorResult(
        T=bd.T, K=complex(K), S=S, G=G, Lambda=lam, prefactor=complex(pref),
        residual=float(sol.residual), iterations=int(sol.iterations), energy_drift=drift,
        branch=int(sol.branch), det_mbb=float(det_mbb), contributing=bool(contributing), hbar=bd.hbar,
    )
    return res


def solve_with_continuation(sym, bd, guess=None, steps=(1, 8, 32), **kw):
    """Solve directly; on failure, continue in T from 0 with increasingly fine grids."""
    try:
        return solve(sym, bd, guess, **kw)
    except _SOLVER_ERRORS as first_error:
        last = first_error
    for n in steps[1:]:
        try:
            path = continuation(lambda T: (sym, bd.with_time(T)), np.linspace(0.0, bd.T, n + 1),
                                **kw)
            return path[-1].solution
        except _SOLVER_ERRORS + (ContinuationError,) as exc:
            last = exc
    raise ShootingError(f"no solution reached by continuation: {last}")


def propagate(sym, bd, guess=None, **kw):
    """Solve the boundary-value problem and assemble the propagator."""
    sol = solve_with_continuation(sym, bd, guess, **kw)
    return assemble(sol, sym)


# --------------------------------------------------------------------------
# limiting forms


def separable_assemble(sym_z, sym_s, bd, **kw):
    """K = K_z * K_s from two decoupled solves (canonical sector, spin sector)."""
    for sym in (sym_z, sym_s):
        if sym.spec is not None and not sym.spec.is_separable():
            raise ValueError("separable assembly needs a Hamiltonian without mixed terms")
    if sym_z.spec is not None and any(t.has_spin for t in sym_z.spec):
        raise ValueError("canonical-sector symbol contains spin operators")
    if sym_s.spec is not None and any(t.has_boson for t in sym_s.spec):
        raise ValueError("spin-sector symbol contains boson operators")
    bd_z = replace(bd, s_initial=0j, s_final_conj=0j)
    bd_s = replace(bd, z_initial=0j, z_final_conj=0j)
    rz = propagate(sym_z, bd_z, **kw)
    rs = propagate(sym_s, bd_s, **kw)
    res = PropagatorResult(
        T=bd.T, K=rz.K * rs.K, S=rz.S + rs.S, G=rz.G + rs.G, Lambda=rz.Lambda + rs.Lambda,
        prefactor=rz.prefactor * rs.prefactor, residual=max(rz.residual, rs.residual),
        iterations=rz.iterations + rs.iterations, energy_drift=max(rz.energy_drift, rs.energy_drift),
        branch=max(rz.branch, rs.branch), det_mbb=rz.det_mbb * rs.det_mbb,
        contributing=rz.contributing and rs.contributing, hbar=bd.hbar,
        extra={"K_z": rz.K, "K_s": rs.K},
    )
    return res


def separable_from_spec(spec, bd, **kw):
    if not spec.is_separable():
        raise ValueError("spec is not separable")
    sym_z = q_symbol(spec.boson_part(), bd.j, bd.hbar)
    sym_s = q_symbol(spec.spin_part(), bd.j, bd.hbar)
    return separable_assemble(sym_z, sym_s, bd, **kw)


def holstein_primakoff_pair(omega0, lam, j, hbar=1.0):
    """Spin spec hbar*omega0 (Jz + j) + hbar*lam (J+ + J-)/sqrt(2j) and its j -> infinity
    canonical counterpart hbar*omega0 a†a + hbar*lam (a† + a)."""
    k = hbar * lam / math.sqrt(2 * j)
    spin = OperatorSpec((
        OperatorTerm(hbar * omega0, q=1), OperatorTerm(hbar * omega0 * j),
        OperatorTerm(k, p=1), OperatorTerm(k, r=1),
    ))
    canonical = OperatorSpec((
        OperatorTerm(hbar * omega0, m=1, n=1), OperatorTerm(hbar * lam, m=1),
        OperatorTerm(hbar * lam, n=1),
    ))
    return spin, canonical


@dataclass
class LargeSpinRow:
    j: float
    K_spin: complex
    K_canonical: complex
    deviation: float


def large_spin_compare(spin_family, canonical, j_list, w_labels, T, hbar=1.0, **kw):
    """Spin-sector propagator at s = w/sqrt(2j) against the canonical one at w.

    ``spin_family(j)`` returns the spin-only spec for size j; ``canonical`` is
    the boson-only spec of the j -> infinity limit; ``w_labels = (w', w'')``.
    """
    w1, w2 = (complex(w) for w in w_labels)
    bd_c = BoundaryData.from_labels(w1, 0, w2, 0, j=0.5, hbar=hbar, T=T)
    K_c = propagate(q_symbol(canonical, 0.5, hbar), bd_c, **kw).K
    rows = []
    for j in j_list:
        r = math.sqrt(2 * j)
        bd_s = BoundaryData.from_labels(0, w1 / r, 0, w2 / r, j=j, hbar=hbar, T=T)
        K_s = propagate(q_symbol(spin_family(j), j, hbar), bd_s, **kw).K
        rows.append(LargeSpinRow(j, K_s, K_c, abs(K_s - K_c) / abs(K_c)))
    return rows


def loglog_slope(xs, ys):
    return float(np.polyfit(np.log(xs), np.log(ys), 1)[0])


def split_spin_half(spec, hbar):
    """Split H = H0(a, a†) + sum_k A_k(a, a†) L_k with L in {J+, Jz, J-}.

    Returns (H0, A_plus, A_z, A_minus) as boson-only specs.
    """
    h0, ap, az, am = [], [], [], []
    for t in spec:
        word = (t.p, t.q, t.r)
        boson = OperatorTerm(t.coeff, t.m, t.n)
        if word == (0, 0, 0):
            h0.append(boson)
        elif word == (1, 0, 0):
            ap.append(boson)
        elif word == (0, 1, 0):
            az.append(boson)
        elif word == (0, 0, 1):
            am.append(boson)
        else:
            raise ValueError(f"spin-1/2 factorization needs terms linear in spin, got {t}")
    return tuple(OperatorSpec(tuple(x)) for x in (h0, ap, az, am))


def spin_half_factorized(spec, bd, **kw):
    """K = K_z[H0] * K_s along the orbital trajectory of H0 (spin back-reaction dropped)."""
    if abs(bd.j - 0.5) > 1e-12:
        raise ValueError("spin-1/2 factorization needs j = 1/2")
    hbar = bd.hbar
    h0, ap, az, am = split_spin_half(spec, hbar)
    sym0 = q_symbol(h0, 0.5, hbar)
    bd_z = replace(bd, s_initial=0j, s_final_conj=0j)
    sol = solve_with_continuation(sym0, bd_z, **kw)
    rz = assemble(sol, sym0)
    tr = sol.trajectory
    sp, sz, sm = (q_symbol(x, 0.5, hbar) for x in (ap, az, am))

    def field(t):
        u, _, v, _ = tr.point_at(t)
        pt = (u, 0j, v, 0j)
        a_p, a_z, a_m = sp(pt), sz(pt), sm(pt)
        return ((a_p + a_m) / hbar, 1j * (a_p - a_m) / hbar, a_z / hbar)

    ks = spin_half_exact(field, bd.s_initial, bd.s_final_conj, bd.T)
    res = PropagatorResult(
        T=bd.T, K=rz.K * ks.K, S=rz.S, G=rz.G, Lambda=rz.Lambda, prefactor=rz.prefactor,
        residual=rz.residual, iterations=rz.iterations, energy_drift=rz.energy_drift,
        branch=rz.branch, det_mbb=rz.det_mbb, contributing=rz.contributing, hbar=hbar,
        extra={"K_z": rz.K, "K_s": ks.K},
    )
    return res


def overlap_product(bd):
    return overlap_canonical(bd.z_final, bd.z_initial) * overlap_spin(bd.s_final, bd.s_initial, bd.j)
