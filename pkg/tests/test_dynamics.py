import math

import numpy as np
import pytest

from csprop.dynamics import (
    PAIRING,
    ChartSingularity,
    DETERMINANT_INITIAL,
    antisymmetric_generator,
    determinant_flow,
    delta_closed_form,
    eom,
    integrate,
    linearization,
)
from csprop.symbols import OperatorSpec, OperatorTerm, harmonic, jaynes_cummings, q_symbol

JC = jaynes_cummings(1.0, 0.9, 0.3)
P0 = [0.5 + 0.2j, 0.3 - 0.1j, 0.4 - 0.3j, 0.2 + 0.2j]


def test_harmonic_period():
    sym = q_symbol(harmonic(1.0), 0.5)
    tr = integrate(sym, [1, 0, 1, 0], 2 * math.pi)
    assert abs(tr.final.u - 1) < 10 * 1e-10
    assert abs(tr.final.v - 1) < 10 * 1e-10


def test_zero_time():
    sym = q_symbol(JC, 1)
    tr = integrate(sym, P0, 0.0)
    assert len(tr.t) == 1
    assert tr.kinetic == tr.h_integral == tr.hplus_integral == 0
    assert np.array_equal(tr.tangent_final, np.eye(4))


def test_spin_precession():
    # H = Jz: U(t) = U0 exp(-i t), V(t) = V0 exp(i t)
    sym = q_symbol(OperatorSpec((OperatorTerm(1.0, q=1),)), 1.5)
    tr = integrate(sym, [0, 0.4 + 0.1j, 0, 0.3j], 1.7)
    assert abs(tr.final.U - (0.4 + 0.1j) * np.exp(-1.7j)) < 1e-9
    assert abs(tr.final.V - 0.3j * np.exp(1.7j)) < 1e-9


def test_energy_conserved_on_complex_trajectory():
    sym = q_symbol(JC, 1)
    tr = integrate(sym, P0, 3.0)
    assert tr.energy_drift < 100 * 1e-10 * max(1, abs(tr.energy[0]))


def test_conjugacy_preserved():
    sym = q_symbol(JC, 1)
    z, s = 0.7 - 0.2j, 0.4 + 0.5j
    tr = integrate(sym, [z, s, z.conjugate(), s.conjugate()], 2.0)
    assert np.max(np.abs(tr.points[:, 2] - tr.points[:, 0].conj())) < 1e-9
    assert np.max(np.abs(tr.points[:, 3] - tr.points[:, 1].conj())) < 1e-9


def _scaled(p0):
    d = (1 + p0[1] * p0[3]) / math.sqrt(2)
    return np.array([1, d, 1, d])


def test_tangent_matches_finite_differences():
    sym = q_symbol(JC, 1)
    T = 1.3
    tr = integrate(sym, P0, T, rtol=1e-12, atol=1e-14)
    p0, pT = np.array(P0), tr.points[-1]
    d0, dT = _scaled(p0), _scaled(pT)
    h = 1e-6
    for k in range(4):
        e = np.zeros(4, complex)
        e[k] = h * d0[k]
        fp = integrate(sym, p0 + e, T, rtol=1e-12, atol=1e-14, with_tangent=False).points[-1]
        fm = integrate(sym, p0 - e, T, rtol=1e-12, atol=1e-14, with_tangent=False).points[-1]
        col = (fp - fm) / (2 * h) / dT
        assert np.allclose(col, tr.tangent_final[:, k], rtol=1e-5, atol=1e-7)


def test_tangent_composition():
    sym = q_symbol(JC, 1)
    t1, t2 = 0.6, 1.4
    full = integrate(sym, P0, t2)
    first = integrate(sym, P0, t1)
    second = integrate(sym, first.points[-1], t2 - t1)
    assert np.allclose(second.tangent_final @ first.tangent_final, full.tangent_final, atol=1e-8)


def test_linearization_symmetric_and_orbital_entries():
    sym = q_symbol(JC, 1)
    H = linearization(sym, P0)
    assert np.allclose(H, H.T)
    _, _, h = sym.derivatives(P0)
    assert H[0, 2] == h[0, 2]


def test_chart_singularity():
    sym = q_symbol(JC, 1)
    with pytest.raises(ChartSingularity):
        eom(sym, [0, 1, 0, -1])


def test_determinant_flow_matches_closed_form():
    sym = q_symbol(JC, 1)
    tr = integrate(sym, P0, 1.2)
    flow = determinant_flow(sym, tr, DETERMINANT_INITIAL)
    assert flow.relative_mismatch < 1e-6


def test_delta_harmonic_is_one():
    sym = q_symbol(harmonic(1.0), 1)
    tr = integrate(sym, [0.3, 0.1, 0.2, 0.4], 1.0)
    assert abs(delta_closed_form(sym, tr) - 1) < 1e-9


def test_antisymmetric_tensor_flow():
    """Wedge products of two tangent columns obey the antisymmetric generator."""
    sym = q_symbol(JC, 1)
    tr = integrate(sym, P0, 1.0, rtol=1e-12, atol=1e-14)
    pairs = [(2, 3), (1, 2), (3, 0), (0, 2), (3, 1), (0, 1)]

    def wedge(t, a, b):
        M = tr.tangent_at(t)
        x, y = M[:, a], M[:, b]
        return np.array([x[i] * y[k] - x[k] * y[i] for i, k in pairs])

    t, h = 0.5, 1e-5
    H = linearization(sym, tr.point_at(t))
    for a, b in ((2, 3), (0, 1), (0, 3)):
        rate = (wedge(t + h, a, b) - wedge(t - h, a, b)) / (2 * h)
        assert np.allclose(rate, 1j * antisymmetric_generator(H) @ wedge(t, a, b), atol=1e-8)


def test_pairing_is_symplectic_like():
    assert np.allclose(PAIRING @ PAIRING, -np.eye(4))
