import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cvqkd_eq.estimation import AggregateEstimate
from cvqkd_eq.security import (OMEGA, CovarianceSpec, SecurityConfig, UnphysicalStateError, build_covariance,
                               conditional_after_homodyne, equivalent_spec, g_entropy, holevo_bound, is_physical,
                               key_rate, mutual_information, secret_key_rate, symplectic_spectrum)

mpmath.mp.dps = 40


def mp_g(nu):
    x = (mpmath.mpf(nu) - 1) / 2
    if x == 0:
        return mpmath.mpf(0)
    return (x + 1) * mpmath.log(x + 1, 2) - x * mpmath.log(x, 2)


def reference_chi(v_a, T, eps, eta, nu_el):
    """Holevo bound of the entangling-cloner state, written out in closed form."""
    v_a, T, eps, eta, nu_el = (mpmath.mpf(str(a)) for a in (v_a, T, eps, eta, nu_el))
    V = v_a + 1
    Te = eta * T
    ee = eps + nu_el / Te
    A = V
    B = Te * (V + 1 / Te - 1 + ee)
    C2 = Te * (V * V - 1)
    delta = A * A + B * B - 2 * C2
    D = A * B - C2
    root = mpmath.sqrt(delta * delta - 4 * D * D)
    nu1 = mpmath.sqrt((delta + root) / 2)
    nu2 = mpmath.sqrt((delta - root) / 2)
    nu3 = mpmath.sqrt(A * (A - C2 / B))
    return float(mp_g(nu1) + mp_g(nu2) - mp_g(nu3))


def test_covariance_cases():
    np.testing.assert_array_equal(build_covariance(CovarianceSpec(1.0, 0.5, 0.0)), np.eye(4))
    g = build_covariance(CovarianceSpec(5.0, 1.0, 0.0))
    assert g[0, 2] == pytest.approx(math.sqrt(24)) and g[1, 3] == pytest.approx(-math.sqrt(24))
    with pytest.raises(ValueError):
        CovarianceSpec(5.0, 0.0, 0.0)
    with pytest.raises(ValueError):
        CovarianceSpec(5.0, 0.5, -0.1)


def test_symplectic_spectrum_cases():
    assert symplectic_spectrum(np.eye(4)) == pytest.approx((1.0, 1.0), abs=1e-12)
    assert symplectic_spectrum(build_covariance(CovarianceSpec(5.0, 1.0, 0.0))) == pytest.approx((1.0, 1.0), abs=1e-9)
    with pytest.raises(ValueError):
        symplectic_spectrum(np.arange(16.0).reshape(4, 4))


def test_symplectic_spectrum_matches_closed_form():
    g = build_covariance(CovarianceSpec(5.0, 0.631, 0.0128))
    A, B, C = g[0, 0], g[2, 2], g[0, 2]
    delta = A * A + B * B - 2 * C * C
    D = A * B - C * C
    root = math.sqrt(delta * delta - 4 * D * D)
    ref = (math.sqrt((delta + root) / 2), math.sqrt((delta - root) / 2))
    assert symplectic_spectrum(g) == pytest.approx(ref, abs=1e-9)
    # second oracle: eigenvalues of the Hermitian matrix sqrt(g) i Omega sqrt(g)
    w, U = np.linalg.eigh(g)
    s = U @ np.diag(np.sqrt(w)) @ U.T
    ev = np.sort(np.abs(np.linalg.eigvalsh(1j * s @ OMEGA @ s)))[::-1]
    assert symplectic_spectrum(g) == pytest.approx((ev[0], ev[2]), abs=1e-9)


def test_conditional_after_homodyne():
    g = np.diag([3.0, 3.0, 2.0, 2.0])
    np.testing.assert_array_equal(conditional_after_homodyne(g), np.diag([3.0, 3.0]))
    c = conditional_after_homodyne(build_covariance(CovarianceSpec(5.0, 1.0, 0.0)))
    assert math.sqrt(np.linalg.det(c)) == pytest.approx(1.0, abs=1e-9)
    with pytest.raises(ValueError):
        conditional_after_homodyne(np.diag([1.0, 1.0, 0.0, 1.0]))


def test_g_entropy_values():
    assert g_entropy(1.0) == 0.0
    assert g_entropy(3.0) == pytest.approx(2.0, abs=1e-15)
    assert g_entropy(1.0 + 1e-12) < 1e-10
    assert g_entropy(1.0 - 1e-9) == 0.0
    with pytest.raises(UnphysicalStateError):
        g_entropy(0.9)
    for nu in (1.5, 7.0, 101.0):
        assert g_entropy(nu) == pytest.approx(float(mp_g(nu)), rel=1e-13)


def test_mutual_information_cases():
    assert mutual_information(3.0, 1.0, 0.0, 1.0, 0.0) == pytest.approx(1.0, abs=1e-15)
    assert mutual_information(4.0, 0.0, 0.0, 0.6, 0.01) == 0.0
    assert mutual_information(4.0, 1e-9, 0.0, 0.6, 0.01) < 1e-8
    vals = [mutual_information(4.0, 0.5, e, 0.6, 0.01) for e in (0.0, 0.01, 0.04, 0.1)]
    assert all(b < a for a, b in zip(vals, vals[1:]))


@given(st.floats(0.01, 20.0), st.floats(0.01, 1.0))
def test_mutual_information_is_awgn_capacity(v_a, T):
    # y = sqrt(T) x + z with var(x) = V_A and var(z) = 1 gives 0.5 log2(1 + T V_A)
    assert mutual_information(v_a, T, 0.0, 1.0, 0.0) == pytest.approx(0.5 * math.log2(1 + T * v_a), rel=1e-12,
                                                                      abs=1e-14)


def test_holevo_matches_reference():
    for args in [(4.0, 0.631, 0.0128, 0.6, 0.01), (4.0, 0.5412, 0.0429, 0.6, 0.01), (25.0, 0.2, 0.1, 0.6, 0.01)]:
        v_a, T, eps, eta, nu_el = args
        chi = holevo_bound(build_covariance(equivalent_spec(*args)))
        assert chi == pytest.approx(reference_chi(*args), abs=1e-6)


@pytest.mark.parametrize("v_a", [0.01, 1.0, 4.0, 20.0])
def test_lossless_pure_state_leaks_nothing(v_a):
    assert abs(holevo_bound(build_covariance(CovarianceSpec(v_a + 1.0, 1.0, 0.0)))) <= 1e-9
    ideal = SecurityConfig(v_a=v_a, eta=1.0, nu_el=0.0)
    assert abs(key_rate(1.0, 0.0, ideal).chi_be) <= 1e-9


def test_chi_nondecreasing_in_eps():
    chis = [key_rate(0.6, e, SecurityConfig()).chi_be for e in (0.0, 0.01, 0.04, 0.1)]
    assert all(b >= a for a, b in zip(chis, chis[1:]))


def test_key_rate_strictly_decreasing_in_eps():
    ks = [key_rate(0.631, e, SecurityConfig()).k_raw for e in np.linspace(0.0, 0.2, 41)]
    assert all(b < a for a, b in zip(ks, ks[1:]))


def test_key_rate_prefactor_and_clamp():
    cfg = SecurityConfig(fer=1.0)
    r = key_rate(0.631, 0.0128, cfg)
    assert r.k_rate == 0.0 and r.k_raw == 0.0
    r = key_rate(0.05, 0.3, SecurityConfig())
    assert r.k_raw < 0 and r.k_rate == 0.0
    r = key_rate(0.631, 0.0128, SecurityConfig(fer=0.1, delta_n=0.01))
    assert r.k_raw == pytest.approx(0.9 * (0.95 * r.i_ab - r.chi_be - 0.01), rel=1e-14)


def test_table1_ordering():
    cfg = SecurityConfig()
    eq = secret_key_rate(AggregateEstimate(0.6261, 0.0128, np.ones(1), ()), cfg)
    raw = secret_key_rate(AggregateEstimate(0.5412, 0.0429, np.ones(1), ()), cfg)
    assert eq.k_rate > raw.k_rate
    assert eq.k_rate > 0


@settings(max_examples=200)
@given(st.floats(0.0, 30.0), st.floats(1e-4, 1.0), st.floats(0.0, 2.0), st.floats(0.01, 1.0), st.floats(-3.2, 3.2))
def test_covariance_always_physical(v_a, T, eps, amp, phase):
    g = build_covariance(CovarianceSpec(v_a + 1.0, T, eps, amp, phase))
    assert is_physical(g)
    assert min(symplectic_spectrum(g)) >= 1.0 - 1e-9
    c = conditional_after_homodyne(g)
    np.testing.assert_array_equal(c, c.T)
    assert math.sqrt(max(np.linalg.det(c), 0.0)) >= 1.0 - 1e-9
