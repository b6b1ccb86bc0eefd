import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import special

from tfelab.besselkernel import (FundamentalPair, dpsi1, dpsi2, i_half_series, kernel_bound_integrals,
                                 kernel_k, kernel_k_displayed, ode_operator, psi1, psi2,
                                 solve_reduced, transport_bounds, transport_kernel, wronskian)


def test_psi_values():
    assert psi1(1e-8) == pytest.approx(np.sqrt(2 / np.pi), rel=1e-12)
    assert psi2(1.0) == pytest.approx(np.sqrt(np.pi / 2) / np.e, rel=1e-14)
    z = np.array([0.3, 2.0, 7.5])
    assert np.allclose(psi1(z), z ** -0.5 * special.iv(0.5, z), rtol=1e-13)
    assert np.allclose(psi2(z), z ** -0.5 * special.kv(0.5, z), rtol=1e-13)
    assert np.allclose(i_half_series(z), special.iv(0.5, z), rtol=1e-12)


def test_wronskian_values():
    z = np.array([0.01, 0.1, 1.0, 10.0, 20.0])
    assert np.max(np.abs(np.abs(z ** 2 * wronskian(z)) - 1)) < 1e-12
    zz = np.geomspace(0.01, 20, 500)
    assert np.max(np.abs(np.abs(zz ** 2 * wronskian(zz)) - 1)) < 1e-12


def test_derivatives_match_finite_differences():
    z = np.array([0.2, 1.0, 5.0])
    h = 1e-6
    assert np.allclose(dpsi1(z), (psi1(z + h) - psi1(z - h)) / (2 * h), rtol=1e-7)
    assert np.allclose(dpsi2(z), (psi2(z + h) - psi2(z - h)) / (2 * h), rtol=1e-7)


@settings(max_examples=50, deadline=None)
@given(st.floats(1e-3, 30))
def test_kernel_continuous_on_diagonal(y):
    a = kernel_k(y * (1 - 1e-13), y)
    b = kernel_k(y * (1 + 1e-13), y)
    assert abs(a) == pytest.approx(abs(b), rel=1e-10)


@settings(max_examples=50, deadline=None)
@given(st.floats(1e-2, 10), st.floats(1e-2, 10))
def test_kernel_symmetry(z, y):
    # k(z, y) / y is symmetric in (z, y)
    assert kernel_k(z, y) / y == pytest.approx(kernel_k(y, z) / z, rel=1e-12)


def test_kernel_limits():
    assert abs(kernel_k(60.0, 1.0)) < 1e-20
    small = [abs(kernel_k(2.0, y)) / y for y in (1e-4, 1e-6, 1e-8)]
    assert np.allclose(small, small[0], rtol=1e-4)
    assert abs(kernel_k(2.0, 1e-8)) < 1e-8


def test_displayed_kernel_sign_typo():
    # the displayed convention flips one branch; only magnitudes agree
    z, y = 3.0, 1.0
    assert abs(kernel_k_displayed(z, y)) == pytest.approx(abs(kernel_k(z, y)))
    g = np.linspace(0.01, 8, 4001)
    w = np.exp(-(g - 2) ** 2)
    dy = g[1] - g[0]
    u_ok = np.array([np.sum(kernel_k(zi, g) * w) * dy for zi in g])
    u_bad = np.array([np.sum(kernel_k_displayed(zi, g) * w) * dy for zi in g])
    inner = slice(200, 3800)
    r_ok = np.max(np.abs(ode_operator(g, u_ok)[inner] - w[inner]))
    r_bad = np.max(np.abs(ode_operator(g, u_bad)[inner] - w[inner]))
    assert r_ok < 1e-2 < r_bad


def test_ode_operator_annihilates_fundamental_pair():
    z = np.linspace(0.5, 5, 2001)
    for f in (psi1, psi2):
        r = ode_operator(z, f(z))[5:-5]
        assert np.max(np.abs(r)) < 1e-6 * np.max(np.abs(f(z)))


def test_solve_reduced_manufactured():
    z = np.linspace(0.0, 40.0, 4001)
    u = solve_reduced(z, -2 * np.exp(-z))
    assert np.max(np.abs(u - np.exp(-z))) < 1e-6
    assert np.max(np.abs(ode_operator(z, u) + 2 * np.exp(-z))[5:-5]) < 1e-6
    assert np.all(solve_reduced(z, np.zeros_like(z)) == 0)


def test_solve_reduced_round_trip():
    z = np.linspace(0.0, 30.0, 3001)
    w = z * np.exp(-(z - 3) ** 2)
    u = solve_reduced(z, w)
    r = ode_operator(z, u) - w
    assert np.max(np.abs(r[5:-5])) < 1e-5 * np.max(np.abs(w))


@pytest.mark.parametrize("j", [0.0, 0.5, 1.0])
def test_kernel_bound_integrals_finite(j):
    a, b = kernel_bound_integrals(j)
    assert np.isfinite(a) and np.isfinite(b)
    a2, b2 = kernel_bound_integrals(j, z_max=120.0)
    assert a2 == pytest.approx(a, rel=0.05) and b2 == pytest.approx(b, rel=0.05)


def test_kernel_bound_integrals_diverge_for_j2():
    a1, _ = kernel_bound_integrals(2.0, z_max=30.0)
    a2, _ = kernel_bound_integrals(2.0, z_max=120.0)
    assert a2 > 3 * a1


def test_transport_kernel_bounds():
    s1, s2 = transport_bounds(0.5)
    assert s1 == pytest.approx(1 / 1.5, abs=1e-3)
    assert s2 == pytest.approx(1 / 0.5, abs=1e-3)
    assert transport_kernel(1.0, 2.0) == 0
    assert transport_kernel(2.0, 1.0) == pytest.approx(0.25)


@pytest.mark.parametrize("nu", [0.5, 1.0, 1.5])
def test_fundamental_pair_wronskian(nu):
    P = FundamentalPair(nu)
    z = np.array([0.1, 1.0, 5.0])
    # z u'' + (2nu+1) u' - z u = 0 has Wronskian ~ z^-(2nu+1)
    w = P.wronskian(z) * z ** (2 * nu + 1)
    assert np.allclose(w, w[0], rtol=1e-6)
