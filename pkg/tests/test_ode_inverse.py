import numpy as np
import pytest
from fractions import Fraction
from hypothesis import given, settings, strategies as st

from gevrey_witness import ode_inverse as O
from gevrey_witness.model_core import compute_s0

finite = dict(allow_nan=False, allow_infinity=False)


@given(st.floats(0.1, 80, **finite), st.integers(1, 4), st.sampled_from([Fraction(2), Fraction(3, 2), Fraction(6, 5)]))
def test_roots_solve_characteristic_equation(mu, a, s0):
    z = O.compute_roots(mu, a, s0)
    c = (-1) ** a * float(s0) ** (2 * a) * mu
    np.testing.assert_allclose(z ** (2 * a) + c, 0, atol=1e-9 * abs(c))
    assert z.size == 2 * a


@given(st.floats(0.1, 80, **finite), st.integers(1, 4))
def test_partial_fraction_moments(mu, a):
    z = O.compute_roots(mu, a, 1.5)
    A = O.compute_partial_fractions(z)
    scale = np.abs(z).max()
    for m in range(2 * a - 1):
        assert abs(np.sum(A * z**m)) < 1e-10 * scale ** (m - 2 * a + 1) + 1e-13
    assert np.sum(A * z ** (2 * a - 1)) == pytest.approx(1.0, abs=1e-10)


def test_coincident_roots_rejected():
    with pytest.raises(ValueError):
        O.compute_partial_fractions(np.array([1.0, 1.0 + 1e-15, -1.0]))
    with pytest.raises(ValueError):
        O.compute_roots(0.0, 1, 2)


def test_classification_harmonic():
    s0 = compute_s0(2, 1)
    systems, mt, eps, mu_star = O.root_systems(2 * np.arange(5) + 1.0, 1, s0)
    assert mt == pytest.approx(-2) and mu_star == pytest.approx(-2)
    assert eps == pytest.approx(0.5 * (2 * np.sqrt(3) - 2))
    assert list(systems[0].direction) == [1, 1]
    for rs in systems[1:]:
        assert list(rs.direction) == [-1, 1]


def test_classification_rejects_resonant_excited_root():
    with pytest.raises(ValueError, match="mode 2"):
        O.classify_roots(np.array([-2.0, 2.0]), -2.0, 0.5, 2)


def _grid(n=4001, h=0.005):
    return np.arange(n) * h


def test_past_kernel_matches_exact_exponential():
    rho = _grid()
    f = O.RhoGridFunction(rho, np.ones(rho.size, complex))
    mu = -1.5
    out = O.apply_Ikj(mu, -1, f, R=2.0).values
    ref = np.where(rho >= 2, (np.exp(mu * (rho - 2)) - 1) / mu, 0)
    np.testing.assert_allclose(out, ref, atol=1e-12)


def test_future_kernel_sign_on_resonant_profile():
    # f = e^{mu0 rho} on rho > R with mu > mu0: I = -e^{mu0 rho}/(mu - mu0)
    rho = _grid(6001)
    mu0, mu = -2.0, 1.0
    f = O.RhoGridFunction(rho, np.exp(mu0 * rho).astype(complex))
    out = O.apply_Ikj(mu, 1, f, R=0.0).values
    ref = -np.exp(mu0 * rho) / (mu - mu0)
    sl = slice(0, 4000)
    np.testing.assert_allclose(out[sl], ref[sl], rtol=1e-5)


def test_resonant_future_needs_tail():
    rho = 20 + _grid(4001)
    f = O.RhoGridFunction(rho, (1 + rho) ** -3.0 + 0j, shift=-2.0)
    with pytest.raises(O.TailError):
        O.apply_Ikj(-2.0, 1, f, R=1.0)
    g = f.with_tail(range(2, 9))
    out = O.apply_Ikj(-2.0, 1, g, R=20.0).values
    # scaled frame: plain integral of (1+s)^-3 = (1+rho)^-2 / 2
    np.testing.assert_allclose(out, -0.5 * (1 + rho) ** -2.0, rtol=1e-5)


def test_tail_model_fits_inverse_powers():
    rho = np.linspace(50, 150, 2001)
    w = 3 * rho**-2.0 - rho**-4.0
    tag = O.fit_tail(rho, w, range(2, 7))
    assert tag.misfit < 1e-10
    d = tag.derivatives(150.0, 2)
    assert d[1] == pytest.approx(-6 * 150.0**-3 + 4 * 150.0**-5, rel=1e-8)


@settings(max_examples=25, deadline=None)
@given(st.floats(-3, 3, **finite), st.floats(-3, 3, **finite), st.integers(0, 5))
def test_ek_linear(c1, c2, seed):
    rng = np.random.default_rng(seed)
    rho = _grid(801, 0.02)
    rs = O.root_systems(np.array([1.0, 3.0]), 1, 2.0)[0][1]
    f, g = (O.RhoGridFunction(rho, O.compact_rhs(rho, *rng.uniform([4, 1, 0], [10, 3, 4])) + 0j) for _ in range(2))
    lhs = O.apply_Ek(rs, O.RhoGridFunction(rho, c1 * f.values + c2 * g.values), 1.0).values
    rhs = c1 * O.apply_Ek(rs, f, 1.0).values + c2 * O.apply_Ek(rs, g, 1.0).values
    np.testing.assert_allclose(lhs, rhs, atol=1e-12 * (1 + abs(c1) + abs(c2)))


@pytest.mark.parametrize("q,a", [(2, 1), (3, 2)])
def test_ek_solves_ode(q, a):
    from gevrey_witness.spectrum import solve_eigenpairs
    s0 = compute_s0(q, a)
    systems, mt, *_ = O.root_systems(solve_eigenpairs(q, 8).mu, a, s0)
    rho = np.arange(96001) * 2.5e-4
    f = O.compact_rhs(rho, 9.0, 3.0, 1.5)
    for rs in systems:
        assert O.ek_relative_residual(rs, a, s0, f, rho, 1.0, shift=mt) < 1e-6


def test_ek_harmonic_closed_form():
    # ground mode of q=2: (d^2 - 4) u = f with both roots +-2 taken from the future,
    # A = (-1/4, 1/4) gives u(rho) = (1/2) int_rho^inf sinh(2(sigma - rho)) f(sigma) dsigma
    rho = _grid(4001, 0.005)
    rs = O.root_systems(np.array([1.0, 3.0]), 1, 2)[0][0]
    f = O.compact_rhs(rho, 10.0, 1.0)
    u = O.apply_Ek(rs, O.RhoGridFunction(rho, f + 0j), 0.0).values
    h = rho[1]
    ref = np.array([np.sum(np.where(rho >= r, 0.5 * np.sinh(2 * (rho - r)), 0) * f) * h for r in rho[::200]])
    np.testing.assert_allclose(u[::200].real, ref, atol=1e-4 * np.abs(ref).max())


@given(st.integers(1, 4), st.integers(0, 6))
def test_fd_derivative_exact_on_polynomials(m, deg):
    x = np.linspace(-1, 2, 61)
    h = x[1] - x[0]
    p = np.poly1d(np.arange(1, deg + 2, dtype=float))
    d = O.fd_derivative(p(x), h, m, extra=8)
    # exact up to round-off amplified by h^-m and the one-sided edge stencils
    np.testing.assert_allclose(d, p.deriv(m)(x) if deg >= m else 0 * x, atol=1e-10 * np.abs(p(x)).max() / h**m)


def test_shifted_derivative_matches_product_rule():
    rho = np.linspace(1, 3, 401)
    s = -1.0 + 0.5j
    w = np.sin(rho)
    got = O.shifted_derivative(w, rho[1] - rho[0], 2, s)
    ref = -np.sin(rho) + 2 * s * np.cos(rho) + s * s * np.sin(rho)
    np.testing.assert_allclose(got[5:-5], ref[5:-5], atol=1e-8)


def test_grid_function_validation():
    with pytest.raises(ValueError):
        O.RhoGridFunction(np.array([0.0, 0.0, 1.0]), np.zeros(3))
    with pytest.raises(ValueError):
        O.RhoGridFunction(np.arange(3.0), np.zeros(4))
