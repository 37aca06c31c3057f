from fractions import Fraction

import numpy as np
import pytest
import sympy as sp
from hypothesis import given, settings, strategies as st

from gevrey_witness import model_core as mc

F = Fraction


@pytest.mark.parametrize("q,a,s0", [(2, 1, F(2)), (3, 2, F(3, 2)), (2, 3, F(6, 5)), (4, 1, F(4))])
def test_s0_values(q, a, s0):
    assert mc.compute_s0(q, a) == s0


@pytest.mark.parametrize("q,a", [(1, 1), (2, 0), (2.5, 1)])
def test_s0_rejects(q, a):
    with pytest.raises(ValueError):
        mc.compute_s0(q, a)


@given(st.integers(2, 9), st.integers(1, 9))
def test_s0_strictly_above_one(q, a):
    s0 = mc.compute_s0(q, a)
    assert 1 < s0 <= q
    assert 1 / s0 == 1 - F(q - 1, a * q)


def test_gamma_rows_frozen():
    g = mc.compute_gamma_table(1, F(2))
    assert g.row(2) == [sp.Rational(-3, 4), sp.Rational(3, 4), sp.Rational(-1, 4)]
    g = mc.compute_gamma_table(2, F(3, 2))
    assert g.row(4) == [sp.Rational(v) for v in ("280/81", "-40/9", "220/81", "-80/81", "16/81")]


@pytest.mark.parametrize("a,s0", [(1, F(2)), (2, F(3, 2))])
@pytest.mark.parametrize("p", [0, 1, 3])
@pytest.mark.parametrize("rho0", [1, 2, 5])
def test_gamma_reproduces_operator_power(a, s0, p, rho0):
    # L = (i s0)^{-1} d/drho rho^{1-s0}, applied symbolically to a monomial
    rho = sp.symbols("rho", positive=True)
    s = sp.Rational(s0.numerator, s0.denominator)
    f = rho**p * sp.exp(rho / 3)
    g = mc.compute_gamma_table(a, s0)
    cur = f
    for m in range(1, 2 * a + 1):
        cur = sp.diff(rho ** (1 - s) * cur, rho) / (sp.I * s)
        table = sum(g[m, h] * rho ** (-(m * s - h)) * sp.diff(f, rho, h) for h in range(m + 1))
        assert abs(complex(sp.N((cur - table).subs(rho, rho0), 30))) < 1e-25


def test_gamma_top_entry_is_pure_power():
    for a, s0 in [(1, F(2)), (2, F(3, 2)), (3, F(6, 5))]:
        g = mc.compute_gamma_table(a, s0)
        s = sp.Rational(s0.numerator, s0.denominator)
        assert sp.simplify(g[2 * a, 2 * a] - (sp.I * s) ** (-2 * a)) == 0


@given(st.fractions(min_value=-5, max_value=5, max_denominator=7), st.integers(0, 8))
def test_pochhammer_recursion(lam, beta):
    assert mc.pochhammer(lam, beta + 1) == mc.pochhammer(lam, beta) * (lam - beta)
    assert mc.pochhammer(lam, 0) == 1


def test_pochhammer_integer_is_falling_factorial():
    assert mc.pochhammer(5, 3) == 60
    assert mc.pochhammer(3, 4) == 0
    with pytest.raises(ValueError):
        mc.pochhammer(1, -1)


@given(st.integers(0, 7), st.integers(2, 5), st.fractions(min_value=-3, max_value=3, max_denominator=5))
def test_pk_polynomial_evaluates_to_product(k, q, t):
    s0 = mc.compute_s0(q, 2)
    poly = mc.build_pk_polynomial(k, s0, q)
    val = sum(c * t**n for n, c in enumerate(poly))
    ref = F(1)
    for m in range(k):
        ref *= s0 / q * t - m
    assert val == ref
    assert len(poly) == k + 1


def _symbols(q, a):
    s0 = mc.compute_s0(q, a)
    g = mc.compute_gamma_table(a, s0)
    r = mc.choose_r(q, a, g)
    return g, r, mc.build_transport_symbols(q, a, g, r)


def test_r_values_exact():
    assert _symbols(2, 1)[1] == -2
    assert _symbols(3, 2)[1] == sp.Rational(-3, 2)


def test_r_is_real_for_many_cases():
    for q, a in [(2, 1), (2, 2), (3, 1), (3, 2), (4, 3)]:
        g, r, _ = _symbols(q, a)
        assert sp.im(r) == 0


@pytest.mark.parametrize("q,a", [(2, 1), (3, 2), (2, 2)])
def test_p1_closed_form(q, a):
    g, r, syms = _symbols(q, a)
    s = sp.Rational(*mc.compute_s0(q, a).as_integer_ratio())
    n = 2 * a
    theta = s / q
    t = sp.symbols("t")
    closed = n * g[n, n] * (theta * t + r + 2 * s) + g[n, n - 1]
    got = sum(c * t**k for k, c in enumerate(syms[1].poly))
    assert sp.expand(closed - got) == 0
    # ground-state pairing <x phi0', phi0> = -1/2 kills the resonance
    assert sp.simplify(closed.subs(t, sp.Rational(-1, 2))) == 0


def test_transport_symbols_frozen():
    R = sp.Rational
    _, _, s21 = _symbols(2, 1)
    assert [list(x.poly) for x in s21] == [[R(-1, 4)], [R(-1, 4), R(-1, 2)], [R(1, 4), 0, R(-1, 4)]]
    _, _, s32 = _symbols(3, 2)
    ref = [[R(16, 81)], [R(16, 81), R(32, 81)], [R(-68, 81), R(-8, 27), R(8, 27)],
           [R(32, 27), R(-28, 81), R(-4, 9), R(8, 81)],
           [R(-56, 81), R(50, 81), R(5, 27), R(-10, 81), R(1, 81)]]
    assert [list(x.poly) for x in s32] == ref
    assert [x.rho_order for x in s32] == [4, 3, 2, 1, 0]


def test_symbols_numeric_when_r_is_float():
    g = mc.compute_gamma_table(1, F(2))
    s_exact = mc.build_transport_symbols(2, 1, g, -2)
    s_num = mc.build_transport_symbols(2, 1, g, -2.0 + 0j)
    for a, b in zip(s_exact, s_num):
        np.testing.assert_allclose(a.numeric(), b.numeric(), atol=1e-14)
        assert a(0.3) == pytest.approx(b(0.3))


def test_weights_defaults_and_invariants():
    roots = [np.array([-2.0, 2.0]), np.array([-2 * np.sqrt(3), 2 * np.sqrt(3)])]
    w = mc.select_weights(2, 1, 1, roots)
    assert w.delta == 0.9 and w.kappa == pytest.approx(0.75) and w.gamma_sharp == 4
    assert w.eps_mu == pytest.approx(0.5 * (2 * np.sqrt(3) - 2))
    with pytest.raises(ValueError, match="kappa"):
        mc.select_weights(2, 1, 1, roots, kappa=0.4)
    with pytest.raises(ValueError, match="kappa\\*delta"):
        mc.select_weights(2, 1, 1, roots, delta=0.55, kappa=0.8)
    with pytest.raises(ValueError, match="root systems"):
        mc.select_weights(2, 1, 5, roots)


def test_model_params_rejects_bad_state():
    ok = dict(q=2, a=1, s0=F(2), r=-2 + 0j, mu0_tilde=-2.0, eps_mu=0.7, delta=0.9, kappa=0.75, R0=2.0, gamma_sharp=4)
    p = mc.ModelParams(**ok)
    assert p.theta == 1.0 and p.to_json()["s0"] == "2"
    for bad in ({"s0": F(3)}, {"kappa": 0.3}, {"mu0_tilde": 1.0}, {"gamma_sharp": 1}):
        with pytest.raises(ValueError):
            mc.ModelParams(**{**ok, **bad})


def test_dominant_decay_and_margin():
    assert mc.dominant_decay([-3, -1 + 1j, -1 - 1j, 2]) == -1
    with pytest.raises(ValueError):
        mc.dominant_decay([1.0, 2.0])
    assert mc.classification_margin([[-1.0, 1.0], [-2.0, 3.0]], -1.0) == pytest.approx(0.5)
