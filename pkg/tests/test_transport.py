import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gevrey_witness import transport as T


def test_u0_is_exact_profile(built):
    P, fields, *_ = built
    u0 = fields[0]
    rho = P.ctx.rho
    np.testing.assert_allclose(u0.coeffs[1:], 0)
    unscaled = np.exp(u0.shift * rho) * u0.coeffs[0]
    np.testing.assert_allclose(unscaled, np.exp(P.mu_star * rho), rtol=1e-12)


def test_u0_solves_p0(built):
    P, fields, *_ = built
    res = T.apply_P0(P.ctx, fields[0].coeffs)
    sl = fields[0].window(10)
    scale = np.abs(P.ctx.rho ** (-1) * T.apply_Pk(P.ctx, 1, fields[0].coeffs))[:, sl].max()
    assert np.abs(res[:, sl]).max() < 1e-6 * scale


def test_projections(built):
    _, fields, *_ = built
    u = fields[2]
    np.testing.assert_array_equal(u.pi().coeffs[1:], 0)
    np.testing.assert_allclose(u.pi().coeffs + u.one_minus_pi().coeffs, u.coeffs)
    np.testing.assert_array_equal(u.one_minus_pi().coeffs[0], 0)


def test_resonance_defect(built):
    P, *_ = built
    assert T.resonance_defect(P.ctx) < 1e-8


def test_transport_residuals(built):
    _, fields, infos, *_ = built
    for info in infos[1:]:
        assert info["residual_offdiag"] < 1e-4 and info["residual_diag"] < 1e-4


def test_total_residual_drops_with_depth(built):
    P, fields, *_ = built
    tot = [T.total_residual(P.ctx, fields, J, 6 * 2.0 * 7) for J in range(7)]
    assert tot[0] == pytest.approx(1.0, rel=0.05)
    assert all(b < a for a, b in zip(tot[:4], tot[1:5]))
    assert tot[5] < 1e-5


def test_decay_hierarchy(built):
    P, fields, *_ = built
    reps = [T.measure_decay(u, P.params) for u in fields[:5]]
    ex = [r.measured_exponent for r in reps]
    assert all(b < a for a, b in zip(ex, ex[1:]))
    for r in reps:
        assert r.measured_exponent <= r.target_exponent + 0.3
    assert T.weighted_norm(fields[1], P.params) > 0


@settings(max_examples=15, deadline=None)
@given(m=st.integers(1, 2), c1=st.floats(-2, 2), c2=st.floats(-2, 2))
def test_apply_pk_linear(built21, m, c1, c2):
    P, fields, *_ = built21
    A, B = fields[1].coeffs, fields[2].coeffs
    lhs = T.apply_Pk(P.ctx, m, c1 * A + c2 * B)
    rhs = c1 * T.apply_Pk(P.ctx, m, A) + c2 * T.apply_Pk(P.ctx, m, B)
    np.testing.assert_allclose(lhs, rhs, atol=1e-12 * np.abs(rhs).max() + 1e-300)


def test_cross_parity_couplings_vanish(built):
    P, *_ = built
    par = np.array([p == "even" for p in P.spectrum.parity])
    for M in P.ctx.PM:
        np.testing.assert_array_equal(M[par[:, None] != par[None, :]], 0)


def test_validity_window(built21):
    P, fields, *_ = built21
    with pytest.raises(ValueError):
        fields[3].at(1.0)
    assert fields[3].at(30.0).shape == (P.spectrum.K + 1,)


def test_solve_uj_rejects_j0(built21):
    with pytest.raises(ValueError):
        T.solve_uj(built21[0].ctx, 0, built21[1])


def test_artifacts(tmp_path, built21):
    P, fields, infos, *_ = built21
    T.write_field_csv(fields[1], infos[1], tmp_path / "u1.csv")
    T.write_decay_json([T.measure_decay(fields[1], P.params)], tmp_path / "d.json")
    head = (tmp_path / "u1.csv").read_text().splitlines()[0]
    assert head.startswith("rho,norm_u")
