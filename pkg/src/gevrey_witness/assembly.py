"""Cutoffs, the witness kernel ``v = sum_j psi_j u_j``, the oscillatory
integral ``A(v)`` and the Fourier-side growth analysis."""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from math import comb
from pathlib import Path

import numpy as np
from scipy.interpolate import CubicSpline

from .model_core import ModelParams
from .ode_inverse import fd_derivative
from .transport import EigenCoeffField, TransportContext


class AssemblyError(RuntimeError):
    pass


def _bump(t: np.ndarray) -> np.ndarray:
    out = np.zeros_like(t, dtype=float)
    m = np.abs(t) < 1
    out[m] = np.exp(-1.0 / (1.0 - t[m] ** 2))
    return out


@dataclass(frozen=True)
class CutoffFamily:
    rho: np.ndarray
    psi: np.ndarray          # (J+1, n_rho)
    bands: tuple             # (3 R0 (j+1), 6 R0 (j+1))

    @property
    def J(self) -> int:
        return self.psi.shape[0] - 1

    def derivative(self, j: int, gamma: int) -> np.ndarray:
        if gamma == 0:
            return self.psi[j]
        d = fd_derivative(self.psi[j], self.rho[1] - self.rho[0], gamma)
        lo, hi = self.bands[j]
        d[(self.rho <= lo) | (self.rho >= hi)] = 0.0
        return d


def build_cutoffs(params: ModelParams, J: int, rho: np.ndarray) -> CutoffFamily:
    """``psi_j``: a step at ``4.5 R0 (j+1)`` smoothed by ``n`` convolutions with
    a compactly supported bump, so the ramp lives inside ``[3, 6] R0 (j+1)``."""
    h = float(rho[1] - rho[0])
    R0 = params.R0
    if R0 / h < 8:
        raise AssemblyError(f"rho grid too coarse: the j=0 transition needs >= 8 nodes per R0 (have {R0 / h:.1f})")
    psi = np.zeros((J + 1, rho.size))
    bands = []
    for j in range(J + 1):
        lo, hi = 3 * R0 * (j + 1), 6 * R0 * (j + 1)
        n = max(int(round(R0 * (j + 1))), 2 * params.a + 2)
        M = int(np.floor(0.5 * (hi - lo) / n / h))
        if M < 2:
            raise AssemblyError("rho grid too coarse for the cutoff mollifier")
        t = np.arange(-M, M + 1) / (M + 1)
        b = _bump(t)
        b /= b.sum()
        dens = np.array([1.0])
        for _ in range(n):
            dens = np.convolve(dens, b)
        cum = np.cumsum(dens) - 0.5 * dens
        ic = int(round((4.5 * R0 * (j + 1) - rho[0]) / h))
        half = (dens.size - 1) // 2
        col = np.zeros(rho.size)
        idx = np.arange(rho.size) - ic
        inside = np.abs(idx) <= half
        col[inside] = cum[idx[inside] + half]
        col[idx > half] = 1.0
        col[rho <= lo] = 0.0
        col[rho >= hi] = 1.0
        psi[j] = np.clip(col, 0.0, 1.0)
        bands.append((lo, hi))
    return CutoffFamily(rho, psi, tuple(bands))


@dataclass
class WitnessFunction:
    rho: np.ndarray
    coeffs: np.ndarray       # scaled by exp(-shift rho)
    shift: complex
    J: int
    dominance_ratio: float
    terms0: np.ndarray = field(repr=False)   # mode-0 row of each psi_j u_j (scaled)

    def at_zero(self, spectrum, beta: int = 0) -> np.ndarray:
        """``d_x^beta v(0, rho)`` on the grid (unscaled)."""
        return np.exp(self.shift * self.rho) * (spectrum.values_at_zero(beta) @ self.coeffs)


def assemble_v(cutoffs: CutoffFamily, fields: list, R0: float, check: bool = True) -> WitnessFunction:
    J = min(cutoffs.J, len(fields) - 1)
    terms = [cutoffs.psi[j] * fields[j].coeffs for j in range(J + 1)]
    V = sum(terms)
    t0 = np.array([t[0] for t in terms])
    sl = cutoffs.rho >= 6 * R0
    lead = np.abs(t0[0, sl])
    rest = np.abs(t0[1:, sl]).sum(axis=0) if J > 0 else np.zeros_like(lead)
    ratio = float((rest / lead).max())
    if check and not ratio < 1:
        raise AssemblyError(f"series not dominated (ratio {ratio:.3g}); increase R0")
    return WitnessFunction(cutoffs.rho, V, fields[0].shift, J, ratio, t0)


def envelope_rate(w: WitnessFunction) -> float:
    """Fitted exponential rate of ``||v(., rho)||`` on the plateau region."""
    sl = w.rho >= 6 * w.rho[0] * 1.0
    nrm = np.sqrt(np.sum(np.abs(w.coeffs[:, sl]) ** 2, axis=0))
    y = np.log(nrm) + w.shift.real * w.rho[sl]
    return float(np.polyfit(w.rho[sl], y, 1)[0])


def choose_beta(spectrum) -> int:
    """0 when ``phi0(0) != 0`` (always, for the even ground state), else 1."""
    return 0 if abs(spectrum.values_at_zero(0)[0]) > 1e-8 * np.abs(spectrum.phi[0]).max() else 1


def lambda_prime(params: ModelParams, beta: int) -> float:
    return (params.r.real + 1) / params.s0f + beta / params.q - 1


def _g_of_eta(w: WitnessFunction, spectrum, params: ModelParams, beta: int, eta: np.ndarray, x: float = 0.0) -> np.ndarray:
    """Integrand after ``eta = rho^{s0}``:
    ``(1/s0) eta^{(r+1)/s0 + beta/q - 1} d_x^beta v(x eta^{1/q}, eta^{1/s0})``."""
    s0 = params.s0f
    rho = eta ** (1 / s0)
    if rho.max() > w.rho[-1] * (1 + 1e-12):
        raise AssemblyError("eta beyond the transported rho range")
    spl = CubicSpline(w.rho, w.coeffs, axis=1)
    C = spl(np.clip(rho, w.rho[0], w.rho[-1]))
    C[:, rho < w.rho[0]] = 0
    if x == 0.0:
        phi = spectrum.values_at_zero(beta)
        vals = phi @ C
    else:
        xs = x * rho ** (s0 / params.q)
        if np.abs(xs).max() > spectrum.grid.L:
            raise AssemblyError("dilated argument x rho^{s0/q} leaves the spectral x-domain")
        phik = spectrum.interpolator(beta)(xs)          # (K+1, n_eta)
        vals = np.sum(phik * C, axis=0)
    expo = (params.r + 1) / s0 + beta / params.q - 1
    return eta ** expo / s0 * np.exp(w.shift * rho) * vals


def _hat_weights(y: np.ndarray, d: float) -> np.ndarray:
    z = 0.5 * y * d
    s = np.sinc(z / np.pi)
    return d * s * s


def evaluate_Av(w: WitnessFunction, spectrum, params: ModelParams, x: float, y, beta: int = 0,
                d_eta: float | None = None, eta_max: float | None = None) -> np.ndarray:
    """``d_x^beta A(v)(x, y)`` by Filon quadrature on a uniform eta grid.

    The amplitude is linear between nodes, each hat integrates to
    ``d sinc^2(y d / 2) e^{i y eta_n}``; the step is refined until ``|y| d <= 0.5``.
    """
    y = np.atleast_1d(np.asarray(y, float))
    s0 = params.s0f
    e0 = (3 * params.R0) ** s0
    e1 = eta_max if eta_max is not None else w.rho[-1] ** s0
    ymax = max(np.abs(y).max(), 1e-12)
    d = d_eta if d_eta is not None else min(0.05, 0.5 / ymax)
    if ymax * d > 0.5:
        d = 0.5 / ymax
    n = int(np.ceil((e1 - e0) / d))
    eta, d = np.linspace(e0, e1, n + 1, retstep=True)
    g = _g_of_eta(w, spectrum, params, beta, eta, x)
    g[0] = 0.0   # v vanishes at rho = 3 R0; the last hat is a half hat
    out = np.empty(y.size, complex)
    for i0 in range(0, y.size, 64):
        yy = y[i0:i0 + 64]
        ph = np.exp(1j * np.outer(yy, eta))
        full = ph @ g
        # half hat at the right end: subtract the missing half
        z = yy * d
        with np.errstate(invalid="ignore", divide="ignore"):
            right = np.where(np.abs(z) < 1e-6, d / 2,
                             (np.exp(-1j * z) - 1 + 1j * z) / (z * z) * d)
        out[i0:i0 + 64] = _hat_weights(yy, d) * full - g[-1] * ph[:, -1] * (_hat_weights(yy, d) - right)
    return out


def eta_window(params: ModelParams, rho_max: float) -> tuple[float, float]:
    s0 = params.s0f
    lo = (6 * params.R0) ** s0 * 1.2
    hi = (0.9 * rho_max) ** s0
    if np.log10(hi / lo) < 1.5:
        raise AssemblyError(f"eta window spans {np.log10(hi / lo):.2f} decades (< 1.5); raise rho_max")
    return lo, hi


@dataclass
class FourierProfile:
    eta: np.ndarray
    closed_form: np.ndarray
    beta: int
    lam_prime: float
    certificate: np.ndarray
    numeric: np.ndarray | None = None
    numeric_eta: np.ndarray | None = None
    rel_error: np.ndarray | None = None
    lower_bound_C2: float = 0.0


def closed_form_fourier(w: WitnessFunction, spectrum, params: ModelParams, beta: int, eta: np.ndarray,
                        rho_max: float | None = None) -> FourierProfile:
    """``(2 pi / s0) eta^{(r+1)/s0 + beta/q - 1} d_x^beta v(0, eta^{1/s0})``."""
    eta = np.asarray(eta, float)
    lo, hi = eta_window(params, rho_max if rho_max is not None else w.rho[-1])
    if eta.min() < lo * (1 - 1e-12) or eta.max() > hi * (1 + 1e-12):
        raise AssemblyError(f"eta samples outside the resolved window [{lo:.4g}, {hi:.4g}]")
    F = 2 * np.pi * _g_of_eta(w, spectrum, params, beta, eta)
    if np.any(np.abs(F) == 0):
        raise AssemblyError("closed form vanishes inside the window")
    lp = lambda_prime(params, beta)
    cert = np.abs(F) * np.exp(abs(params.mu0_tilde) * eta ** (1 / params.s0f)) * eta ** (-lp)
    phi0 = abs(spectrum.values_at_zero(beta)[0])
    C2 = phi0 * (1 - w.dominance_ratio) * 2 * np.pi / params.s0f
    return FourierProfile(eta, F, beta, lp, cert, lower_bound_C2=float(C2))


def default_eta_samples(params: ModelParams, rho_max: float, n: int = 48) -> np.ndarray:
    lo, hi = eta_window(params, rho_max)
    return np.geomspace(lo, hi, n)


@dataclass(frozen=True)
class CrossCheck:
    eta: np.ndarray
    numeric: np.ndarray
    closed: np.ndarray
    rel_error: np.ndarray
    window_change: np.ndarray
    Y: float


def _numeric_transform(eta_grid: np.ndarray, d: float, g: np.ndarray, Y: float, targets: np.ndarray) -> np.ndarray:
    span = eta_grid[-1] - eta_grid[0]
    nfft = 1 << int(np.ceil(np.log2(2 * (eta_grid.size + 1))))
    dy = 2 * np.pi / (nfft * d)
    assert 2 * np.pi / dy >= 2 * span
    m_max = int(np.ceil(8 * Y / dy))
    if m_max >= nfft // 2:
        raise AssemblyError("y window does not fit the transform length")
    # A(y_m) = hat(y_m) * sum_n g_n e^{i y_m eta_n}
    G = np.fft.ifft(np.concatenate([g, np.zeros(nfft - g.size)])) * nfft
    m = np.arange(-m_max, m_max + 1)
    y = m * dy
    S = G[m % nfft] * np.exp(1j * y * eta_grid[0])
    A = _hat_weights(y, d) * S
    win = np.exp(-0.5 * (y / Y) ** 2)
    ph = np.exp(-1j * np.outer(targets, y))
    return ph @ (win * A) * dy


def numeric_fourier_crosscheck(w: WitnessFunction, spectrum, params: ModelParams, beta: int, eta_samples: np.ndarray,
                               Y: float = 4.0, d_eta: float = 0.02, cut: float = 1e-18) -> CrossCheck:
    """``int e^{-i y eta} A(v)(0, y) e^{-y^2 / 2Y^2} dy`` against the closed form.

    ``A(v)(0, .)`` is sampled on a uniform y grid (one FFT of the Filon sums);
    the eta' support is truncated where the amplitude drops below ``cut``
    of its peak, i.e. below double-precision resolution anyway.
    """
    eta_samples = np.asarray(eta_samples, float)
    if np.any(eta_samples <= 0):
        raise AssemblyError("eta = 0 lies outside the lower-bound window")
    s0 = params.s0f
    rho = w.rho
    amp = np.abs(w.at_zero(spectrum, beta)) * rho ** ((params.r.real + 1) - s0 + beta * s0 / params.q)
    keep = np.flatnonzero(amp > cut * amp.max())
    e0 = (3 * params.R0) ** s0
    e1 = rho[keep[-1]] ** s0
    if eta_samples.max() > e1:
        raise AssemblyError("cross-check samples beyond the resolvable amplitude range")
    n = int(np.ceil((e1 - e0) / d_eta))
    grid, d_eta = np.linspace(e0, e1, n + 1, retstep=True)
    g = _g_of_eta(w, spectrum, params, beta, grid)
    g[0] = 0.0
    g[-1] = 0.0
    closed = 2 * np.pi * _g_of_eta(w, spectrum, params, beta, eta_samples)
    num = _numeric_transform(grid, d_eta, g, Y, eta_samples)
    num2 = _numeric_transform(grid, d_eta, g, 2 * Y, eta_samples)
    rel = np.abs(num - closed) / np.abs(closed)
    change = np.abs(num2 - num) / np.abs(num)
    return CrossCheck(eta_samples, num, closed, rel, change, Y)


def crosscheck_samples(w: WitnessFunction, spectrum, params: ModelParams, beta: int, n: int = 16,
                       guard: float = 1e-9, rho_max: float | None = None) -> np.ndarray:
    """Geometric eta samples inside the window where the closed form stays
    above ``guard`` times the peak amplitude (the noise guard of the numeric transform)."""
    lo, hi = eta_window(params, rho_max if rho_max is not None else w.rho[-1])
    s0 = params.s0f
    eta = np.geomspace(lo, hi, 2000)
    gq = np.abs(_g_of_eta(w, spectrum, params, beta, eta))
    e_all = w.rho[w.rho >= 3 * params.R0] ** s0
    peak = np.abs(_g_of_eta(w, spectrum, params, beta, e_all)).max()
    ok = eta[gq >= guard * peak]
    if ok.size == 0:
        raise AssemblyError("no eta inside the window clears the noise guard")
    return np.geomspace(ok.min(), ok.max(), n)


@dataclass(frozen=True)
class GevreyFit:
    slope: float
    slope_ci: float
    rate: float
    rate_ci: float
    rate_at_index: float
    offset: float
    n_samples: int
    decades: float
    lam_prime: float

    def to_json(self) -> dict:
        return dict(self.__dict__)


def gevrey_index_fit(profile: FourierProfile, s0: float | None = None) -> GevreyFit:
    """Slope of ``log(-log(|F| eta^{-lambda'}))`` against ``log eta`` (estimates ``1/s0``).

    The rate is the coefficient of ``eta^slope`` in a linear fit of
    ``-log(|F| eta^{-lambda'})`` (the intercept absorbs the constant prefactor).
    """
    eta = profile.eta
    if eta.size < 12:
        raise AssemblyError("need at least 12 eta samples")
    dec = float(np.log10(eta.max() / eta.min()))
    if dec < 1.5:
        raise AssemblyError("eta samples must span at least 1.5 decades")
    with np.errstate(divide="ignore"):
        Y = -np.log(np.abs(profile.closed_form) * eta ** (-profile.lam_prime))
    if not np.all(np.isfinite(Y)):
        raise AssemblyError("profile underflows inside the window")
    if np.any(Y <= 0) or np.any(np.diff(Y) <= 0):
        raise AssemblyError("-log|F| not positive and increasing: window contamination")
    X = np.log(eta)
    (b1, b0), cov = np.polyfit(X, np.log(Y), 1, cov=True)
    M = np.column_stack([eta ** b1, np.ones_like(eta)])
    c, res, *_ = np.linalg.lstsq(M, Y, rcond=None)
    dof = max(eta.size - 2, 1)
    sig2 = float(np.sum((M @ c - Y) ** 2) / dof)
    cov_r = sig2 * np.linalg.inv(M.T @ M)
    at_index = float("nan")
    if s0 is not None:
        Mi = np.column_stack([eta ** (1 / s0), np.ones_like(eta)])
        at_index = float(np.linalg.lstsq(Mi, Y, rcond=None)[0][0])
    return GevreyFit(slope=float(b1), slope_ci=float(1.96 * np.sqrt(cov[0, 0])), rate=float(c[0]),
                     rate_ci=float(1.96 * np.sqrt(cov_r[0, 0])), rate_at_index=at_index, offset=float(c[1]),
                     n_samples=int(eta.size), decades=dec, lam_prime=float(profile.lam_prime))


@dataclass(frozen=True)
class STerms:
    bands: tuple
    s2_band_max: np.ndarray
    s2_leak: float
    s1_sup: float
    f10_norm: float
    c: float
    b: float
    d: float


def _commutator(ctx: TransportContext, cut: CutoffFamily, j: int, W: np.ndarray) -> np.ndarray:
    # sum_m rho^{-m} [P_m, psi_j] u_j, with P~_0 = gamma[2a,2a] carrying the rho part of P0
    a2 = 2 * ctx.a
    out = np.zeros_like(W)
    derivs = {g: cut.derivative(j, g) for g in range(1, a2 + 1)}
    for m in range(a2 + 1):
        n = a2 - m
        acc = np.zeros_like(W)
        for g in range(1, n + 1):
            acc += comb(n, g) * derivs[g] * ctx.D(W, n - g)
        out += ctx.rho ** (-m) * (ctx.PM[m] @ acc)
    return out


def compute_S_terms(ctx: TransportContext, cut: CutoffFamily, fields: list) -> STerms:
    """Band maxima of the cutoff commutators (S2), the regrouped remainder (S1)
    and the fit ``log max|S2_j| = -c j log j + b j + d``."""
    J = min(cut.J, len(fields) - 1)
    env = np.abs(np.exp(ctx.mu_star * ctx.rho))
    maxima, leak = [], 0.0
    for j in range(J + 1):
        S2 = _commutator(ctx, cut, j, fields[j].coeffs)
        nrm = np.sqrt(np.sum(np.abs(S2) ** 2, axis=0)) * env
        lo, hi = cut.bands[j]
        inb = (ctx.rho >= lo) & (ctx.rho <= hi)
        maxima.append(nrm[inb].max())
        if np.any(~inb):
            leak = max(leak, float(nrm[~inb].max() / nrm[inb].max()))
    maxima = np.array(maxima)
    if leak > 1e-12:
        raise AssemblyError(f"S2 support leaks outside the cutoff bands ({leak:.2e})")
    from .transport import apply_Pk
    S1 = np.zeros_like(fields[0].coeffs)
    f10 = cut.psi[0] * apply_Pk(ctx, 0, fields[0].coeffs)
    for j in range(J + 1):
        Pu = sum(ctx.rho ** (-m) * apply_Pk(ctx, m, fields[j].coeffs) for m in range(2 * ctx.a + 1))
        S1 += cut.psi[j] * Pu
    sl = slice(int(np.searchsorted(ctx.rho, 6 * ctx.params.R0)), ctx.rho.size - 10)
    s1 = float((np.sqrt(np.sum(np.abs(S1[:, sl]) ** 2, axis=0)) * env[sl]).max())
    f10n = float((np.sqrt(np.sum(np.abs(f10[:, sl]) ** 2, axis=0)) * env[sl]).max())
    js = np.arange(J + 1, dtype=float)
    jl = np.where(js > 0, js * np.log(np.maximum(js, 1)), 0.0)
    M = np.column_stack([-jl, js, np.ones_like(js)])
    c, b, d = np.linalg.lstsq(M, np.log(maxima), rcond=None)[0]
    return STerms(tuple(cut.bands[: J + 1]), maxima, leak, s1, f10n, float(c), float(b), float(d))


def write_fourier_csv(profile: FourierProfile, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["kind", "eta", "abs_F_closed", "abs_F_numeric", "rel_error", "certificate"])
        for e, F, c in zip(profile.eta, profile.closed_form, profile.certificate):
            wr.writerow(["closed", repr(float(e)), repr(float(abs(F))), "", "", repr(float(c))])
        if profile.numeric is not None:
            for e, v, r in zip(profile.numeric_eta, profile.numeric, profile.rel_error):
                wr.writerow(["numeric", repr(float(e)), "", repr(float(abs(v))), repr(float(r)), ""])


def write_gevrey_json(fit: GevreyFit, path: str | Path, extra: dict | None = None) -> None:
    d = fit.to_json()
    if extra:
        d.update(extra)
    Path(path).write_text(json.dumps(d, indent=2, sort_keys=True))


def write_s_terms_csv(st: STerms, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["band", "rho_lo", "rho_hi", "s2_band_max"])
        for j, ((lo, hi), m) in enumerate(zip(st.bands, st.s2_band_max)):
            wr.writerow([j, repr(float(lo)), repr(float(hi)), repr(float(m))])
