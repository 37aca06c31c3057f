"""Anharmonic oscillator ``Q = D^2 + x^{2(q-1)}`` on a truncated interval.

Second-order finite differences with Dirichlet ends, a Richardson step from
a grid with twice the spacing, and the mode-space matrices the transport
stage needs.
"""
from __future__ import annotations

import csv
import json
import warnings
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np
from scipy.integrate import trapezoid
from scipy.interpolate import CubicSpline
from scipy.linalg import eigh, eigh_tridiagonal
from scipy.special import beta as beta_fn
from scipy.special import gammaln


class SpectrumError(RuntimeError):
    pass


def wkb_eigenvalue(q: int, k: int) -> float:
    # Bohr-Sommerfeld estimate; exact for q = 2
    n = q - 1
    I = beta_fn(1 / (2 * n), 1.5) / (2 * n)
    return ((k + 0.5) * np.pi / (2 * I)) ** (2 * n / (n + 1))


@dataclass(frozen=True)
class DiscretizationGrid:
    L: float
    N: int

    def __post_init__(self):
        if self.L <= 0:
            raise ValueError("L must be positive")
        if self.N < 9 or self.N % 2 == 0:
            raise ValueError(f"N must be odd and >= 9, got {self.N}")

    @property
    def h(self) -> float:
        return 2 * self.L / (self.N - 1)

    @property
    def nodes(self) -> np.ndarray:
        return np.linspace(-self.L, self.L, self.N)

    @classmethod
    def default(cls, q: int, K: int, h: float = 0.0025) -> "DiscretizationGrid":
        """Grid whose potential wall clears ``4 mu_K + 10``; N = 4m+1 so N/2 nests."""
        L = (4 * wkb_eigenvalue(q, K) + 10) ** (1 / (2 * (q - 1)))
        L = float(np.ceil(2 * L) / 2)
        m = int(np.ceil(2 * L / h / 4))
        return cls(L=L, N=4 * m + 1)

    def coarsened(self) -> "DiscretizationGrid":
        return DiscretizationGrid(self.L, (self.N - 1) // 2 + 1)

    def check_wall(self, q: int, mu_top: float, margin: float = 10.0) -> None:
        if self.L ** (2 * (q - 1)) <= mu_top + margin:
            raise ValueError(f"L^(2(q-1)) = {self.L ** (2 * (q - 1)):.4g} must exceed mu_K + {margin} = {mu_top + margin:.4g}")


@dataclass(frozen=True)
class Spectrum:
    q: int
    K: int
    grid: DiscretizationGrid
    mu: np.ndarray          # Richardson-extrapolated
    mu_h: np.ndarray        # raw eigenvalues on the fine grid (consistent with phi)
    phi: np.ndarray         # (K+1, N), trapezoid-normalized, zero at both ends
    parity: tuple
    residual: np.ndarray
    richardson_shift: np.ndarray
    backend: str = "fd"

    @property
    def x(self) -> np.ndarray:
        return self.grid.nodes

    def inner(self, f: np.ndarray, g: np.ndarray) -> complex:
        return trapezoid(f * np.conj(g), dx=self.grid.h)

    def project(self, f: np.ndarray) -> np.ndarray:
        """Mode coefficients ``<f, phi_k>``."""
        return trapezoid(self.phi * f[None, :], dx=self.grid.h, axis=1)

    def synthesize(self, coeffs: np.ndarray) -> np.ndarray:
        return np.asarray(coeffs) @ self.phi

    def values_at_zero(self, beta: int = 0) -> np.ndarray:
        """``phi_k^{(beta)}(0)`` for every retained mode, beta in {0, 1}."""
        c = self.grid.N // 2
        h = self.grid.h
        if beta == 0:
            return self.phi[:, c].copy()
        if beta == 1:
            p = self.phi
            return (p[:, c - 2] - 8 * p[:, c - 1] + 8 * p[:, c + 1] - p[:, c + 2]) / (12 * h)
        raise ValueError("beta must be 0 or 1")

    def interpolator(self, beta: int = 0) -> CubicSpline:
        s = CubicSpline(self.x, self.phi, axis=1)
        return s if beta == 0 else s.derivative(beta)


def _fd_solve(q: int, K: int, grid: DiscretizationGrid):
    x = grid.nodes
    h = grid.h
    xi = x[1:-1]
    diag = 2 / h**2 + xi ** (2 * (q - 1))
    off = -np.ones(len(xi) - 1) / h**2
    w, v = eigh_tridiagonal(diag, off, select="i", select_range=(0, K))
    phi = np.zeros((K + 1, grid.N))
    phi[:, 1:-1] = v.T / np.sqrt(h)
    resid = np.empty(K + 1)
    for k in range(K + 1):
        f = v[:, k]
        Qf = diag * f
        Qf[:-1] += off * f[1:]
        Qf[1:] += off * f[:-1]
        resid[k] = np.linalg.norm(Qf - w[k] * f) / w[k]
    return w, phi, resid


def _fix_sign(phi: np.ndarray, x: np.ndarray) -> None:
    pos = x > 0
    for row in phi:
        amp = np.abs(row)
        idx = np.flatnonzero(pos & (amp > 0.5 * amp.max()))[0]
        if row[idx] < 0:
            row *= -1


def _sinc_solve(q: int, K: int, grid: DiscretizationGrid):
    # Fourier (sinc) collocation: spectrally accurate, dense, for modest N
    x = grid.nodes
    h = grid.h
    d = np.subtract.outer(np.arange(grid.N), np.arange(grid.N))
    safe = np.where(d == 0, 1, d)
    T = np.where(d == 0, np.pi**2 / 3, 2 * (-1.0) ** d / safe**2) / h**2
    H = T + np.diag(x ** (2 * (q - 1)))
    w, v = eigh(H, subset_by_index=[0, K])
    resid = np.linalg.norm(H @ v - v * w, axis=0) / w
    return w, v.T / np.sqrt(h), resid


def solve_eigenpairs(q: int, K: int, grid: DiscretizationGrid | None = None,
                     tol: float = 1e-9, richardson: bool = True, backend: str = "fd") -> Spectrum:
    """Lowest ``K+1`` eigenpairs of ``Q``.

    ``backend="fd"``: tridiagonal second-order scheme, eigenvalues
    Richardson-extrapolated from N and (N-1)/2+1 nodes.  ``backend="sinc"``:
    dense Fourier collocation (no extrapolation needed; keep N below ~2000).
    """
    if q < 2:
        raise ValueError("q must be >= 2")
    if K < 0:
        raise ValueError("K must be >= 0")
    if backend not in ("fd", "sinc"):
        raise ValueError(f"unknown backend {backend!r}")
    grid = grid or DiscretizationGrid.default(q, K)
    if K + 1 > (grid.N - 2) // 8:
        raise ValueError("K must be much smaller than N")
    if backend == "fd":
        w, phi, resid = _fd_solve(q, K, grid)
    else:
        w, phi, resid = _sinc_solve(q, K, grid)
    grid.check_wall(q, float(w[-1]))
    bad = np.flatnonzero(~(resid < tol))
    if bad.size:
        raise SpectrumError(f"eigen-residual above {tol} for modes {bad.tolist()}")
    if richardson and backend == "fd":
        wc, _, _ = _fd_solve(q, K, grid.coarsened())
        mu = (4 * w - wc) / 3
    else:
        mu = w.copy()
    if not np.all(np.diff(mu) > 0) or mu[0] <= 0:
        raise SpectrumError("eigenvalues not positive and strictly increasing")
    _fix_sign(phi, grid.nodes)
    flipped = phi[:, ::-1]
    parity = tuple("even" if np.abs(p - f).max() < np.abs(p + f).max() else "odd" for p, f in zip(phi, flipped))
    return Spectrum(q=q, K=K, grid=grid, mu=mu, mu_h=w, phi=phi, parity=parity,
                    residual=resid, richardson_shift=mu - w, backend=backend)


def apply_Q_power(spectrum: Spectrum, nu, coeffs: np.ndarray) -> np.ndarray:
    """Functional calculus in the eigenbasis: multiply mode k by ``mu_k**nu``."""
    if Fraction(nu) < -1:
        raise ValueError("nu must be >= -1")
    c = np.asarray(coeffs)
    mu = spectrum.mu[: c.shape[0]]
    scale = mu ** float(nu)
    return c * scale.reshape((-1,) + (1,) * (c.ndim - 1))


def _d1(f: np.ndarray, h: float) -> np.ndarray:
    # sixth order: the top modes of steep potentials need it for the x d/dx identities
    d = np.zeros_like(f)
    d[..., 3:-3] = (-f[..., :-6] + 9 * f[..., 1:-5] - 45 * f[..., 2:-4]
                    + 45 * f[..., 4:-2] - 9 * f[..., 5:-1] + f[..., 6:]) / (60 * h)
    return d


def _d2(f: np.ndarray, h: float) -> np.ndarray:
    d = np.zeros_like(f)
    d[..., 2:-2] = (-f[..., :-4] + 16 * f[..., 1:-3] - 30 * f[..., 2:-2] + 16 * f[..., 3:-1] - f[..., 4:]) / (12 * h * h)
    return d


def spectral_derivative(f: np.ndarray, h: float, alpha: int, floor: float = 1e-13) -> np.ndarray:
    """FFT differentiation of a function that vanishes at both ends of its grid."""
    n = f.shape[-1] - 1
    F = np.fft.rfft(f[..., :-1], axis=-1)
    k = 2 * np.pi * np.fft.rfftfreq(n, h)
    F = np.where(np.abs(F) < floor * np.abs(F).max(), 0, F)
    out = np.fft.irfft(F * (1j * k) ** alpha, n, axis=-1)
    return np.concatenate([out, out[..., :1]], axis=-1)


def derivative(f: np.ndarray, h: float, alpha: int) -> np.ndarray:
    if alpha == 0:
        return np.array(f, copy=True)
    if alpha == 1:
        return _d1(f, h)
    if alpha == 2:
        return _d2(f, h)
    return spectral_derivative(f, h, alpha)


@dataclass(frozen=True)
class ModeMatrix:
    kind: str
    data: np.ndarray
    params: dict = field(default_factory=dict)


def coupling_matrix(spectrum: Spectrum, kind: str = "xdx", beta: int = 0, alpha: int = 0, nu=1) -> ModeMatrix:
    """``M[k, l] = <Op phi_l, phi_k>`` with ``Op`` one of
    ``"xdx"`` (x d/dx), ``"monomial"`` (x^beta d^alpha) or ``"Qpow"`` (Q^nu)."""
    x, h = spectrum.x, spectrum.grid.h
    if kind == "Qpow":
        return ModeMatrix("Qpow", np.diag(apply_Q_power(spectrum, nu, np.ones(spectrum.K + 1))).astype(complex), {"nu": str(nu)})
    if kind == "xdx":
        op = x * _d1(spectrum.phi, h)
        params = {}
    elif kind == "monomial":
        op = x**beta * derivative(spectrum.phi, h, alpha)
        params = {"beta": beta, "alpha": alpha}
    else:
        raise ValueError(f"unknown coupling kind {kind!r}")
    M = trapezoid(spectrum.phi[:, None, :] * op[None, :, :], dx=h, axis=2)
    return ModeMatrix(kind, M.astype(complex), params)


def anisotropic_norm(u: np.ndarray, x: np.ndarray, alpha: int, beta: int) -> float:
    """L2 norm of ``x^beta D^alpha u`` by trapezoid quadrature."""
    if alpha > 12:
        raise ValueError("derivative order beyond the stable budget (12)")
    h = x[1] - x[0]
    f = x**beta * derivative(np.asarray(u), h, alpha)
    return float(np.sqrt(trapezoid(np.abs(f) ** 2, dx=h)))


def k_norm(u: np.ndarray, x: np.ndarray, k: float, q: int) -> float:
    """max of ``||x^beta D^alpha u||`` over ``beta/(q-1) + alpha <= k``."""
    best = 0.0
    for alpha in range(int(np.floor(k)) + 1):
        bmax = int(np.floor((k - alpha) * (q - 1) + 1e-12))
        for beta in range(bmax + 1):
            best = max(best, anisotropic_norm(u, x, alpha, beta))
    return best


def bracket_weight(signs: str | tuple, q: int) -> Fraction:
    """``<I> = |I_+| + |I_-|/(q-1)`` for a multi-index given as a string of + and -."""
    plus = sum(1 for s in signs if s in ("+", 1))
    minus = sum(1 for s in signs if s in ("-", -1))
    return plus + Fraction(minus, q - 1)


@dataclass(frozen=True)
class GrowthFit:
    order: float
    alphas: np.ndarray
    log_sup: np.ndarray
    coeffs: np.ndarray
    noise_limited: bool


def _sup_derivatives(phi: np.ndarray, h: float, alphas, floor: float) -> np.ndarray:
    n = phi.size
    F = np.fft.rfft(phi)
    F = np.where(np.abs(F) >= floor * np.abs(F).max(), F, 0)
    k = 2 * np.pi * np.fft.rfftfreq(n, h)
    return np.array([np.abs(np.fft.irfft(F * (1j * k) ** al, n)).max() for al in alphas])


def derivative_growth_fit(spectrum: Spectrum, alpha_max: int = 30, h: float = 0.1, floor: float = 1e-15) -> GrowthFit:
    """Gevrey order of ``phi0`` from ``log sup|phi0^(alpha)|``, alpha = 2..alpha_max.

    ``phi0`` is recomputed by sinc collocation (on the spectrum's interval,
    widened if needed until ``phi0`` is below 1e-20 at the ends) so that its Fourier coefficients are clean down to round-off; derivatives are
    then exact on the band-limited interpolant.  An order is kept only while
    raising the spectral floor tenfold moves the sup by less than 1%.

    The regression is ``s log(alpha!) + c1 alpha + c2 log(alpha) + c0``; the
    linear and logarithmic terms absorb the geometric constant and the
    algebraic prefactor, which otherwise bias ``s`` at moderate alpha.
    """
    if alpha_max < 4:
        raise ValueError("insufficient range: alpha_max must be >= 4")
    # phi0 ~ exp(-|x|^q / q): 50 q gives a margin past double precision
    L = max(spectrum.grid.L, float(np.ceil((50 * spectrum.q) ** (1 / spectrum.q))))
    if spectrum.backend == "sinc" and L == spectrum.grid.L:
        phi0, hh = spectrum.phi[0], spectrum.grid.h
    else:
        N = 2 * int(np.ceil(L / h)) + 1
        g = DiscretizationGrid(L, N)
        _, phi, _ = _sinc_solve(spectrum.q, 0, g)
        _fix_sign(phi, g.nodes)
        phi0, hh = phi[0], g.h
    alphas = np.arange(2, alpha_max + 1)
    s1 = _sup_derivatives(phi0, hh, alphas, floor)
    s2 = _sup_derivatives(phi0, hh, alphas, 10 * floor)
    ok = np.abs(s2 / s1 - 1) < 1e-2
    stop = alphas.size if ok.all() else int(np.argmin(ok))
    noisy = stop < alphas.size
    if noisy:
        warnings.warn(f"derivative noise floor reached at alpha = {alphas[stop]}; fit truncated", RuntimeWarning)
    A = alphas[:stop].astype(float)
    if A.size < 5:
        raise ValueError("insufficient range: fewer than 5 resolvable derivative orders")
    y = np.log(s1[:stop])
    M = np.column_stack([gammaln(A + 1), A, np.log(A), np.ones_like(A)])
    c = np.linalg.lstsq(M, y, rcond=None)[0]
    return GrowthFit(order=float(c[0]), alphas=A, log_sup=y, coeffs=c, noise_limited=noisy)


def write_spectrum_csv(spectrum: Spectrum, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["k", "mu", "mu_raw", "residual", "parity"])
        for k in range(spectrum.K + 1):
            w.writerow([k, repr(float(spectrum.mu[k])), repr(float(spectrum.mu_h[k])), repr(float(spectrum.residual[k])), spectrum.parity[k]])


def dump_eigenfunctions(spectrum: Spectrum, stem: str | Path) -> None:
    """Raw little-endian float64 array ``(K+1, N)`` plus a JSON header."""
    stem = Path(stem)
    spectrum.phi.astype("<f8").tofile(stem.with_suffix(".bin"))
    header = {"q": spectrum.q, "K": spectrum.K, "L": spectrum.grid.L, "N": spectrum.grid.N, "h": spectrum.grid.h,
              "dtype": "<f8", "shape": [spectrum.K + 1, spectrum.grid.N], "order": "C",
              "sign_convention": "phi_k > 0 at the first x > 0 where |phi_k| exceeds half its max"}
    stem.with_suffix(".json").write_text(json.dumps(header, indent=2))
