"""Half-line inverse of ``d^{2a}/drho^{2a} + (-1)^a s0^{2a} mu_k``.

Partial fractions split the inverse into first-order kernels
``I(f)' = mu I(f) + f``, each integrated from the past (R to rho) or from the
future (rho to infinity) according to where ``Re mu`` sits relative to the
dominant decay rate.

Fields are stored *scaled*: a ``RhoGridFunction`` with ``shift = s`` holds
``w = e^{-s rho} f``.  With ``s = mu0_tilde + i Im(mu*)`` the resonant kernel
becomes a plain integral and nothing under- or overflows on long grids.
Quadrature is product-exponential: exact when ``w`` is piecewise linear.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from math import comb

import numpy as np
from scipy.signal import lfilter

from .model_core import classification_margin, dominant_decay


class TailError(RuntimeError):
    pass


@dataclass(frozen=True)
class RootSystem:
    k: int
    mu_k: float
    roots: np.ndarray
    A: np.ndarray
    direction: np.ndarray

    def to_json(self) -> dict:
        return {"k": self.k, "mu_k": float(self.mu_k),
                "roots": [[float(z.real), float(z.imag)] for z in self.roots],
                "A": [[float(z.real), float(z.imag)] for z in self.A],
                "direction": [int(d) for d in self.direction]}


def compute_roots(mu_k: float, a: int, s0) -> np.ndarray:
    """The 2a-th roots of ``(-1)^{a+1} s0^{2a} mu_k``, sorted by (Re, Im)."""
    if not mu_k > 0:
        raise ValueError("mu_k must be positive")
    n = 2 * a
    val = (-1) ** (a + 1) * float(s0) ** n * mu_k
    rad = abs(val) ** (1 / n)
    ang0 = 0.0 if val > 0 else np.pi
    z = rad * np.exp(1j * (ang0 + 2 * np.pi * np.arange(n)) / n)
    # snap round-off so conjugate pairs and real roots are exact
    re = np.where(np.abs(z.real) < 1e-14 * rad, 0.0, z.real)
    im = np.where(np.abs(z.imag) < 1e-14 * rad, 0.0, z.imag)
    z = re + 1j * im
    return z[np.lexsort((z.imag, z.real))]


def compute_partial_fractions(roots: np.ndarray) -> np.ndarray:
    roots = np.asarray(roots, complex)
    diff = roots[:, None] - roots[None, :]
    np.fill_diagonal(diff, 1.0)
    if np.any(np.abs(diff) < 1e-12 * max(1.0, np.abs(roots).max())):
        raise ValueError("coincident roots: upstream eigenvalue degeneracy")
    return 1.0 / np.prod(diff, axis=1)


def classify_roots(roots: np.ndarray, mu0_tilde: float, eps_mu: float, k: int) -> np.ndarray:
    """+1: integrate from the future; -1: from R.  Ground-mode roots on
    ``Re = mu0_tilde`` always go to the future."""
    re = np.real(roots)
    gap = re - mu0_tilde
    if k > 0 and np.any(np.abs(gap) < 1e-10):
        raise ValueError(f"mode {k} has a root on Re = mu0_tilde")
    flags = np.where(gap + eps_mu > 0, 1, -1)
    if k == 0:
        flags = np.where(np.abs(gap) < 1e-10, 1, flags)
    return flags.astype(int)


def root_systems(mu: np.ndarray, a: int, s0) -> tuple[list[RootSystem], float, float, complex]:
    """Root systems for every mode plus ``(mu0_tilde, eps_mu, mu_star)``."""
    raw = [compute_roots(m, a, s0) for m in mu]
    mt = dominant_decay(raw[0])
    eps = classification_margin(raw, mt)
    cand = raw[0][np.abs(raw[0].real - mt) < 1e-10]
    mu_star = complex(cand[np.argmax(cand.imag)])
    out = [RootSystem(k=k, mu_k=float(m), roots=z, A=compute_partial_fractions(z),
                      direction=classify_roots(z, mt, eps, k))
           for k, (m, z) in enumerate(zip(mu, raw))]
    return out, mt, eps, mu_star


@dataclass(frozen=True)
class TailModel:
    """``w(rho) ~ sum_p c_p rho^{-p}`` beyond the grid end."""
    powers: np.ndarray
    coeffs: np.ndarray
    misfit: float

    def derivatives(self, rho: float, n: int) -> np.ndarray:
        out = np.empty(n, complex)
        for m in range(n):
            fall = np.array([np.prod(-p - np.arange(m)) for p in self.powers], float)
            out[m] = np.sum(self.coeffs * fall * rho ** (-self.powers - m))
        return out


def fit_tail(rho: np.ndarray, w: np.ndarray, powers=range(0, 9), start: float = 0.6) -> TailModel:
    """Least-squares inverse-power model of the last 40% of the grid."""
    n0 = int(len(rho) * start)
    s, y = rho[n0:-3], w[n0:-3]
    p = np.asarray(list(powers), float)
    V = s[:, None] ** (-p[None, :])
    scale = np.abs(V).max(axis=0)
    c = np.linalg.lstsq(V / scale, y, rcond=None)[0] / scale
    ref = np.abs(y).max()
    misfit = float(np.abs(V @ c - y).max() / ref) if ref > 0 else 0.0
    return TailModel(p, c, misfit)


@dataclass(frozen=True)
class RhoGridFunction:
    rho: np.ndarray
    values: np.ndarray
    shift: complex = 0.0
    decay_tag: TailModel | None = None

    def __post_init__(self):
        if self.rho.ndim != 1 or np.any(np.diff(self.rho) <= 0):
            raise ValueError("rho grid must be strictly increasing")
        if self.values.shape[-1] != self.rho.size:
            raise ValueError("values do not match the grid")

    @property
    def h(self) -> float:
        return float(self.rho[1] - self.rho[0])

    def unscaled(self) -> np.ndarray:
        return np.exp(self.shift * self.rho) * self.values

    def with_tail(self, powers=range(0, 9)) -> "RhoGridFunction":
        return replace(self, decay_tag=fit_tail(self.rho, self.values, powers))


def _phi12(z: complex) -> tuple[complex, complex]:
    if abs(z) < 1e-3:
        return (1 + z / 2 + z * z / 6 + z**3 / 24 + z**4 / 120,
                0.5 + z / 6 + z * z / 24 + z**3 / 120 + z**4 / 720)
    e = np.exp(z)
    return (e - 1) / z, (e - 1 - z) / (z * z)


def _tail_integral(tag: TailModel | None, end: float, lam: complex, tol_resonant=1e-9) -> complex:
    """``-int_end^inf e^{lam(end - s)} w(s) ds`` from the tail model (sign left to the caller)."""
    if tag is None:
        return 0.0
    if abs(lam) < tol_resonant:
        p = tag.powers
        if np.any((p <= 1) & (np.abs(tag.coeffs) > 0)):
            raise TailError("resonant future integral needs a tail decaying faster than 1/rho")
        return complex(np.sum(tag.coeffs * end ** (1 - p) / (p - 1)))
    if lam.real < -1e-12:
        raise TailError("future integral over a growing kernel")
    d = tag.derivatives(end, 12)
    return complex(np.sum(d / lam ** (np.arange(12) + 1)))


def apply_Ikj(root: complex, flag: int, f: RhoGridFunction, R: float) -> RhoGridFunction:
    """One exponential kernel applied to ``f`` (with ``H(sigma - R)``).

    flag +1: ``I = -int_rho^inf e^{mu(rho-sigma)} f dsigma``;
    flag -1: ``I = +int_R^rho e^{mu(rho-sigma)} f dsigma``.
    Result carries the same shift as ``f``.
    """
    rho, w = f.rho, np.asarray(f.values, complex)
    h = f.h
    lam = complex(root) - complex(f.shift)
    iR = int(np.searchsorted(rho, R - 1e-9 * h))
    n = rho.size
    out = np.zeros(n, complex)
    if flag < 0:
        if lam.real > 1e-12:
            raise ValueError("past integral over a growing kernel")
        p1, p2 = _phi12(lam * h)
        src = h * ((p1 - p2) * w[:-1] + p2 * w[1:])
        src[:iR] = 0
        out[1:] = lfilter([1.0], [1.0, -np.exp(lam * h)], src)
        return RhoGridFunction(rho, out, f.shift)
    if f.decay_tag is None and abs(lam.real) < 1e-9 and np.abs(w[-5:]).max() > 1e-300:
        raise TailError("resonant future integral requires a decay_tag")
    ww = w.copy()
    ww[:iR] = 0
    p1, p2 = _phi12(-lam * h)
    src = h * (p2 * ww[:-1] + (p1 - p2) * ww[1:])
    T = _tail_integral(f.decay_tag, rho[-1], lam) if rho[-1] >= R else 0.0
    rs = src[::-1].copy()
    rs[0] += np.exp(-lam * h) * T
    out[:-1] = lfilter([1.0], [1.0, -np.exp(-lam * h)], rs)[::-1]
    out[-1] = T
    return RhoGridFunction(rho, -out, f.shift)


def apply_Ek(rs: RootSystem, f: RhoGridFunction, R: float) -> RhoGridFunction:
    """Solve ``(d^{2a} + (-1)^a s0^{2a} mu_k) u = f`` on ``rho > R`` as ``sum_j A_j I_j(f)``."""
    out = np.zeros(f.rho.size, complex)
    for mu, A, flag in zip(rs.roots, rs.A, rs.direction):
        out += A * apply_Ikj(mu, int(flag), f, R).values
    return RhoGridFunction(f.rho, out, f.shift)


def fd_weights(m: int, offsets: np.ndarray) -> np.ndarray:
    """Weights of the ``m``-th derivative at 0 from samples at ``offsets`` (Fornberg's recursion)."""
    z = np.asarray(offsets, float)
    n = z.size
    if m >= n:
        raise ValueError("need more offsets than the derivative order")
    c = np.zeros((n, m + 1))
    c[0, 0] = 1.0
    c1, c4 = 1.0, z[0]
    for i in range(1, n):
        mn = min(i, m)
        c2, c5, c4 = 1.0, c4, z[i]
        for j in range(i):
            c3 = z[i] - z[j]
            c2 *= c3
            if j == i - 1:
                for k in range(mn, 0, -1):
                    c[i, k] = c1 * (k * c[i - 1, k - 1] - c5 * c[i - 1, k]) / c2
                c[i, 0] = -c1 * c5 * c[i - 1, 0] / c2
            for k in range(mn, 0, -1):
                c[j, k] = (c4 * c[j, k] - k * c[j, k - 1]) / c3
            c[j, 0] = c4 * c[j, 0] / c3
        c1 = c2
    return c[:, m]


def fd_derivative(f: np.ndarray, h: float, m: int, extra: int = 4) -> np.ndarray:
    """``m``-th derivative along the last axis; centered in the interior, one-sided at edges."""
    if m == 0:
        return np.array(f, copy=True)
    npts = m + extra + ((m + extra + 1) % 2)
    p = npts // 2
    n = f.shape[-1]
    if n < npts:
        raise ValueError("grid too short for the derivative stencil")
    out = np.zeros(f.shape, complex if np.iscomplexobj(f) else float)
    wc = fd_weights(m, np.arange(npts) - p) / h**m
    for i, wi in enumerate(wc):
        out[..., p:n - p] += wi * f[..., i:n - npts + 1 + i]
    for i in list(range(p)) + list(range(n - p, n)):
        st = min(max(i - p, 0), n - npts)
        wl = fd_weights(m, np.arange(npts) - (i - st)) / h**m
        out[..., i] = f[..., st:st + npts] @ wl
    return out


def shifted_derivative(w: np.ndarray, h: float, n: int, shift: complex, extra: int = 4) -> np.ndarray:
    """``e^{-s rho} d^n (e^{s rho} w) = (d + s)^n w``."""
    return sum(comb(n, m) * shift ** (n - m) * fd_derivative(w, h, m, extra) for m in range(n + 1))


def ode_residual(rs: RootSystem, a: int, s0, u: RhoGridFunction, f: RhoGridFunction,
                 stride: int = 1, extra: int = 4) -> tuple[np.ndarray, np.ndarray]:
    """``(d^{2a} + (-1)^a s0^{2a} mu_k) u - f`` in the scaled frame, on every
    ``stride``-th node (a coarser stencil keeps round-off in ``h^{-2a}`` at bay)."""
    c = (-1) ** a * float(s0) ** (2 * a) * rs.mu_k
    uw, fw = u.values[::stride], f.values[::stride]
    res = shifted_derivative(uw, u.h * stride, 2 * a, u.shift, extra) + c * uw - fw
    return u.rho[::stride], res


def compact_rhs(rho: np.ndarray, center: float, width: float, freq: float = 0.0) -> np.ndarray:
    """Smooth bump ``exp(-1/(1-t^2)) cos(freq t)`` supported on ``|rho - center| < width``."""
    t = (rho - center) / width
    out = np.zeros(rho.size)
    m = np.abs(t) < 1
    out[m] = np.exp(-1.0 / (1.0 - t[m] ** 2)) * np.cos(freq * t[m])
    return out


def ek_relative_residual(rs: RootSystem, a: int, s0, f: np.ndarray, rho: np.ndarray, R: float,
                         shift: complex = 0.0, spacing: float = 0.02, extra: int = 8, margin: int = 2) -> float:
    """Relative ``E_k`` residual ``max|(d^{2a} + c) E_k f - f| / max|f|`` on ``rho >= R``.

    Measured in the frame scaled by ``e^{-shift rho}`` (pass ``mu0_tilde`` to
    keep the resonant homogeneous part O(1)).  The check stencil runs on a
    subgrid of step ``spacing``: a fine stencil drowns in round-off
    (``eps h^{-2a}``), a coarse one in truncation.
    """
    stride = max(1, int(round(spacing / (rho[1] - rho[0]))))
    w = np.exp(-shift * rho) * f
    fg = RhoGridFunction(rho, w.astype(complex), shift)
    u = apply_Ek(rs, fg, R)
    r_sub, res = ode_residual(rs, a, s0, u, fg, stride=stride, extra=extra)
    p = (2 * a + extra + 1) // 2 + margin
    keep = np.zeros(r_sub.size, bool)
    keep[p:r_sub.size - p] = True
    keep &= r_sub >= R
    return float(np.abs(res[keep]).max() / np.abs(w).max())
