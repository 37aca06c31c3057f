"""Transport recursion ``P0 u_j = -sum_k rho^{-k} P_k u_{j-k}``, split into
the ground-state row (``pi``) and the excited rows (``1 - pi``).

All fields live in the eigenbasis of the oscillator and in the scaled frame
``w = e^{-mu* rho} u``; ``mu*`` is the dominant ground-mode root.
"""
from __future__ import annotations

import csv
import json
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.integrate import trapezoid

from .model_core import GammaTable, ModelParams, build_transport_symbols
from .ode_inverse import RhoGridFunction, apply_Ek, shifted_derivative
from .spectrum import ModeMatrix, Spectrum, coupling_matrix


class TransportError(RuntimeError):
    pass


@dataclass
class EigenCoeffField:
    j: int
    rho: np.ndarray
    coeffs: np.ndarray      # (K+1, n_rho), scaled by exp(-shift * rho)
    shift: complex
    valid_from: float
    residual: float = 0.0

    @property
    def K(self) -> int:
        return self.coeffs.shape[0] - 1

    def pi(self) -> "EigenCoeffField":
        c = np.zeros_like(self.coeffs)
        c[0] = self.coeffs[0]
        return EigenCoeffField(self.j, self.rho, c, self.shift, self.valid_from)

    def one_minus_pi(self) -> "EigenCoeffField":
        c = self.coeffs.copy()
        c[0] = 0
        return EigenCoeffField(self.j, self.rho, c, self.shift, self.valid_from)

    def window(self, end_margin: int = 0) -> slice:
        i0 = int(np.searchsorted(self.rho, self.valid_from - 1e-9))
        return slice(i0, self.rho.size - end_margin)

    def at(self, rho: float) -> np.ndarray:
        """Unscaled mode coefficients at ``rho`` (must lie in the validity range)."""
        if rho < self.valid_from - 1e-12:
            raise ValueError(f"u_{self.j} is only asserted for rho >= {self.valid_from}")
        i = int(np.clip(np.searchsorted(self.rho, rho), 1, self.rho.size - 1))
        t = (rho - self.rho[i - 1]) / (self.rho[i] - self.rho[i - 1])
        w = (1 - t) * self.coeffs[:, i - 1] + t * self.coeffs[:, i]
        return np.exp(self.shift * rho) * w

    def scaled_norm(self) -> np.ndarray:
        """``||u_j(., rho)||_{L2_x} e^{|mu0_tilde| rho}`` (modes are orthonormal)."""
        return np.sqrt(np.sum(np.abs(self.coeffs) ** 2, axis=0))

    def tail_health(self) -> float:
        sl = self.window(10)
        top = np.abs(self.coeffs[:, sl]).max()
        return float(np.abs(self.coeffs[-1, sl]).max() / top) if top > 0 else 0.0

    def bandwidth(self, rel: float = 1e-6) -> int:
        sl = self.window(10)
        m = np.abs(self.coeffs[:, sl]).max(axis=1)
        sig = np.flatnonzero(m > rel * m.max()) if m.max() > 0 else np.array([0])
        return int(sig.max())


@dataclass
class TransportContext:
    spectrum: Spectrum
    params: ModelParams
    systems: list
    mu_star: complex
    rho: np.ndarray
    symbols: list
    X: ModeMatrix
    PM: list
    threads: int = 1

    @property
    def a(self) -> int:
        return self.params.a

    @property
    def h(self) -> float:
        return float(self.rho[1] - self.rho[0])

    @property
    def mu(self) -> np.ndarray:
        return self.spectrum.mu

    @property
    def sgn(self) -> float:
        return (-1) ** self.a * self.params.s0f ** (2 * self.a)

    def D(self, W: np.ndarray, n: int) -> np.ndarray:
        """Scaled frame ``d^n``: ``(d + mu*)^n`` on stored coefficients."""
        return shifted_derivative(W, self.h, n, self.mu_star)

    def cutoff(self, j: int) -> float:
        return self.params.R0 * (j + 1)


def rho_grid(R0: float, rho_max: float, h_rho: float) -> np.ndarray:
    n = int(round((rho_max - R0) / h_rho))
    return R0 + h_rho * np.arange(n + 1)


def build_context(spectrum: Spectrum, params: ModelParams, gamma: GammaTable, systems: list,
                  mu_star: complex, rho: np.ndarray, threads: int = 1) -> TransportContext:
    """Numeric transport symbols as matrices in the mode basis.

    ``x d/dx`` preserves parity, so cross-parity entries are set to exactly zero.
    """
    X = coupling_matrix(spectrum, "xdx")
    par = np.array([p == "even" for p in spectrum.parity])
    Xd = np.where(par[:, None] == par[None, :], X.data, 0)
    X = ModeMatrix("xdx", Xd)
    symbols = build_transport_symbols(params.q, params.a, gamma, params.r)
    K = spectrum.K
    PM = []
    for sym in symbols:
        M = np.zeros((K + 1, K + 1), complex)
        P = np.eye(K + 1, dtype=complex)
        for c in sym.numeric():
            M += c * P
            P = P @ Xd
        PM.append(M)
    return TransportContext(spectrum, params, systems, mu_star, rho, symbols, X, PM, threads)


def init_u0(ctx: TransportContext) -> EigenCoeffField:
    """``u0 = phi0 e^{mu* rho}``: constant 1 in the scaled frame."""
    c = np.zeros((ctx.spectrum.K + 1, ctx.rho.size), complex)
    c[0] = 1.0
    return EigenCoeffField(0, ctx.rho, c, ctx.mu_star, valid_from=3 * ctx.cutoff(0))


def apply_P0(ctx: TransportContext, W: np.ndarray) -> np.ndarray:
    """``Q + s0^{-2a} D_rho^{2a}`` in the scaled mode frame."""
    n = 2 * ctx.a
    return ctx.mu[:, None] * W + (-1) ** ctx.a * ctx.params.s0f ** (-n) * ctx.D(W, n)


def apply_Pk(ctx: TransportContext, m: int, W: np.ndarray) -> np.ndarray:
    """``P~_m(x d/dx) d_rho^{2a-m}`` applied to scaled coefficients ``W``."""
    if m == 0:
        return apply_P0(ctx, W)
    return ctx.PM[m] @ ctx.D(W, 2 * ctx.a - m)


def _rhs_offdiag(ctx: TransportContext, j: int, history: list) -> np.ndarray:
    rhs = np.zeros((ctx.spectrum.K + 1, ctx.rho.size), complex)
    for m in range(1, min(j, 2 * ctx.a) + 1):
        rhs -= ctx.rho ** (-m) * apply_Pk(ctx, m, history[j - m].coeffs)
    rhs[0] = 0
    return rhs


def _rhs_diag(ctx: TransportContext, j: int, off: np.ndarray, history: list) -> np.ndarray:
    # the pi P1 pi u_{j-1} source is absent: its symbol pairs to zero on phi0
    r = -ctx.rho ** (-1) * apply_Pk(ctx, 1, off)[0]
    for m in range(1, min(j, 2 * ctx.a - 1) + 1):
        r -= ctx.rho ** (-(m + 1)) * apply_Pk(ctx, m + 1, history[j - m].coeffs)[0]
    return r


def _solve_row(ctx: TransportContext, k: int, src: np.ndarray, R: float, powers) -> np.ndarray:
    f = RhoGridFunction(ctx.rho, ctx.sgn * src, ctx.mu_star)
    if np.any(src[-20:] != 0):
        f = f.with_tail(powers)
    return apply_Ek(ctx.systems[k], f, R).values


def solve_offdiagonal(ctx: TransportContext, j: int, history: list) -> np.ndarray:
    """Rows 1..K of ``u_j``; row 0 left at zero."""
    out = np.zeros((ctx.spectrum.K + 1, ctx.rho.size), complex)
    if j == 0:
        return out
    rhs = _rhs_offdiag(ctx, j, history)
    R = ctx.cutoff(j)
    ks = range(1, ctx.spectrum.K + 1)
    if ctx.threads > 1:
        with ThreadPoolExecutor(max_workers=ctx.threads) as ex:
            rows = list(ex.map(lambda k: _solve_row(ctx, k, rhs[k], R, range(0, 7)), ks))
    else:
        rows = [_solve_row(ctx, k, rhs[k], R, range(0, 7)) for k in ks]
    for k, row in zip(ks, rows):
        out[k] = row
    return out


def solve_diagonal(ctx: TransportContext, j: int, off: np.ndarray, history: list) -> np.ndarray:
    """Row 0 of ``u_j``; the resonant kernels integrate from infinity."""
    src = _rhs_diag(ctx, j, off, history)
    return _solve_row(ctx, 0, src, ctx.cutoff(j), range(2, 9))


def transport_residual(ctx: TransportContext, field_: EigenCoeffField, rhs: np.ndarray, margin: int = 10) -> tuple[float, float]:
    """Relative residuals of the excited rows and the ground row on the validity window."""
    res = apply_P0(ctx, field_.coeffs) - rhs
    sl = field_.window(margin)
    scale = np.abs(rhs[:, sl]).max()
    if scale == 0:
        return 0.0, 0.0
    r1 = float(np.abs(res[1:, sl]).max() / np.abs(rhs[1:, sl]).max()) if np.abs(rhs[1:, sl]).max() > 0 else 0.0
    r2 = float(np.abs(res[0, sl]).max() / np.abs(rhs[0, sl]).max()) if np.abs(rhs[0, sl]).max() > 0 else 0.0
    return r1, r2


def solve_uj(ctx: TransportContext, j: int, history: list, tol: float = 1e-4) -> tuple[EigenCoeffField, dict]:
    if j < 1:
        raise ValueError("j must be >= 1")
    W = solve_offdiagonal(ctx, j, history)
    W[0] = solve_diagonal(ctx, j, W, history)
    rhs = _rhs_offdiag(ctx, j, history)
    rhs[0] = _rhs_diag(ctx, j, W, history)
    u = EigenCoeffField(j, ctx.rho, W, ctx.mu_star, valid_from=3 * ctx.cutoff(j))
    r1, r2 = transport_residual(ctx, u, rhs)
    u.residual = max(r1, r2)
    info = {"j": j, "residual_offdiag": r1, "residual_diag": r2,
            "tail_health": u.tail_health(), "bandwidth": u.bandwidth()}
    if not u.residual < tol:
        raise TransportError(f"transport residual {u.residual:.3e} at j={j} exceeds {tol:.1e}; "
                             f"raise R0, refine h_rho or enlarge rho_max")
    if info["bandwidth"] > 0.8 * ctx.spectrum.K:
        warnings.warn(f"u_{j} uses modes up to {info['bandwidth']} of K={ctx.spectrum.K}", RuntimeWarning)
    return u, info


def resonance_defect(ctx: TransportContext) -> float:
    """``|<P1 u0, phi0>| / ||P1 u0||``: zero when r is chosen correctly."""
    u0 = init_u0(ctx)
    P1u0 = apply_Pk(ctx, 1, u0.coeffs)
    sl = u0.window(10)
    return float(np.abs(P1u0[0, sl]).max() / np.abs(P1u0[:, sl]).max())


def run_transport(ctx: TransportContext, J: int, tol: float = 1e-4) -> tuple[list, list]:
    fields = [init_u0(ctx)]
    infos = [{"j": 0, "residual_offdiag": 0.0, "residual_diag": 0.0, "tail_health": 0.0, "bandwidth": 0}]
    for j in range(1, J + 1):
        u, info = solve_uj(ctx, j, fields, tol)
        fields.append(u)
        infos.append(info)
    return fields, infos


def total_residual(ctx: TransportContext, fields: list, J: int, lo: float) -> float:
    """``sum_{m<=2a} rho^{-m} P_m (u_0 + ... + u_J)`` relative to the leading source ``rho^{-1} P1 u0``."""
    S = sum(f.coeffs for f in fields[: J + 1])
    tot = sum(ctx.rho ** (-m) * apply_Pk(ctx, m, S) for m in range(2 * ctx.a + 1))
    ref = ctx.rho ** (-1) * apply_Pk(ctx, 1, fields[0].coeffs)
    sl = slice(int(np.searchsorted(ctx.rho, lo)), ctx.rho.size - 10)
    return float(np.abs(tot[:, sl]).max() / np.abs(ref[:, sl]).max())


@dataclass(frozen=True)
class DecayReport:
    j: int
    measured_exponent: float
    target_exponent: float
    window: tuple

    def to_json(self) -> dict:
        return {"j": self.j, "measured_exponent": self.measured_exponent,
                "target_exponent": self.target_exponent, "window": list(self.window)}


def measure_decay(u: EigenCoeffField, params: ModelParams, end_margin: int = 20) -> DecayReport:
    """Slope of ``log(||u_j|| e^{|mu0_tilde| rho})`` against ``log rho``."""
    sl = u.window(end_margin)
    rho = u.rho[sl]
    if rho.size < 10:
        raise ValueError("decay window has fewer than 10 nodes")
    y = np.log(u.scaled_norm()[sl])
    slope = float(np.polyfit(np.log(rho), y, 1)[0])
    return DecayReport(u.j, slope, -(u.j - params.delta) * params.kappa, (float(rho[0]), float(rho[-1])))


def weighted_norm(u: EigenCoeffField, params: ModelParams) -> float:
    """``||w_j u_j||_{0, A(j)}`` with ``w_j = e^{|mu0_tilde| rho} rho^{(j - delta) kappa}``, truncated at the grid end."""
    i0 = int(np.searchsorted(u.rho, params.R0 * (u.j + 1) - 1e-9))
    rho = u.rho[i0:]
    g = (rho ** ((u.j - params.delta) * params.kappa) * u.scaled_norm()[i0:]) ** 2
    return float(np.sqrt(trapezoid(g, rho)))


def write_field_csv(u: EigenCoeffField, info: dict, path: str | Path, stride: int = 10) -> None:
    nrm = u.scaled_norm() * np.abs(np.exp(u.shift * u.rho))
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["rho", "norm_u", "abs_c0", "valid", "residual_offdiag", "residual_diag"])
        for i in range(0, u.rho.size, stride):
            w.writerow([repr(float(u.rho[i])), repr(float(nrm[i])),
                        repr(float(abs(np.exp(u.shift * u.rho[i]) * u.coeffs[0, i]))),
                        int(u.rho[i] >= u.valid_from), repr(info["residual_offdiag"]), repr(info["residual_diag"])])


def write_decay_json(reports: list, path: str | Path) -> None:
    Path(path).write_text(json.dumps([r.to_json() for r in reports], indent=2))
