"""Exact combinatorial ingredients of the transport construction.

Everything here is rational arithmetic in ``s0`` and ``i`` (via sympy);
floats appear only when a caller asks for them.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field
from fractions import Fraction
from math import comb
from typing import Iterable, Sequence

import numpy as np
import sympy as sp

I = sp.I


def compute_s0(q: int, a: int) -> Fraction:
    """Optimal Gevrey index, ``1/s0 = 1 - (q-1)/(a q)``."""
    if int(q) != q or q < 2:
        raise ValueError(f"q must be an integer >= 2, got {q!r}")
    if int(a) != a or a < 1:
        raise ValueError(f"a must be an integer >= 1, got {a!r}")
    return 1 / (1 - Fraction(q - 1, a * q))


def _rat(x) -> sp.Expr:
    if isinstance(x, Fraction):
        return sp.Rational(x.numerator, x.denominator)
    return sp.sympify(x)


@dataclass(frozen=True)
class GammaTable:
    a: int
    s0: Fraction
    entries: dict  # (m, h) -> sympy number

    def __getitem__(self, key: tuple[int, int]) -> sp.Expr:
        m, h = key
        return self.entries.get((m, h), sp.Integer(0))

    def row(self, m: int) -> list[sp.Expr]:
        return [self[m, h] for h in range(m + 1)]

    def as_complex(self, m: int) -> np.ndarray:
        return np.array([complex(c) for c in self.row(m)])

    def to_json(self) -> dict:
        return {f"{m},{h}": str(v) for (m, h), v in sorted(self.entries.items())}


def compute_gamma_table(a: int, s0: Fraction) -> GammaTable:
    """Collect ``L^m f = sum_h gamma[m,h] rho^{-(m s0 - h)} f^{(h)}``.

    ``L = (i s0)^{-1} d/drho ∘ rho^{1-s0}``.  Differentiating
    ``c rho^{-(m s0 - h) + 1 - s0} f^{(h)}`` gives a factor ``(h - m s0 + 1 - s0)``
    on ``f^{(h)}`` and shifts ``f^{(h)}`` to ``f^{(h+1)}``.
    """
    if a < 1:
        raise ValueError("a must be >= 1")
    s = _rat(s0)
    if not s > 1:
        raise ValueError("s0 must exceed 1")
    pref = 1 / (I * s)
    entries = {(0, 0): sp.Integer(1)}
    prev = {0: sp.Integer(1)}
    for m in range(1, 2 * a + 1):
        cur = {}
        for h in range(m + 1):
            c = prev.get(h, 0) * (h - (m - 1) * s + 1 - s) + prev.get(h - 1, 0)
            cur[h] = sp.nsimplify(sp.expand(pref * c))
            entries[(m, h)] = cur[h]
        prev = cur
    return GammaTable(a=a, s0=Fraction(s0), entries=entries)


def pochhammer(lam, beta: int):
    """Falling factorial ``lam (lam-1) ... (lam-beta+1)``."""
    if beta < 0:
        raise ValueError("beta must be >= 0")
    out = 1
    for m in range(beta):
        out = out * (lam - m)
    return out


def _polymul(p: list, r: list) -> list:
    out = [0] * (len(p) + len(r) - 1)
    for i, x in enumerate(p):
        for j, y in enumerate(r):
            out[i + j] += x * y
    return out


def build_pk_polynomial(k: int, s0, q: int) -> list[Fraction]:
    """Coefficients (ascending powers of t) of ``prod_{m<k} ((s0/q) t - m)``."""
    if k < 0:
        raise ValueError("k must be >= 0")
    theta = Fraction(s0) / q
    poly: list = [Fraction(1)]
    for m in range(k):
        poly = _polymul(poly, [Fraction(-m), theta])
    return poly


@dataclass(frozen=True)
class TransportSymbol:
    j: int
    rho_order: int
    poly: tuple  # ascending coefficients in t = x d/dx

    def numeric(self) -> np.ndarray:
        return np.array([complex(c) for c in self.poly])

    def __call__(self, t):
        return sum(complex(c) * t**n for n, c in enumerate(self.poly))


def build_transport_symbols(q: int, a: int, gamma: GammaTable, r) -> list[TransportSymbol]:
    """All ``P~_j``, j = 0..2a, from the binomial double sum.

    ``r`` may be exact (Fraction / sympy) or a plain number; the result is
    exact exactly when ``r`` is.  ``P~_0`` is the constant ``gamma[2a,2a]``,
    i.e. ``s0^{-2a}`` in front of ``D_rho^{2a}``; the oscillator part of ``P0``
    lives in the spectrum.
    """
    s0 = gamma.s0
    s = _rat(s0)
    rr = _rat(r) if _is_exact(r) else sp.sympify(complex(r))
    n = 2 * a
    pks = [[_rat(c) for c in build_pk_polynomial(k, s0, q)] for k in range(n + 1)]
    out = []
    for j in range(n + 1):
        coeffs = [sp.Integer(0)] * (j + 1)
        for h in range(n - j, n + 1):
            g = gamma[n, h]
            for al in range(n - j, h + 1):
                w = comb(h, al) * g * pochhammer(rr + 2 * s, h - al) * comb(al, n - j)
                for d, c in enumerate(pks[al + j - n]):
                    coeffs[d] += w * c
        out.append(TransportSymbol(j=j, rho_order=n - j, poly=tuple(sp.expand(c) for c in coeffs)))
    return out


def _is_exact(x) -> bool:
    if isinstance(x, (int, Fraction)):
        return True
    if isinstance(x, sp.Basic):
        return not x.has(sp.Float)
    return False


def choose_r(q: int, a: int, gamma: GammaTable, pairing=Fraction(-1, 2)):
    """Exponent ``r`` that kills the ground-state component of ``P1 u0``.

    ``P~_1(t) = 2a g (theta t + r + 2 s0) + g'`` with ``g = gamma[2a,2a]``,
    ``g' = gamma[2a,2a-1]``; on ``phi0`` the operator ``t`` pairs to
    ``pairing``.  Exact input gives an exact sympy number, otherwise a complex.
    """
    n = 2 * a
    g, g1 = gamma[n, n], gamma[n, n - 1]
    if g == 0:
        raise ZeroDivisionError("top gamma coefficient vanishes")
    s = _rat(gamma.s0)
    theta = s / q
    if _is_exact(pairing):
        r = -theta * _rat(pairing) - 2 * s - g1 / (n * g)
        return sp.nsimplify(sp.expand(r))
    return complex(-complex(theta) * complex(pairing) - 2 * complex(s) - complex(g1 / (n * g)))


@dataclass(frozen=True)
class Weights:
    delta: float
    kappa: float
    eps_mu: float
    R0: float
    gamma_sharp: int


def dominant_decay(roots0: Sequence[complex]) -> float:
    """Largest negative real part among the ground-mode roots."""
    re = np.real(np.asarray(roots0))
    neg = re[re < 0]
    if neg.size == 0:
        raise ValueError("ground mode has no root with negative real part")
    return float(neg.max())


def classification_margin(root_sets: Iterable[Sequence[complex]], mu0_tilde: float, tol: float = 1e-9) -> float:
    # half the smallest nonzero distance |Re mu - mu0_tilde|; keeps every root
    # strictly left of mu0_tilde on the "past" side and every other root on the "future" side
    gaps = np.abs(np.concatenate([np.real(np.asarray(r)) for r in root_sets]) - mu0_tilde)
    gaps = gaps[gaps > tol]
    if gaps.size == 0:
        raise ValueError("no nonresonant roots to separate")
    return 0.5 * float(gaps.min())


def select_weights(q: int, a: int, K_modes: int, root_sets: Sequence[Sequence[complex]],
                   R0: float = 2.0, delta: float | None = None, kappa: float | None = None) -> Weights:
    if len(root_sets) < K_modes + 1:
        raise ValueError(f"need root systems for modes 0..{K_modes}, got {len(root_sets)}")
    inv_s0 = float(1 / compute_s0(q, a))
    d = 0.9 if delta is None else float(delta)
    k = min(max(0.62, 0.5 * (1 + inv_s0)), 1 - 1e-9) if kappa is None else float(kappa)
    if not (0 < d < 1):
        raise ValueError(f"delta must lie in (0,1), got {d}")
    if not (inv_s0 < k < 1):
        raise ValueError(f"kappa must lie in (1/s0, 1) = ({inv_s0:.6g}, 1), got {k}")
    if not k * d > 0.5:
        raise ValueError(f"kappa*delta must exceed 1/2, got {k * d}")
    if not R0 > 0:
        raise ValueError("R0 must be positive")
    mt = dominant_decay(root_sets[0])
    eps = classification_margin(root_sets[: K_modes + 1], mt)
    return Weights(delta=d, kappa=k, eps_mu=eps, R0=float(R0), gamma_sharp=2 * a + 2)


@dataclass(frozen=True)
class ModelParams:
    q: int
    a: int
    s0: Fraction
    r: complex
    mu0_tilde: float
    eps_mu: float
    delta: float
    kappa: float
    R0: float
    gamma_sharp: int
    extras: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if 1 / self.s0 != 1 - Fraction(self.q - 1, self.a * self.q):
            raise ValueError("s0 inconsistent with (q, a)")
        inv = float(1 / self.s0)
        if not (0 < self.delta < 1 and inv < self.kappa < 1 and self.kappa * self.delta > 0.5):
            raise ValueError("weights violate 0<delta<1, 1/s0<kappa<1, kappa*delta>1/2")
        if self.gamma_sharp < 2 * self.a:
            raise ValueError("gamma_sharp must be >= 2a")
        if not (self.mu0_tilde < 0 and self.eps_mu > 0 and self.R0 > 0):
            raise ValueError("need mu0_tilde < 0, eps_mu > 0, R0 > 0")

    @property
    def s0f(self) -> float:
        return float(self.s0)

    @property
    def theta(self) -> float:
        return float(self.s0) / self.q

    def to_json(self) -> dict:
        d = asdict(self)
        d["s0"] = str(self.s0)
        d["r"] = [self.r.real, self.r.imag]
        return d
