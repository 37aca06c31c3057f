"""Stage wiring shared by the command line and the tests."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import model_core as mc
from .ode_inverse import root_systems
from .spectrum import DiscretizationGrid, Spectrum, coupling_matrix, solve_eigenpairs
from .transport import TransportContext, build_context, rho_grid


@dataclass
class Problem:
    spectrum: Spectrum
    gamma: mc.GammaTable
    params: mc.ModelParams
    systems: list
    mu_star: complex
    r_exact: object
    ctx: TransportContext


def prepare(q: int, a: int, K: int = 32, R0: float = 2.0, rho_max: float = 160.0, h_rho: float = 0.02,
            L: float | None = None, N: int | None = None, delta: float | None = None,
            kappa: float | None = None, eigen_tol: float = 1e-9, threads: int = 1) -> Problem:
    s0 = mc.compute_s0(q, a)
    grid = DiscretizationGrid.default(q, K)
    if L is not None or N is not None:
        grid = DiscretizationGrid(L if L is not None else grid.L, N if N is not None else grid.N)
    spectrum = solve_eigenpairs(q, K, grid, tol=eigen_tol)
    gamma = mc.compute_gamma_table(a, s0)
    systems, mt, eps, mu_star = root_systems(spectrum.mu, a, s0)
    w = mc.select_weights(q, a, K, [rs.roots for rs in systems], R0=R0, delta=delta, kappa=kappa)
    # exact r uses <x phi0', phi0> = -1/2; the numeric one uses the discrete pairing so that
    # the ground row of P1 u0 cancels to round-off on this grid
    r_exact = mc.choose_r(q, a, gamma)
    pairing = coupling_matrix(spectrum, "xdx").data[0, 0].real
    r = mc.choose_r(q, a, gamma, pairing=float(pairing))
    params = mc.ModelParams(q=q, a=a, s0=s0, r=complex(r), mu0_tilde=mt, eps_mu=w.eps_mu,
                            delta=w.delta, kappa=w.kappa, R0=w.R0, gamma_sharp=w.gamma_sharp,
                            extras={"r_exact": str(r_exact), "ground_pairing": float(pairing)})
    rho = rho_grid(R0, rho_max, h_rho)
    ctx = build_context(spectrum, params, gamma, systems, mu_star, rho, threads=threads)
    return Problem(spectrum, gamma, params, systems, mu_star, r_exact, ctx)
