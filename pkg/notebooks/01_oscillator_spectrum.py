# %% [markdown]
# # The oscillator behind the construction
#
# Every transport solve runs in the eigenbasis of `Q = D_x^2 + x^{2(q-1)}`.
# Here we look at how well that basis is resolved, and at the one number
# the ground state contributes to everything downstream: the pairing
# `<x phi0', phi0>`.

# %%
import numpy as np

from gevrey_witness.spectrum import coupling_matrix, derivative_growth_fit, solve_eigenpairs, wkb_eigenvalue

# %% [markdown]
# For `q = 2` the eigenvalues are `2k+1`.  The raw finite-difference values
# are off by `O(h^2)`; one Richardson step against the half-resolution grid
# removes that.

# %%
harm = solve_eigenpairs(2, 32)
k = np.arange(10)
print("raw error      ", np.abs(harm.mu_h[:10] - (2 * k + 1)).max())
print("extrapolated   ", np.abs(harm.mu[:10] - (2 * k + 1)).max())

# %% [markdown]
# For the quartic case there is no closed form.  Bohr-Sommerfeld gets the
# trend right, which is all the grid sizing needs.

# %%
quart = solve_eigenpairs(3, 32)
for kk in (0, 1, 5, 20, 32):
    print(f"k={kk:2d}  mu={quart.mu[kk]:12.6f}  wkb={wkb_eigenvalue(3, kk):12.6f}")

# %% [markdown]
# `x d/dx` is antisymmetric up to the identity shift, so the diagonal
# entry on the ground state is exactly `-1/2` whatever `q` is.  The
# resonance exponent `r` is chosen from this number.

# %%
for sp in (harm, quart):
    X = coupling_matrix(sp, "xdx").data.real
    print(f"q={sp.q}:  X00 = {X[0, 0]:.15f}   |X + X^T + I| = {np.abs(X + X.T + np.eye(sp.K + 1)).max():.1e}")

# %% [markdown]
# Derivatives of the ground state grow like `alpha!^{(q-1)/q}`: the
# anisotropy that sets the Gevrey index.  The fit regresses the log of the
# sup norm on `log alpha!` with linear and logarithmic nuisance terms.

# %%
for sp in (harm, quart):
    fit = derivative_growth_fit(sp)
    print(f"q={sp.q}: order {fit.order:.4f}  (expect {(sp.q - 1) / sp.q:.4f}), alphas up to {int(fit.alphas[-1])}")
