# %% [markdown]
# # Gaussian states, moments and physical validity
#
# A hybrid state is a Gaussian over the phase space (q, p) of a quantum
# oscillator and (x, k) of a classical one.  Its covariance decides
# whether it is a legitimate state: the symplectic eigenvalues must all
# be at least 1/2.

# %%
import numpy as np

from hybridsim import (
    CovarianceMatrix,
    GaussianStateSpec,
    MeanVector,
    cup_check,
    hur_from_covariance,
    symplectic_check,
    symplectic_eigenvalues,
    wick_moment,
)

vacuum = GaussianStateSpec.vacuum(MeanVector(0.5, -0.5, 0.5, -0.5))
print("vacuum symplectic eigenvalues:", symplectic_eigenvalues(vacuum.cov))
print("vacuum uncertainty relation f0 =", hur_from_covariance(vacuum.cov))

# %% [markdown]
# The shorthand parametrization offsets the vacuum variances by z1, z2
# (quantum) and y1, y2 (classical) and adds q-p and q-x correlations.

# %%
squeezed = CovarianceMatrix.from_offsets(0.1, 0.1, 0.1, 0.1, qp=0.1, qx=0.1)
report = symplectic_check(squeezed)
print("correlated state valid:", report.valid, "eigenvalues:", report.symplectic_eigenvalues)
print("uncertainty check at epsilon=1e-9:", cup_check(squeezed, 1e-9))

too_small = CovarianceMatrix.from_offsets(-0.3, -0.3, 0.0, 0.0)
print("sub-vacuum state valid:", symplectic_check(too_small).valid)

# %% [markdown]
# Higher central moments of a Gaussian follow from the covariance by
# summing over pairings (Isserlis/Wick).  Multi-indices are the exponents
# of (dp, dk, dq, dx).

# %%
v = wick_moment(squeezed, (0, 0, 2, 0))
print("<dq^2> =", v, " <dq^4> =", wick_moment(squeezed, (0, 0, 4, 0)), " 3<dq^2>^2 =", 3 * v * v)
print("odd moment <dq^3> =", wick_moment(squeezed, (0, 0, 3, 0)))
