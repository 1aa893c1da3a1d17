# %% [markdown]
# # Monte Carlo characteristics as a reference
#
# When the potential is at most quadratic in q, sampling the initial
# Gaussian and moving every sample along Hamilton's equations reproduces
# the hybrid dynamics exactly.  The ensemble gives f(t) with a jackknife
# standard error to compare against the truncated hierarchy.

# %%
from hybridsim import GaussianStateSpec, ScenarioParams, compare_with_hierarchy, preset_example1
from hybridsim.expansions import CorrelatedInitialData

params = ScenarioParams(alpha=1, beta1=0.5, beta2=0.3, gamma1=0.4, gamma2=0.2)
init = CorrelatedInitialData(0.1, 0.1, 0.1, 0.1, q0=0.5, p0=-0.5, x0=0.5, k0=-0.5)
cmp = compare_with_hierarchy(init.to_spec(), preset_example1(params), [0.1, 0.5, 1.0], count=50_000, seed=3)
for t, fm, se, fh in zip(cmp.t, cmp.f_mc, cmp.f_mc_stderr, cmp.f_hierarchy):
    print(f"t = {t:.1f}  ensemble f = {fm:.5f} +- {se:.5f}   hierarchy f = {fh:.5f}")
