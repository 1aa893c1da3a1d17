# %% [markdown]
# # Short-time expansion of f(t)
#
# Closed-form Taylor coefficients of f(t) about t = 0 are compared with
# coefficients extracted numerically from the integrator by
# Richardson-extrapolated central differences.

# %%
from hybridsim import (
    CorrelatedInitialData,
    ScenarioParams,
    closed_form_expansion,
    max_relative_error,
    numeric_taylor,
    preset,
)

cases = {
    "quadratic coupling": ("quadratic", ScenarioParams(alpha=1, classical_quadratic=1, beta1=0.3, gamma1=0.5),
                           CorrelatedInitialData(0.1, 0.1, 0.1, 0.1, 0.1, 0.1, 0.4, -0.3, 0.2, 0.5), 2),
    "cubic coupling, correlated": ("example2", ScenarioParams(alpha=1, classical_quadratic=1, beta1=-1, beta2=2),
                                   CorrelatedInitialData(0.1, 0.1, 0.1, 0.1, 0.1, 0.1, -1, -3, 1, -1), 2),
}
for name, (scenario, params, init, order) in cases.items():
    closed = closed_form_expansion(scenario, params, init)
    est = numeric_taylor(init.to_spec(), preset(scenario, params), order=order)
    closed = type(closed)(closed.c[: order + 1])
    print(name)
    print("  closed form:", [f"{c:.6g}" for c in closed])
    print("  numeric    :", [f"{c:.6g}" for c in est.coefficients])
    print(f"  max relative error {max_relative_error(closed, est.coefficients):.1e}")
