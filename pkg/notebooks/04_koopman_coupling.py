# %% [markdown]
# # Koopman picture: back-reaction and resonance
#
# In the Hilbert-space picture of the classical oscillator a bilinear
# coupling can involve unobservable shift operators.  Forbidding that
# removes every influence of the quantum oscillator on the classical one,
# while the classical oscillator still drives the quantum one.

# %%
import numpy as np

from hybridsim import (
    KoopmanCoupling,
    KoopmanState,
    backreaction_deviation,
    constrained_coupling,
    growth_exponent,
    koopman_integrate,
)

state = KoopmanState(0.5, -0.2, 1.0, 0.3, 0.4, -0.1)
print("constrained coupling, classical deviation:",
      backreaction_deviation(state, constrained_coupling(0.7, -0.4, 0.2, 1.0)))
print("unconstrained coupling, classical deviation:",
      backreaction_deviation(state, KoopmanCoupling(a1x=0.3), constrained=False))

# %% [markdown]
# With equal frequencies the classical oscillator drives the quantum
# one at resonance and E_q grows like t^2; detuned, it stays bounded.

# %%
res = koopman_integrate(KoopmanState(xbar=1.0), constrained_coupling(a1x=0.1), 1e-3, 100_000, record_every=100)
print(f"resonant growth exponent: {growth_exponent(res):.4f}")
off = koopman_integrate(KoopmanState(xbar=1.0, omega_c=2.0), constrained_coupling(a1x=0.1), 1e-3, 100_000,
                        record_every=100)
print(f"detuned max E_q over [0, 100]: {np.max(off.E_q):.4f}")
