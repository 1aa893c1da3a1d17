"""
Short-time expansions of the uncertainty functional f(t) and the
violation-time bounds derived from them, plus a numerical route that
extracts the same Taylor coefficients from integrated trajectories.

Conventions shared by every closed form below:

* ``z1``, ``z2`` are the offsets of <dq^2> and <dp^2> from 1/2.
* ``y1`` is the offset of <dx^2>, ``y2`` that of <dk^2>.  The classical
  variance that enters every coefficient is the *position* one, <dx^2>,
  so the formulas read ``y1``.
* Coefficients are returned as c[n] = f^(n)(0) / n!.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .dynamics import _f_from_second, _second_moment_positions, hierarchy_for, propagate
from .potentials import (
    PolynomialPotential,
    ScenarioParams,
    preset_example1,
    preset_example2,
    preset_quadratic,
)
from .states import (
    CovarianceMatrix,
    GaussianStateSpec,
    MeanVector,
    MomentTable,
    build_moment_table,
)

MAX_EXPANSION_ORDER = 3


class ExpansionError(ValueError):
    pass


class ConvergenceError(RuntimeError):
    pass


@dataclass(frozen=True)
class ExpansionCoefficients:
    """Coefficients of t^0 .. t^N of f(t), N <= 3."""

    c: tuple

    def __post_init__(self):
        c = tuple(float(v) for v in self.c)
        if not 1 <= len(c) <= MAX_EXPANSION_ORDER + 1:
            raise ExpansionError(f"expected 1..{MAX_EXPANSION_ORDER + 1} coefficients, got {len(c)}")
        object.__setattr__(self, "c", c)

    def __getitem__(self, n):
        return self.c[n]

    def __len__(self):
        return len(self.c)

    def __iter__(self):
        return iter(self.c)

    @property
    def order(self) -> int:
        return len(self.c) - 1

    def __call__(self, t):
        return np.polyval(self.c[::-1], t)


@dataclass(frozen=True)
class CorrelatedInitialData:
    """Gaussian initial data in offset form with optional QQ and QC correlations.

    ``qp0`` is <dq dp> at t = 0 and ``qx0`` is <dq dx>; all other
    correlations are zero.
    """

    z1: float = 0.0
    z2: float = 0.0
    y1: float = 0.0
    y2: float = 0.0
    qp0: float = 0.0
    qx0: float = 0.0
    q0: float = 0.0
    p0: float = 0.0
    x0: float = 0.0
    k0: float = 0.0

    def __post_init__(self):
        for name in ("z1", "z2", "y1", "y2"):
            v = getattr(self, name)
            if not v > -0.5:
                raise ExpansionError(f"{name} = {v} outside (-1/2, inf)")

    @property
    def uncorrelated(self) -> bool:
        return self.qp0 == 0.0 and self.qx0 == 0.0

    def covariance(self) -> CovarianceMatrix:
        return CovarianceMatrix.from_offsets(self.z1, self.z2, self.y1, self.y2, qp=self.qp0, qx=self.qx0)

    def means(self) -> MeanVector:
        return MeanVector(self.q0, self.p0, self.x0, self.k0)

    def to_spec(self) -> GaussianStateSpec:
        return GaussianStateSpec(self.means(), self.covariance())


def initial_hur(init: CorrelatedInitialData) -> float:
    return 0.5 * (init.z1 + init.z2 + 2 * init.z1 * init.z2 - 2 * init.qp0 ** 2)


def _require_uncorrelated(init: CorrelatedInitialData):
    if not init.uncorrelated:
        raise ExpansionError("this expansion assumes no initial QQ or QC correlations")


# ---------------------------------------------------------------------------
# Closed forms
# ---------------------------------------------------------------------------


def expansion_single_dof(pot: PolynomialPotential, init: CorrelatedInitialData,
                         moments: MomentTable | None = None) -> ExpansionCoefficients:
    """(c0, c1) for a potential V(q) of the quantum coordinate alone.

    The mixed moments <dp dq^n> default to their Gaussian values, which all
    vanish, so c1 = 0 unless a non-Gaussian ``moments`` table is supplied.
    """
    if pot.depends_on_x():
        raise ExpansionError("potential must depend on q only")
    _require_uncorrelated(init)
    if moments is None:
        moments = build_moment_table(init.to_spec(), 6)
    v = [float(pot.derivative(n, 0)(init.q0, 0.0)) for n in range(7)]
    bracket = (60 * moments[1, 0, 2, 0] * v[3] + 20 * moments[1, 0, 3, 0] * v[4]
               + 5 * moments[1, 0, 4, 0] * v[5] + moments[1, 0, 5, 0] * v[6])
    c1 = -(1 + 2 * init.z1) * bracket / 120.0
    return ExpansionCoefficients((initial_hur(init), c1))


def expansion_general_linear(pot: PolynomialPotential, init: CorrelatedInitialData) -> ExpansionCoefficients:
    """(c0, c1) for a general interaction with <dq dp>_0 and <dq dx>_0 correlations."""
    _, _, u = pot.split()
    d = u.derivative_table(init.q0, init.x0) if u.max_degree >= 2 else np.zeros((8, 8))
    if d.shape[0] < 8:
        d = np.pad(d, ((0, 8 - d.shape[0]), (0, 8 - d.shape[1])))
    r = init.qx0
    z1, y = init.z1, init.y1
    bracket = (32 * d[1, 1]
               + 8 * (1 + 2 * y) * d[1, 3]
               + (1 + 4 * y + 4 * y ** 2) * d[1, 5]
               + 32 * r * d[2, 2]
               + 8 * r * (1 + 2 * y) * d[2, 4]
               + (8 + 16 * z1) * d[3, 1]
               + (2 + 16 * r ** 2 + 4 * y + 4 * z1 + 8 * y * z1) * d[3, 3]
               + 8 * r * (1 + 2 * z1) * d[4, 2]
               + (1 + 4 * z1 + 4 * z1 ** 2) * d[5, 1])
    c1 = init.qp0 * r * bracket / 16.0
    return ExpansionCoefficients((initial_hur(init), c1))


def expansion_example1(p: ScenarioParams, init: CorrelatedInitialData) -> ExpansionCoefficients:
    """(c0, 0, c2, c3) for U = beta1 q g(x) + beta2 q^2 g(x), g = gamma1 x + gamma2 x^2."""
    _require_uncorrelated(init)
    z1, z2, y = init.z1, init.z2, init.y1
    q0, x0, k0 = init.q0, init.x0, init.k0
    b1, b2, g1, g2, al = p.beta1, p.beta2, p.gamma1, p.gamma2, p.alpha
    c2 = (0.25 * (1 + 2 * y) * (1 + 2 * z1)
          * (b1 ** 2 + 4 * q0 * b1 * b2 + 2 * b2 ** 2 * (1 + 2 * q0 ** 2 + 2 * z1))
          * (g1 ** 2 + 4 * x0 * g1 * g2 + (1 + 4 * x0 ** 2 + 2 * y) * g2 ** 2))
    c3 = (2 * k0 * (0.5 + z1) * b2 * (g1 + 2 * x0 * g2)
          * (0.5 + z2 - (0.5 + z1) * al - 2 * (0.5 + y) * (0.5 + z1) * b2 * g2
             - x0 * (1 + 2 * z1) * b2 * (g1 + x0 * g2)))
    return ExpansionCoefficients((initial_hur(init), 0.0, c2, c3))


def expansion_example2(p: ScenarioParams, init: CorrelatedInitialData) -> ExpansionCoefficients:
    """(c0, 0, c2, c3) for U = beta1 q x^2 + beta2 q^2 x."""
    _require_uncorrelated(init)
    z1, z2, y = init.z1, init.z2, init.y1
    q0, x0, k0 = init.q0, init.x0, init.k0
    b1, b2, al = p.beta1, p.beta2, p.alpha
    c2 = (0.25 * (1 + 2 * y) * (1 + 2 * z1)
          * ((1 + 4 * x0 ** 2 + 2 * y) * b1 ** 2 + 8 * q0 * x0 * b1 * b2
             + 2 * b2 ** 2 * (1 + 2 * q0 ** 2 + 2 * z1)))
    c3 = -0.5 * k0 * (1 + 2 * z1) * b2 * (-1 - 2 * z2 + al + 2 * z1 * al + 2 * x0 * b2 + 4 * x0 * z1 * b2)
    return ExpansionCoefficients((initial_hur(init), 0.0, c2, c3))


def expansion_example2_correlated(p: ScenarioParams, init: CorrelatedInitialData) -> ExpansionCoefficients:
    """(c0, c1, c2) for U = beta1 q x^2 + beta2 q^2 x with <dq dp>_0, <dq dx>_0 != 0."""
    z1, z2, y = init.z1, init.z2, init.y1
    q0, p0, x0, k0 = init.q0, init.p0, init.x0, init.k0
    s, r = init.qp0, init.qx0
    b1, b2 = p.beta1, p.beta2
    c1 = 4 * s * r * (b1 * x0 + b2 * q0)
    c2 = 0.25 * (
        b1 * (8 * k0 * r * s + 4 * x0 * (r + 2 * r * z2) + (1 + 2 * y) ** 2 * (1 + 2 * z1) * b1
              + 4 * x0 ** 2 * b1 * (1 - 4 * r ** 2 + 2 * y + 2 * z1 + 4 * y * z1))
        + 4 * b2 * (2 * p0 * s * r + 2 * b1 * r * (1 + 2 * y) * (1 + 2 * z1)
                    + q0 * (r + 2 * z2 * r - 8 * x0 * b1 * r ** 2 + 2 * x0 * b1 * (1 + 2 * y) * (1 + 2 * z1)))
        + 2 * b2 ** 2 * (q0 ** 2 * (2 - 8 * r ** 2 + 4 * y + 4 * z1 + 8 * y * z1)
                         + (1 + 2 * z1) * (4 * r ** 2 + (1 + 2 * y) * (1 + 2 * z1))))
    return ExpansionCoefficients((initial_hur(init), c1, c2))


def t_star_bound_quadratic(init: CorrelatedInitialData, beta1gamma1: float) -> float | None:
    """Upper limit on the violation time for a bilinear coupling; None unless the radicand is positive."""
    a = init.qx0 * beta1gamma1
    radicand = 4 * a ** 2 - 2 * (1 + 2 * init.z2) * a
    if not radicand > 0:
        return None
    return abs(2.0 / math.sqrt(radicand))


def t_star_bound_general(init: CorrelatedInitialData, p: ScenarioParams) -> float | None:
    """Linear-extrapolation bound c0 / |4 <dq dp>_0 <dq dx>_0 (beta1 x0 + beta2 q0)|."""
    num = init.z1 + init.z2 + 2 * init.z1 * init.z2 - 2 * init.qp0 ** 2
    den = 4 * init.qp0 * init.qx0 * (p.beta1 * init.x0 + p.beta2 * init.q0)
    if den == 0:
        return None
    return abs(-num / den)


def closed_form_expansion(scenario: str, p: ScenarioParams, init: CorrelatedInitialData) -> ExpansionCoefficients:
    """Dispatch to the closed form that applies to a named potential preset."""
    if scenario == "example1":
        if init.uncorrelated:
            return expansion_example1(p, init)
        return expansion_general_linear(preset_example1(p), init)
    if scenario == "example2":
        if init.uncorrelated:
            return expansion_example2(p, init)
        return expansion_example2_correlated(p, init)
    if scenario == "quadratic":
        return expansion_general_linear(preset_quadratic(p), init)
    raise ExpansionError(f"no closed form for scenario {scenario!r}")


# ---------------------------------------------------------------------------
# Numerical Taylor coefficients
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TaylorEstimate:
    coefficients: ExpansionCoefficients
    levels: tuple = field(repr=False)
    spread: tuple = ()
    converged: bool = True


def _central_derivative(n: int, f: dict, m: int, s: float) -> float:
    # f maps grid multiples of the base step to values; m is the step in grid units
    if n == 0:
        return f[0]
    if n == 1:
        return (f[m] - f[-m]) / (2 * s)
    if n == 2:
        return (f[m] - 2 * f[0] + f[-m]) / s ** 2
    if n == 3:
        return (f[2 * m] - 2 * f[m] + 2 * f[-m] - f[-2 * m]) / (2 * s ** 3)
    raise ValueError("derivative order must be 0..3")


def numeric_taylor(initial: GaussianStateSpec, pot: PolynomialPotential, order: int = 3,
                   h: float = 1e-2, dt: float = 1e-4, order_cap: int | None = None,
                   closure: str = "wick", rtol: float = 1e-4, atol: float = 1e-7,
                   strict: bool = False) -> TaylorEstimate:
    """Taylor coefficients of f(t) at t = 0 from integrated hierarchy runs.

    f is sampled on a symmetric grid (forward and backward integration),
    differentiated with central differences at steps h, h/2, h/4, and the
    three levels are combined by Richardson extrapolation.  Convergence is
    judged by the change between the last two Richardson levels.

    Raises
    ------
    ConvergenceError
        Only with ``strict=True``, when the levels disagree beyond
        ``max(rtol * |value|, atol)``.
    """
    if not 0 <= order <= MAX_EXPANSION_ORDER:
        raise ValueError(f"order must be 0..{MAX_EXPANSION_ORDER}")
    degree = max(pot.degree, 2)
    required = 2 + order * (degree - 1)
    if order_cap is None:
        order_cap = max(required, 2)
    elif order_cap < required:
        raise ValueError(f"order_cap {order_cap} below the required {required}")
    hier = hierarchy_for(pot, order_cap, closure)
    y0 = np.concatenate([initial.means.as_array(), build_moment_table(initial, order_cap).values])
    pos = _second_moment_positions(order_cap) + 4

    base = h / 4
    n_sub = max(1, round(base / dt))
    sub = base / n_sub
    span = 8 if order == 3 else 4
    f = {0: float(_f_from_second(y0[pos]))}
    for sign in (1, -1):
        y = y0
        for m in range(1, span + 1):
            y = propagate(y, hier, pot, sign * base, sub)
            f[sign * m] = float(_f_from_second(y[pos]))

    coeffs, levels, spread = [], [], []
    ok = True
    for n in range(order + 1):
        if n == 0:
            coeffs.append(f[0])
            levels.append((f[0],))
            spread.append(0.0)
            continue
        d0 = [_central_derivative(n, f, m, m * base) for m in (4, 2, 1)]
        d1 = [(4 * d0[j + 1] - d0[j]) / 3 for j in range(2)]
        d2 = (16 * d1[1] - d1[0]) / 15
        diff = abs(d2 - d1[1])
        spread.append(diff / math.factorial(n))
        if diff > max(rtol * abs(d2), atol):
            ok = False
        levels.append((tuple(d0), tuple(d1), d2))
        coeffs.append(d2 / math.factorial(n))
    if not ok:
        msg = f"Richardson levels disagree beyond rtol={rtol}: spread {spread}"
        if strict:
            raise ConvergenceError(msg)
        warnings.warn(msg, RuntimeWarning, stacklevel=2)
    return TaylorEstimate(ExpansionCoefficients(tuple(coeffs)), tuple(levels), tuple(spread), ok)


def max_relative_error(closed: ExpansionCoefficients, numeric: ExpansionCoefficients,
                       floor: float = 1e-8) -> float:
    """Largest |numeric - closed| / max(|closed|, floor) over the closed-form coefficients."""
    errs = [abs(numeric[n] - closed[n]) / max(abs(closed[n]), floor) for n in range(len(closed))]
    return max(errs)
