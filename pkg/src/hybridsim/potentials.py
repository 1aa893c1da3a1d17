"""
Bivariate polynomial potentials V(q, x) = sum c_mn q^m x^n.

Total degree is capped at 7, so every partial derivative that the moment
hierarchy asks for (up to order 7) is exact and all higher ones vanish.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, fields
from typing import Mapping

import numpy as np

MAX_DEGREE = 7


class PotentialError(ValueError):
    pass


class PolynomialPotential:
    """Immutable polynomial in (q, x) with exact derivatives.

    Parameters
    ----------
    coeffs : mapping
        ``{(m, n): c}`` meaning ``c * q**m * x**n``.  Zero coefficients are dropped.
    max_degree : int, optional
        Declared degree bound; defaults to the actual total degree.
    """

    __slots__ = ("_coeffs", "max_degree", "_table_plan")

    def __init__(self, coeffs: Mapping[tuple, float] | None = None, max_degree: int | None = None):
        clean = {}
        for key, c in (coeffs or {}).items():
            m, n = (int(v) for v in key)
            if m < 0 or n < 0:
                raise PotentialError(f"negative exponent in {key}")
            c = float(c)
            if not math.isfinite(c):
                raise PotentialError(f"coefficient for {key} is not finite")
            if c != 0.0:
                clean[(m, n)] = clean.get((m, n), 0.0) + c
        degree = max((m + n for m, n in clean), default=0)
        if max_degree is None:
            max_degree = degree
        if degree > max_degree:
            raise PotentialError(f"term of degree {degree} exceeds max_degree {max_degree}")
        if max_degree > MAX_DEGREE:
            raise PotentialError(f"max_degree {max_degree} exceeds the supported cap {MAX_DEGREE}")
        self._coeffs = dict(sorted(clean.items()))
        self.max_degree = int(max_degree)
        self._table_plan = None

    @property
    def coeffs(self) -> dict:
        return dict(self._coeffs)

    @property
    def degree(self) -> int:
        return max((m + n for m, n in self._coeffs), default=0)

    def coefficient(self, m: int, n: int) -> float:
        return self._coeffs.get((m, n), 0.0)

    def __eq__(self, other):
        if not isinstance(other, PolynomialPotential):
            return NotImplemented
        return self._coeffs == other._coeffs

    def __hash__(self):
        return hash(tuple(self._coeffs.items()))

    def __repr__(self):
        terms = " + ".join(f"{c:g}*q^{m}*x^{n}" for (m, n), c in self._coeffs.items())
        return f"PolynomialPotential({terms or '0'})"

    def __add__(self, other: "PolynomialPotential") -> "PolynomialPotential":
        merged = dict(self._coeffs)
        for key, c in other._coeffs.items():
            merged[key] = merged.get(key, 0.0) + c
        return PolynomialPotential(merged)

    def __call__(self, q, x):
        q = np.asarray(q, dtype=float)
        x = np.asarray(x, dtype=float)
        out = np.zeros(np.broadcast(q, x).shape)
        for (m, n), c in self._coeffs.items():
            out = out + c * q**m * x**n
        return out if out.ndim else float(out)

    def derivative(self, dq_order: int, dx_order: int) -> "PolynomialPotential":
        """The polynomial d^(a+b) V / dq^a dx^b."""
        if dq_order < 0 or dx_order < 0:
            raise PotentialError("derivative orders must be non-negative")
        out = {}
        for (m, n), c in self._coeffs.items():
            if m >= dq_order and n >= dx_order:
                out[(m - dq_order, n - dx_order)] = c * math.perm(m, dq_order) * math.perm(n, dx_order)
        return PolynomialPotential(out)

    def _plan(self):
        # D = Pq @ C @ Px^T with P[a, m] = perm(m, a) * q^(m - a) for m >= a
        if self._table_plan is None:
            size = self.max_degree + 1
            C = np.zeros((size, size))
            for (m, n), c in self._coeffs.items():
                C[m, n] = c
            a, m = np.meshgrid(np.arange(size), np.arange(size), indexing="ij")
            falling = np.array([[math.perm(mm, aa) if mm >= aa else 0 for mm in range(size)]
                                for aa in range(size)], dtype=float)
            self._table_plan = (C, falling, np.clip(m - a, 0, None))
        return self._table_plan

    def derivative_table(self, q: float, x: float) -> np.ndarray:
        """Array D with D[a, b] = d^(a+b) V / dq^a dx^b at (q, x), for a + b <= max_degree."""
        C, falling, shift = self._plan()
        powers = np.arange(len(C))
        pq = falling * (q ** powers)[shift]
        px = falling * (x ** powers)[shift]
        return pq @ C @ px.T

    def swapped(self) -> "PolynomialPotential":
        """Same polynomial with the roles of q and x exchanged."""
        return PolynomialPotential({(n, m): c for (m, n), c in self._coeffs.items()}, self.max_degree)

    def split(self) -> tuple["PolynomialPotential", "PolynomialPotential", "PolynomialPotential"]:
        """Decompose into (U1(q), U2(x), U(q, x)); constant terms go with U1."""
        u1 = {k: c for k, c in self._coeffs.items() if k[1] == 0}
        u2 = {k: c for k, c in self._coeffs.items() if k[0] == 0 and k[1] > 0}
        u = {k: c for k, c in self._coeffs.items() if k[0] > 0 and k[1] > 0}
        return PolynomialPotential(u1), PolynomialPotential(u2), PolynomialPotential(u)

    def depends_on_x(self) -> bool:
        return any(n > 0 for _, n in self._coeffs)

    def quantum_self_degree(self) -> int:
        """Degree of the pure-q part U1(q)."""
        return max((m for m, n in self._coeffs if n == 0), default=0)

    def to_dict(self) -> dict:
        return {"coeffs": [{"m": m, "n": n, "c": c} for (m, n), c in self._coeffs.items()]}

    @classmethod
    def from_dict(cls, data: Mapping) -> "PolynomialPotential":
        if set(data) != {"coeffs"}:
            raise PotentialError(f"potential must have exactly the key 'coeffs', got {sorted(data)}")
        coeffs = {}
        for term in data["coeffs"]:
            if set(term) != {"m", "n", "c"}:
                raise PotentialError(f"bad coefficient entry {term}")
            key = (int(term["m"]), int(term["n"]))
            coeffs[key] = coeffs.get(key, 0.0) + float(term["c"])
        return cls(coeffs)

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "PolynomialPotential":
        return cls.from_dict(json.loads(text))


def partial_derivative(pot: PolynomialPotential, dq_order: int, dx_order: int, at) -> float:
    """d^(dq_order + dx_order) V / dq^dq_order dx^dx_order evaluated at ``at = (Q, X)``."""
    if dq_order + dx_order > pot.max_degree:
        return 0.0
    q, x = at
    return float(pot.derivative(dq_order, dx_order)(q, x))


@dataclass(frozen=True)
class ScenarioParams:
    """Coefficients of the named interaction scenarios.

    ``alpha`` multiplies q^2/2, ``classical_quadratic`` multiplies x^2/2,
    ``beta1``/``beta2`` are interaction strengths and ``gamma1``/``gamma2``
    the linear and quadratic coefficients of the classical profile g(x).
    """

    alpha: float = 1.0
    beta1: float = 0.0
    beta2: float = 0.0
    gamma1: float = 0.0
    gamma2: float = 0.0
    classical_quadratic: float = 1.0

    def __post_init__(self):
        for f in fields(self):
            v = float(getattr(self, f.name))
            if not math.isfinite(v):
                raise PotentialError(f"{f.name} is not finite")
            object.__setattr__(self, f.name, v)

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


def _quadratics(p: ScenarioParams) -> dict:
    return {(2, 0): p.alpha / 2, (0, 2): p.classical_quadratic / 2}


def preset_example1(p: ScenarioParams) -> PolynomialPotential:
    """alpha q^2/2 + c x^2/2 + beta1 q g(x) + beta2 q^2 g(x), g(x) = gamma1 x + gamma2 x^2."""
    coeffs = _quadratics(p)
    for (m, n), c in {
        (1, 1): p.beta1 * p.gamma1,
        (1, 2): p.beta1 * p.gamma2,
        (2, 1): p.beta2 * p.gamma1,
        (2, 2): p.beta2 * p.gamma2,
    }.items():
        coeffs[(m, n)] = coeffs.get((m, n), 0.0) + c
    return PolynomialPotential(coeffs, max_degree=4)


def preset_example2(p: ScenarioParams) -> PolynomialPotential:
    """alpha q^2/2 + c x^2/2 + beta1 q x^2 + beta2 q^2 x."""
    coeffs = _quadratics(p)
    coeffs[(1, 2)] = p.beta1
    coeffs[(2, 1)] = p.beta2
    return PolynomialPotential(coeffs, max_degree=3)


def preset_quadratic(p: ScenarioParams) -> PolynomialPotential:
    """alpha q^2/2 + c x^2/2 + beta1*gamma1 q x, the bilinear case of Example 1."""
    coeffs = _quadratics(p)
    coeffs[(1, 1)] = p.beta1 * p.gamma1
    return PolynomialPotential(coeffs, max_degree=2)


PRESETS = {
    "example1": preset_example1,
    "example2": preset_example2,
    "quadratic": preset_quadratic,
}


def preset(name: str, params: ScenarioParams | None = None) -> PolynomialPotential:
    try:
        builder = PRESETS[name]
    except KeyError:
        raise PotentialError(f"unknown potential preset {name!r}; choose from {sorted(PRESETS)}") from None
    return builder(params or ScenarioParams())
