"""
Gaussian phase-space states of a quantum oscillator (q, p) coupled to a
classical oscillator (x, k).

Every covariance in the package uses the ordered basis (q, p, x, k) and the
dimensionless units in which hbar = 1.  Moment tables are indexed the other
way round, by the exponents (k1, k2, n1, n2) of

    S[k1, k2, n1, n2] = < dp^k1 dk^k2 dq^n1 dx^n2 >

so that the hierarchy equations read naturally.  ``SLOT_TO_BASIS`` maps the
four multi-index slots onto covariance rows.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Iterator, Mapping, Sequence

import numpy as np

BASIS = ("q", "p", "x", "k")
SLOT_TO_BASIS = (1, 3, 0, 2)

#: Symplectic eigenvalues within this distance below the vacuum value still count as valid.
VALIDITY_TOL = 1e-9


class StateError(ValueError):
    """Raised for malformed or unphysical state data."""


# ---------------------------------------------------------------------------
# Value types
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MeanVector:
    """First moments <q>, <p>, <x>, <k>."""

    q: float = 0.0
    p: float = 0.0
    x: float = 0.0
    k: float = 0.0

    def __post_init__(self):
        for name in BASIS:
            value = float(getattr(self, name))
            if not math.isfinite(value):
                raise StateError(f"mean {name} is not finite: {value}")
            object.__setattr__(self, name, value)

    @classmethod
    def from_array(cls, values: Sequence[float]) -> "MeanVector":
        q, p, x, k = (float(v) for v in values)
        return cls(q, p, x, k)

    def as_array(self) -> np.ndarray:
        return np.array([self.q, self.p, self.x, self.k])

    def to_dict(self) -> dict:
        return {name: getattr(self, name) for name in BASIS}


class CovarianceMatrix:
    """Symmetric 4x4 second-moment matrix in the (q, p, x, k) basis.

    The quantum block ``sigma_q`` covers (q, p), the classical block
    ``sigma_c`` covers (x, k) and ``gamma_qc`` holds the cross correlations.
    Instances are read-only.
    """

    __slots__ = ("_m",)

    def __init__(self, entries):
        m = np.array(entries, dtype=float)
        if m.shape != (4, 4):
            raise StateError(f"covariance must be 4x4, got shape {m.shape}")
        if not np.all(np.isfinite(m)):
            raise StateError("covariance has non-finite entries")
        scale = max(1.0, float(np.max(np.abs(m))))
        if np.max(np.abs(m - m.T)) > 1e-12 * scale:
            raise StateError("covariance is not symmetric")
        m = 0.5 * (m + m.T)
        if np.any(np.diag(m) <= 0.0):
            raise StateError("covariance diagonal must be positive")
        m.setflags(write=False)
        self._m = m

    @classmethod
    def from_offsets(cls, z1=0.0, z2=0.0, y1=0.0, y2=0.0, qp=0.0, qx=0.0,
                     qk=0.0, px=0.0, pk=0.0, xk=0.0) -> "CovarianceMatrix":
        """Build from variance offsets, <dq^2> = 1/2 + z1, <dp^2> = 1/2 + z2,
        <dx^2> = 1/2 + y1, <dk^2> = 1/2 + y2, plus optional correlations."""
        for name, v in (("z1", z1), ("z2", z2), ("y1", y1), ("y2", y2)):
            if not v > -0.5:
                raise StateError(f"{name} = {v} outside (-1/2, inf)")
        m = np.diag([0.5 + z1, 0.5 + z2, 0.5 + y1, 0.5 + y2])
        for (i, j), v in {(0, 1): qp, (0, 2): qx, (0, 3): qk,
                          (1, 2): px, (1, 3): pk, (2, 3): xk}.items():
            m[i, j] = m[j, i] = v
        return cls(m)

    @classmethod
    def vacuum(cls) -> "CovarianceMatrix":
        return cls(0.5 * np.eye(4))

    @property
    def matrix(self) -> np.ndarray:
        return self._m

    def __array__(self, dtype=None, copy=None):
        return self._m.astype(dtype) if dtype is not None else self._m.copy()

    def __getitem__(self, item):
        return self._m[item]

    def __eq__(self, other):
        if not isinstance(other, CovarianceMatrix):
            return NotImplemented
        return bool(np.array_equal(self._m, other._m))

    def __hash__(self):
        return hash(self._m.tobytes())

    def __repr__(self):
        return f"CovarianceMatrix({self._m.tolist()!r})"

    @property
    def sigma_q(self) -> np.ndarray:
        return self._m[:2, :2]

    @property
    def sigma_c(self) -> np.ndarray:
        return self._m[2:, 2:]

    @property
    def gamma_qc(self) -> np.ndarray:
        return self._m[:2, 2:]


def as_covariance(cov) -> CovarianceMatrix:
    return cov if isinstance(cov, CovarianceMatrix) else CovarianceMatrix(cov)


@dataclass(frozen=True)
class GaussianStateSpec:
    """Means and covariance of a Gaussian Wigner function."""

    means: MeanVector
    cov: CovarianceMatrix

    def __post_init__(self):
        if not isinstance(self.means, MeanVector):
            object.__setattr__(self, "means", MeanVector.from_array(self.means))
        object.__setattr__(self, "cov", as_covariance(self.cov))

    @classmethod
    def vacuum(cls, means: MeanVector | None = None) -> "GaussianStateSpec":
        return cls(means or MeanVector(), CovarianceMatrix.vacuum())

    def to_dict(self) -> dict:
        return {"means": self.means.to_dict(), "cov": self.cov.matrix.tolist()}

    @classmethod
    def from_dict(cls, data: Mapping) -> "GaussianStateSpec":
        extra = set(data) - {"means", "cov"}
        if extra:
            raise StateError(f"unknown keys in state: {sorted(extra)}")
        means = data["means"]
        if set(means) != set(BASIS):
            raise StateError(f"means must have exactly the keys {BASIS}")
        return cls(MeanVector(**{n: means[n] for n in BASIS}), CovarianceMatrix(data["cov"]))

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "GaussianStateSpec":
        return cls.from_dict(json.loads(text))


def symplectic_form() -> np.ndarray:
    """Block-diagonal symplectic form for the (q, p, x, k) ordering."""
    j = np.array([[0.0, 1.0], [-1.0, 0.0]])
    omega = np.zeros((4, 4))
    omega[:2, :2] = j
    omega[2:, 2:] = j
    return omega


# ---------------------------------------------------------------------------
# Multi-index bookkeeping
# ---------------------------------------------------------------------------


class MomentBasis:
    """Graded-lexicographic enumeration of all multi-indices up to a total order.

    Indices of order n occupy the contiguous range ``slice(offsets[n], offsets[n+1])``.
    Use :func:`moment_basis` to get a cached instance.
    """

    def __init__(self, order: int):
        if order < 0:
            raise ValueError("order must be non-negative")
        self.order = order
        exps = []
        offsets = [0]
        for n in range(order + 1):
            block = sorted(_compositions(n, 4), reverse=True)
            exps.extend(block)
            offsets.append(len(exps))
        self.exponents = np.array(exps, dtype=np.int64)
        self.exponents.setflags(write=False)
        self.offsets = tuple(offsets)
        self.totals = self.exponents.sum(axis=1)
        self._lookup = {e: i for i, e in enumerate(exps)}

    def __len__(self):
        return len(self._lookup)

    def __contains__(self, index):
        return tuple(index) in self._lookup

    def position(self, index) -> int:
        try:
            return self._lookup[tuple(int(i) for i in index)]
        except KeyError:
            raise KeyError(f"multi-index {tuple(index)} not within order {self.order}") from None

    def order_slice(self, n: int) -> slice:
        return slice(self.offsets[n], self.offsets[n + 1])

    def __iter__(self) -> Iterator[tuple]:
        return iter(self._lookup)


def _compositions(total: int, parts: int):
    if parts == 1:
        yield (total,)
        return
    for first in range(total + 1):
        for rest in _compositions(total - first, parts - 1):
            yield (first,) + rest


@lru_cache(maxsize=None)
def moment_basis(order: int) -> MomentBasis:
    return MomentBasis(order)


def basis_size(order: int) -> int:
    return math.comb(order + 4, 4)


# ---------------------------------------------------------------------------
# Moment tables and Wick's theorem
# ---------------------------------------------------------------------------


class MomentTable:
    """Dense table of central moments S[k1, k2, n1, n2] up to ``order_cap``."""

    __slots__ = ("order_cap", "values", "basis")

    def __init__(self, order_cap: int, values):
        self.order_cap = int(order_cap)
        self.basis = moment_basis(self.order_cap)
        values = np.array(values, dtype=float)
        if values.shape != (len(self.basis),):
            raise StateError(
                f"expected {len(self.basis)} moments for order cap {order_cap}, got {values.shape}")
        values.setflags(write=False)
        self.values = values

    def __getitem__(self, index) -> float:
        return float(self.values[self.basis.position(index)])

    def __len__(self):
        return len(self.values)

    def items(self):
        return zip(self.basis, self.values)

    def covariance(self) -> CovarianceMatrix:
        return CovarianceMatrix(second_moment_matrix(self.values, self.basis))

    def truncate(self, order_cap: int) -> "MomentTable":
        if order_cap > self.order_cap:
            raise ValueError("cannot truncate to a higher order")
        return MomentTable(order_cap, self.values[: basis_size(order_cap)])


def second_moment_matrix(values: np.ndarray, basis: MomentBasis | None = None) -> np.ndarray:
    """Assemble the (q, p, x, k) covariance from order-2 entries of a flat moment vector."""
    basis = basis or moment_basis(2)
    cov = np.empty((4, 4))
    for a in range(4):
        for b in range(a, 4):
            e = [0, 0, 0, 0]
            e[a] += 1
            e[b] += 1
            i, j = SLOT_TO_BASIS[a], SLOT_TO_BASIS[b]
            cov[i, j] = cov[j, i] = values[basis.position(e)]
    return cov


def _slot_covariance(cov) -> np.ndarray:
    m = cov.matrix if isinstance(cov, CovarianceMatrix) else np.asarray(cov, dtype=float)
    ix = list(SLOT_TO_BASIS)
    return m[np.ix_(ix, ix)]


def pairings(items: Sequence) -> Iterator[list]:
    """Yield every perfect matching of ``items`` as a list of pairs."""
    items = list(items)
    if not items:
        yield []
        return
    if len(items) % 2:
        return
    first = items[0]
    for i in range(1, len(items)):
        rest = items[1:i] + items[i + 1:]
        for tail in pairings(rest):
            yield [(first, items[i])] + tail


def pairing_count(k: int) -> int:
    """Number of pairings of k objects, (k-1)!/(2^(k/2-1) (k/2-1)!) for even k."""
    if k % 2:
        return 0
    if k == 0:
        return 1
    return math.factorial(k - 1) // (2 ** (k // 2 - 1) * math.factorial(k // 2 - 1))


def wick_moment(cov, index) -> float:
    """Central Gaussian moment by explicit summation over all pairings.

    Parameters
    ----------
    cov : CovarianceMatrix or array_like
        Covariance in the (q, p, x, k) basis.
    index : sequence of 4 ints
        Exponents (k1, k2, n1, n2) of (dp, dk, dq, dx).

    Returns
    -------
    float
        0 for odd total order, otherwise the sum over pairings of products
        of covariance entries.
    """
    index = tuple(int(i) for i in index)
    if len(index) != 4 or min(index) < 0:
        raise ValueError(f"bad multi-index {index}")
    m = as_covariance(cov).matrix
    slots = [SLOT_TO_BASIS[a] for a in range(4) for _ in range(index[a])]
    if len(slots) % 2:
        return 0.0
    total = 0.0
    for pairing in pairings(slots):
        term = 1.0
        for i, j in pairing:
            term *= m[i, j]
        total += term
    return total


class _IsserlisPlan:
    """Precomputed gather indices for the recursive form of Wick's theorem.

    m(e) = sum_b C[a, b] (e - d_a)_b m(e - d_a - d_b), with a the first
    occupied slot of e.
    """

    def __init__(self, order: int):
        basis = moment_basis(order)
        self.basis = basis
        self.steps = []
        for n in range(2, order + 1, 2):
            sl = basis.order_slice(n)
            exps = basis.exponents[sl]
            first = np.argmax(exps > 0, axis=1)
            reduced = exps.copy()
            reduced[np.arange(len(exps)), first] -= 1
            coef = reduced.astype(float)
            target = np.zeros((len(exps), 4), dtype=np.int64)
            for b in range(4):
                for r in range(len(exps)):
                    if reduced[r, b] > 0:
                        e = reduced[r].copy()
                        e[b] -= 1
                        target[r, b] = basis.position(e)
            self.steps.append((sl, first, coef, target))

    def evaluate(self, slot_cov: np.ndarray, out: np.ndarray | None = None) -> np.ndarray:
        if out is None:
            out = np.zeros(len(self.basis))
        else:
            out[:] = 0.0
        out[0] = 1.0
        for sl, first, coef, target in self.steps:
            acc = np.zeros(sl.stop - sl.start)
            rows = slot_cov[first]
            for b in range(4):
                acc += rows[:, b] * coef[:, b] * out[target[:, b]]
            out[sl] = acc
        return out


@lru_cache(maxsize=None)
def isserlis_plan(order: int) -> _IsserlisPlan:
    return _IsserlisPlan(order)


def gaussian_moment_vector(cov, order: int) -> np.ndarray:
    """All central Gaussian moments up to ``order`` as a flat vector in basis order."""
    return isserlis_plan(order).evaluate(_slot_covariance(cov))


def build_moment_table(spec: GaussianStateSpec | CovarianceMatrix, order_cap: int) -> MomentTable:
    if order_cap < 2:
        raise ValueError("order_cap must be at least 2")
    cov = spec.cov if isinstance(spec, GaussianStateSpec) else spec
    return MomentTable(order_cap, gaussian_moment_vector(cov, order_cap))


# ---------------------------------------------------------------------------
# Validity checks
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SymplecticReport:
    valid: bool
    symplectic_eigenvalues: tuple
    min_principal_minor: float


def symplectic_eigenvalues(cov) -> np.ndarray:
    """Ascending symplectic eigenvalues, the moduli of the spectrum of i*Omega*sigma."""
    m = np.asarray(cov.matrix if isinstance(cov, CovarianceMatrix) else cov, dtype=float)
    ev = np.abs(np.linalg.eigvals(1j * symplectic_form() @ m))
    ev = np.sort(ev)
    # eigenvalues come in +-nu pairs; average each pair
    return 0.5 * (ev[0::2] + ev[1::2])


def batch_symplectic_eigenvalues(covs: np.ndarray) -> np.ndarray:
    """Vectorised symplectic eigenvalues for an array of shape (n, 4, 4)."""
    ev = np.sort(np.abs(np.linalg.eigvals(symplectic_form() @ covs)), axis=-1)
    return 0.5 * (ev[..., 0::2] + ev[..., 1::2])


def positive_definite(covs: np.ndarray) -> np.ndarray | bool:
    """True where a symmetric matrix (or each of a stack) is positive definite.

    Symplectic eigenvalues only characterise a state when this holds; an
    indefinite matrix can still have all of them above 1/2.
    """
    covs = np.asarray(covs, dtype=float)
    ok = np.linalg.eigvalsh(covs)[..., 0] > 0
    return bool(ok) if ok.ndim == 0 else ok


def symplectic_check(cov) -> SymplecticReport:
    cov = as_covariance(cov)
    nu = symplectic_eigenvalues(cov)
    herm = cov.matrix + 0.5j * symplectic_form()
    minors = [np.linalg.det(herm[:n, :n]).real for n in range(1, 5)]
    return SymplecticReport(
        valid=positive_definite(cov.matrix) and bool(np.all(nu >= 0.5 - VALIDITY_TOL)),
        symplectic_eigenvalues=tuple(float(v) for v in nu),
        min_principal_minor=float(min(minors)),
    )


def cup_check(cov, epsilon: float) -> bool:
    """Classical uncertainty condition chi + i*eps*Omega/2 >= 0."""
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    cov = as_covariance(cov)
    nu = symplectic_eigenvalues(cov)
    return positive_definite(cov.matrix) and bool(np.all(nu >= 0.5 * epsilon - VALIDITY_TOL * epsilon))


def hur_from_covariance(cov) -> float:
    m = cov.matrix if isinstance(cov, CovarianceMatrix) else np.asarray(cov)
    return float(m[1, 1] * m[0, 0] - m[0, 1] ** 2 - 0.25)


def hur_value(table: MomentTable) -> float:
    """Uncertainty functional f = <dp^2><dq^2> - <dq dp>^2 - 1/4."""
    if table.order_cap < 2:
        raise ValueError("table must carry second moments")
    return table[2, 0, 0, 0] * table[0, 0, 2, 0] - table[1, 0, 1, 0] ** 2 - 0.25


def wigner_density(spec: GaussianStateSpec, point) -> float | np.ndarray:
    """Gaussian Wigner function at ``point`` (shape (4,) or (n, 4))."""
    m = spec.cov.matrix
    det = np.linalg.det(m)
    if not det > 0:
        raise StateError("covariance is singular or indefinite")
    d = np.asarray(point, dtype=float) - spec.means.as_array()
    inv = np.linalg.inv(m)
    quad = np.einsum("...i,ij,...j->...", d, inv, d)
    w = np.exp(-0.5 * quad) / ((2 * np.pi) ** 2 * np.sqrt(det))
    return float(w) if np.ndim(w) == 0 else w


__all__ = [
    "BASIS", "SLOT_TO_BASIS", "StateError", "MeanVector", "CovarianceMatrix",
    "GaussianStateSpec", "MomentBasis", "MomentTable", "SymplecticReport",
    "as_covariance", "basis_size", "build_moment_table", "cup_check",
    "gaussian_moment_vector", "hur_from_covariance", "hur_value", "moment_basis",
    "pairing_count", "pairings", "second_moment_matrix", "symplectic_check",
    "symplectic_eigenvalues", "symplectic_form", "wick_moment", "wigner_density",
]
