"""
Time evolution of the central-moment hierarchy.

The state vector is ``[Q, P, X, K, S...]`` where ``S`` is the dense moment
table in graded order.  For a polynomial potential of degree d the equation
for a moment of order n reaches moments of order n + d - 2; those above the
order cap are supplied by a closure (Gaussian/Wick from the instantaneous
covariance, or zero).
"""

from __future__ import annotations

import io
import math
import os
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy import sparse

from .potentials import PolynomialPotential
from .states import (
    SLOT_TO_BASIS,
    GaussianStateSpec,
    MeanVector,
    MomentTable,
    basis_size,
    batch_symplectic_eigenvalues,
    build_moment_table,
    isserlis_plan,
    moment_basis,
    positive_definite,
    symplectic_check,
)

CLOSURES = ("wick", "zero")

#: f below this value counts as a violation; exact zero is saturation.
VIOLATION_TOL = 1e-12

CSV_COLUMNS = ("t", "f", "var_q", "var_p", "cov_qp", "var_x", "var_k", "cov_xk",
               "cov_qx", "cov_qk", "cov_px", "cov_pk", "Q", "P", "X", "K", "valid")

# (row, col) of each second-moment CSV column in the (q, p, x, k) covariance
_SECOND_MOMENT_PAIRS = ((0, 0), (1, 1), (0, 1), (2, 2), (3, 3), (2, 3),
                        (0, 2), (0, 3), (1, 2), (1, 3))


class IntegrationError(RuntimeError):
    """Non-finite values appeared during time stepping."""

    def __init__(self, t: float, message: str = "non-finite value during integration"):
        super().__init__(f"{message} at t={t!r}")
        self.t = t


class InvalidStateError(ValueError):
    """Initial covariance fails the quantum positivity check."""


@dataclass(frozen=True)
class IntegratorConfig:
    dt: float = 1e-3
    steps: int = 1000
    order_cap: int = 8
    closure: str = "wick"
    record_every: int = 1

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.steps < 0:
            raise ValueError("steps must be non-negative")
        if self.order_cap < 2:
            raise ValueError("order_cap must be at least 2")
        if self.closure not in CLOSURES:
            raise ValueError(f"closure must be one of {CLOSURES}")
        if self.record_every < 1:
            raise ValueError("record_every must be at least 1")


@dataclass(frozen=True)
class HybridState:
    t: float
    means: MeanVector
    moments: MomentTable

    @classmethod
    def from_spec(cls, spec: GaussianStateSpec, order_cap: int, t: float = 0.0) -> "HybridState":
        return cls(t, spec.means, build_moment_table(spec, order_cap))

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.means.as_array(), self.moments.values])


# ---------------------------------------------------------------------------
# Hierarchy operator
# ---------------------------------------------------------------------------


DENSE_LIMIT = 250_000


class _Hierarchy:
    """Sparse structure of the moment equations for one (order cap, degree, closure)."""

    def __init__(self, order_cap: int, degree: int, closure: str):
        self.order_cap = order_cap
        self.degree = degree
        self.closure = closure
        self.ext_order = order_cap + max(degree - 2, 0)
        cap = moment_basis(order_cap)
        ext = moment_basis(self.ext_order)
        n = len(cap)
        self.n = n
        self.n_ext = len(ext)
        exps = cap.exponents

        # derivative pairs (a, b) with 1 <= a + b <= degree
        self.pairs = [(a, s - a) for s in range(1, degree + 1) for a in range(s + 1)]

        rows, cols, vals = [], [], []
        for i, (k1, k2, n1, n2) in enumerate(exps):
            if n1 > 0:
                rows.append(i)
                cols.append(cap.position((k1 + 1, k2, n1 - 1, n2)))
                vals.append(n1)
            if n2 > 0:
                rows.append(i)
                cols.append(cap.position((k1, k2 + 1, n1, n2 - 1)))
                vals.append(n2)
        self.kinetic = sparse.csr_matrix((vals, (rows, cols)), shape=(n, n))

        # mean-force subtraction: -k1 dP/dt S[k1-1,...] - k2 dK/dt S[...,k2-1,...]
        self.p_weight = -exps[:, 0].astype(float)
        self.k_weight = -exps[:, 1].astype(float)
        self.p_index = np.array([cap.position((max(k1 - 1, 0), k2, n1, n2)) for k1, k2, n1, n2 in exps])
        self.k_index = np.array([cap.position((k1, max(k2 - 1, 0), n1, n2)) for k1, k2, n1, n2 in exps])

        rows, cols, vals = [], [], []
        mp_index, mp_weight, mk_index, mk_weight = [], [], [], []
        for r, (a, b) in enumerate(self.pairs):
            if a >= 1:
                mp_index.append(ext.position((0, 0, a - 1, b)))
                mp_weight.append(-1.0 / (math.factorial(a - 1) * math.factorial(b)))
            else:
                mp_index.append(0)
                mp_weight.append(0.0)
            if b >= 1:
                mk_index.append(ext.position((0, 0, a, b - 1)))
                mk_weight.append(-1.0 / (math.factorial(a) * math.factorial(b - 1)))
            else:
                mk_index.append(0)
                mk_weight.append(0.0)
            for i, (k1, k2, n1, n2) in enumerate(exps):
                if k1 > 0 and a >= 1:
                    rows.append(r * n + i)
                    cols.append(ext.position((k1 - 1, k2, n1 + a - 1, n2 + b)))
                    vals.append(-k1 / (math.factorial(a - 1) * math.factorial(b)))
                if k2 > 0 and b >= 1:
                    rows.append(r * n + i)
                    cols.append(ext.position((k1, k2 - 1, n1 + a, n2 + b - 1)))
                    vals.append(-k2 / (math.factorial(a) * math.factorial(b - 1)))
        self.force = sparse.csr_matrix((vals, (rows, cols)), shape=(len(self.pairs) * n, self.n_ext))
        # small operators are faster as dense arrays (sparse dispatch dominates)
        if self.force.shape[0] * self.force.shape[1] <= DENSE_LIMIT:
            self.force = self.force.toarray()
            self.kinetic = self.kinetic.toarray()
        self.pair_a = np.array([a for a, _ in self.pairs], dtype=np.int64)
        self.pair_b = np.array([b for _, b in self.pairs], dtype=np.int64)
        self.mp_index = np.array(mp_index, dtype=np.int64)
        self.mp_weight = np.array(mp_weight)
        self.mk_index = np.array(mk_index, dtype=np.int64)
        self.mk_weight = np.array(mk_weight)
        # fused (p, k) gathers used by rhs
        self.mf_index = np.stack([self.mp_index, self.mk_index])
        self.mf_weight = np.stack([self.mp_weight, self.mk_weight])
        self.sub_index = np.stack([self.p_index, self.k_index], axis=1)
        self.sub_weight = np.stack([self.p_weight, self.k_weight], axis=1)

        # slot-basis covariance entries, for the Wick closure
        self.slot_pos = np.array([[cap.position(tuple(int(a == s) + int(b == s) for s in range(4)))
                                   for b in range(4)] for a in range(4)])
        self.needs_closure = self.ext_order > order_cap
        if self.needs_closure and closure == "wick":
            self._plan = isserlis_plan(self.ext_order)

    def extend(self, s: np.ndarray) -> np.ndarray:
        # fresh buffers on every call: cached instances are shared between threads
        if not self.needs_closure:
            return s
        if self.closure == "wick":
            ext = self._plan.evaluate(s[self.slot_pos])
            ext[: self.n] = s
            return ext
        ext = np.zeros(self.n_ext)
        ext[: self.n] = s
        return ext

    def rhs(self, y: np.ndarray, pot: PolynomialPotential, out: np.ndarray | None = None) -> np.ndarray:
        if out is None:
            out = np.empty_like(y)
        s = y[4:]
        s_ext = self.extend(s)
        dtab = pot.derivative_table(y[0], y[2])
        if dtab.shape[0] <= self.degree:
            pad = self.degree + 1 - dtab.shape[0]
            dtab = np.pad(dtab, ((0, pad), (0, pad)))
        d = dtab[self.pair_a, self.pair_b]
        # mean forces (dP/dt, dK/dt)
        force = (self.mf_weight * s_ext[self.mf_index]) @ d
        out[0] = y[1]
        out[1] = force[0]
        out[2] = y[3]
        out[3] = force[1]
        ds = self.kinetic @ s
        ds += (self.sub_weight * s[self.sub_index]) @ force
        if len(self.pairs):
            ds += d @ (self.force @ s_ext).reshape(len(self.pairs), self.n)
        out[4:] = ds
        return out

    def rk4_step(self, y: np.ndarray, pot: PolynomialPotential, h: float) -> np.ndarray:
        k1 = self.rhs(y, pot)
        k2 = self.rhs(y + 0.5 * h * k1, pot)
        k3 = self.rhs(y + 0.5 * h * k2, pot)
        k4 = self.rhs(y + h * k3, pot)
        return y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


@lru_cache(maxsize=32)
def _hierarchy(order_cap: int, degree: int, closure: str) -> _Hierarchy:
    return _Hierarchy(order_cap, degree, closure)


def hierarchy_for(pot: PolynomialPotential, order_cap: int, closure: str = "wick") -> _Hierarchy:
    return _hierarchy(order_cap, max(pot.degree, 1), closure)


def _second_moment_positions(order_cap: int) -> np.ndarray:
    cap = moment_basis(order_cap)
    slot_of = {b: s for s, b in enumerate(SLOT_TO_BASIS)}
    out = []
    for i, j in _SECOND_MOMENT_PAIRS:
        e = [0, 0, 0, 0]
        e[slot_of[i]] += 1
        e[slot_of[j]] += 1
        out.append(cap.position(e))
    return np.array(out)


def _f_from_second(sm: np.ndarray) -> np.ndarray:
    return sm[..., 1] * sm[..., 0] - sm[..., 2] ** 2 - 0.25


def _cov_from_second(sm: np.ndarray) -> np.ndarray:
    covs = np.empty(sm.shape[:-1] + (4, 4))
    for c, (i, j) in enumerate(_SECOND_MOMENT_PAIRS):
        covs[..., i, j] = sm[..., c]
        covs[..., j, i] = sm[..., c]
    return covs


# ---------------------------------------------------------------------------
# Public right-hand sides
# ---------------------------------------------------------------------------


def mean_rhs(state: HybridState, pot: PolynomialPotential, closure: str = "wick") -> np.ndarray:
    """Time derivative of (Q, P, X, K)."""
    hier = hierarchy_for(pot, state.moments.order_cap, closure)
    return hier.rhs(state.as_vector(), pot)[:4]


def moment_rhs(state: HybridState, pot: PolynomialPotential, closure: str = "wick") -> MomentTable:
    """Time derivative of every moment within the table's order cap.

    The returned table holds dS/dt; its order-0 and order-1 entries are zero.
    """
    hier = hierarchy_for(pot, state.moments.order_cap, closure)
    return MomentTable(state.moments.order_cap, hier.rhs(state.as_vector(), pot)[4:])


def mean_energy(state: HybridState, pot: PolynomialPotential) -> float:
    """<H> = (<p^2> + <k^2>)/2 + <V>, with moments above the cap taken as Gaussian."""
    table = state.moments
    deg = pot.degree
    if deg > table.order_cap:
        values = isserlis_plan(deg).evaluate(
            table.values[hierarchy_for(pot, table.order_cap).slot_pos])
        values[: len(table.values)] = table.values
        moments = MomentTable(deg, values)
    else:
        moments = table
    m = state.means
    kinetic = 0.5 * (m.p ** 2 + moments[2, 0, 0, 0] + m.k ** 2 + moments[0, 2, 0, 0])
    potential = 0.0
    for (a, b), c in pot.coeffs.items():
        for i in range(a + 1):
            for j in range(b + 1):
                potential += (c * math.comb(a, i) * math.comb(b, j)
                              * m.q ** (a - i) * m.x ** (b - j) * moments[0, 0, i, j])
    return kinetic + potential


# ---------------------------------------------------------------------------
# Trajectories
# ---------------------------------------------------------------------------


@dataclass
class _Replay:
    hierarchy: _Hierarchy
    pot: PolynomialPotential
    dt: float
    states: np.ndarray


@dataclass
class Trajectory:
    """Recorded samples of an integration.

    ``second`` holds the ten second moments in the CSV column order
    (var_q, var_p, cov_qp, var_x, var_k, cov_xk, cov_qx, cov_qk, cov_px, cov_pk).
    """

    t: np.ndarray
    means: np.ndarray
    second: np.ndarray
    f: np.ndarray
    valid: np.ndarray
    replay: _Replay | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if len(self.t) > 1 and np.any(np.diff(self.t) <= 0):
            raise ValueError("trajectory times must be strictly increasing")

    @classmethod
    def from_samples(cls, t, f, second=None, means=None) -> "Trajectory":
        """Build a trajectory from bare samples, e.g. a test signal for f(t)."""
        t = np.asarray(t, dtype=float)
        f = np.asarray(f, dtype=float)
        n = len(t)
        second = np.full((n, 10), np.nan) if second is None else np.asarray(second, dtype=float)
        means = np.full((n, 4), np.nan) if means is None else np.asarray(means, dtype=float)
        return cls(t, means, second, f, f >= -VIOLATION_TOL)

    def __len__(self):
        return len(self.t)

    def covariances(self) -> np.ndarray:
        return _cov_from_second(self.second)

    def state_at(self, i: int) -> HybridState:
        if self.replay is None:
            raise ValueError("trajectory does not carry full hierarchy states")
        y = self.replay.states[i]
        cap = self.replay.hierarchy.order_cap
        return HybridState(float(self.t[i]), MeanVector.from_array(y[:4]), MomentTable(cap, y[4:]))

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        buf.write(",".join(CSV_COLUMNS) + "\n")
        for i in range(len(self.t)):
            row = [self.t[i], self.f[i], *self.second[i], *self.means[i]]
            buf.write(",".join(format(float(v), ".17g") for v in row))
            buf.write(f",{int(bool(self.valid[i]))}\n")
        text = buf.getvalue()
        if path is not None:
            with open(os.fspath(path), "w", newline="") as fh:
                fh.write(text)
        return text


def integrate(initial: GaussianStateSpec, pot: PolynomialPotential, cfg: IntegratorConfig,
              allow_invalid_state: bool = False, keep_states: bool = True,
              truncate_on_failure: bool = False) -> Trajectory:
    """Advance means and moments with fixed-step RK4.

    With ``truncate_on_failure`` a non-finite step ends the run early and
    the samples recorded so far are returned instead of raising.

    Raises
    ------
    InvalidStateError
        The initial covariance fails the positivity check and
        ``allow_invalid_state`` is not set.
    IntegrationError
        A non-finite value appeared; carries the failing time.
    """
    if not allow_invalid_state and not symplectic_check(initial.cov).valid:
        raise InvalidStateError("initial covariance fails the symplectic positivity check")
    hier = hierarchy_for(pot, cfg.order_cap, cfg.closure)
    y = HybridState.from_spec(initial, cfg.order_cap).as_vector()
    records = []
    with np.errstate(over="ignore", invalid="ignore"):
        for step in range(cfg.steps + 1):
            if step % cfg.record_every == 0 or step == cfg.steps:
                records.append((step * cfg.dt, y))
            if step == cfg.steps:
                break
            y_next = hier.rk4_step(y, pot, cfg.dt)
            if not np.all(np.isfinite(y_next)):
                if truncate_on_failure:
                    if records[-1][0] != step * cfg.dt:
                        records.append((step * cfg.dt, y))
                    break
                raise IntegrationError((step + 1) * cfg.dt)
            y = y_next
    return _make_trajectory(records, hier, pot, cfg.dt, keep_states)


def _make_trajectory(records, hier: _Hierarchy, pot, dt, keep_states=True) -> Trajectory:
    t = np.array([r[0] for r in records])
    states = np.array([r[1] for r in records])
    pos = _second_moment_positions(hier.order_cap) + 4
    second = states[:, pos]
    f = _f_from_second(second)
    try:
        covs = _cov_from_second(second)
        nu = batch_symplectic_eigenvalues(covs)
        valid = np.all(nu >= 0.5 - 1e-9, axis=1) & positive_definite(covs)
    except np.linalg.LinAlgError:
        valid = np.zeros(len(t), dtype=bool)
    replay = _Replay(hier, pot, dt, states) if keep_states else None
    return Trajectory(t, states[:, :4].copy(), second, f, valid, replay)


def propagate(y: np.ndarray, hier: _Hierarchy, pot: PolynomialPotential, span: float, dt: float) -> np.ndarray:
    """Integrate a raw state vector over ``span`` (either sign) in equal steps no longer than |dt|."""
    if span == 0:
        return y.copy()
    n = max(1, math.ceil(abs(span) / abs(dt) - 1e-9))
    h = span / n
    for _ in range(n):
        y = hier.rk4_step(y, pot, h)
    return y


def detect_zero_crossing(traj: Trajectory, tol: float = 1e-10) -> float | None:
    """First time at which f(t) turns negative.

    Saturation (f == 0) is not a violation; a sample must fall below
    -1e-12.  When the trajectory carries its hierarchy states, the bracketing
    interval is bisected by re-integrating from the last non-negative sample
    until |f| < ``tol``; otherwise the crossing is interpolated linearly.
    Returns None when f never goes negative.  If the very first sample is
    already negative its time is returned.
    """
    if len(traj) == 0:
        raise ValueError("empty trajectory")
    neg = np.flatnonzero(traj.f < -VIOLATION_TOL)
    if len(neg) == 0:
        return None
    i = int(neg[0])
    if i == 0:
        return float(traj.t[0])
    t0, t1 = float(traj.t[i - 1]), float(traj.t[i])
    f0, f1 = float(traj.f[i - 1]), float(traj.f[i])
    if traj.replay is None:
        return t0 + (t1 - t0) * f0 / (f0 - f1)

    rp = traj.replay
    y0 = rp.states[i - 1]
    pos = _second_moment_positions(rp.hierarchy.order_cap) + 4

    def f_at(tau):
        y = propagate(y0, rp.hierarchy, rp.pot, tau, rp.dt)
        return float(_f_from_second(y[pos]))

    lo, hi = 0.0, t1 - t0
    mid = lo
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        fm = f_at(mid)
        if abs(fm) < tol:
            break
        if fm >= 0:
            lo = mid
        else:
            hi = mid
        if hi - lo < 1e-15 * max(1.0, abs(t0)):
            break
    return t0 + mid


__all__ = [
    "CLOSURES", "CSV_COLUMNS", "HybridState", "IntegrationError", "IntegratorConfig",
    "InvalidStateError", "Trajectory", "detect_zero_crossing", "hierarchy_for",
    "integrate", "mean_energy", "mean_rhs", "moment_rhs", "propagate",
]
