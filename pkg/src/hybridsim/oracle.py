"""
Monte Carlo characteristics oracle.

Samples are drawn from the Gaussian phase-space density of a state and
moved along Hamilton's equations for H = (p^2 + k^2)/2 + V(q, x).  For
potentials at most quadratic in q this reproduces the hybrid dynamics
exactly, which makes the ensemble an independent reference for the moment
hierarchy.

Reproducibility: samples come from ``numpy.random.default_rng(seed)``
(PCG64) as standard normals of shape (count, 4), mapped through the lower
Cholesky factor of the covariance in (q, p, x, k) order.

Standard errors use a grouped (delete-one-block) jackknife over contiguous
blocks of particles.
"""

from __future__ import annotations

import io
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .dynamics import IntegratorConfig, integrate
from .potentials import PolynomialPotential
from .states import SLOT_TO_BASIS, GaussianStateSpec, moment_basis

DEFAULT_GROUPS = 50
CSV_COLUMNS = ("t", "f_mc", "f_mc_stderr", "f_hierarchy")


class OracleError(RuntimeError):
    pass


def default_threads() -> int:
    """Worker count from HYBRIDSIM_THREADS, else 1."""
    raw = os.environ.get("HYBRIDSIM_THREADS", "")
    try:
        n = int(raw)
    except ValueError:
        return 1
    return max(1, n)


@dataclass(frozen=True)
class Ensemble:
    """Particles as rows (q, p, x, k)."""

    particles: np.ndarray
    seed: int
    t: float = 0.0

    @property
    def count(self) -> int:
        return len(self.particles)


@dataclass(frozen=True)
class MomentEstimate:
    value: float
    std_error: float

    def __post_init__(self):
        if not self.std_error >= 0:
            raise ValueError("std_error must be non-negative")

    def agrees(self, reference: float, n_se: float = 3.0) -> bool:
        return abs(self.value - reference) <= n_se * self.std_error


def oracle_supported(pot: PolynomialPotential) -> bool:
    """True when V is at most quadratic in q, so characteristics are exact."""
    return all(m <= 2 for m, _ in pot.coeffs)


def sample_gaussian(spec: GaussianStateSpec, count: int, seed: int) -> Ensemble:
    """Draw ``count`` i.i.d. phase-space points from the state's Gaussian density."""
    if count < 1:
        raise ValueError("count must be positive")
    try:
        L = np.linalg.cholesky(spec.cov.matrix)
    except np.linalg.LinAlgError:
        raise OracleError("covariance is not positive definite") from None
    rng = np.random.default_rng(seed)
    z = rng.standard_normal((count, 4))
    return Ensemble(spec.means.as_array() + z @ L.T, int(seed))


def _forces(pot: PolynomialPotential):
    dq = pot.derivative(1, 0)
    dx = pot.derivative(0, 1)

    def deriv(y):
        out = np.empty_like(y)
        out[:, 0] = y[:, 1]
        out[:, 2] = y[:, 3]
        out[:, 1] = -dq(y[:, 0], y[:, 2])
        out[:, 3] = -dx(y[:, 0], y[:, 2])
        return out

    return deriv


def _evolve_block(y: np.ndarray, deriv, dt: float, steps: int, t0: float, offset: int) -> np.ndarray:
    y = y.copy()
    for step in range(steps):
        k1 = deriv(y)
        k2 = deriv(y + 0.5 * dt * k1)
        k3 = deriv(y + 0.5 * dt * k2)
        k4 = deriv(y + dt * k3)
        y += dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        bad = ~np.isfinite(y).all(axis=1)
        if bad.any():
            idx = offset + int(np.flatnonzero(bad)[0])
            raise OracleError(f"particle {idx} became non-finite at t = {t0 + (step + 1) * dt:.6g}")
    return y


def evolve_ensemble(e: Ensemble, pot: PolynomialPotential, dt: float, steps: int,
                    threads: int | None = None) -> Ensemble:
    """Advance every particle by ``steps`` RK4 steps of size ``dt``.

    Particles are independent, so the result does not depend on how they
    are split between workers.
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    threads = default_threads() if threads is None else max(1, int(threads))
    deriv = _forces(pot)
    if threads == 1 or e.count < 2 * threads:
        y = _evolve_block(e.particles, deriv, dt, steps, e.t, 0)
    else:
        bounds = np.linspace(0, e.count, threads + 1).astype(int)
        with ThreadPoolExecutor(threads) as pool:
            parts = pool.map(lambda ab: _evolve_block(e.particles[ab[0]:ab[1]], deriv, dt, steps, e.t, ab[0]),
                             zip(bounds[:-1], bounds[1:]))
            y = np.concatenate(list(parts))
    return Ensemble(y, e.seed, e.t + steps * dt)


# ---------------------------------------------------------------------------
# Moments with jackknife errors
# ---------------------------------------------------------------------------


def _to_basis_exponents(index) -> tuple:
    """Hierarchy multi-index (k1, k2, n1, n2) -> exponents of (q, p, x, k)."""
    exps = [0, 0, 0, 0]
    for slot, e in enumerate(index):
        exps[SLOT_TO_BASIS[slot]] = int(e)
    return tuple(exps)


class _BlockSums:
    """Per-block sums of all monomials of the deviations up to a given order.

    Deviations are taken about the full-sample mean; the exact central
    moments of any subsample follow from a binomial mean-shift expansion.
    """

    def __init__(self, particles: np.ndarray, order: int, groups: int):
        n = len(particles)
        groups = max(2, min(groups, n))
        self.order = order
        self.mean = particles.mean(axis=0)
        basis = moment_basis(order)
        # exponents of (q, p, x, k) for each basis entry
        self.exps = [_to_basis_exponents(ix) for ix in basis.exponents]
        self.pos = {e: i for i, e in enumerate(self.exps)}
        bounds = np.linspace(0, n, groups + 1).astype(int)
        self.counts = np.diff(bounds).astype(float)
        self.sums = np.zeros((groups, len(self.exps)))
        for g, (a, b) in enumerate(zip(bounds[:-1], bounds[1:])):
            d = particles[a:b] - self.mean
            mono = {}
            for i, e in enumerate(self.exps):
                if sum(e) == 0:
                    m = np.ones(len(d))
                else:
                    v = next(j for j in range(4) if e[j] > 0)
                    prev = list(e)
                    prev[v] -= 1
                    m = mono[tuple(prev)] * d[:, v]
                mono[e] = m
                self.sums[g, i] = m.sum()

    def replicates(self):
        """(sums, counts) for the full sample followed by each leave-one-block-out sample."""
        total = self.sums.sum(axis=0)
        n = self.counts.sum()
        sums = np.vstack([total, total - self.sums])
        counts = np.concatenate([[n], n - self.counts])
        return sums, counts

    def central(self, exps: tuple, sums: np.ndarray, counts: np.ndarray) -> np.ndarray:
        raw = sums / counts[:, None]
        mu = [raw[:, self.pos[tuple(int(i == a) for i in range(4))]] for a in range(4)]
        out = np.zeros(len(counts))
        ranges = [range(e + 1) for e in exps]
        for j0 in ranges[0]:
            for j1 in ranges[1]:
                for j2 in ranges[2]:
                    for j3 in ranges[3]:
                        j = (j0, j1, j2, j3)
                        coef = np.ones(len(counts))
                        for a in range(4):
                            r = exps[a] - j[a]
                            if r:
                                coef = coef * math.comb(exps[a], j[a]) * (-mu[a]) ** r
                        out += coef * raw[:, self.pos[j]]
        return out


def _jackknife(values: np.ndarray) -> MomentEstimate:
    full, loo = values[0], values[1:]
    g = len(loo)
    se = math.sqrt((g - 1) / g * float(np.sum((loo - loo.mean()) ** 2)))
    return MomentEstimate(float(full), se)


def estimate_moments(e: Ensemble, indices, groups: int = DEFAULT_GROUPS) -> list[MomentEstimate]:
    """Central sample moments for several hierarchy multi-indices (k1, k2, n1, n2)."""
    indices = [tuple(int(v) for v in ix) for ix in indices]
    order = max((sum(ix) for ix in indices), default=0)
    bs = _BlockSums(e.particles, max(order, 1), groups)
    sums, counts = bs.replicates()
    return [_jackknife(bs.central(_to_basis_exponents(ix), sums, counts)) for ix in indices]


def estimate_moment(e: Ensemble, index, groups: int = DEFAULT_GROUPS) -> MomentEstimate:
    """Central sample moment S[k1, k2, n1, n2] with a grouped jackknife standard error."""
    return estimate_moments(e, [index], groups)[0]


def estimate_f(e: Ensemble, groups: int = DEFAULT_GROUPS) -> MomentEstimate:
    """<dp^2><dq^2> - <dq dp>^2 - 1/4 of the ensemble, with jackknife error."""
    bs = _BlockSums(e.particles, 2, groups)
    sums, counts = bs.replicates()
    vq = bs.central((2, 0, 0, 0), sums, counts)
    vp = bs.central((0, 2, 0, 0), sums, counts)
    cqp = bs.central((1, 1, 0, 0), sums, counts)
    return _jackknife(vq * vp - cqp ** 2 - 0.25)


# ---------------------------------------------------------------------------
# Oracle versus hierarchy
# ---------------------------------------------------------------------------


@dataclass
class OracleComparison:
    t: np.ndarray
    f_mc: np.ndarray
    f_mc_stderr: np.ndarray
    f_hierarchy: np.ndarray

    def deviations_in_se(self) -> np.ndarray:
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.abs(self.f_mc - self.f_hierarchy) / self.f_mc_stderr

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        buf.write(",".join(CSV_COLUMNS) + "\n")
        for row in zip(self.t, self.f_mc, self.f_mc_stderr, self.f_hierarchy):
            buf.write(",".join(format(float(v), ".17g") for v in row) + "\n")
        text = buf.getvalue()
        if path is not None:
            with open(os.fspath(path), "w", newline="") as fh:
                fh.write(text)
        return text


def compare_with_hierarchy(spec: GaussianStateSpec, pot: PolynomialPotential, times, count: int = 100_000,
                           seed: int = 0, dt: float = 1e-3, order_cap: int = 8, closure: str = "wick",
                           allow_invalid_state: bool = False, threads: int | None = None) -> OracleComparison:
    """f(t) from a sampled ensemble and from the moment hierarchy at the given checkpoint times.

    Checkpoints are rounded to the nearest multiple of ``dt``.
    """
    if not oracle_supported(pot):
        raise OracleError("potential is not quadratic in q; characteristics would not represent the dynamics")
    steps_at = sorted({int(round(float(t) / dt)) for t in times})
    if not steps_at or steps_at[0] < 0:
        raise ValueError("checkpoint times must be non-negative")
    traj = integrate(spec, pot, IntegratorConfig(dt=dt, steps=max(steps_at[-1], 1), order_cap=order_cap,
                                                 closure=closure),
                     allow_invalid_state=allow_invalid_state, keep_states=False)
    ens = sample_gaussian(spec, count, seed)
    done = 0
    t_out, f_mc, se, f_h = [], [], [], []
    for s in steps_at:
        if s > done:
            ens = evolve_ensemble(ens, pot, dt, s - done, threads)
            done = s
        est = estimate_f(ens)
        t_out.append(s * dt)
        f_mc.append(est.value)
        se.append(est.std_error)
        f_h.append(traj.f[s])
    return OracleComparison(np.array(t_out), np.array(f_mc), np.array(se), np.array(f_h))
