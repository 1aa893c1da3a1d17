"""
Koopman (Hilbert-space) picture of a quantum oscillator bilinearly coupled
to a classical one.

Variables are the rescaled (qbar, pbar, xbar, kbar, pxbar, pkbar), with
hbar = kappa = 1.  ``pxbar`` and ``pkbar`` are the unobservable shift
operators of the classical sector.  Both the general bilinear system and
its "no unobservable coupling" restriction are linear, so trajectories are
advanced with RK4 written as a fixed propagator matrix.
"""

from __future__ import annotations

import io
import math
import os
from dataclasses import dataclass, fields

import numpy as np

VARIABLES = ("qbar", "pbar", "xbar", "kbar", "pxbar", "pkbar")
CSV_COLUMNS = ("t",) + VARIABLES + ("E_q", "E_c")


class KoopmanError(ValueError):
    pass


@dataclass(frozen=True)
class KoopmanCoupling:
    """Real and imaginary parts of the alpha_0x, alpha_0k, beta_0x, beta_0k couplings."""

    a1x: float = 0.0
    a2x: float = 0.0
    a1k: float = 0.0
    a2k: float = 0.0
    b1x: float = 0.0
    b2x: float = 0.0
    b1k: float = 0.0
    b2k: float = 0.0

    def __post_init__(self):
        for f in fields(self):
            v = float(getattr(self, f.name))
            if not math.isfinite(v):
                raise KoopmanError(f"{f.name} is not finite")
            object.__setattr__(self, f.name, v)

    def is_constrained(self, tol: float = 0.0) -> bool:
        """True when no unobservable operator drives the quantum sector."""
        return (abs(self.a1x - self.b2x) <= tol and abs(self.a1k - self.b2k) <= tol
                and abs(self.a2x + self.b1x) <= tol and abs(self.a2k + self.b1k) <= tol)

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


def constrained_coupling(a1x: float = 0.0, a1k: float = 0.0, a2x: float = 0.0, a2k: float = 0.0) -> KoopmanCoupling:
    """Coupling with beta^(2) = alpha^(1) and beta^(1) = -alpha^(2) in both channels."""
    return KoopmanCoupling(a1x=a1x, a2x=a2x, a1k=a1k, a2k=a2k,
                           b1x=-a2x, b2x=a1x, b1k=-a2k, b2k=a1k)


@dataclass(frozen=True)
class KoopmanState:
    qbar: float = 0.0
    pbar: float = 0.0
    xbar: float = 0.0
    kbar: float = 0.0
    pxbar: float = 0.0
    pkbar: float = 0.0
    omega_q: float = 1.0
    omega_c: float = 1.0

    def __post_init__(self):
        for f in fields(self):
            v = float(getattr(self, f.name))
            if not math.isfinite(v):
                raise KoopmanError(f"{f.name} is not finite")
            object.__setattr__(self, f.name, v)

    def as_array(self) -> np.ndarray:
        return np.array([getattr(self, n) for n in VARIABLES])

    def with_values(self, v) -> "KoopmanState":
        return KoopmanState(*(float(a) for a in v), omega_q=self.omega_q, omega_c=self.omega_c)


def generator_constrained(c: KoopmanCoupling, omega_q: float, omega_c: float) -> np.ndarray:
    """Matrix A with d/dt v = A v for the constrained system."""
    if not c.is_constrained():
        raise KoopmanError("coupling violates the no-unobservable-coupling constraint")
    A = np.zeros((6, 6))
    A[0, 1] = omega_q
    A[0, 2] = 2 * c.a2x
    A[0, 3] = 2 * c.a2k
    A[1, 0] = -omega_q
    A[1, 2] = -2 * c.a1x
    A[1, 3] = -2 * c.a1k
    A[2, 3] = omega_c
    A[3, 2] = -omega_c
    A[4, 5] = omega_c
    A[4, 0] = -2 * c.b2x
    A[4, 1] = 2 * c.b1x
    A[5, 4] = -omega_c
    A[5, 0] = -2 * c.b2k
    A[5, 1] = 2 * c.b1k
    return A


def generator_general(c: KoopmanCoupling, omega_q: float, omega_c: float) -> np.ndarray:
    """Matrix A with d/dt v = A v for the unconstrained bilinear coupling."""
    A = np.zeros((6, 6))
    # qbar
    A[0, 1] = omega_q
    A[0, 2] = c.a2x - c.b1x
    A[0, 3] = c.a2k - c.b1k
    A[0, 4] = c.a1x - c.b2x
    A[0, 5] = c.a1k - c.b2k
    # pbar
    A[1, 0] = -omega_q
    A[1, 2] = -(c.b2x + c.a1x)
    A[1, 3] = -(c.b2k + c.a1k)
    A[1, 4] = c.b1x + c.a2x
    A[1, 5] = c.b1k + c.a2k
    # xbar, kbar
    A[2, 3] = omega_c
    A[2, 0] = -(c.b1x + c.a2x)
    A[2, 1] = c.a1x - c.b2x
    A[3, 2] = -omega_c
    A[3, 0] = -(c.b1k + c.a2k)
    A[3, 1] = c.a1k - c.b2k
    # pxbar, pkbar
    A[4, 5] = omega_c
    A[4, 1] = c.b1x - c.a2x
    A[4, 0] = -(c.b2x + c.a1x)
    A[5, 4] = -omega_c
    A[5, 1] = c.b1k - c.a2k
    A[5, 0] = -(c.b2k + c.a1k)
    return A


def koopman_rhs_constrained(s: KoopmanState, c: KoopmanCoupling) -> np.ndarray:
    return generator_constrained(c, s.omega_q, s.omega_c) @ s.as_array()


def koopman_rhs_general(s: KoopmanState, c: KoopmanCoupling) -> np.ndarray:
    return generator_general(c, s.omega_q, s.omega_c) @ s.as_array()


def rk4_propagator(A: np.ndarray, dt: float) -> np.ndarray:
    """One classical RK4 step for a linear autonomous system, as a matrix."""
    hA = dt * A
    hA2 = hA @ hA
    hA3 = hA2 @ hA
    return np.eye(len(A)) + hA + hA2 / 2 + hA3 / 6 + hA3 @ hA / 24


@dataclass
class KoopmanTrajectory:
    t: np.ndarray
    states: np.ndarray
    E_q: np.ndarray
    E_c: np.ndarray

    def __post_init__(self):
        if len(self.t) > 1 and np.any(np.diff(self.t) <= 0):
            raise ValueError("trajectory times must be strictly increasing")

    def __len__(self):
        return len(self.t)

    def column(self, name: str) -> np.ndarray:
        return self.states[:, VARIABLES.index(name)]

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        buf.write(",".join(CSV_COLUMNS) + "\n")
        for i in range(len(self.t)):
            row = (self.t[i], *self.states[i], self.E_q[i], self.E_c[i])
            buf.write(",".join(format(float(v), ".17g") for v in row) + "\n")
        text = buf.getvalue()
        if path is not None:
            with open(os.fspath(path), "w", newline="") as fh:
                fh.write(text)
        return text


def koopman_integrate(initial: KoopmanState, c: KoopmanCoupling, dt: float, steps: int,
                      constrained: bool = True, record_every: int = 1) -> KoopmanTrajectory:
    """RK4 trajectory with energies E_q = w_q (q^2+p^2)/2 and E_c = w_c (x^2+k^2)/2."""
    if not dt > 0:
        raise KoopmanError("dt must be positive")
    if steps < 0 or record_every < 1:
        raise KoopmanError("steps must be >= 0 and record_every >= 1")
    gen = generator_constrained if constrained else generator_general
    P = rk4_propagator(gen(c, initial.omega_q, initial.omega_c), dt)
    v = initial.as_array()
    ts, out = [0.0], [v]
    for step in range(1, steps + 1):
        v = P @ v
        if step % record_every == 0 or step == steps:
            ts.append(step * dt)
            out.append(v)
    states = np.array(out)
    E_q = 0.5 * initial.omega_q * (states[:, 0] ** 2 + states[:, 1] ** 2)
    E_c = 0.5 * initial.omega_c * (states[:, 2] ** 2 + states[:, 3] ** 2)
    return KoopmanTrajectory(np.array(ts), states, E_q, E_c)


def backreaction_deviation(initial: KoopmanState, c: KoopmanCoupling, dt: float = 1e-3,
                           steps: int = 10_000, constrained: bool = True) -> float:
    """Max distance of (xbar, kbar) from the uncoupled trajectory.

    With ``constrained=True`` (the default) the coupling must satisfy the
    constraint; ``constrained=False`` runs the general system instead, in
    which the classical sector does feel the quantum one.
    """
    coupled = koopman_integrate(initial, c, dt, steps, constrained=constrained)
    free = koopman_integrate(initial, KoopmanCoupling(), dt, steps, constrained=True)
    d = coupled.states[:, 2:4] - free.states[:, 2:4]
    return float(np.max(np.hypot(d[:, 0], d[:, 1])))


def growth_exponent(traj: KoopmanTrajectory, t_min: float = 10.0, t_max: float = 100.0) -> float:
    """Least-squares slope of log E_q against log t over [t_min, t_max]."""
    mask = (traj.t >= t_min) & (traj.t <= t_max) & (traj.E_q > 0)
    if mask.sum() < 2:
        raise KoopmanError("not enough samples in the fit window")
    slope, _ = np.polyfit(np.log(traj.t[mask]), np.log(traj.E_q[mask]), 1)
    return float(slope)
