"""Slotted-time perturbed trajectories and their continuous-time embedding.

Indexing convention: ``V(k)`` is the cumulative perturbation carried by the
state with the same index,

    z(k) = z0 + sum_{j<k} mu(j) + V(k),    mu(j) in F(z(j)),

so ``z(0) = z0 + V(0)`` mirrors the continuous convention ``x(0) = x0 + U(0)``.
With this indexing the embedding ``U(t) = V(floor t) - (t - floor t) mu(floor t)``
and ``x~(t) = z(floor t)`` reproduces ``z`` exactly at integer times.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .core import PerturbationSignal, Trajectory, VectorField, min_norm_selector
from .errors import ArgumentError


def _fmt(v):
    return format(float(v), ".17g")


@dataclass
class DiscreteTrajectory:
    """States ``z(0..K)``, drifts ``mu(0..K-1)`` and perturbations ``V(0..K)``."""

    z0: np.ndarray
    states: np.ndarray
    drifts: np.ndarray
    perturbation: np.ndarray

    def __post_init__(self):
        self.z0 = np.atleast_1d(np.asarray(self.z0, dtype=float))
        self.states = np.atleast_2d(np.asarray(self.states, dtype=float))
        n = self.z0.size
        self.drifts = np.asarray(self.drifts, dtype=float).reshape(-1, n)
        self.perturbation = np.atleast_2d(np.asarray(self.perturbation, dtype=float))
        K = self.steps
        if self.states.shape != (K + 1, n) or self.perturbation.shape != (K + 1, n):
            raise ArgumentError("need K+1 states and perturbations for K drifts")

    @property
    def steps(self):
        return self.drifts.shape[0]

    @property
    def dimension(self):
        return self.z0.size

    def residual(self):
        """``max_k ||z(k) - z0 - sum_{j<k} mu(j) - V(k)||``."""
        csum = np.vstack([np.zeros(self.dimension), np.cumsum(self.drifts, axis=0)])
        return float(np.max(np.linalg.norm(
            self.states - self.z0 - csum - self.perturbation, axis=1)))

    def to_csv(self, path):
        """Rows ``k, z_*, mu_*, V_*``; the last row has no drift (empty cells)."""
        n = self.dimension
        header = (["k"] + [f"z_{i}" for i in range(n)] + [f"mu_{i}" for i in range(n)]
                  + [f"V_{i}" for i in range(n)])
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            for k in range(self.steps + 1):
                mu = ([_fmt(v) for v in self.drifts[k]] if k < self.steps else [""] * n)
                w.writerow([k] + [_fmt(v) for v in self.states[k]] + mu
                           + [_fmt(v) for v in self.perturbation[k]])


def _perturbation_table(V, K, n):
    if V is None:
        return np.zeros((K + 1, n))
    if callable(V):
        return np.stack([np.asarray(V(k), dtype=float).reshape(n) for k in range(K + 1)])
    arr = np.asarray(V, dtype=float).reshape(-1, n)
    if arr.shape[0] < K + 1:
        raise ArgumentError(f"need {K + 1} perturbation values, got {arr.shape[0]}")
    return arr[: K + 1].copy()


def discrete_trajectory(field: VectorField, z0, V, K: int,
                        selector=min_norm_selector) -> DiscreteTrajectory:
    """Iterate ``z(k+1) = z0 + sum_{j<=k} mu(j) + V(k+1)``.

    Parameters
    ----------
    field : VectorField
    z0 : array_like
    V : array_like of shape (>= K+1, n), callable ``k -> V(k)``, or None
    K : int
        Number of steps (``K = 0`` returns the single state ``z0 + V(0)``).
    selector : callable
    """
    if K < 0:
        raise ArgumentError("K must be non-negative")
    z0 = np.atleast_1d(np.asarray(z0, dtype=float))
    n = z0.size
    Vt = _perturbation_table(V, K, n)
    states = np.empty((K + 1, n))
    drifts = np.empty((K, n))
    acc = np.zeros(n)
    states[0] = z0 + Vt[0]
    for k in range(K):
        mu = np.asarray(selector(field.sample(states[k]), states[k]), dtype=float)
        drifts[k] = mu
        acc = acc + mu
        states[k + 1] = z0 + acc + Vt[k + 1]
    return DiscreteTrajectory(z0, states, drifts, Vt)


def embedded_perturbation(dt_traj: DiscreteTrajectory) -> PerturbationSignal:
    """``U(t) = V(floor t) - (t - floor t) mu(floor t)`` on ``[0, K]``."""
    V = dt_traj.perturbation
    mu = np.vstack([dt_traj.drifts, np.zeros((1, dt_traj.dimension))])
    K = dt_traj.steps

    def func(t):
        t = np.asarray(t, dtype=float)
        k = np.clip(np.floor(t).astype(int), 0, K)
        frac = (t - k)[..., None]
        return V[k] - frac * mu[k]

    sup = float(np.max(np.linalg.norm(V, axis=1))) + (
        float(np.max(np.linalg.norm(dt_traj.drifts, axis=1))) if K else 0.0)
    return PerturbationSignal(func, dt_traj.dimension, "discrete embedding", sup, True)


def embed_continuous(dt_traj: DiscreteTrajectory, samples_per_slot: int = 8):
    """Continuous perturbed trajectory reproducing ``z`` at integer times.

    Returns the signal ``U`` and a trajectory sampled at
    ``samples_per_slot`` points per unit slot with ``x~(t) = z(floor t)`` and
    drifts ``mu(floor t)``. For ``K = 0`` the grid is ``{0}``.
    """
    U = embedded_perturbation(dt_traj)
    K = dt_traj.steps
    if K == 0:
        times = np.zeros(1)
    else:
        times = np.linspace(0.0, K, K * samples_per_slot + 1)
        # integer times are hit exactly
        times[::samples_per_slot] = np.arange(K + 1)
    k = np.clip(np.floor(times).astype(int), 0, K)
    states = dt_traj.states[k]
    mu = np.vstack([dt_traj.drifts, np.zeros((1, dt_traj.dimension))])
    traj = Trajectory(times, states, mu[k], U, U.evaluate_many(times),
                      1.0 / samples_per_slot)
    return U, traj


def integral_form_residual(dt_traj: DiscreteTrajectory, traj: Trajectory):
    """``max ||x~(t) - z0 - int_0^t xi - U(t)||`` on the embedding grid.

    The drift is piecewise constant on slots so the integral is exact.
    """
    t = traj.times
    K = dt_traj.steps
    k = np.clip(np.floor(t).astype(int), 0, max(K - 1, 0))
    csum = np.vstack([np.zeros(dt_traj.dimension), np.cumsum(dt_traj.drifts, axis=0)])
    if K == 0:
        integral = np.zeros_like(traj.states)
    else:
        integral = csum[k] + (t - k)[:, None] * dt_traj.drifts[k]
    r = traj.states - dt_traj.z0 - integral - traj.u_values()
    return float(np.max(np.linalg.norm(r, axis=1)))


@dataclass
class DiscreteBoundCheck:
    passed: bool
    lhs: np.ndarray
    rhs: np.ndarray
    first_violation: Optional[int]

    def to_dict(self):
        return {
            "passed": bool(self.passed),
            "max_lhs": float(np.max(self.lhs)),
            "first_violation": self.first_violation,
        }


def _values_at_integers(traj: Trajectory, K: int):
    idx = np.searchsorted(traj.times, np.arange(K + 1) - 1e-9)
    idx = np.clip(idx, 0, len(traj.times) - 1)
    if not np.allclose(traj.times[idx], np.arange(K + 1), atol=1e-9):
        raise ArgumentError("continuous trajectory must be sampled at every integer")
    return traj.states[idx]


def check_discrete_bound(C: float, cont_unperturbed: Trajectory,
                         dt_traj: DiscreteTrajectory) -> DiscreteBoundCheck:
    """Check ``||x(k) - z(k)|| <= C (max_{j<k} ||mu_j|| + max_{j<=k} ||V(j)||)``.

    ``V(k)`` is included in the right-hand side because it acts on ``z(k)``
    itself under the indexing used here; the embedding gives
    ``sup_{t<=k} ||U(t)||`` at most that sum.
    """
    K = dt_traj.steps
    x = _values_at_integers(cont_unperturbed, K)
    lhs = np.linalg.norm(x - dt_traj.states, axis=1)
    mu_n = np.linalg.norm(dt_traj.drifts, axis=1)
    run_mu = np.concatenate([[0.0], np.maximum.accumulate(mu_n)]) if K else np.zeros(1)
    run_v = np.maximum.accumulate(np.linalg.norm(dt_traj.perturbation, axis=1))
    rhs = C * (run_mu + run_v)
    bad = np.flatnonzero(lhs > rhs * (1 + 1e-12) + 1e-12)
    return DiscreteBoundCheck(bad.size == 0, lhs, rhs, int(bad[0]) if bad.size else None)


def check_discrete_pairwise_bound(C: float, a: DiscreteTrajectory,
                                  b: DiscreteTrajectory) -> DiscreteBoundCheck:
    """Pairwise form ``||z'(k) - z(k)|| <= C (max ||mu - mu'|| + max ||V - V'||)``."""
    if a.steps != b.steps:
        raise ArgumentError("trajectories must have equal length")
    K = a.steps
    lhs = np.linalg.norm(a.states - b.states, axis=1)
    dmu = np.linalg.norm(a.drifts - b.drifts, axis=1)
    run_mu = np.concatenate([[0.0], np.maximum.accumulate(dmu)]) if K else np.zeros(1)
    run_v = np.maximum.accumulate(np.linalg.norm(a.perturbation - b.perturbation, axis=1))
    rhs = C * (run_mu + run_v)
    bad = np.flatnonzero(lhs > rhs * (1 + 1e-12) + 1e-12)
    return DiscreteBoundCheck(bad.size == 0, lhs, rhs, int(bad[0]) if bad.size else None)
