"""Shared types, the perturbed-inclusion integrator and sensitivity ratios.

A perturbed trajectory satisfies ``x(t) = x0 + int_0^t xi + U(t)`` with
``xi(t)`` drawn from the drift set of a (possibly set-valued) field. The
integrator below is explicit Euler in which the cumulative perturbation enters
through exact increments ``U(t_{k+1}) - U(t_k)``, so ``U`` never needs to be
differentiable. The scheme is first order in ``dt``.

Convention: the state at ``t = 0`` is ``x0 + U(0)``, i.e. ``U(0)`` acts as an
initial jump and is included in every supremum of ``||U||``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import (
    ArgumentError,
    FieldUndefinedError,
    IntegrationDivergedError,
    UndefinedRatioError,
)
from .hull import min_norm_point


# ---------------------------------------------------------------------------
# fields and selectors
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class VectorField:
    """Set-valued drift map ``x -> F(x)`` represented by finite samples.

    Parameters
    ----------
    dimension : int
        State dimension.
    sampler : callable
        ``sampler(x)`` returns an array of shape ``(m, n)`` (or ``(n,)`` for a
        single drift). It may raise :class:`FieldUndefinedError` where the
        field is not defined.
    growth_constant : float, optional
        A constant ``gamma`` with ``||xi|| <= gamma (1 + ||x||)``.
    name : str
        Free-form label.
    """

    dimension: int
    sampler: Callable[[np.ndarray], np.ndarray]
    growth_constant: Optional[float] = None
    name: str = ""

    def __post_init__(self):
        if int(self.dimension) < 1:
            raise ArgumentError("dimension must be positive")

    def sample(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        D = np.asarray(self.sampler(x), dtype=float)
        if D.ndim == 1:
            D = D[None, :]
        if D.size == 0:
            raise FieldUndefinedError(f"empty drift set at x={x.tolist()}")
        if D.ndim != 2 or D.shape[1] != self.dimension:
            raise ArgumentError(
                f"drift of shape {D.shape} does not match dimension {self.dimension}"
            )
        return D

    @classmethod
    def linear(cls, A, name="linear"):
        A = np.atleast_2d(np.asarray(A, dtype=float))
        return cls(A.shape[0], lambda x: A @ x, float(np.linalg.norm(A, 2)), name)

    @classmethod
    def constant(cls, c, name="constant"):
        c = np.atleast_1d(np.asarray(c, dtype=float))
        return cls(c.size, lambda x: c, float(np.linalg.norm(c)), name)


def first_element_selector(drifts, x):
    """Pick the first sampled drift."""
    return drifts[0]


def min_norm_selector(drifts, x):
    """Pick the minimal-norm element of the convex hull of the drifts."""
    if drifts.shape[0] == 1:
        return drifts[0]
    return min_norm_point(drifts)


class RandomSelector:
    """Pick one sampled drift uniformly at random from a seeded stream."""

    def __init__(self, seed=0):
        self.seed = seed
        self._rng = np.random.default_rng(seed)

    def __call__(self, drifts, x):
        return drifts[self._rng.integers(drifts.shape[0])]


SELECTORS = {
    "min_norm": min_norm_selector,
    "first": first_element_selector,
}


def make_selector(name="min_norm", seed=0, direction=None):
    """Build a selector from its name (``min_norm``, ``first``, ``random``,
    ``adversarial``; the latter needs a ``direction`` callable)."""
    if name == "random":
        return RandomSelector(seed)
    if name == "adversarial":
        if direction is None:
            raise ArgumentError("adversarial selector needs a direction field")
        return AdversarialSelector(direction)
    try:
        return SELECTORS[name]
    except KeyError:
        raise ArgumentError(f"unknown selector {name!r}") from None


class AdversarialSelector:
    """Pick the drift maximizing the inner product with ``direction(x)``."""

    def __init__(self, direction):
        self.direction = direction

    def __call__(self, drifts, x):
        d = np.asarray(self.direction(x), dtype=float)
        return drifts[int(np.argmax(drifts @ d))]


# ---------------------------------------------------------------------------
# perturbations
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PerturbationSignal:
    """Right-continuous cumulative perturbation ``t -> U(t)``.

    Parameters
    ----------
    func : callable
        ``func(t)`` for a scalar ``t`` returns a vector. When ``vectorized`` is
        true, ``func(ts)`` for a 1-D array returns shape ``(len(ts), n)``.
    dimension : int
    description : str
    sup_norm_hint : float, optional
        Known value (or upper bound) of ``sup ||U||``.
    breakpoints : sequence of float, optional
        Jump locations; quadrature routines split panels there.
    """

    func: Callable
    dimension: int
    description: str = ""
    sup_norm_hint: Optional[float] = None
    vectorized: bool = False
    breakpoints: tuple = ()

    def evaluate(self, t) -> np.ndarray:
        return np.asarray(self.func(float(t)), dtype=float).reshape(self.dimension)

    def evaluate_many(self, ts) -> np.ndarray:
        ts = np.asarray(ts, dtype=float)
        if self.vectorized:
            out = np.asarray(self.func(ts), dtype=float)
            return out.reshape(ts.size, self.dimension)
        out = np.empty((ts.size, self.dimension))
        for i, t in enumerate(ts):
            out[i] = self.evaluate(t)
        return out

    def __call__(self, t):
        return self.evaluate(t)

    @classmethod
    def zero(cls, n):
        return cls(lambda t: np.zeros(np.shape(t) + (n,)), n, "zero", 0.0, True)

    @classmethod
    def constant(cls, c, description="constant"):
        c = np.atleast_1d(np.asarray(c, dtype=float))
        n = c.size
        return cls(
            lambda t: np.broadcast_to(c, np.shape(t) + (n,)).copy(),
            n,
            description,
            float(np.linalg.norm(c)),
            True,
        )

    @classmethod
    def piecewise_constant(cls, jump_times, values, description="piecewise-constant"):
        """``U(t) = values[i]`` for ``jump_times[i] <= t < jump_times[i+1]``.

        ``jump_times[0]`` must be 0 and the sequence strictly increasing.
        """
        jt = np.asarray(jump_times, dtype=float)
        vals = np.atleast_2d(np.asarray(values, dtype=float))
        if jt.ndim != 1 or jt.size != vals.shape[0] or jt.size == 0:
            raise ArgumentError("jump_times and values must have matching length")
        if jt[0] != 0.0 or np.any(np.diff(jt) <= 0):
            raise ArgumentError("jump_times must start at 0 and increase strictly")

        def func(t):
            idx = np.searchsorted(jt, t, side="right") - 1
            return vals[np.clip(idx, 0, None)]

        sup = float(np.max(np.linalg.norm(vals, axis=1)))
        return cls(func, vals.shape[1], description, sup, True, tuple(jt[1:]))

    @classmethod
    def sinusoidal(cls, amplitudes, frequencies, phases=None, description="sinusoidal"):
        """``U_i(t) = a_i sin(w_i t + p_i)``."""
        a = np.atleast_1d(np.asarray(amplitudes, dtype=float))
        w = np.broadcast_to(np.asarray(frequencies, dtype=float), a.shape)
        p = np.zeros_like(a) if phases is None else np.broadcast_to(
            np.asarray(phases, dtype=float), a.shape
        )

        def func(t):
            t = np.asarray(t, dtype=float)
            return a * np.sin(np.multiply.outer(t, w) + p)

        return cls(func, a.size, description, float(np.linalg.norm(a)), True)

    def reparametrize(self, time_map, description=None):
        """Signal ``t -> U(time_map(t))``; ``time_map`` must be increasing."""
        f = self.func
        if self.vectorized:
            g = lambda t: f(time_map(np.asarray(t, dtype=float)))  # noqa: E731
        else:
            g = lambda t: f(float(time_map(t)))  # noqa: E731
        return PerturbationSignal(
            g,
            self.dimension,
            description or f"{self.description} reparametrized",
            self.sup_norm_hint,
            self.vectorized,
        )


def is_right_continuous(U: PerturbationSignal, points, deltas=(1e-6, 1e-9, 1e-12), tol=1e-5):
    """Sampled right-continuity test: ``U(t + d) -> U(t)`` as ``d`` shrinks."""
    for t in points:
        u0 = U.evaluate(t)
        gaps = [np.linalg.norm(U.evaluate(t + d) - u0) for d in deltas]
        if gaps[-1] > tol:
            return False
    return True


# ---------------------------------------------------------------------------
# trajectories and reports
# ---------------------------------------------------------------------------


def _fmt(v):
    return format(float(v), ".17g")


@dataclass
class Trajectory:
    """Time-stamped states with the selected drifts and the perturbation.

    ``perturbation_values`` caches ``U`` on the grid (shape ``(N, n)``).
    """

    times: np.ndarray
    states: np.ndarray
    drifts: np.ndarray
    perturbation: Optional[PerturbationSignal] = None
    perturbation_values: Optional[np.ndarray] = None
    dt: Optional[float] = None

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.states = np.atleast_2d(np.asarray(self.states, dtype=float))
        self.drifts = np.atleast_2d(np.asarray(self.drifts, dtype=float))
        if not (len(self.times) == len(self.states) == len(self.drifts)):
            raise ArgumentError("times, states and drifts must have equal length")
        if len(self.times) > 1 and np.any(np.diff(self.times) <= 0):
            raise ArgumentError("times must be strictly increasing")

    @property
    def dimension(self):
        return self.states.shape[1]

    def __len__(self):
        return len(self.times)

    def u_values(self):
        if self.perturbation_values is not None:
            return self.perturbation_values
        if self.perturbation is None:
            return np.zeros_like(self.states)
        self.perturbation_values = self.perturbation.evaluate_many(self.times)
        return self.perturbation_values

    def prefix(self, count):
        pv = None if self.perturbation_values is None else self.perturbation_values[:count]
        return Trajectory(
            self.times[:count], self.states[:count], self.drifts[:count],
            self.perturbation, pv, self.dt,
        )

    def to_csv(self, path):
        """Write ``t, x_*, xi_*, U_*`` rows with 17 significant digits."""
        n = self.dimension
        header = (
            ["t"] + [f"x_{i}" for i in range(n)]
            + [f"xi_{i}" for i in range(n)] + [f"U_{i}" for i in range(n)]
        )
        U = self.u_values()
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            for k in range(len(self.times)):
                w.writerow(
                    [_fmt(self.times[k])]
                    + [_fmt(v) for v in self.states[k]]
                    + [_fmt(v) for v in self.drifts[k]]
                    + [_fmt(v) for v in U[k]]
                )


def read_trajectory_csv(path):
    """Read a CSV written by :meth:`Trajectory.to_csv`."""
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    n = (data.shape[1] - 1) // 3
    return Trajectory(
        data[:, 0], data[:, 1:1 + n], data[:, 1 + n:1 + 2 * n],
        perturbation_values=data[:, 1 + 2 * n:],
    )


@dataclass
class SensitivityReport:
    """Grid estimate of the sensitivity ratio over ``[0, horizon]``."""

    sup_deviation: float
    sup_perturbation: float
    ratio: float
    horizon: float
    dt: Optional[float] = None

    def to_dict(self):
        return {
            "sup_deviation": self.sup_deviation,
            "sup_perturbation": self.sup_perturbation,
            "ratio": self.ratio,
            "horizon": self.horizon,
            "dt": self.dt,
        }


def time_grid(T, dt):
    """Grid ``0, dt, 2dt, ..., T``; the last step is shortened to land on T."""
    if not dt > 0:
        raise ArgumentError("dt must be positive")
    if not T >= 0:
        raise ArgumentError("T must be non-negative")
    n = int(math.ceil(T / dt - 1e-9))
    times = np.arange(n + 1, dtype=float) * dt
    if n > 0:
        times[-1] = T
    return times


def integrate_perturbed(field: VectorField, x0, U: PerturbationSignal, T, dt,
                        selector=min_norm_selector, times=None) -> Trajectory:
    """Explicit Euler integration of a perturbed trajectory.

    ``x_{k+1} = x_k + h_k xi_k + U(t_{k+1}) - U(t_k)`` with ``xi_k`` chosen by
    ``selector`` from ``field.sample(x_k)`` and ``x_0 = x0 + U(0)``.

    Parameters
    ----------
    field : VectorField
    x0 : array_like
    U : PerturbationSignal
    T, dt : float
        Horizon and step. Ignored when ``times`` is given.
    selector : callable
        ``selector(drifts, x)`` returns one drift.
    times : array_like, optional
        Explicit strictly increasing grid starting at 0.

    Returns
    -------
    Trajectory

    Raises
    ------
    IntegrationDivergedError
        A state became non-finite; the valid prefix is attached.
    FieldUndefinedError
        The field has no drift at a visited state.
    """
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    n = field.dimension
    if x0.size != n or U.dimension != n:
        raise ArgumentError("x0, field and perturbation dimensions disagree")
    if times is None:
        times = time_grid(T, dt)
    else:
        times = np.asarray(times, dtype=float)
        dt = float(np.max(np.diff(times))) if times.size > 1 else dt
    Uv = U.evaluate_many(times)
    N = times.size
    states = np.empty((N, n))
    drifts = np.empty((N, n))
    x = x0 + Uv[0]
    for k in range(N):
        if not np.all(np.isfinite(x)):
            traj = Trajectory(times[:k], states[:k], drifts[:k], U, Uv[:k], dt)
            last = float(times[k - 1]) if k > 0 else float("nan")
            raise IntegrationDivergedError(
                f"non-finite state at t={times[k]:.6g}", last, traj
            )
        states[k] = x
        with np.errstate(over="ignore", invalid="ignore"):
            xi = np.asarray(selector(field.sample(x), x), dtype=float)
        drifts[k] = xi
        if k + 1 < N:
            with np.errstate(over="ignore", invalid="ignore"):
                x = x + (times[k + 1] - times[k]) * xi + (Uv[k + 1] - Uv[k])
    return Trajectory(times, states, drifts, U, Uv, dt)


def sensitivity_ratio(perturbed: Trajectory, unperturbed: Trajectory,
                      U: Optional[PerturbationSignal] = None) -> SensitivityReport:
    """``sup ||x~ - x|| / sup ||U||`` over the common grid.

    ``U`` defaults to the perturbation attached to ``perturbed``.
    """
    if perturbed.times.shape != unperturbed.times.shape or not np.allclose(
        perturbed.times, unperturbed.times, rtol=1e-12, atol=1e-12
    ):
        raise ArgumentError("trajectories must share the time grid")
    if U is None:
        Uv = perturbed.u_values()
    else:
        Uv = U.evaluate_many(perturbed.times)
    sup_u = float(np.max(np.linalg.norm(Uv, axis=1)))
    if not sup_u > 0:
        raise UndefinedRatioError("perturbation vanishes on the grid")
    dev = float(np.max(np.linalg.norm(perturbed.states - unperturbed.states, axis=1)))
    return SensitivityReport(dev, sup_u, dev / sup_u, float(perturbed.times[-1]),
                             perturbed.dt)


def pairwise_sensitivity_ratio(traj1: Trajectory, traj2: Trajectory) -> SensitivityReport:
    """Strong-sense ratio ``sup ||x1 - x2|| / sup ||U1 - U2||`` on a shared grid."""
    dU = traj1.u_values() - traj2.u_values()
    sup_u = float(np.max(np.linalg.norm(dU, axis=1)))
    if not sup_u > 0:
        raise UndefinedRatioError("perturbations coincide on the grid")
    dev = float(np.max(np.linalg.norm(traj1.states - traj2.states, axis=1)))
    return SensitivityReport(dev, sup_u, dev / sup_u, float(traj1.times[-1]), traj1.dt)


@dataclass
class GrowthCheck:
    ok: bool
    worst_ratio: float
    worst_point: np.ndarray = field(repr=False)


def check_growth_bound(field_: VectorField, gamma, samples: Sequence) -> GrowthCheck:
    """Check ``||xi|| <= gamma (1 + ||x||)`` for every sampled drift.

    Returns the verdict and the largest observed ``||xi|| / (1 + ||x||)``.
    """
    samples = [np.atleast_1d(np.asarray(s, dtype=float)) for s in samples]
    if not samples:
        raise ArgumentError("samples must be non-empty")
    worst, worst_x = -np.inf, None
    for x in samples:
        D = field_.sample(x)
        q = float(np.max(np.linalg.norm(D, axis=1))) / (1.0 + float(np.linalg.norm(x)))
        if q > worst:
            worst, worst_x = q, x
    return GrowthCheck(worst <= gamma * (1 + 1e-12), worst, worst_x)


def reparametrize_trajectory(traj: Trajectory, time_map, inverse_map) -> Trajectory:
    """Express a trajectory in a new clock ``s`` with ``t = time_map(s)``.

    States are carried over point by point; the new grid is
    ``inverse_map(traj.times)``. Drifts are rescaled by ``dt/ds``.
    """
    s = np.asarray(inverse_map(traj.times), dtype=float)
    ds = np.gradient(traj.times, s) if s.size > 1 else np.ones(1)
    return Trajectory(
        s, traj.states.copy(), traj.drifts * ds[:, None],
        None, traj.u_values().copy(), None,
    )
