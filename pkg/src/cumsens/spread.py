"""Spread fields and kernel convolutions.

The epsilon-spread of ``F`` at ``x`` is the convex hull of all drifts of ``F``
over the ball ``B_eps(x)``. Here it is approximated from the inside by probing
``F`` at finitely many points of the ball; convex combinations are formed by
the selector during integration.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.special import ndtri, roots_jacobi
from scipy.stats import qmc

from .core import (
    AdversarialSelector,
    PerturbationSignal,
    SensitivityReport,
    Trajectory,
    VectorField,
    integrate_perturbed,
    min_norm_selector,
)
from .errors import ArgumentError, FieldUndefinedError


def ball_offsets(dimension: int, count: int, seed: int = 0) -> np.ndarray:
    """``count`` deterministic points of the unit ball, the first one at 0.

    A scrambled Sobol sequence in ``dimension + 1`` coordinates is mapped to
    the ball: ``dimension`` coordinates give a Gaussian direction and the last
    one a radius ``u ** (1/dimension)``.
    """
    if count < 1:
        raise ArgumentError("probe count must be at least 1")
    out = np.zeros((count, dimension))
    if count == 1:
        return out
    m = int(math.ceil(math.log2(max(count - 1, 1))))
    u = qmc.Sobol(dimension + 1, scramble=True, seed=seed).random_base2(max(m, 1))
    u = u[: count - 1]
    eps = 1e-12
    g = ndtri(np.clip(u[:, :dimension], eps, 1 - eps))
    g /= np.maximum(np.linalg.norm(g, axis=1, keepdims=True), 1e-300)
    rad = np.clip(u[:, dimension], 0.0, 1.0) ** (1.0 / dimension)
    out[1:] = g * rad[:, None]
    return out


@dataclass
class SpreadField:
    """Finite inner approximation of the epsilon-spread of ``base``.

    Parameters
    ----------
    base : VectorField
    epsilon : float
        Ball radius; 0 reproduces ``base`` exactly.
    probe_count : int
        Number of probes per ball (the centre included).
    seed : int
        Seed of the low-discrepancy probe pattern.
    offsets : ndarray, optional
        Explicit probe offsets (absolute units, each within ``epsilon``); they
        replace the generated pattern.
    anchor : callable, optional
        ``anchor(x)`` returns extra probe points (shape ``(k, n)``); points
        outside the ball are ignored.
    """

    base: VectorField
    epsilon: float
    probe_count: int = 32
    seed: int = 0
    offsets: Optional[np.ndarray] = None
    anchor: Optional[Callable] = None
    _pattern: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if not self.epsilon >= 0:
            raise ArgumentError("epsilon must be non-negative")
        if self.probe_count < 1:
            raise ArgumentError("probe_count must be at least 1")
        n = self.base.dimension
        if self.offsets is not None:
            off = np.atleast_2d(np.asarray(self.offsets, dtype=float))
            if off.shape[1] != n:
                raise ArgumentError("offsets have the wrong dimension")
            if np.any(np.linalg.norm(off, axis=1) > self.epsilon * (1 + 1e-12)):
                raise ArgumentError("offsets must lie in the epsilon-ball")
            self._pattern = off
        else:
            self._pattern = self.epsilon * ball_offsets(n, self.probe_count, self.seed)

    @property
    def dimension(self):
        return self.base.dimension

    def probes(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        pts = x + self._pattern
        if self.anchor is not None:
            extra = np.atleast_2d(np.asarray(self.anchor(x), dtype=float))
            if extra.size:
                near = np.linalg.norm(extra - x, axis=1) <= self.epsilon * (1 + 1e-12)
                pts = np.vstack([pts, extra[near]])
        return pts

    def sample(self, x) -> np.ndarray:
        if self.epsilon == 0 and self.anchor is None and self.offsets is None:
            return self.base.sample(x)
        drifts = []
        for y in self.probes(x):
            try:
                drifts.append(self.base.sample(y))
            except FieldUndefinedError:
                continue
        if not drifts:
            raise FieldUndefinedError("base field undefined at every probe")
        return np.vstack(drifts)

    def as_field(self) -> VectorField:
        if self.epsilon == 0 and self.anchor is None and self.offsets is None:
            return self.base
        g = self.base.growth_constant
        if g is not None:
            g = g * (1.0 + self.epsilon)
        return VectorField(self.dimension, self.sample, g, f"spread[{self.epsilon:g}]")


def spread_sample(sf: SpreadField, x) -> np.ndarray:
    """Drifts of the base field gathered over the probes of ``B_eps(x)``."""
    return sf.sample(x)


def spread_integrate(sf: SpreadField, x0, U: PerturbationSignal, T, dt,
                     selector=min_norm_selector) -> Trajectory:
    """Perturbed trajectory of the spread field (Euler, as in the core)."""
    return integrate_perturbed(sf.as_field(), x0, U, T, dt, selector)


def outward_selector(center=None):
    """Adversarial selector pushing away from ``center`` (default the origin)."""
    c = None if center is None else np.asarray(center, dtype=float)

    def direction(x):
        return x if c is None else x - c

    return AdversarialSelector(direction)


# ---------------------------------------------------------------------------
# kernels and convolution
# ---------------------------------------------------------------------------


def _sphere_rule(dim_sphere: int, k: int):
    """Product rule on the unit sphere ``S^d`` in ``R^{d+1}``.

    Built recursively: ``dsigma_d = (1 - t^2)^((d-2)/2) dt dsigma_{d-1}`` with
    Gauss-Jacobi nodes in ``t`` and ``2k`` equispaced azimuths on ``S^1``.
    """
    m = 2 * k
    ph = 2 * np.pi * (np.arange(m) + 0.5) / m
    pts = np.stack([np.cos(ph), np.sin(ph)], axis=1)
    w = np.full(m, 2 * np.pi / m)
    for d in range(2, dim_sphere + 1):
        t, wt = roots_jacobi(k, (d - 2) / 2.0, (d - 2) / 2.0)
        st = np.sqrt(1.0 - t * t)
        pts = np.concatenate(
            [np.column_stack([np.full(len(pts), ti), si * pts]) for ti, si in zip(t, st)]
        )
        w = np.concatenate([wi * w for wi in wt])
    return pts, w


def ball_quadrature(dimension: int, radius: float, k: int):
    """Centrally symmetric quadrature on the ball of given radius.

    Gauss-Legendre on the segment in 1-D; otherwise Gauss-Jacobi in the
    radius (weight ``r^(n-1)``) times a product rule on the unit sphere.
    Returns nodes ``(M, n)`` and volume weights ``(M,)``.
    """
    if k < 1:
        raise ArgumentError("quadrature order must be positive")
    if dimension == 1:
        x, w = np.polynomial.legendre.leggauss(k)
        return radius * x[:, None], radius * w
    xr, wr = roots_jacobi(k, 0.0, dimension - 1.0)
    r = 0.5 * radius * (xr + 1.0)
    wr = wr * (0.5 * radius) ** dimension
    dirs, wd = _sphere_rule(dimension - 1, k)
    nodes = (r[:, None, None] * dirs[None, :, :]).reshape(-1, dimension)
    W = (wr[:, None] * wd[None, :]).ravel()
    return nodes, W


@dataclass
class Kernel:
    """Non-negative weight on the ball ``B_eps(0)``, normalized to integral 1.

    Parameters
    ----------
    radius : float
    dimension : int
    profile : callable
        ``profile(offsets)`` for an ``(M, n)`` array returns unnormalized
        non-negative weights.
    name : str
    norm_order : int
        Quadrature order used to compute the normalization constant.
    """

    radius: float
    dimension: int
    profile: Callable[[np.ndarray], np.ndarray]
    name: str = "kernel"
    norm_order: int = 32
    normalization: float = field(init=False)

    def __post_init__(self):
        if not self.radius > 0:
            raise ArgumentError("kernel radius must be positive")
        k = self.norm_order if self.dimension <= 3 else 16
        nodes, w = ball_quadrature(self.dimension, self.radius, k)
        vals = np.asarray(self.profile(nodes), dtype=float)
        if np.any(vals < 0) or not np.all(np.isfinite(vals)):
            raise ArgumentError("kernel weight must be finite and non-negative")
        Z = float(w @ vals)
        if not (Z > 0 and math.isfinite(Z)):
            raise ArgumentError("kernel is not normalizable")
        self.normalization = Z

    def __call__(self, offsets) -> np.ndarray:
        offsets = np.atleast_2d(np.asarray(offsets, dtype=float))
        inside = np.linalg.norm(offsets, axis=1) <= self.radius
        return np.where(inside, self.profile(offsets) / self.normalization, 0.0)

    @classmethod
    def uniform(cls, radius, dimension):
        return cls(radius, dimension, lambda y: np.ones(len(y)), "uniform")

    @classmethod
    def epanechnikov(cls, radius, dimension):
        return cls(radius, dimension,
                   lambda y: np.clip(1.0 - np.sum(y * y, axis=1) / radius**2, 0.0, None),
                   "epanechnikov")

    @classmethod
    def bump(cls, radius, dimension):
        def prof(y):
            q = np.sum(y * y, axis=1) / radius**2
            out = np.zeros(len(y))
            m = q < 1
            out[m] = np.exp(-1.0 / (1.0 - q[m]))
            return out

        return cls(radius, dimension, prof, "bump")


def convolve_field(base: VectorField, kernel: Kernel, quad_points: int = 8,
                   selector=min_norm_selector) -> VectorField:
    """Field ``x -> sum_j w_j xi(x - y_j)`` with ``w_j`` the kernel-weighted
    quadrature weights renormalized to sum 1.

    The output at ``x`` is a convex combination of drifts probed in
    ``B_eps(x)``, hence lies in the spread of ``base``.
    """
    if kernel.dimension != base.dimension:
        raise ArgumentError("kernel and field dimensions differ")
    nodes, w = ball_quadrature(base.dimension, kernel.radius, quad_points)
    weights = w * kernel(nodes)
    keep = weights > 0
    nodes, weights = nodes[keep], weights[keep]
    total = weights.sum()
    if not total > 0:
        raise ArgumentError("kernel vanishes on every quadrature node")
    weights = weights / total

    def sampler(x):
        x = np.asarray(x, dtype=float)
        acc = np.zeros(base.dimension)
        for wj, yj in zip(weights, nodes):
            y = x - yj
            acc += wj * np.asarray(selector(base.sample(y), y), dtype=float)
        return acc

    fld = VectorField(base.dimension, sampler, base.growth_constant,
                      f"convolved[{kernel.name}, {len(nodes)} nodes]")
    return fld


def convolution_nodes(dimension, radius, quad_points):
    """Nodes used by :func:`convolve_field` (for membership checks)."""
    return ball_quadrature(dimension, radius, quad_points)[0]


# ---------------------------------------------------------------------------
# bound checks
# ---------------------------------------------------------------------------


@dataclass
class SpreadBoundCheck:
    passed: bool
    lhs: list
    rhs: list

    def to_dict(self):
        return {"passed": self.passed, "lhs": self.lhs, "rhs": self.rhs}


def check_spread_bound(C: float, epsilon: float, reports: Sequence) -> SpreadBoundCheck:
    """Check ``sup_dev <= C (2 eps + sup_U) + 3 eps`` for every report.

    ``reports`` holds :class:`SensitivityReport` objects or
    ``(sup_deviation, sup_perturbation)`` pairs (the latter allows ``U = 0``).
    """
    if not C > 0:
        raise ArgumentError("C must be positive")
    lhs, rhs = [], []
    for rep in reports:
        if isinstance(rep, SensitivityReport):
            dev, sup_u = rep.sup_deviation, rep.sup_perturbation
        else:
            dev, sup_u = rep
        lhs.append(float(dev))
        rhs.append(float(C * (2 * epsilon + sup_u) + 3 * epsilon))
    return SpreadBoundCheck(all(a <= b for a, b in zip(lhs, rhs)), lhs, rhs)


def spread_bound_pointwise(perturbed: Trajectory, unperturbed: Trajectory,
                           C: float, epsilon: float) -> SpreadBoundCheck:
    """Time-resolved form: ``||x~(t) - x(t)|| <= C (2 eps + sup_{s<=t} ||U||) + 3 eps``."""
    dev = np.linalg.norm(perturbed.states - unperturbed.states, axis=1)
    run = np.maximum.accumulate(np.linalg.norm(perturbed.u_values(), axis=1))
    rhs = C * (2 * epsilon + run) + 3 * epsilon
    return SpreadBoundCheck(bool(np.all(dev <= rhs)), dev.tolist(), rhs.tolist())


def deviation_pair(a: Trajectory, b: Trajectory):
    """``(sup ||a - b||, sup ||U_a - U_b||)`` on a shared grid."""
    dev = float(np.max(np.linalg.norm(a.states - b.states, axis=1)))
    du = float(np.max(np.linalg.norm(a.u_values() - b.u_values(), axis=1)))
    return dev, du
