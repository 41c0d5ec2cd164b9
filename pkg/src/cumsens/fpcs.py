"""Finitely piecewise constant subgradient (FPCS) systems.

A PWL convex potential ``Phi(x) = max_i(-mu_i . x + b_i)`` has subdifferential
``conv{-mu_i : i active}``, so the flow ``x' in -dPhi(x)`` draws drifts from
``conv{mu_i : i active}``. The single-valued field used here selects the
minimal-norm element of that hull.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .core import (
    PerturbationSignal,
    SensitivityReport,
    VectorField,
    integrate_perturbed,
    sensitivity_ratio,
)
from .errors import ArgumentError
from .hull import min_norm_point, min_norm_point_exact


@dataclass(frozen=True)
class PwlConvexFunction:
    """Max of finitely many affine pieces ``-mu_i . x + b_i``.

    Parameters
    ----------
    mu : ndarray, shape (m, n)
    b : ndarray, shape (m,)
    """

    mu: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        mu = np.atleast_2d(np.asarray(self.mu, dtype=float))
        b = np.atleast_1d(np.asarray(self.b, dtype=float))
        if mu.shape[0] == 0 or mu.shape[0] != b.size:
            raise ArgumentError("need a non-empty list of (mu, b) pieces")
        if not (np.all(np.isfinite(mu)) and np.all(np.isfinite(b))):
            raise ArgumentError("pieces must be finite")
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "b", b)

    @property
    def dimension(self):
        return self.mu.shape[1]

    @property
    def n_pieces(self):
        return self.mu.shape[0]

    def piece_values(self, x):
        """Values of all pieces; ``x`` may be ``(n,)`` or ``(N, n)``."""
        x = np.asarray(x, dtype=float)
        return -(x @ self.mu.T) + self.b

    def __call__(self, x):
        return np.max(self.piece_values(x), axis=-1)

    # serialization -------------------------------------------------------

    def to_dict(self):
        return {
            "dimension": self.dimension,
            "pieces": [{"mu": m.tolist(), "b": float(b)} for m, b in zip(self.mu, self.b)],
        }

    @classmethod
    def from_dict(cls, d):
        try:
            n = int(d["dimension"])
            pieces = d["pieces"]
            mu = np.array([p["mu"] for p in pieces], dtype=float).reshape(len(pieces), -1)
            b = np.array([p["b"] for p in pieces], dtype=float)
        except (KeyError, TypeError, ValueError) as exc:
            raise ArgumentError(f"malformed PWL document: {exc}") from exc
        if mu.shape[1] != n:
            raise ArgumentError("piece slope length does not match dimension")
        return cls(mu, b)

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))

    def to_json(self):
        return json.dumps(self.to_dict())

    # common examples -----------------------------------------------------

    @classmethod
    def abs_1d(cls):
        """``|x|`` as ``max(x, -x)``."""
        return cls([[-1.0], [1.0]], [0.0, 0.0])

    @classmethod
    def l1_norm(cls, n=2):
        """``||x||_1`` as the max over the ``2**n`` sign patterns."""
        signs = np.array(np.meshgrid(*[[-1.0, 1.0]] * n, indexing="ij")).reshape(n, -1).T
        return cls(-signs, np.zeros(signs.shape[0]))


@dataclass
class SubdifferentialQuery:
    value: float
    active_indices: np.ndarray
    generators: np.ndarray

    def to_dict(self):
        return {
            "value": self.value,
            "active_indices": self.active_indices.tolist(),
            "subgradient_set_generators": self.generators.tolist(),
        }


def default_act_tol(value):
    return 1e-9 * (1.0 + abs(value))


def evaluate(phi: PwlConvexFunction, x, act_tol: Optional[float] = None) -> SubdifferentialQuery:
    """Value and active pieces of ``phi`` at ``x``.

    The generators are ``mu_i`` for active ``i``; ``-dPhi(x)`` is their hull.
    """
    vals = phi.piece_values(np.asarray(x, dtype=float))
    value = float(np.max(vals))
    tol = default_act_tol(value) if act_tol is None else float(act_tol)
    if tol < 0:
        raise ArgumentError("act_tol must be non-negative")
    active = np.flatnonzero(vals >= value - tol)
    return SubdifferentialQuery(value, active, phi.mu[active])


def min_norm_subgradient(query: SubdifferentialQuery, tol: float = 1e-10,
                         exact: bool = False) -> np.ndarray:
    """Minimal-norm element of ``conv{mu_i : i active}``.

    ``exact=True`` enumerates faces instead of running Wolfe's iteration; it is
    meant for at most a few generators.
    """
    if not tol > 0:
        raise ArgumentError("tol must be positive")
    G = query.generators
    if G.shape[0] == 1:
        return G[0].copy()
    if exact:
        return min_norm_point_exact(G)
    return min_norm_point(G, tol=tol)


def fpcs_field(phi: PwlConvexFunction, act_tol: Optional[float] = None,
               tol: float = 1e-10) -> VectorField:
    """Single-valued drift ``-argmin{||g|| : g in dPhi(x)}``."""

    def sampler(x):
        return min_norm_subgradient(evaluate(phi, x, act_tol), tol)

    gamma = float(np.max(np.linalg.norm(phi.mu, axis=1)) + np.max(np.abs(phi.b)))
    return VectorField(phi.dimension, sampler, gamma, "fpcs")


def fpcs_set_field(phi: PwlConvexFunction, act_tol: Optional[float] = None) -> VectorField:
    """Set-valued field returning every active generator ``mu_i``."""

    def sampler(x):
        return evaluate(phi, x, act_tol).generators

    gamma = float(np.max(np.linalg.norm(phi.mu, axis=1)) + np.max(np.abs(phi.b)))
    return VectorField(phi.dimension, sampler, gamma, "fpcs-set")


def empirical_sensitivity_constant(phi: PwlConvexFunction,
                                   family: Sequence[PerturbationSignal],
                                   x0, T, dt, act_tol=None):
    """Largest sensitivity ratio over a family of perturbations.

    Returns
    -------
    (float, list of SensitivityReport)
    """
    field = fpcs_field(phi, act_tol)
    base = integrate_perturbed(field, x0, PerturbationSignal.zero(phi.dimension), T, dt)
    reports: list[SensitivityReport] = []
    for U in family:
        pert = integrate_perturbed(field, x0, U, T, dt)
        reports.append(sensitivity_ratio(pert, base, U))
    if not reports:
        raise ArgumentError("family must be non-empty")
    return max(r.ratio for r in reports), reports


def random_piecewise_constant(rng, dimension, T, scale, n_jumps=10):
    """Piecewise-constant signal with ``sup ||U|| = scale`` exactly.

    Jump times are uniform on ``(0, T)``; values have random directions and
    norms rescaled so that the largest equals ``scale``.
    """
    jt = np.sort(rng.uniform(0.0, T, n_jumps))
    jt = np.concatenate([[0.0], jt])
    vals = rng.normal(size=(n_jumps + 1, dimension))
    vals /= np.linalg.norm(vals, axis=1, keepdims=True)
    vals *= rng.uniform(0.0, 1.0, size=(n_jumps + 1, 1))
    norms = np.linalg.norm(vals, axis=1)
    vals *= scale / norms.max()
    return PerturbationSignal.piecewise_constant(jt, vals, f"random pwc scale={scale:g}")
