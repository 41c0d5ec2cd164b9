"""Minimal-norm point of the convex hull of a finite point set.

Two solvers are provided: Wolfe's iterative algorithm for general use and an
exact enumeration over affinely independent subsets, which is cheap for a
handful of generators and serves as a cross-check.
"""

from itertools import combinations

import numpy as np

from .errors import ArgumentError, NumericError


def _as_points(points):
    P = np.atleast_2d(np.asarray(points, dtype=float))
    if P.ndim != 2 or P.shape[0] == 0:
        raise ArgumentError("need a non-empty (m, n) array of points")
    return P


def _affine_minimizer(Q):
    """Weights of the min-norm point of the affine hull of the rows of Q."""
    k = Q.shape[0]
    if k == 1:
        return np.ones(1)
    # KKT system of min ||Q^T w||^2 subject to sum(w) = 1
    M = np.zeros((k + 1, k + 1))
    M[:k, :k] = Q @ Q.T
    M[:k, k] = 1.0
    M[k, :k] = 1.0
    rhs = np.zeros(k + 1)
    rhs[k] = 1.0
    sol = np.linalg.lstsq(M, rhs, rcond=None)[0]
    return sol[:k]


def min_norm_point(points, tol=1e-10, max_iter=1000, return_weights=False):
    """Point of minimal Euclidean norm in ``conv(points)``.

    Parameters
    ----------
    points : array_like, shape (m, n)
        Generators of the hull.
    tol : float
        Optimality tolerance, relative to the largest squared generator norm.
    max_iter : int
        Cap on major iterations.
    return_weights : bool
        Also return the convex weights (length m).

    Returns
    -------
    ndarray, shape (n,)
        The minimal-norm point (and the weights if requested).
    """
    P = _as_points(points)
    m = P.shape[0]
    if m == 1:
        x = P[0].copy()
        return (x, np.ones(1)) if return_weights else x

    scale = max(float(np.max(np.einsum("ij,ij->i", P, P))), 1e-300)
    j0 = int(np.argmin(np.einsum("ij,ij->i", P, P)))
    S = [j0]
    lam = np.ones(1)
    x = P[j0].copy()

    for _ in range(max_iter):
        g = P @ x
        j = int(np.argmin(g))
        if x @ x - g[j] <= tol * scale or j in S:
            break
        S.append(j)
        lam = np.append(lam, 0.0)
        for _minor in range(len(S) + 5):
            mu = _affine_minimizer(P[S])
            if np.all(mu > 1e-14):
                lam = mu
                break
            neg = mu <= 1e-14
            denom = lam[neg] - mu[neg]
            with np.errstate(divide="ignore", invalid="ignore"):
                ratios = np.where(denom > 0, lam[neg] / denom, np.inf)
            theta = min(1.0, float(np.min(ratios)))
            lam = theta * mu + (1.0 - theta) * lam
            keep = lam > 1e-14
            if not np.any(keep):
                keep[np.argmax(lam)] = True
            S = [s for s, k in zip(S, keep) if k]
            lam = lam[keep]
            lam = lam / lam.sum()
        x = lam @ P[S]
    else:
        raise NumericError("Wolfe iteration did not converge")

    if return_weights:
        w = np.zeros(m)
        w[S] = lam
        return x, w
    return x


def min_norm_point_exact(points, tol=1e-12):
    """Minimal-norm hull point by enumerating generator subsets.

    Every face of the hull is visited, so the cost grows as ``2**m``; the
    routine is intended for a few generators only.
    """
    P = _as_points(points)
    m, n = P.shape
    if m > 12:
        raise ArgumentError("exact enumeration is limited to 12 generators")
    best, best_norm = None, np.inf
    for k in range(1, min(m, n + 1) + 1):
        for idx in combinations(range(m), k):
            w = _affine_minimizer(P[list(idx)])
            if np.all(w >= -tol):
                w = np.clip(w, 0.0, None)
                w /= w.sum()
                x = w @ P[list(idx)]
                nx = float(np.linalg.norm(x))
                if nx < best_norm - 1e-15:
                    best, best_norm = x, nx
    return best


def hull_distance(point, points):
    """Euclidean distance from ``point`` to ``conv(points)``."""
    P = _as_points(points)
    y = np.asarray(point, dtype=float)
    return float(np.linalg.norm(min_norm_point(P - y)))
