"""Linear systems ``x' = A x``: spectral classification, sensitivity constant,
closed-form perturbed solution, the rotary example and non-SOF witnesses.

A system is SOF (stable and orbit-free) when every eigenvalue is either zero
with equal algebraic and geometric multiplicity or has negative real part.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.linalg import expm

from .core import (
    PerturbationSignal,
    Trajectory,
    VectorField,
    integrate_perturbed,
    sensitivity_ratio,
)
from .errors import (
    ArgumentError,
    IntegrationDivergedError,
    NotApplicableError,
    NumericError,
    UnsupportedError,
)

DEFAULT_TOL = 1e-9
# cosine threshold deciding that a null vector lies in a range subspace
_ALIGN = 1.0 - 1e-6


@dataclass(frozen=True)
class LinearSystem:
    """Drift matrix ``A`` of the system ``x' = A x``."""

    A: np.ndarray

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        if A.ndim != 2 or A.shape[0] != A.shape[1]:
            raise ArgumentError("A must be square")
        if not np.all(np.isfinite(A)):
            raise ArgumentError("A must be finite")
        object.__setattr__(self, "A", A)

    @property
    def dimension(self):
        return self.A.shape[0]

    def field(self) -> VectorField:
        return VectorField.linear(self.A)

    def to_dict(self):
        return {"A": self.A.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(np.asarray(d["A"], dtype=float))


def _complex_list(values):
    return [{"re": float(np.real(v)), "im": float(np.imag(v))} for v in values]


@dataclass
class SofReport:
    eigenvalues: np.ndarray
    is_stable: bool
    is_orbit_free: bool
    is_sof: bool
    zero_eig_algebraic: int
    zero_eig_geometric: int
    tolerance: float

    def to_dict(self):
        return {
            "eigenvalues": _complex_list(self.eigenvalues),
            "is_stable": bool(self.is_stable),
            "is_orbit_free": bool(self.is_orbit_free),
            "is_sof": bool(self.is_sof),
            "zero_eig_algebraic": int(self.zero_eig_algebraic),
            "zero_eig_geometric": int(self.zero_eig_geometric),
            "tolerance": float(self.tolerance),
        }

    def same_classification(self, other: "SofReport"):
        keys = ("is_stable", "is_orbit_free", "is_sof",
                "zero_eig_algebraic", "zero_eig_geometric")
        return all(getattr(self, k) == getattr(other, k) for k in keys)


@dataclass
class SensitivityConstant:
    value: float
    sigma_max: float
    sigma_min: float
    terms: list = field(default_factory=list)

    def to_dict(self):
        return {
            "value": float(self.value),
            "sigma_max": float(self.sigma_max),
            "sigma_min": float(self.sigma_min),
            "terms": [
                {"eigenvalue": {"re": float(np.real(l)), "im": float(np.imag(l))},
                 "term": float(t)}
                for l, t in self.terms
            ],
        }


def _null_and_range(M, thr):
    U, s, Vh = np.linalg.svd(M)
    N = Vh[s <= thr].conj().T
    R = U[:, s > thr]
    return N, R


def eigen_multiplicities(M, thr):
    """Algebraic and geometric multiplicity of the eigenvalue 0 of ``M``.

    The geometric multiplicity is ``dim null(M)``. The algebraic one counts
    Jordan chains: it equals ``sum_k dim(null(M) & range(M^k))`` for
    ``k = 0, 1, ...``, each intersection measured through principal angles.
    """
    n = M.shape[0]
    N, R = _null_and_range(M, thr)
    geo = N.shape[1]
    if geo == 0:
        return 0, 0
    alg = geo
    for _ in range(n):
        if R.shape[1] == 0:
            break
        cos = np.linalg.svd(N.conj().T @ R, compute_uv=False)
        d = int(np.sum(cos > _ALIGN))
        if d == 0:
            break
        alg += d
        Ur, sr, _ = np.linalg.svd(M @ R, full_matrices=False)
        R = Ur[:, sr > thr]
    return min(alg, n), geo


def _threshold(A, tol):
    return tol * max(float(np.linalg.norm(A, 2)), 1e-300)


def classify_sof(sys: LinearSystem, tol: float = DEFAULT_TOL) -> SofReport:
    """Decide stability and orbit-freeness from the spectrum of ``A``.

    ``tol`` is relative to ``||A||_2``; the same threshold decides zero-ness of
    eigenvalues, rank, and whether an eigenvalue sits on the imaginary axis.
    """
    if not tol > 0:
        raise ArgumentError("tol must be positive")
    A = sys.A
    n = A.shape[0]
    if not np.any(A):
        return SofReport(np.zeros(n, dtype=complex), True, True, True, n, n, tol)
    try:
        lam = np.linalg.eigvals(A)
    except np.linalg.LinAlgError as exc:
        raise NumericError(f"eigendecomposition failed: {exc}") from exc
    thr = _threshold(A, tol)
    alg0, geo0 = eigen_multiplicities(A, thr)

    order = np.argsort(np.abs(lam))
    rest = lam[order[alg0:]]

    on_axis = rest[np.abs(rest.real) <= thr]
    unstable = bool(np.any(rest.real > thr))
    # purely imaginary eigenvalues must be semisimple for boundedness
    axis_ok = True
    for mu in on_axis:
        a, g = eigen_multiplicities(A - mu * np.eye(n), thr)
        if a != g:
            axis_ok = False
            break
    is_stable = (not unstable) and alg0 == geo0 and axis_ok
    is_orbit_free = on_axis.size == 0
    return SofReport(lam, is_stable, is_orbit_free, is_stable and is_orbit_free,
                     alg0, geo0, tol)


def sensitivity_constant(sys: LinearSystem, tol: float = DEFAULT_TOL,
                         cond_limit: float = 1e8) -> SensitivityConstant:
    """``C = 1 + (s_max / s_min)(P) * sum |l| / |Re l|`` over nonzero eigenvalues.

    ``P`` holds unit-norm eigenvectors (orthonormal ones for symmetric ``A``).
    Zero eigenvalues contribute nothing to the sum.

    Raises
    ------
    NotApplicableError
        ``A`` is not SOF.
    UnsupportedError
        ``A`` is not diagonalizable (eigenvector matrix condition above
        ``cond_limit``).
    """
    rep = classify_sof(sys, tol)
    if not rep.is_sof:
        raise NotApplicableError("sensitivity constant requires an SOF system")
    A = sys.A
    thr = _threshold(A, tol)
    if np.allclose(A, A.T, rtol=0, atol=1e-14 * max(1.0, np.abs(A).max())):
        lam, P = np.linalg.eigh(A)
        lam = lam.astype(complex)
    else:
        lam, P = np.linalg.eig(A)
    s = np.linalg.svd(P, compute_uv=False)
    smax, smin = float(s[0]), float(s[-1])
    if smin <= 0 or smax / smin > cond_limit:
        raise UnsupportedError("A is defective; no closed sensitivity constant")
    terms = [(l, abs(l) / abs(l.real)) for l in lam if abs(l) > thr]
    C = 1.0 + (smax / smin) * sum(t for _, t in terms)
    return SensitivityConstant(C, smax, smin, terms)


# ---------------------------------------------------------------------------
# closed-form perturbed solution
# ---------------------------------------------------------------------------


def closed_form_trajectory(sys: LinearSystem, x0, U: PerturbationSignal, times,
                           refine: int = 4, max_substep: float = 0.01) -> Trajectory:
    """Perturbed trajectory of ``x' = A x`` by variation of constants.

    ``x(t) = e^{At} x0 + U(t) + A int_0^t e^{A(t-s)} U(s) ds``.

    The convolution integral is advanced panel by panel,
    ``I_{k+1} = e^{A h} I_k + int_{t_k}^{t_{k+1}} e^{A(t_{k+1}-s)} U(s) ds``,
    with composite Simpson on at least ``2*refine`` sub-intervals per panel,
    more when needed to keep each sub-interval below ``max_substep``. Panels are
    split at the signal's breakpoints and the left limit of ``U`` is used at a
    panel end that coincides with a jump.

    Parameters
    ----------
    sys : LinearSystem
    x0 : array_like
    U : PerturbationSignal
    times : array_like
        Increasing grid starting at 0.
    refine : int
        Minimum number of Simpson sub-interval pairs per panel.
    max_substep : float
        Upper bound on the Simpson sub-interval length.
    """
    A = sys.A
    n = A.shape[0]
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    times = np.asarray(times, dtype=float)
    if times.ndim != 1 or times.size == 0 or times[0] != 0.0:
        raise ArgumentError("times must be a 1-D grid starting at 0")
    if times.size > 1 and np.any(np.diff(times) <= 0):
        raise ArgumentError("times must be strictly increasing")
    if int(refine) < 1 or not max_substep > 0:
        raise ArgumentError("refine must be >= 1 and max_substep positive")
    Uv = U.evaluate_many(times)

    # panel boundaries: grid points plus breakpoints strictly inside
    bps = np.asarray([b for b in U.breakpoints if 0 < b < times[-1]], dtype=float)
    nodes = np.union1d(times, bps)
    cache = {}

    def kernels(h):
        # panel lengths equal up to rounding share one kernel
        key = round(h, 13)
        if key not in cache:
            m = 2 * max(int(refine), int(np.ceil(h / (2 * max_substep))))
            w = np.ones(m + 1)
            w[1:-1:2] = 4.0
            w[2:-1:2] = 2.0
            w *= h / (3.0 * m)
            s = np.linspace(0.0, h, m + 1)
            E = expm(A * (h / m))
            # e^{A(h - s_j)} from repeated products of the sub-step exponential
            pw = [np.eye(n)]
            for _ in range(m):
                pw.append(E @ pw[-1])
            if len(cache) >= 4096:
                cache.pop(next(iter(cache)))
            cache[key] = (pw[-1], np.stack(pw[::-1]), s, w)
        return cache[key]

    # integral I(t) at every node, then pick the grid values
    I_nodes = np.zeros((nodes.size, n))
    I = np.zeros(n)
    jumps = set(bps.tolist())
    for k in range(nodes.size - 1):
        a, b = nodes[k], nodes[k + 1]
        eAh, E, s, w = kernels(b - a)
        pts = a + s
        pts[-1] = b
        if b in jumps:
            pts[-1] = np.nextafter(b, -np.inf)
        Us = U.evaluate_many(pts)
        I = eAh @ I + np.einsum("j,jab,jb->a", w, E, Us)
        I_nodes[k + 1] = I
    idx = np.searchsorted(nodes, times)
    Ig = I_nodes[idx]

    # homogeneous part e^{At} x0 via the same step propagators on the grid
    X = np.empty((times.size, n))
    xh = x0.copy()
    X[0] = xh
    step_cache = {}
    for k in range(times.size - 1):
        h = times[k + 1] - times[k]
        key = round(h, 15)
        if key not in step_cache:
            step_cache[key] = expm(A * h)
            if len(step_cache) > 64:
                step_cache.pop(next(iter(step_cache)))
        xh = step_cache[key] @ xh
        X[k + 1] = xh
    states = X + Uv + Ig @ A.T
    if not np.all(np.isfinite(states)):
        bad = int(np.argmin(np.all(np.isfinite(states), axis=1)))
        traj = Trajectory(times[:bad], states[:bad], states[:bad] @ A.T,
                          U, Uv[:bad])
        last = float(times[bad - 1]) if bad > 0 else float("nan")
        raise IntegrationDivergedError("closed form overflowed", last, traj)
    drifts = states @ A.T
    dt = float(np.max(np.diff(times))) if times.size > 1 else None
    return Trajectory(times, states, drifts, U, Uv, dt)


def homogeneous_solution(sys: LinearSystem, x0, times):
    """``e^{At} x0`` on a grid (direct evaluation at every time)."""
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    return np.stack([expm(sys.A * t) @ x0 for t in np.asarray(times, dtype=float)])


# ---------------------------------------------------------------------------
# rotary example
# ---------------------------------------------------------------------------

ROTARY_A = np.array([[0.0, -1.0], [1.0, 0.0]])


def rotary_perturbation() -> PerturbationSignal:
    """``U(t) = (sin t, 1 - cos t)``, with ``sup ||U|| = 2`` at ``t = pi``."""

    def func(t):
        t = np.asarray(t, dtype=float)
        return np.stack([np.sin(t), 1.0 - np.cos(t)], axis=-1)

    return PerturbationSignal(func, 2, "rotary (sin t, 1 - cos t)", 2.0, True)


def rotary_counterexample(T, step=0.01):
    """Analytic unperturbed/perturbed pair of the rotation ``x' = (-y, x)``.

    The unperturbed solution is ``(cos t, sin t)`` and the perturbed one is
    ``((t+1) cos t, (t+1) sin t)``; their distance at time ``t`` is ``t``.
    The grid always contains ``T`` and, when ``T >= pi``, also ``pi`` so that
    the supremum of ``||U||`` is attained.

    Returns
    -------
    (Trajectory, Trajectory, PerturbationSignal)
        Unperturbed, perturbed, and ``U``.
    """
    if not T > 0:
        raise ArgumentError("T must be positive")
    if not step > 0:
        raise ArgumentError("step must be positive")
    n = max(1, int(np.ceil(T / step - 1e-9)))
    times = np.linspace(0.0, T, n + 1)
    if T >= np.pi:
        times = np.union1d(times, [np.pi])
    U = rotary_perturbation()
    c, s = np.cos(times), np.sin(times)
    base = np.stack([c, s], axis=1)
    pert = (times + 1.0)[:, None] * base
    unpert = Trajectory(times, base, base @ ROTARY_A.T, PerturbationSignal.zero(2),
                        np.zeros_like(base), step)
    Uv = U.evaluate_many(times)
    perturbed = Trajectory(times, pert, pert @ ROTARY_A.T, U, Uv, step)
    return unpert, perturbed, U


# ---------------------------------------------------------------------------
# non-SOF witnesses
# ---------------------------------------------------------------------------


@dataclass
class Witness:
    """A bounded perturbation whose trajectory leaves a ball of radius M."""

    kind: str
    x0: np.ndarray
    perturbation: PerturbationSignal
    horizon: float
    deviation: float
    sup_perturbation: float

    def to_dict(self):
        return {
            "kind": self.kind,
            "x0": np.asarray(self.x0).tolist(),
            "horizon": self.horizon,
            "deviation": self.deviation,
            "sup_perturbation": self.sup_perturbation,
        }


def _orbit_signal(A, x0):
    """``U(t) = int_0^t e^{As} x0 ds`` through the augmented exponential."""
    n = A.shape[0]
    B = np.zeros((2 * n, 2 * n))
    B[:n, :n] = A
    B[:n, n:] = np.eye(n)

    def func(t):
        # top-right block of expm([[A, I], [0, 0]] t) is int_0^t e^{As} ds
        return expm(B * t)[:n, n:] @ x0

    return func


def non_sof_witness(sys: LinearSystem, bound: float, delta: float = 1.0,
                    tol: float = DEFAULT_TOL, t_max: float = 1e6) -> Witness:
    """Construct a perturbation of size O(delta) whose deviation exceeds ``bound``.

    * unstable spectrum or defective zero/imaginary eigenvalue: a constant
      jump ``U = delta v`` aligned with the leading right singular vector of
      ``e^{AT}``; ``T`` doubles until the deviation exceeds the bound;
    * periodic orbit (stable, imaginary pair ``+-i w``): ``x0`` is a unit
      vector of the invariant plane and ``U(t) = int_0^t e^{As} x0 ds``, which
      stays bounded while the deviation grows like ``t``.

    Deviations are measured exactly through matrix exponentials.
    """
    rep = classify_sof(sys, tol)
    if rep.is_sof:
        raise NotApplicableError("system is SOF; no witness exists")
    if not bound > 0 or not delta > 0:
        raise ArgumentError("bound and delta must be positive")
    A = sys.A
    n = A.shape[0]

    if not rep.is_stable:
        T = 1.0
        while T <= t_max:
            E = expm(A * T)
            _, s, Vh = np.linalg.svd(E)
            v = Vh[0]
            # x~(t) - x(t) = e^{At} (delta v) for the jump at time 0
            dev = delta * float(np.linalg.norm(E @ v))
            if dev > bound:
                U = PerturbationSignal.constant(delta * v, "constant jump")
                return Witness("unstable", np.zeros(n), U, T, dev, delta)
            T *= 2.0
        raise NumericError("no escape found before t_max")

    thr = _threshold(A, tol)
    lam, P = np.linalg.eig(A)
    cand = [i for i in range(n) if abs(lam[i].real) <= thr and abs(lam[i].imag) > thr]
    i = cand[0]
    w = abs(lam[i].imag)
    q = P[:, i]
    x0 = np.real(q)
    if np.linalg.norm(x0) < 1e-8:
        x0 = np.imag(q)
    x0 = x0 / np.linalg.norm(x0)
    func = _orbit_signal(A, x0)
    # U is 2pi/w periodic; its sup over one period is sup over all t
    period = 2 * np.pi / w
    ts = np.linspace(0.0, period, 721)
    sup_u = delta * max(float(np.linalg.norm(func(t))) for t in ts)
    # deviation of the perturbed solution is t e^{At} x0; |e^{At} x0| is
    # bounded below on the orbit, so grow t until it exceeds the bound
    T = period
    while T <= t_max:
        dev = delta * T * float(np.linalg.norm(expm(A * T) @ x0))
        if dev > bound:
            U = PerturbationSignal(lambda t: delta * func(t), n,
                                   "orbit-resonant integral", sup_u)
            return Witness("orbit", x0, U, T, dev, sup_u)
        T *= 2.0
    raise NumericError("no escape found before t_max")


def simulate_linear(sys: LinearSystem, x0, U: PerturbationSignal, T, dt,
                    method: str = "closed_form"):
    """Perturbed and unperturbed trajectories plus their sensitivity report."""
    times = None
    if method == "closed_form":
        from .core import time_grid

        times = time_grid(T, dt)
        pert = closed_form_trajectory(sys, x0, U, times)
        base = closed_form_trajectory(sys, x0, PerturbationSignal.zero(sys.dimension), times)
    elif method == "euler":
        fld = sys.field()
        pert = integrate_perturbed(fld, x0, U, T, dt)
        base = integrate_perturbed(fld, x0, PerturbationSignal.zero(sys.dimension), T, dt)
    else:
        raise ArgumentError(f"unknown method {method!r}")
    return base, pert, sensitivity_ratio(pert, base, U)
