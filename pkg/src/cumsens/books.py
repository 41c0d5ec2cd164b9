"""The rotating-books function and the constructions built on it.

On the half cylinder ``Omega = {r <= 1/4, z <= -1}`` the function ``f`` is the
unique root ``f >= 1`` of

    h(f, x, y, z) = f + z - (1/f) ln cosh(f s) - (x^2 + y^2) / (1 + f),
    s = x sin f - y cos f = r sin(f - phi).

``h`` is strictly increasing in ``f`` on ``Omega`` and ``h(1, .) <= 0``, so the
root is bracketed by ``[1, f_hi]`` and found by bisection. Gradients follow
from implicit differentiation of ``h`` written in Cartesian coordinates, which
stays regular on the axis ``r = 0``.

The level set ``f = a`` is the surface
``z = -a + (1/a) ln cosh(a r sin(a - phi)) + r^2 / (1 + a)``, an opened book
whose spine rotates with height.

Besides the solver this module provides the spiral construction (a bounded
perturbation that drives a trajectory of an auxiliary field away from the
axis), the matched-point membership check for spread fields, and a simplicial
interpolant of ``f`` with a gradient-error study.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional

import numpy as np

from .core import PerturbationSignal, Trajectory, VectorField, sensitivity_ratio
from .errors import (
    ArgumentError,
    ConstructionFailedError,
    DomainError,
    MembershipFailedError,
    NumericError,
)

R_MAX = 0.25
Z_MAX = -1.0
R_CAP = 1.0 / 6.0
LN2 = math.log(2.0)
F_HI_LIMIT = 1e9
REPARAMETRIZATION_NOTE = (
    "The time change that turns the auxiliary field into the spread field is "
    "not computed: sup-based sensitivity ratios are invariant under a common "
    "increasing reparametrization of trajectories and perturbation, so the "
    "ratio is reported for the auxiliary-field clock."
)


# ---------------------------------------------------------------------------
# points and domain
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CylPoint:
    """Point in cylindrical coordinates ``(r, phi, z)``."""

    r: float
    phi: float
    z: float

    def __post_init__(self):
        if self.r < 0:
            raise ArgumentError("r must be non-negative")

    def to_cartesian(self) -> np.ndarray:
        return np.array([self.r * math.cos(self.phi), self.r * math.sin(self.phi), self.z])

    @classmethod
    def from_cartesian(cls, xyz) -> "CylPoint":
        x, y, z = (float(v) for v in xyz)
        return cls(math.hypot(x, y), math.atan2(y, x), z)


@dataclass(frozen=True)
class BooksDomain:
    """The half cylinder ``Omega`` and, when ``zeta`` is given, ``Omega_zeta``."""

    r_max: float = R_MAX
    z_max: float = Z_MAX
    zeta: Optional[float] = None
    r_cap: float = R_CAP

    def contains(self, p: CylPoint) -> bool:
        return p.r <= self.r_max and p.z <= self.z_max

    def contains_capped(self, p: CylPoint) -> bool:
        if self.zeta is None:
            raise ArgumentError("domain has no zeta cap")
        return p.r <= self.r_cap and p.z < self.zeta

    def contains_xyz(self, xyz) -> np.ndarray:
        xyz = np.asarray(xyz, dtype=float)
        r = np.hypot(xyz[..., 0], xyz[..., 1])
        return (r <= self.r_max) & (xyz[..., 2] <= self.z_max)


OMEGA = BooksDomain()


# ---------------------------------------------------------------------------
# implicit function
# ---------------------------------------------------------------------------


def lncosh(u):
    """``ln cosh(u)`` without overflow."""
    u = np.abs(np.asarray(u, dtype=float))
    with np.errstate(over="ignore"):
        small = np.log1p(2.0 * np.sinh(0.5 * np.minimum(u, 1.0)) ** 2)
    large = u + np.log1p(np.exp(-2.0 * u)) - LN2
    return np.where(u < 1.0, small, large)


def h_residual(f, x, y, z):
    """Defining equation of ``f`` in Cartesian coordinates."""
    s = x * np.sin(f) - y * np.cos(f)
    return f + z - lncosh(f * s) / f - (x * x + y * y) / (1.0 + f)


def h_cyl(f, r, phi, z):
    """Defining equation in cylindrical coordinates."""
    return f + z - lncosh(f * r * np.sin(f - phi)) / f - r * r / (1.0 + f)


def _check_domain(x, y, z, slack=1e-12):
    r = np.hypot(x, y)
    bad = (r > R_MAX + slack) | (z > Z_MAX + slack) | ~np.isfinite(z)
    if np.any(bad):
        i = np.flatnonzero(np.ravel(bad))[0]
        raise DomainError(
            f"point (r={np.ravel(r)[i]:.6g}, z={np.ravel(z)[i]:.6g}) lies outside Omega"
        )


def solve_f_xyz(x, y, z, tol=1e-12, check_domain=True, max_iter=200):
    """Vectorized root ``f >= 1`` of ``h(f, x, y, z) = 0``.

    Bisection on ``[1, f_hi]``; ``f_hi`` doubles from 2 until ``h > 0``. Each
    entry stops once ``|h(f)| <= tol`` or its bracket cannot shrink further.

    Raises
    ------
    DomainError
        A point lies outside ``Omega`` (when ``check_domain``).
    NumericError
        The bracket would exceed ``1e9``.
    """
    x, y, z = np.broadcast_arrays(*(np.asarray(v, dtype=float) for v in (x, y, z)))
    if check_domain:
        _check_domain(x, y, z)
    if not tol > 0:
        raise ArgumentError("tol must be positive")
    lo = np.ones(x.shape)
    hi = np.full(x.shape, 2.0)
    while True:
        need = h_residual(hi, x, y, z) <= 0
        if not np.any(need):
            break
        lo = np.where(need, hi, lo)
        hi = np.where(need, 2.0 * hi, hi)
        if np.any(hi > F_HI_LIMIT):
            raise NumericError("bracket expansion exceeded 1e9")
    f = 0.5 * (lo + hi)
    active = np.ones(x.shape, dtype=bool)
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        v = h_residual(mid, x, y, z)
        f = np.where(active, mid, f)
        done = (np.abs(v) <= tol) | (hi - lo <= 4 * np.spacing(hi))
        active &= ~done
        if not np.any(active):
            break
        lo = np.where(active & (v < 0), mid, lo)
        hi = np.where(active & (v > 0), mid, hi)
    return f


def solve_f(p: CylPoint, tol: float = 1e-12) -> float:
    """``f(p)`` for a single point of ``Omega``."""
    x, y, z = p.to_cartesian()
    return float(solve_f_xyz(x, y, z, tol))


def level_surface_z(a, r, phi):
    """Height of the level set ``f = a`` above ``(r, phi)``."""
    a = np.asarray(a, dtype=float)
    if np.any(a < 1):
        raise ArgumentError("level a must be at least 1")
    if np.any(np.asarray(r) > R_MAX + 1e-12):
        raise ArgumentError("r must not exceed 1/4")
    return -a + lncosh(a * r * np.sin(a - phi)) / a + r * r / (1.0 + a)


def h_partials(f, x, y, z):
    """Partial derivatives ``(h_x, h_y, h_z, h_f)``."""
    sf, cf = np.sin(f), np.cos(f)
    s = x * sf - y * cf
    th = np.tanh(f * s)
    hx = -th * sf - 2.0 * x / (1.0 + f)
    hy = th * cf - 2.0 * y / (1.0 + f)
    hz = np.ones_like(hx)
    ds = x * cf + y * sf
    hf = (1.0 + lncosh(f * s) / (f * f) - th * (s + f * ds) / f
          + (x * x + y * y) / (1.0 + f) ** 2)
    return hx, hy, hz, hf


def grad_f_xyz(x, y, z, tol=1e-13, check_domain=True):
    """Cartesian gradient of ``f``; the result has shape ``x.shape + (3,)``."""
    f = solve_f_xyz(x, y, z, tol, check_domain)
    hx, hy, hz, hf = h_partials(f, *np.broadcast_arrays(x, y, z))
    return -np.stack([hx, hy, hz], axis=-1) / hf[..., None]


def grad_f(p: CylPoint, tol: float = 1e-13) -> np.ndarray:
    """Cartesian gradient of ``f`` at ``p``."""
    x, y, z = p.to_cartesian()
    return grad_f_xyz(x, y, z, tol)


def descent_field(domain: BooksDomain = OMEGA) -> VectorField:
    """``-grad f`` as a vector field, undefined off ``domain``."""

    def sampler(xyz):
        if not bool(domain.contains_xyz(xyz)):
            raise DomainError("outside Omega")
        return -grad_f_xyz(xyz[0], xyz[1], xyz[2])

    return VectorField(3, sampler, None, "books descent")


# ---------------------------------------------------------------------------
# quasi-convexity
# ---------------------------------------------------------------------------


@dataclass
class QuasiConvexityReport:
    level: float
    trials: int
    passed: bool
    failures: int
    strict_failures: int
    min_margin: float
    min_margin_far: float

    def to_dict(self):
        return asdict(self)


def sample_level_points(a, count, rng, r_max=R_MAX):
    """Random Cartesian points on the level set ``f = a`` inside ``Omega``."""
    r = r_max * np.sqrt(rng.uniform(size=count))
    phi = rng.uniform(0.0, 2 * np.pi, size=count)
    z = level_surface_z(a, r, phi)
    return np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=1)


def quasiconvexity_probe(a: float, trials: int, seed: int = 0,
                         pairs: Optional[tuple] = None) -> QuasiConvexityReport:
    """Midpoint test of strict quasi-convexity on the level ``f = a``.

    Quasi-convexity means ``f(mid) <= max(f(p1), f(p2)) = a``. Every midpoint
    must satisfy ``f < a + 1e-9``, and ``f < a`` strictly when the endpoints
    are at least ``1e-3`` apart. ``min_margin`` reports ``min(a - f(mid))``.

    Parameters
    ----------
    a : float
        Level, at least 1 and large enough that the level set lies in
        ``Omega``.
    trials : int
        Number of random pairs (ignored when ``pairs`` is given).
    pairs : (ndarray, ndarray), optional
        Explicit Cartesian endpoints of shape ``(m, 3)``.
    """
    if a < 1:
        raise ArgumentError("level must be at least 1")
    if pairs is None:
        rng = np.random.default_rng(seed)
        p1 = sample_level_points(a, trials, rng)
        p2 = sample_level_points(a, trials, rng)
    else:
        p1, p2 = (np.atleast_2d(np.asarray(p, dtype=float)) for p in pairs)
    if np.any(p1[:, 2] > Z_MAX) or np.any(p2[:, 2] > Z_MAX):
        raise DomainError("level set leaves Omega; use a larger level")
    mid = 0.5 * (p1 + p2)
    fm = solve_f_xyz(mid[:, 0], mid[:, 1], mid[:, 2], tol=1e-14)
    margin = a - fm
    far = np.linalg.norm(p1 - p2, axis=1) >= 1e-3
    failures = int(np.sum(margin <= -1e-9))
    strict = int(np.sum(far & (margin <= 0)))
    return QuasiConvexityReport(
        float(a), int(len(p1)), failures == 0 and strict == 0, failures, strict,
        float(margin.min()),
        float(margin[far].min()) if np.any(far) else float("inf"),
    )


# ---------------------------------------------------------------------------
# spread-membership helper
# ---------------------------------------------------------------------------


def g_membership(y, a):
    """``g(y) = -tanh(a y) - 2y / (1 + a)``, odd and strictly decreasing."""
    return -np.tanh(a * y) - 2.0 * y / (1.0 + a)


def n_eps_rule(epsilon: float):
    """``(n_eps, n_tilde)`` for a spread radius ``epsilon``.

    ``n_tilde`` is the smallest ``n >= 1`` with ``g(-epsilon/3) >= 1/4`` at
    ``a = 2 pi n``; ``n_eps = max(n_tilde, ceil(1/epsilon))``.
    """
    if not 0 < epsilon:
        raise ArgumentError("epsilon must be positive")
    n = 1
    while g_membership(-epsilon / 3.0, 2 * np.pi * n) < 0.25:
        n += 1
        if n > 10**8:
            raise NumericError("n_eps search did not terminate")
    return max(n, math.ceil(1.0 / epsilon - 1e-12)), n


def z_eps_of(epsilon: float) -> float:
    return -2 * np.pi * n_eps_rule(epsilon)[0]


def _bisect_decreasing(func, target, lo, hi, iters=200):
    """Root of ``func(y) = target`` for a decreasing ``func`` on ``[lo, hi]``."""
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if func(mid) > target:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 4 * np.spacing(max(abs(lo), abs(hi), 1e-300)):
            break
    return 0.5 * (lo + hi)


def _rotation(a):
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def auxiliary_field_xyz(xyz) -> np.ndarray:
    """Auxiliary field ``-2r/(1-z) rhat - r phihat + zhat`` in Cartesian form.

    The angular term turns clockwise, matching screw lines ``phi = -z``
    along which ``grad f`` has the required direction.
    """
    x, y, z = (float(v) for v in xyz)
    k = -2.0 / (1.0 - z)
    # r rhat = (x, y), r phihat = (-y, x)
    return np.array([k * x + y, k * y - x, 1.0])


def auxiliary_field() -> VectorField:
    return VectorField(3, auxiliary_field_xyz, None, "books auxiliary")


@dataclass
class MatchReport:
    """Result of matching a point with a level-set point of ``f``."""

    point: np.ndarray
    matched_point: np.ndarray
    distance: float
    alpha: float
    angle: float
    y0: float
    v: np.ndarray
    level: float
    drift_angle: float

    def to_dict(self):
        return {
            "point": self.point.tolist(),
            "matched_point": self.matched_point.tolist(),
            "distance": self.distance,
            "alpha": self.alpha,
            "angle": self.angle,
            "y0": self.y0,
            "v": self.v.tolist(),
            "level": self.level,
            "drift_angle": self.drift_angle,
        }


def _angle(u, v):
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    # atan2 form is accurate for tiny angles
    return float(math.atan2(np.linalg.norm(np.cross(u, v)), float(u @ v))) if (
        nu > 0 and nv > 0) else float("nan")


def verify_spread_membership(p: CylPoint, epsilon: float,
                             n_eps: Optional[int] = None) -> MatchReport:
    """Match ``p`` with a point of ``Omega`` where ``grad f`` is parallel to
    the auxiliary field at ``p``.

    With ``a = -z`` and coordinates rotated by ``a`` about the axis, write
    ``p = (x0, y_p, z)``. The matched point is ``(x0, y0, Z(x0, y0))`` on the
    level ``f = a``, where ``g(y0) = -x0``; there the scaled normal
    ``v = (-2 x0/(1+a), g(y0), 1)`` satisfies ``alpha v = grad f`` with
    ``alpha`` the z-component of ``grad f``. On the screw line ``phi = -z``
    the vector ``v`` equals the auxiliary field at ``p``.

    Raises
    ------
    DomainError
        ``r > 1/4`` or ``z > z_eps``.
    MembershipFailedError
        ``|y0| >= epsilon / 3``.
    """
    if n_eps is None:
        n_eps = n_eps_rule(epsilon)[0]
    z_eps = -2 * np.pi * n_eps
    if p.r > R_MAX + 1e-12 or p.z > z_eps + 1e-9:
        raise DomainError("point must satisfy r <= 1/4 and z <= z_eps")
    a = -p.z
    Rm = _rotation(a)
    xyz = p.to_cartesian()
    loc = Rm.T @ xyz
    x0 = float(loc[0])
    # g is odd, so x0 = 0 matches p itself
    y0 = 0.0 if x0 == 0.0 else _bisect_decreasing(lambda y: g_membership(y, a), -x0, -1.0, 1.0)
    if abs(y0) >= epsilon / 3.0:
        raise MembershipFailedError(f"|y0|={abs(y0):.3g} is not below epsilon/3")
    Z = -a + float(lncosh(a * y0)) / a + (x0 * x0 + y0 * y0) / (1.0 + a)
    matched = Rm @ np.array([x0, y0, Z])
    v = Rm @ np.array([-2.0 * x0 / (1.0 + a), float(g_membership(y0, a)), 1.0])
    grad = grad_f_xyz(matched[0], matched[1], matched[2], tol=1e-14, check_domain=False)
    alpha = float(grad[2])
    return MatchReport(
        point=xyz,
        matched_point=matched,
        distance=float(np.linalg.norm(matched - xyz)),
        alpha=alpha,
        angle=_angle(alpha * v, grad),
        y0=float(y0),
        v=v,
        level=a,
        drift_angle=_angle(auxiliary_field_xyz(xyz), -grad),
    )


def matched_anchor(epsilon: float, n_eps: Optional[int] = None):
    """Callable returning the matched point of ``x`` as an extra spread probe."""
    if n_eps is None:
        n_eps = n_eps_rule(epsilon)[0]

    def anchor(x):
        p = CylPoint.from_cartesian(x)
        try:
            return verify_spread_membership(p, epsilon, n_eps).matched_point[None, :]
        except (DomainError, MembershipFailedError):
            return np.empty((0, 3))

    return anchor


# ---------------------------------------------------------------------------
# spiral construction
# ---------------------------------------------------------------------------


@dataclass
class SpiralCertificate:
    epsilon: float
    zeta: float
    n_eps: int
    n_tilde: int
    z_eps: float
    z0: float
    t0: float
    times: np.ndarray = field(repr=False)
    r_of_t: np.ndarray = field(repr=False)
    p_of_t: np.ndarray = field(repr=False)
    U_of_t: np.ndarray = field(repr=False)
    sup_U: float = 0.0
    deviation: float = 0.0
    ratio: float = 0.0
    lower_bound: float = 0.0
    checks: dict = field(default_factory=dict)
    diagnostics: dict = field(default_factory=dict)
    note: str = REPARAMETRIZATION_NOTE

    @property
    def passed(self):
        return all(self.checks.values())

    def p_cyl(self):
        """Path in cylindrical coordinates, one ``(r, phi, z)`` row per time."""
        return np.stack([self.r_of_t, -(self.z0 + self.times), self.z0 + self.times], axis=1)

    def perturbed_trajectory(self) -> Trajectory:
        drifts = np.stack([auxiliary_field_xyz(p) for p in self.p_of_t])
        return Trajectory(self.times, self.p_of_t, drifts, spiral_perturbation(
            self.epsilon, self.z0), self.U_of_t)

    def axis_trajectory(self) -> Trajectory:
        axis = np.zeros_like(self.p_of_t)
        axis[:, 2] = self.z0 + self.times
        drifts = np.zeros_like(axis)
        drifts[:, 2] = 1.0
        return Trajectory(self.times, axis, drifts, PerturbationSignal.zero(3),
                          np.zeros_like(axis))

    def to_dict(self, include_paths=True):
        d = {
            "epsilon": self.epsilon,
            "zeta": self.zeta,
            "n_eps": self.n_eps,
            "n_tilde": self.n_tilde,
            "z_eps": self.z_eps,
            "z0": self.z0,
            "t0": self.t0,
            "sup_U": self.sup_U,
            "deviation": self.deviation,
            "ratio": self.ratio,
            "lower_bound": self.lower_bound,
            "checks": {k: bool(v) for k, v in self.checks.items()},
            "passed": bool(self.passed),
            "diagnostics": self.diagnostics,
            "note": self.note,
        }
        if include_paths:
            d["times"] = self.times.tolist()
            d["r_of_t"] = self.r_of_t.tolist()
            d["p_of_t"] = self.p_cyl().tolist()
            d["U_of_t"] = self.U_of_t.tolist()
        return d


def spiral_perturbation(epsilon, z0) -> PerturbationSignal:
    """``U(t) = int_0^t epsilon rhat(p(s)) ds`` with ``phi(s) = -(z0 + s)``."""

    def func(t):
        t = np.asarray(t, dtype=float)
        a = z0 + t
        return np.stack([epsilon * (np.sin(a) - np.sin(z0)),
                         epsilon * (np.cos(a) - np.cos(z0)),
                         np.zeros_like(a)], axis=-1)

    return PerturbationSignal(func, 3, f"spiral push eps={epsilon:g}", 2 * epsilon, True)


def _rk4_step(fun, t, r, h):
    k1 = fun(t, r)
    k2 = fun(t + h / 2, r + h / 2 * k1)
    k3 = fun(t + h / 2, r + h / 2 * k2)
    k4 = fun(t + h, r + h * k3)
    return r + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)


def spiral_construction(epsilon: float, zeta: float = -1.0, dt: float = 1e-3,
                        membership_samples: int = 20) -> SpiralCertificate:
    """Build the spiral escape and certify its inequalities.

    The radius obeys ``r' = epsilon - 2r/(1 - z0 - t)`` with ``r(0) = 0``
    (RK4 with step ``dt``; the crossing ``r = 1/6`` is located by bisection on
    the last step). The path is ``p(t) = (r(t), -(z0+t), z0+t)`` in
    cylindrical coordinates and the perturbation pushes radially with speed
    ``epsilon``. The unperturbed reference is the axis trajectory.

    Raises
    ------
    ConstructionFailedError
        ``r`` does not reach 1/6 before ``t = 1/(2 epsilon)``.
    """
    if not 0 < epsilon <= 0.5:
        raise ArgumentError("epsilon must lie in (0, 1/2]")
    if not zeta <= -1:
        raise ArgumentError("zeta must be at most -1")
    if not dt > 0:
        raise ArgumentError("dt must be positive")
    n_eps, n_tilde = n_eps_rule(epsilon)
    z_eps = -2 * np.pi * n_eps
    z0 = z_eps + zeta - 2.0 / epsilon
    t_limit = 1.0 / (2.0 * epsilon)

    def rhs(t, r):
        return epsilon - 2.0 * r / (1.0 - z0 - t)

    ts, rs = [0.0], [0.0]
    t, r = 0.0, 0.0
    while True:
        if t >= t_limit:
            raise ConstructionFailedError("r did not reach 1/6 before 1/(2 epsilon)")
        r_next = _rk4_step(rhs, t, r, dt)
        if r_next >= R_CAP:
            lo, hi = 0.0, dt
            for _ in range(100):
                mid = 0.5 * (lo + hi)
                if _rk4_step(rhs, t, r, mid) >= R_CAP:
                    hi = mid
                else:
                    lo = mid
                if hi - lo <= 4 * np.spacing(t + dt):
                    break
            t0 = t + hi
            r0 = _rk4_step(rhs, t, r, hi)
            if t0 > t:
                ts.append(t0)
                rs.append(r0)
            break
        t += dt
        r = r_next
        ts.append(t)
        rs.append(r)

    times = np.asarray(ts)
    r_t = np.asarray(rs)
    z_t = z0 + times
    phi_t = -z_t
    p_xyz = np.stack([r_t * np.cos(phi_t), r_t * np.sin(phi_t), z_t], axis=1)
    U = spiral_perturbation(epsilon, z0)
    U_t = U.evaluate_many(times)

    cert = SpiralCertificate(
        epsilon=float(epsilon), zeta=float(zeta), n_eps=int(n_eps), n_tilde=int(n_tilde),
        z_eps=float(z_eps), z0=float(z0), t0=float(t0), times=times, r_of_t=r_t,
        p_of_t=p_xyz, U_of_t=U_t,
    )
    rep = sensitivity_ratio(cert.perturbed_trajectory(), cert.axis_trajectory())
    cert.sup_U = rep.sup_perturbation
    cert.deviation = rep.sup_deviation
    cert.ratio = rep.ratio
    cert.lower_bound = 1.0 / (12.0 * epsilon)

    rdot = epsilon - 2.0 * r_t / (1.0 - z_t)
    # equation residual of the perturbed trajectory: p(t) - p(0) - int G - U
    G = np.stack([auxiliary_field_xyz(q) for q in p_xyz])
    integral = np.concatenate([[np.zeros(3)], np.cumsum(
        0.5 * (G[1:] + G[:-1]) * np.diff(times)[:, None], axis=0)])
    residual = float(np.max(np.linalg.norm(p_xyz - p_xyz[0] - integral - U_t, axis=1)))

    idx = np.unique(np.linspace(0, times.size - 1, max(2, membership_samples)).astype(int))
    dists, angles, drift_angles = [], [], []
    for i in idx:
        m = verify_spread_membership(
            CylPoint(float(r_t[i]), float(phi_t[i]), float(z_t[i])), epsilon, n_eps)
        dists.append(m.distance)
        angles.append(m.angle)
        drift_angles.append(m.drift_angle)

    rel = 1e-12  # floating-point guard on inequalities that can hold with equality
    cert.checks = {
        "z0_formula": bool(abs(z0 - (z_eps + zeta - 2.0 / epsilon)) <= 1e-12 * abs(z0)),
        "r_at_zero": bool(r_t[0] == 0.0),
        "r_at_t0": bool(abs(r_t[-1] - R_CAP) <= 1e-6),
        "t0_below_limit": bool(t0 < t_limit),
        "rdot_lower_bound": bool(np.min(rdot) >= epsilon / 3.0),
        "sup_U_bound": bool(cert.sup_U <= 2.0 * epsilon * (1 + rel)),
        "deviation_bound": bool(cert.deviation >= R_CAP * (1 - rel)),
        "ratio_bound": bool(cert.ratio >= cert.lower_bound * (1 - rel)),
        "path_in_capped_domain": bool(np.all(r_t <= R_CAP + 1e-6) and np.all(z_t < zeta)),
        "membership_distance": bool(max(dists) < epsilon),
    }
    cert.diagnostics = {
        "dt": dt,
        "grid_points": int(times.size),
        "min_rdot": float(np.min(rdot)),
        "equation_residual": residual,
        "max_membership_distance": float(max(dists)),
        "max_membership_angle": float(max(angles)),
        "max_drift_angle": float(max(drift_angles)),
        "t_limit": t_limit,
    }
    return cert


def spiral_sweep(epsilons=(0.1, 0.05, 0.025), zeta=-1.0, dt=1e-3):
    """Certificates for several radii and the growth factors of their ratios."""
    certs = [spiral_construction(e, zeta, dt) for e in epsilons]
    growth = [certs[i + 1].ratio / certs[i].ratio for i in range(len(certs) - 1)]
    return certs, growth


# ---------------------------------------------------------------------------
# simplicial interpolant
# ---------------------------------------------------------------------------


@dataclass
class KuhnInterpolant:
    """Piecewise-linear interpolant on a Kuhn-triangulated box grid.

    Each grid cube is split into the six simplices ``{u_p(1) >= u_p(2) >=
    u_p(3)}`` of its local coordinates. Node values outside the clipped
    region are NaN and every simplex touching one is skipped.
    """

    origin: np.ndarray
    h: float
    values: np.ndarray

    def _locate(self, pts):
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        u = (pts - self.origin) / self.h
        i = np.floor(u).astype(int)
        shape = np.array(self.values.shape) - 1
        i = np.clip(i, 0, shape - 1)
        loc = u - i
        order = np.argsort(-loc, axis=1, kind="stable")
        return pts, i, loc, order

    def _vertex_values(self, i, order):
        m = i.shape[0]
        rows = np.arange(m)
        step = np.zeros((m, 3), dtype=int)
        vals = np.empty((m, 4))
        vals[:, 0] = self.values[i[:, 0], i[:, 1], i[:, 2]]
        for k in range(3):
            step[rows, order[:, k]] += 1
            j = i + step
            vals[:, k + 1] = self.values[j[:, 0], j[:, 1], j[:, 2]]
        return vals

    def inside(self, pts):
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        u = (pts - self.origin) / self.h
        return np.all((u >= 0) & (u <= np.array(self.values.shape) - 1), axis=1)

    def __call__(self, pts):
        pts, i, loc, order = self._locate(pts)
        vals = self._vertex_values(i, order)
        rows = np.arange(pts.shape[0])
        srt = loc[rows[:, None], order]  # descending local coordinates
        w = np.empty((pts.shape[0], 4))
        w[:, 0] = 1.0 - srt[:, 0]
        w[:, 1] = srt[:, 0] - srt[:, 1]
        w[:, 2] = srt[:, 1] - srt[:, 2]
        w[:, 3] = srt[:, 2]
        out = np.sum(w * vals, axis=1)
        out[~self.inside(pts)] = np.nan
        return out

    def gradient(self, pts):
        """Gradient of the simplex containing each point (NaN if skipped)."""
        pts, i, loc, order = self._locate(pts)
        vals = self._vertex_values(i, order)
        rows = np.arange(pts.shape[0])
        g = np.empty((pts.shape[0], 3))
        for k in range(3):
            g[rows, order[:, k]] = (vals[:, k + 1] - vals[:, k]) / self.h
        g[~self.inside(pts)] = np.nan
        return g


@dataclass
class GradientErrorReport:
    grid_h: float
    z_lo: float
    z_hi: float
    n_nodes: int
    n_points: int
    n_skipped: int
    sup_error: float
    mean_error: float

    def to_dict(self):
        return asdict(self)


def pwl_interpolant(z_lo: float, z_hi: float, grid_h: float,
                    func: Optional[Callable] = None, r_max: float = R_MAX,
                    tol: float = 1e-12) -> KuhnInterpolant:
    """Interpolate ``func`` (default ``f``) on a grid clipped to the slab.

    Nodes are ``(-r_max, -r_max, z_lo) + grid_h * (i, j, k)``; those with
    ``r > r_max`` or ``z > z_hi`` get NaN.
    """
    if not grid_h > 0:
        raise ArgumentError("grid_h must be positive")
    if not z_hi <= Z_MAX or not z_lo < z_hi:
        raise ArgumentError("slab must satisfy z_lo < z_hi <= -1")
    nx = int(math.ceil(2 * r_max / grid_h - 1e-9))
    nz = int(math.ceil((z_hi - z_lo) / grid_h - 1e-9))
    xs = -r_max + grid_h * np.arange(nx + 1)
    zs = z_lo + grid_h * np.arange(nz + 1)
    X, Y, Z = np.meshgrid(xs, xs, zs, indexing="ij")
    keep = (np.hypot(X, Y) <= r_max + 1e-12) & (Z <= z_hi + 1e-12)
    vals = np.full(X.shape, np.nan)
    if func is None:
        vals[keep] = solve_f_xyz(X[keep], Y[keep], Z[keep], tol)
    else:
        vals[keep] = func(X[keep], Y[keep], Z[keep])
    return KuhnInterpolant(np.array([-r_max, -r_max, z_lo]), float(grid_h), vals)


def sample_slab_points(count, z_lo, z_hi, r_sample=0.2, margin=0.05, seed=0):
    """Uniform random points with ``r <= r_sample`` in the slab interior."""
    rng = np.random.default_rng(seed)
    pad = margin * (z_hi - z_lo)
    r = r_sample * np.sqrt(rng.uniform(size=count))
    phi = rng.uniform(0.0, 2 * np.pi, size=count)
    z = rng.uniform(z_lo + pad, z_hi - pad, size=count)
    return np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=1)


def gradient_error(interp: KuhnInterpolant, pts, z_lo, z_hi,
                   grad_func: Optional[Callable] = None) -> GradientErrorReport:
    """Sup and mean of ``||grad Psi - grad f||`` over the given points."""
    pts = np.atleast_2d(np.asarray(pts, dtype=float))
    g_psi = interp.gradient(pts)
    if grad_func is None:
        g_true = grad_f_xyz(pts[:, 0], pts[:, 1], pts[:, 2])
    else:
        g_true = grad_func(pts)
    err = np.linalg.norm(g_psi - g_true, axis=1)
    ok = np.isfinite(err)
    return GradientErrorReport(
        interp.h, float(z_lo), float(z_hi), int(np.sum(np.isfinite(interp.values))),
        int(np.sum(ok)), int(np.sum(~ok)),
        float(np.max(err[ok])) if np.any(ok) else float("nan"),
        float(np.mean(err[ok])) if np.any(ok) else float("nan"),
    )


@dataclass
class ConvergenceReport:
    reports: list
    ratios: list
    ratio_range: tuple = (1.5, 2.5)

    @property
    def passed(self):
        lo, hi = self.ratio_range
        return all(lo <= r <= hi for r in self.ratios)

    def to_dict(self):
        return {
            "reports": [r.to_dict() for r in self.reports],
            "ratios": self.ratios,
            "ratio_range": list(self.ratio_range),
            "passed": bool(self.passed),
        }


def pwl_convergence_study(z_lo=-40.0, z_hi=-38.0, grid_hs=(0.02, 0.01),
                          n_points=20000, seed=0, r_sample=0.2) -> ConvergenceReport:
    """Sup gradient error of the interpolant for a sequence of grid spacings.

    The same random interior points are used for every spacing; the ratios
    of consecutive sup errors should be close to 2 for first-order decay.
    """
    pts = sample_slab_points(n_points, z_lo, z_hi, r_sample, seed=seed)
    g_true = grad_f_xyz(pts[:, 0], pts[:, 1], pts[:, 2])
    reports = []
    for h in grid_hs:
        interp = pwl_interpolant(z_lo, z_hi, h)
        reports.append(gradient_error(interp, pts, z_lo, z_hi, lambda _p: g_true))
    ratios = [reports[i].sup_error / reports[i + 1].sup_error
              for i in range(len(reports) - 1)]
    return ConvergenceReport(reports, ratios)
