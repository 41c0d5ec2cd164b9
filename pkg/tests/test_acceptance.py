"""Exit-criteria checks.

Each ``criterion_N`` returns ``(passed, detail)``; the pytest wrappers record
one PASS/FAIL line per criterion (printed in the terminal summary) and assert
on it. Running this file directly prints the same lines without pytest.
"""

import sys
import time

import numpy as np
import pytest
from scipy.stats import ortho_group

from cumsens.books import (
    CylPoint,
    grad_f_xyz,
    h_residual,
    level_surface_z,
    pwl_convergence_study,
    quasiconvexity_probe,
    solve_f_xyz,
    spiral_sweep,
    verify_spread_membership,
    z_eps_of,
)
from cumsens.core import PerturbationSignal, integrate_perturbed, sensitivity_ratio
from cumsens.discrete import discrete_trajectory, embed_continuous
from cumsens.fpcs import (
    PwlConvexFunction,
    empirical_sensitivity_constant,
    fpcs_field,
    random_piecewise_constant,
)
from cumsens.linear import (
    ROTARY_A,
    LinearSystem,
    classify_sof,
    closed_form_trajectory,
    rotary_counterexample,
)

RESULTS = []

pytestmark = pytest.mark.acceptance


def _timed(func):
    t0 = time.perf_counter()
    passed, detail = func()
    return passed, detail, time.perf_counter() - t0


def criterion_1():
    """Rotary counterexample at T=100 through the closed form."""
    t0 = time.perf_counter()
    _, ref, U = rotary_counterexample(100.0)
    sys_ = LinearSystem(ROTARY_A)
    p = closed_form_trajectory(sys_, [1.0, 0.0], U, ref.times)
    b = closed_form_trajectory(sys_, [1.0, 0.0], PerturbationSignal.zero(2), ref.times)
    rep = sensitivity_ratio(p, b, U)
    final = float(np.linalg.norm(p.states[-1] - b.states[-1]))
    elapsed = time.perf_counter() - t0
    ok = (abs(final - 100) <= 1e-6 and abs(rep.sup_perturbation - 2) <= 1e-9
          and abs(rep.ratio - 50) <= 1e-6 and elapsed < 1.0)
    return ok, (f"|x~(T)-x(T)|={final:.12f} supU={rep.sup_perturbation:.12f} "
                f"ratio={rep.ratio:.12f} time={elapsed:.2f}s (<1s)")


def criterion_2():
    """Canonical classifications and orthogonal-similarity invariance."""
    t0 = time.perf_counter()
    rot = classify_sof(LinearSystem(ROTARY_A))
    zero = classify_sof(LinearSystem(np.zeros((2, 2))))
    nil = classify_sof(LinearSystem([[0.0, 1.0], [0.0, 0.0]]))
    canonical = (rot.is_stable and not rot.is_orbit_free and not rot.is_sof
          and np.allclose(sorted(rot.eigenvalues.imag), [-1, 1])
          and zero.is_sof and (zero.zero_eig_algebraic, zero.zero_eig_geometric) == (2, 2)
          and not nil.is_sof and (nil.zero_eig_algebraic, nil.zero_eig_geometric) == (2, 1))
    rng = np.random.default_rng(2)
    mats = [ROTARY_A, np.zeros((2, 2)), np.array([[0.0, 1.0], [0.0, 0.0]])]
    refs = [rot, zero, nil]
    mismatches = 0
    for i in range(100):
        Q = ortho_group.rvs(2, random_state=rng)
        A = mats[i % 3]
        if not classify_sof(LinearSystem(Q @ A @ Q.T)).same_classification(refs[i % 3]):
            mismatches += 1
    elapsed = time.perf_counter() - t0
    ok = canonical and mismatches == 0 and elapsed < 1.0
    return ok, f"canonical classifications ok={canonical}, mismatches={mismatches}/100 time={elapsed:.2f}s (<1s)"


def criterion_3():
    """Symmetric negative-semidefinite bound n+1 for n=3."""
    t0 = time.perf_counter()
    rng = np.random.default_rng(3)
    n, T, dt = 3, 20.0, 1e-3
    Q = ortho_group.rvs(n, random_state=rng)
    lam = -rng.uniform(0.1, 2.0, n)
    lam[0] = 0.0  # semidefinite
    A = Q @ np.diag(lam) @ Q.T
    A = 0.5 * (A + A.T)
    fld = LinearSystem(A).field()
    x0 = rng.normal(size=n)
    base = integrate_perturbed(fld, x0, PerturbationSignal.zero(n), T, dt)
    worst = 0.0
    for _ in range(100):
        U = random_piecewise_constant(rng, n, T, 1.0)
        rep = sensitivity_ratio(integrate_perturbed(fld, x0, U, T, dt), base, U)
        worst = max(worst, rep.ratio)
    elapsed = time.perf_counter() - t0
    return worst <= n + 1 and elapsed < 30.0, (
        f"eigenvalues={np.round(lam, 3).tolist()} max ratio={worst:.4f} (<= {n + 1}) "
        f"time={elapsed:.1f}s (<30s)")


def criterion_4():
    """Closed form against Euler at dt=1e-4 on random stable 4x4 systems."""
    t0 = time.perf_counter()
    rng = np.random.default_rng(4)
    worst = 0.0
    for _ in range(20):
        A = rng.normal(size=(4, 4))
        A -= (np.linalg.eigvals(A).real.max() + rng.uniform(0.1, 1.0)) * np.eye(4)
        A /= np.linalg.norm(A, 2)  # unit time scale
        sys_ = LinearSystem(A)
        U = PerturbationSignal.sinusoidal(rng.uniform(-1, 1, 4), rng.uniform(0.5, 3, 4),
                                          rng.uniform(0, 2 * np.pi, 4))
        x0 = rng.normal(size=4)
        e = integrate_perturbed(sys_.field(), x0, U, 10.0, 1e-4)
        idx = np.arange(0, e.times.size, 100)
        c = closed_form_trajectory(sys_, x0, U, e.times[idx])
        rel = np.max(np.abs(e.states[idx] - c.states)) / np.max(np.abs(c.states))
        worst = max(worst, rel)
    elapsed = time.perf_counter() - t0
    return worst <= 1e-4 and elapsed < 60.0, (
        f"max relative disagreement={worst:.3e} (<= 1e-4) time={elapsed:.1f}s (<60s)")


def criterion_5():
    """Implicit-function solver, level roundtrip, gradient and quasi-convexity."""
    t0 = time.perf_counter()
    rng = np.random.default_rng(5)
    N = 10_000
    r = 0.25 * np.sqrt(rng.uniform(size=N))
    ph = rng.uniform(0, 2 * np.pi, N)
    z = -1.0 - rng.exponential(10.0, N)
    x, y = r * np.cos(ph), r * np.sin(ph)
    f = solve_f_xyz(x, y, z)
    res = float(np.max(np.abs(h_residual(f, x, y, z))))

    a = rng.uniform(1.5, 60.0, 1000)
    rr = 0.25 * np.sqrt(rng.uniform(size=1000))
    pp = rng.uniform(0, 2 * np.pi, 1000)
    zz = level_surface_z(a, rr, pp)
    keep = zz <= -1.0
    back = solve_f_xyz(rr[keep] * np.cos(pp[keep]), rr[keep] * np.sin(pp[keep]), zz[keep])
    roundtrip = float(np.max(np.abs(back - a[keep])))

    M = 100
    r = 0.24 * np.sqrt(rng.uniform(size=M))
    ph = rng.uniform(0, 2 * np.pi, M)
    z = -1.01 - rng.uniform(0, 29, M)
    P = np.stack([r * np.cos(ph), r * np.sin(ph), z], 1)
    G = grad_f_xyz(P[:, 0], P[:, 1], P[:, 2])
    h = 1e-5
    fd = np.empty_like(P)
    for i in range(3):
        e = np.zeros(3)
        e[i] = h
        fp = solve_f_xyz(*(P + e).T, tol=1e-14)
        fm = solve_f_xyz(*(P - e).T, tol=1e-14)
        fd[:, i] = (fp - fm) / (2 * h)
    grad_rel = float(np.max(np.linalg.norm(fd - G, axis=1) / np.linalg.norm(G, axis=1)))

    qc = quasiconvexity_probe(8.0, 10_000, seed=5)
    elapsed = time.perf_counter() - t0
    ok = (res <= 1e-10 and roundtrip <= 1e-8 and grad_rel <= 1e-5 and qc.passed
          and elapsed < 30.0)
    return ok, (f"max|h|={res:.2e} roundtrip={roundtrip:.2e} grad rel={grad_rel:.2e} "
                f"quasi-convex pairs failed={qc.failures + qc.strict_failures}/10000 "
                f"time={elapsed:.1f}s (<30s)")


def criterion_6():
    """Spiral certificates and the growth of their ratios."""
    t0 = time.perf_counter()
    eps = (0.1, 0.05, 0.025)
    certs, growth = spiral_sweep(eps, -1.0)
    parts, ok = [], True
    for e, c in zip(eps, certs):
        c_ok = (abs(c.r_of_t[-1] - 1 / 6) <= 1e-6 and c.t0 < 1 / (2 * e)
                and c.sup_U <= 2 * e * (1 + 1e-12) and c.ratio >= 1 / (12 * e) * (1 - 1e-12)
                and c.passed)
        ok &= c_ok
        parts.append(f"eps={e}: t0={c.t0:.4f} supU={c.sup_U:.4f} ratio={c.ratio:.4f} "
                     f"[{'ok' if c_ok else 'FAIL'}]")
    g_ok = all(1.6 <= g <= 2.4 for g in growth)
    elapsed = time.perf_counter() - t0
    ok = ok and g_ok and elapsed < 60.0
    return ok, ("; ".join(parts) + f"; growth factors={[round(g, 4) for g in growth]} "
                f"(each in [1.6, 2.4]: {g_ok}) time={elapsed:.1f}s (<60s)")


def criterion_7():
    """Spread-membership matching on the screw line."""
    eps = 0.1
    rng = np.random.default_rng(7)
    z_eps = z_eps_of(eps)
    worst_d, worst_a = 0.0, 0.0
    for _ in range(100):
        z = z_eps - rng.uniform(0.0, 20.0)
        r = rng.uniform(0.0, 0.25)
        m = verify_spread_membership(CylPoint(r, -z, z), eps)
        worst_d = max(worst_d, m.distance)
        worst_a = max(worst_a, m.angle)
    return worst_d < eps and worst_a < 1e-6, (
        f"max distance={worst_d:.4e} (< {eps}) max angle={worst_a:.2e} rad (< 1e-6)")


def criterion_8():
    """Discrete-to-continuous embedding reproduced by the integrator."""
    rng = np.random.default_rng(8)
    worst, bound_ok = 0.0, True
    for _ in range(100):
        n = int(rng.integers(1, 4))
        m = int(rng.integers(2, 9))
        phi = PwlConvexFunction(rng.normal(size=(m, n)), rng.normal(size=m))
        fld = fpcs_field(phi)
        K = int(rng.integers(1, 41))
        V = rng.uniform(0.0, 0.5) * rng.normal(size=(K + 1, n))
        d = discrete_trajectory(fld, rng.normal(size=n), V, K)
        U, emb = embed_continuous(d)
        cont = integrate_perturbed(fld, d.z0, U, K, None, times=emb.times)
        at_int = cont.states[np.isin(cont.times, np.arange(K + 1))]
        scale = 1.0 + np.max(np.linalg.norm(d.states, axis=1))
        worst = max(worst, float(np.max(np.linalg.norm(at_int - d.states, axis=1))) / scale)
        sup_u = np.max(np.linalg.norm(cont.u_values(), axis=1))
        lim = np.max(np.linalg.norm(d.perturbation, axis=1)) + np.max(
            np.linalg.norm(d.drifts, axis=1))
        bound_ok &= bool(sup_u <= lim * (1 + 1e-15))
    return worst <= 1e-12 and bound_ok, (
        f"max relative |x~(k)-z(k)|={worst:.2e} (<= 1e-12) supU bound held={bound_ok}")


def criterion_9():
    """FPCS sensitivity stays bounded as the perturbation shrinks."""
    phi = PwlConvexFunction.l1_norm(2)
    rng = np.random.default_rng(9)
    T = 2.0
    ratios = []
    for delta in (1.0, 0.1, 0.01):
        fam = [random_piecewise_constant(rng, 2, T, delta) for _ in range(20)]
        c, _ = empirical_sensitivity_constant(phi, fam, [1.0, 0.5], T, min(1e-3, delta / 100))
        ratios.append(c)
    spread = max(ratios) / min(ratios)
    return spread < 2.0, (f"max ratio per level={[round(r, 4) for r in ratios]} "
                          f"max/min={spread:.3f} (< 2)")


def criterion_10():
    """First-order gradient convergence of the simplicial interpolant."""
    rep = pwl_convergence_study(-40.0, -38.0, (0.02, 0.01))
    r = rep.ratios[0]
    errs = [x.sup_error for x in rep.reports]
    return 1.5 <= r <= 2.5, (f"sup gradient errors={[round(e, 4) for e in errs]} "
                             f"ratio={r:.3f} (in [1.5, 2.5])")


CRITERIA = [criterion_1, criterion_2, criterion_3, criterion_4, criterion_5,
            criterion_6, criterion_7, criterion_8, criterion_9, criterion_10]


def _record(i):
    passed, detail, elapsed = _timed(CRITERIA[i - 1])
    line = f"[{'PASS' if passed else 'FAIL'}] criterion {i}: {detail} (wall {elapsed:.2f}s)"
    RESULTS.append(line)
    print(line)
    return passed, line


@pytest.mark.parametrize("i", range(1, 11))
def test_criterion(i):
    passed, line = _record(i)
    assert passed, line


if __name__ == "__main__":
    failures = 0
    for k in range(1, 11):
        failures += not _record(k)[0]
    sys.exit(1 if failures else 0)
