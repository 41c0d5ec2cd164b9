import numpy as np
import pytest
from scipy.linalg import expm
from scipy.stats import ortho_group

from cumsens.core import PerturbationSignal, integrate_perturbed, sensitivity_ratio, time_grid
from cumsens.errors import ArgumentError, NotApplicableError, UnsupportedError
from cumsens.fpcs import random_piecewise_constant
from cumsens.linear import (
    ROTARY_A,
    LinearSystem,
    classify_sof,
    closed_form_trajectory,
    homogeneous_solution,
    non_sof_witness,
    rotary_counterexample,
    rotary_perturbation,
    sensitivity_constant,
    simulate_linear,
)

ROTATION = LinearSystem(ROTARY_A)
ZERO = LinearSystem(np.zeros((2, 2)))
NILPOTENT = LinearSystem([[0.0, 1.0], [0.0, 0.0]])


def test_rotation_classification():
    rep = classify_sof(ROTATION)
    assert np.allclose(sorted(rep.eigenvalues, key=lambda z: z.imag), [-1j, 1j])
    assert rep.is_stable and not rep.is_orbit_free and not rep.is_sof


def test_zero_matrix_is_sof():
    rep = classify_sof(ZERO)
    assert rep.is_sof
    assert rep.zero_eig_algebraic == 2 and rep.zero_eig_geometric == 2


def test_nilpotent_is_not_sof():
    rep = classify_sof(NILPOTENT)
    assert not rep.is_sof
    assert rep.zero_eig_algebraic == 2 and rep.zero_eig_geometric == 1
    tr = integrate_perturbed(NILPOTENT.field(), [0.0, 1.0], PerturbationSignal.zero(2), 50.0, 0.1)
    assert tr.states[-1, 0] == pytest.approx(50.0)


def test_other_classifications():
    assert classify_sof(LinearSystem(-np.eye(3))).is_sof
    assert not classify_sof(LinearSystem(np.diag([1.0, -1.0]))).is_stable
    J3 = np.diag([1.0, 1.0], 1)
    rep = classify_sof(LinearSystem(J3))
    assert (rep.zero_eig_algebraic, rep.zero_eig_geometric) == (3, 1)
    # semisimple zero next to a stable block
    assert classify_sof(LinearSystem(np.diag([0.0, -1.0, -2.0]))).is_sof
    # defective imaginary pair
    R = np.block([[ROTARY_A, np.eye(2)], [np.zeros((2, 2)), ROTARY_A]])
    assert not classify_sof(LinearSystem(R)).is_stable


def test_classification_orthogonal_invariance():
    rng = np.random.default_rng(0)
    for i in range(100):
        n = int(rng.integers(2, 5))
        kind = i % 4
        if kind == 0:
            A = -np.diag(rng.uniform(0.1, 2, n))
            A[0, 0] = 0.0
        elif kind == 1:
            A = np.zeros((n, n))
            A[0, 1] = 1.0
        elif kind == 2:
            A = np.zeros((n, n))
            A[:2, :2] = rng.uniform(0.5, 2) * ROTARY_A
        else:
            A = rng.normal(size=(n, n))
        Q = ortho_group.rvs(n, random_state=rng)
        a = classify_sof(LinearSystem(A))
        b = classify_sof(LinearSystem(Q @ A @ Q.T))
        assert a.same_classification(b)


def test_sensitivity_constant_examples():
    assert sensitivity_constant(LinearSystem(np.diag([-1.0, -2.0]))).value == pytest.approx(3.0)
    assert sensitivity_constant(LinearSystem(-np.eye(3))).value == pytest.approx(4.0)
    A = np.array([[-1.0, 2.0], [-2.0, -1.0]])
    lam = np.linalg.eigvals(A)
    _, V = np.linalg.eig(A)
    s = np.linalg.svd(V / np.linalg.norm(V, axis=0), compute_uv=False)
    oracle = 1 + s[0] / s[-1] * np.sum(np.abs(lam) / np.abs(lam.real))
    assert sensitivity_constant(LinearSystem(A)).value == pytest.approx(oracle, rel=1e-12)
    assert oracle == pytest.approx(1 + 2 * np.sqrt(5), rel=1e-12)


def test_sensitivity_constant_errors():
    with pytest.raises(NotApplicableError):
        sensitivity_constant(ROTATION)
    with pytest.raises(UnsupportedError):
        sensitivity_constant(LinearSystem([[-1.0, 1.0], [0.0, -1.0]]))
    # zero eigenvalues contribute nothing
    assert sensitivity_constant(ZERO).value == pytest.approx(1.0)


def test_closed_form_homogeneous():
    rng = np.random.default_rng(1)
    A = rng.normal(size=(3, 3))
    x0 = rng.normal(size=3)
    t = np.linspace(0, 2, 21)
    tr = closed_form_trajectory(LinearSystem(A), x0, PerturbationSignal.zero(3), t)
    exact = np.stack([expm(A * ti) @ x0 for ti in t])
    assert np.allclose(tr.states, exact, rtol=1e-10, atol=1e-12)
    assert np.allclose(homogeneous_solution(LinearSystem(A), x0, t), exact, rtol=1e-10)


def test_semigroup_property():
    rng = np.random.default_rng(2)
    for _ in range(10):
        A = rng.normal(size=(3, 3))
        A /= np.linalg.norm(A, 2)
        x0 = rng.normal(size=3)
        s, t = rng.uniform(0, 1, 2)
        tr = closed_form_trajectory(LinearSystem(A), x0, PerturbationSignal.zero(3),
                                    np.array([0.0, s, s + t]))
        assert np.allclose(tr.states[2], expm(A * t) @ tr.states[1], atol=1e-10)


def test_closed_form_rotary_exact():
    t = np.linspace(0, 10, 101)
    tr = closed_form_trajectory(ROTATION, [1.0, 0.0], rotary_perturbation(), t)
    exact = (t + 1)[:, None] * np.stack([np.cos(t), np.sin(t)], 1)
    assert np.max(np.abs(tr.states - exact)) < 1e-9
    assert np.allclose(tr.drifts, tr.states @ ROTARY_A.T)


def test_closed_form_piecewise_constant():
    # x' = -x with a jump at t = 1 has exact solution in closed form
    U = PerturbationSignal.piecewise_constant([0.0, 1.0], [[0.5], [-1.0]])
    t = np.array([0.0, 0.5, 1.0, 1.5, 3.0])
    tr = closed_form_trajectory(LinearSystem([[-1.0]]), [1.0], U, t)

    def exact(s):
        if s < 1:
            return 1.5 * np.exp(-s)
        return 1.5 * np.exp(-s) - 1.5 * np.exp(-(s - 1))

    assert np.allclose(tr.states[:, 0], [exact(s) for s in t], atol=1e-12)


def test_closed_form_matches_euler():
    rng = np.random.default_rng(3)
    A = rng.normal(size=(4, 4))
    A -= (np.linalg.eigvals(A).real.max() + 0.5) * np.eye(4)
    A /= np.linalg.norm(A, 2)
    U = PerturbationSignal.sinusoidal(rng.uniform(-1, 1, 4), rng.uniform(0.5, 3, 4))
    e = integrate_perturbed(LinearSystem(A).field(), np.ones(4), U, 5.0, 1e-4)
    idx = np.arange(0, e.times.size, 500)
    c = closed_form_trajectory(LinearSystem(A), np.ones(4), U, e.times[idx])
    assert np.max(np.abs(e.states[idx] - c.states)) / np.max(np.abs(c.states)) <= 1e-4


def test_rotary_ratios():
    for T, expect in ((2 * np.pi, np.pi), (100.0, 50.0)):
        base, pert, U = rotary_counterexample(T)
        assert sensitivity_ratio(pert, base, U).ratio == pytest.approx(expect, abs=1e-9)
    # deviation t against sup ||U|| = 2 sin(t/2): the ratio tends to 1 as T -> 0
    base, pert, U = rotary_counterexample(1e-3, step=1e-4)
    assert sensitivity_ratio(pert, base, U).ratio == pytest.approx(
        1e-3 / (2 * np.sin(5e-4)), rel=1e-9)


def test_simulate_linear_methods():
    sys_ = LinearSystem(np.diag([-1.0, -2.0]))
    U = PerturbationSignal.constant([0.1, 0.0])
    _, _, rep_c = simulate_linear(sys_, [1.0, 1.0], U, 2.0, 1e-3)
    _, _, rep_e = simulate_linear(sys_, [1.0, 1.0], U, 2.0, 1e-3, method="euler")
    assert rep_c.ratio == pytest.approx(rep_e.ratio, rel=1e-2)
    with pytest.raises(ArgumentError):
        simulate_linear(sys_, [1.0, 1.0], U, 2.0, 1e-3, method="rk4")


@pytest.mark.parametrize("A", [ROTARY_A, [[0.0, 1.0], [0.0, 0.0]], [[0.1, 0.0], [0.0, -1.0]],
                               np.diag([1.0, 1.0], 1)])
def test_witness_exceeds_bound(A):
    sys_ = LinearSystem(A)
    w = non_sof_witness(sys_, 100.0)
    assert w.deviation > 100.0
    t_u = np.linspace(0.0, w.horizon, 4001)
    grid_sup = np.max(np.linalg.norm(w.perturbation.evaluate_many(t_u), axis=1))
    assert grid_sup <= w.sup_perturbation * (1 + 1e-4)
    assert w.sup_perturbation <= 2.0 + 1e-9
    # reproduce independently on a grid
    t = time_grid(w.horizon, w.horizon / 2000)
    p = closed_form_trajectory(sys_, w.x0, w.perturbation, t)
    b = closed_form_trajectory(sys_, w.x0, PerturbationSignal.zero(len(A)), t)
    assert np.max(np.linalg.norm(p.states - b.states, axis=1)) > 100.0


def test_witness_refused_for_sof():
    with pytest.raises(NotApplicableError):
        non_sof_witness(LinearSystem(-np.eye(2)), 10.0)


def test_symmetric_bound_small_sample():
    rng = np.random.default_rng(4)
    Q = ortho_group.rvs(3, random_state=rng)
    A = Q @ np.diag([0.0, -0.5, -1.5]) @ Q.T
    sys_ = LinearSystem((A + A.T) / 2)
    t = time_grid(10.0, 1e-2)
    base = closed_form_trajectory(sys_, np.ones(3), PerturbationSignal.zero(3), t)
    for _ in range(10):
        U = random_piecewise_constant(rng, 3, 10.0, 1.0)
        p = closed_form_trajectory(sys_, np.ones(3), U, t)
        assert sensitivity_ratio(p, base, U).ratio <= 4.0


def test_serialization():
    sys_ = LinearSystem([[1.0, 2.0], [3.0, 4.0]])
    assert np.array_equal(LinearSystem.from_dict(sys_.to_dict()).A, sys_.A)
    d = classify_sof(sys_).to_dict()
    assert set(d["eigenvalues"][0]) == {"re", "im"}
    with pytest.raises(ArgumentError):
        LinearSystem([[1.0, 2.0]])
