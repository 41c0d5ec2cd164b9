import numpy as np
import pytest

from cumsens.core import (
    AdversarialSelector,
    PerturbationSignal,
    RandomSelector,
    Trajectory,
    VectorField,
    check_growth_bound,
    first_element_selector,
    integrate_perturbed,
    is_right_continuous,
    make_selector,
    min_norm_selector,
    pairwise_sensitivity_ratio,
    read_trajectory_csv,
    reparametrize_trajectory,
    sensitivity_ratio,
    time_grid,
)
from cumsens.errors import (
    ArgumentError,
    FieldUndefinedError,
    IntegrationDivergedError,
    UndefinedRatioError,
)
from cumsens.fpcs import PwlConvexFunction, fpcs_field
from cumsens.linear import ROTARY_A, rotary_perturbation


def test_zero_field_constant_trajectory():
    tr = integrate_perturbed(VectorField.constant([0.0, 0.0]), [1.0, 2.0],
                             PerturbationSignal.zero(2), 1.0, 0.01)
    assert np.all(tr.states == [1.0, 2.0])
    assert tr.times[-1] == 1.0


def test_rotary_euler_tracks_spiral():
    T = 2 * np.pi
    tr = integrate_perturbed(VectorField.linear(ROTARY_A), [1.0, 0.0], rotary_perturbation(),
                             T, 1e-4)
    # first-order method: error of order dt * T^2
    assert np.allclose(tr.states[-1], [T + 1.0, 0.0], atol=0.05)
    t = tr.times[::5000]
    exact = (t + 1)[:, None] * np.stack([np.cos(t), np.sin(t)], 1)
    assert np.max(np.abs(tr.states[::5000] - exact)) < 0.05


def test_exponential_decay_within_tolerance():
    tr = integrate_perturbed(VectorField.linear([[-1.0]]), [1.0], PerturbationSignal.zero(1),
                             1.0, 1e-4)
    assert abs(tr.states[-1, 0] - np.exp(-1.0)) < 1e-4


def test_euler_is_first_order():
    errs = []
    for dt in (1e-2, 5e-3, 2.5e-3):
        tr = integrate_perturbed(VectorField.linear([[-1.0]]), [1.0], PerturbationSignal.zero(1),
                                 1.0, dt)
        errs.append(abs(tr.states[-1, 0] - np.exp(-1.0)))
    for a, b in zip(errs, errs[1:]):
        assert 1.7 <= a / b <= 2.3


def test_initial_jump_is_applied():
    U = PerturbationSignal.constant([0.5])
    tr = integrate_perturbed(VectorField.constant([0.0]), [1.0], U, 1.0, 0.1)
    assert tr.states[0, 0] == 1.5


def test_perturbation_additivity():
    # x(t) - int xi = x0 + U(t); left Riemann sum matches Euler exactly
    U = PerturbationSignal.sinusoidal([0.3, -0.2], [2.0, 1.0], [0.1, 0.0])
    A = np.array([[-0.5, 1.0], [-1.0, -0.2]])
    dt = 1e-3
    tr = integrate_perturbed(VectorField.linear(A), [1.0, -1.0], U, 2.0, dt)
    integral = np.vstack([np.zeros(2), np.cumsum(np.diff(tr.times)[:, None] * tr.drifts[:-1], 0)])
    recovered = tr.states - integral - np.array([1.0, -1.0])
    slack = 10 * dt * 2.0 * np.linalg.norm(A, 2) ** 2 * np.max(np.abs(tr.states))
    assert np.max(np.abs(recovered - tr.u_values())) <= slack


def test_time_grid_lands_on_horizon():
    g = time_grid(1.0, 0.3)
    assert g[0] == 0 and g[-1] == 1.0 and np.all(np.diff(g) > 0)
    assert time_grid(0.0, 0.1).tolist() == [0.0]
    with pytest.raises(ArgumentError):
        time_grid(1.0, 0.0)
    with pytest.raises(ArgumentError):
        time_grid(-1.0, 0.1)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_reports_last_time():
    with pytest.raises(IntegrationDivergedError) as ei:
        integrate_perturbed(VectorField(1, lambda x: np.array([x[0] ** 4])), [10.0],
                            PerturbationSignal.zero(1), 10.0, 0.1)
    assert ei.value.last_time >= 0
    assert np.all(np.isfinite(ei.value.trajectory.states))


def test_undefined_field_raises():
    def sampler(x):
        raise FieldUndefinedError("nowhere")

    with pytest.raises(FieldUndefinedError):
        integrate_perturbed(VectorField(1, sampler), [0.0], PerturbationSignal.zero(1), 1.0, 0.1)


def test_empty_drift_set_is_undefined():
    fld = VectorField(1, lambda x: np.zeros((0, 1)))
    with pytest.raises(FieldUndefinedError):
        fld.sample([0.0])


def test_ratio_identical_trajectories_is_zero():
    U = PerturbationSignal.constant([1.0, 0.0])
    tr = integrate_perturbed(VectorField.constant([0.0, 0.0]), [0.0, 0.0],
                             PerturbationSignal.zero(2), 1.0, 0.1)
    assert sensitivity_ratio(tr, tr, U).ratio == 0.0


def test_ratio_zero_perturbation_rejected():
    tr = integrate_perturbed(VectorField.constant([0.0]), [0.0], PerturbationSignal.zero(1),
                             1.0, 0.1)
    with pytest.raises(UndefinedRatioError):
        sensitivity_ratio(tr, tr)


def test_constant_shift_on_contraction():
    # x' = -x with U = u0: deviation u0 e^{-t}, ratio <= 1
    fld = VectorField.linear([[-1.0]])
    U = PerturbationSignal.constant([0.7])
    p = integrate_perturbed(fld, [1.0], U, 5.0, 1e-3)
    b = integrate_perturbed(fld, [1.0], PerturbationSignal.zero(1), 5.0, 1e-3)
    rep = sensitivity_ratio(p, b, U)
    assert rep.ratio <= 1.0 + 1e-12
    assert rep.sup_deviation == pytest.approx(0.7)


def test_ratio_reparametrization_invariant():
    fld = VectorField.linear(ROTARY_A)
    U = rotary_perturbation()
    p = integrate_perturbed(fld, [1.0, 0.0], U, 4.0, 1e-2)
    b = integrate_perturbed(fld, [1.0, 0.0], PerturbationSignal.zero(2), 4.0, 1e-2)
    r0 = sensitivity_ratio(p, b).ratio
    fwd, inv = np.square, np.sqrt
    p2 = reparametrize_trajectory(p, fwd, inv)
    b2 = reparametrize_trajectory(b, fwd, inv)
    assert abs(sensitivity_ratio(p2, b2).ratio - r0) <= 1e-12
    assert np.allclose(p2.times, np.sqrt(p.times))


def test_pairwise_ratio():
    fld = VectorField.linear([[-1.0]])
    U1 = PerturbationSignal.constant([0.2])
    U2 = PerturbationSignal.constant([-0.3])
    a = integrate_perturbed(fld, [1.0], U1, 2.0, 1e-3)
    b = integrate_perturbed(fld, [1.0], U2, 2.0, 1e-3)
    rep = pairwise_sensitivity_ratio(a, b)
    assert rep.sup_perturbation == pytest.approx(0.5)
    assert rep.ratio <= 1 + 1e-12


def test_growth_bound_checks():
    A = np.array([[1.0, 2.0], [0.0, -3.0]])
    rng = np.random.default_rng(0)
    assert check_growth_bound(VectorField.linear(A), np.linalg.norm(A, 2),
                              rng.normal(size=(200, 2)) * 10).ok
    quad = VectorField(1, lambda x: np.array([x[0] ** 2]))
    g = check_growth_bound(quad, 1.0, [[0.5], [10.0], [2.0]])
    assert not g.ok
    assert g.worst_ratio == pytest.approx(100 / 11)
    assert g.worst_point[0] == 10.0
    phi = PwlConvexFunction.l1_norm(2)
    fld = fpcs_field(phi)
    gamma = np.max(np.linalg.norm(phi.mu, axis=1))
    assert check_growth_bound(fld, gamma, rng.normal(size=(200, 2))).ok


def test_selectors():
    d = np.array([[1.0, 0.0], [0.1, 0.1], [-2.0, 0.0]])
    x = np.zeros(2)
    assert np.array_equal(first_element_selector(d, x), d[0])
    # the hull contains the origin
    assert np.linalg.norm(min_norm_selector(d, x)) < 1e-12
    assert np.allclose(min_norm_selector(np.eye(2), x), [0.5, 0.5])
    r1, r2 = RandomSelector(3), RandomSelector(3)
    assert all(np.array_equal(r1(d, x), r2(d, x)) for _ in range(10))
    adv = AdversarialSelector(lambda y: np.array([-1.0, 0.0]))
    assert np.array_equal(adv(d, x), d[2])
    assert np.array_equal(make_selector("first")(d, x), d[0])
    with pytest.raises(ArgumentError):
        make_selector("nope")


def test_piecewise_constant_is_right_continuous():
    U = PerturbationSignal.piecewise_constant([0.0, 1.0, 2.0], [[1.0], [2.0], [3.0]])
    assert U.evaluate(1.0)[0] == 2.0
    assert U.evaluate(np.nextafter(1.0, 0))[0] == 1.0
    assert is_right_continuous(U, [0.0, 0.5, 1.0, 2.0, 3.0])
    left = PerturbationSignal(lambda t: np.array([1.0 if t <= 1.0 else 0.0]), 1)
    assert not is_right_continuous(left, [1.0])
    with pytest.raises(ArgumentError):
        PerturbationSignal.piecewise_constant([0.5], [[1.0]])


def test_csv_roundtrip(tmp_path):
    U = PerturbationSignal.sinusoidal([0.1, 0.2], [1.0, 3.0])
    tr = integrate_perturbed(VectorField.linear(-np.eye(2)), [1.0, 2.0], U, 1.0, 0.1)
    path = tmp_path / "t.csv"
    tr.to_csv(path)
    header = path.read_text().splitlines()[0]
    assert header == "t,x_0,x_1,xi_0,xi_1,U_0,U_1"
    back = read_trajectory_csv(path)
    assert np.array_equal(back.times, tr.times)
    assert np.array_equal(back.states, tr.states)
    assert np.array_equal(back.drifts, tr.drifts)


def test_trajectory_length_invariant():
    with pytest.raises(ArgumentError):
        Trajectory(np.array([0.0, 1.0]), np.zeros((3, 1)), np.zeros((2, 1)),
                   PerturbationSignal.zero(1))
