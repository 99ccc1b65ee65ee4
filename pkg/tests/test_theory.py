import numpy as np
import pytest

from constrained_flow.constraints import Annulus, Conjunction, HalfSpace, InsideBall, OutsideBall
from constrained_flow.distributions import builtin_case_study
from constrained_flow.network import VectorFieldParams, init_params, velocity
from constrained_flow.sampling import SampleConfig, Trajectory, euler_integrate, integrate_pair
from constrained_flow.theory import (
    TheoryConstants,
    analytic_gradient_bound,
    certified_descent_run,
    check_gronwall,
    check_monotone,
    check_one_step_bound,
    check_violation_derivative,
    crosses_kink,
    estimate_constants,
    find_spurious_equilibria,
    gronwall_envelope,
    near_centre,
    input_jacobian_norms,
    residual_ratio_test,
    sufficient_eta,
    trajectory_constants,
)

RING = Annulus([0.0, 0.0], 1.5, 2.8)


def zero_field(d=2):
    return init_params(0, d, 8).zeros_like()


def constant_field(v):
    p = zero_field(len(v))
    p.biases[2][:] = v
    return p


def linear_field(A):
    """ReLU MLP computing exactly ``v(x, t) = A x`` via ``z = relu(z) - relu(-z)``."""
    A = np.asarray(A, dtype=np.float64)
    d = A.shape[0]
    e = np.eye(d)
    w1 = np.concatenate([np.hstack([e, np.zeros((d, 1))]), np.hstack([-e, np.zeros((d, 1))])])
    w2 = np.eye(2 * d)
    w3 = np.hstack([A, -A])
    zeros = [np.zeros(2 * d), np.zeros(2 * d), np.zeros(d)]
    return VectorFieldParams([w1, w2, w3], zeros, seed=0)


def random_field(seed, d=2, h=32):
    p = init_params(seed, d, h)
    rng = np.random.default_rng(seed)
    for b in p.biases:
        b[:] = rng.normal(scale=0.3, size=b.shape)
    return p


def test_linear_field_helper():
    A = np.array([[0.5, -1.0], [0.3, 0.2]])
    x = np.random.default_rng(0).normal(size=(10, 2))
    np.testing.assert_allclose(velocity(linear_field(A), x, 0.4), x @ A.T, atol=1e-14)
    np.testing.assert_allclose(input_jacobian_norms(linear_field(A), x, 0.4), np.linalg.norm(A, 2), rtol=1e-12)


# instantaneous violation rate


def test_lemma_halfspace_zero_field_constant_eta():
    c = HalfSpace([1.0, 1.0], 0.0)
    p = zero_field()
    K = 100
    x0 = np.array([[-3.0, -2.0], [-1.0, -4.0]])
    # with eta = 1 the dynamics are x' = a exactly
    xs = [x0 + k / K * c.a for k in range(K + 1)]
    traj = Trajectory(np.arange(K + 1) / K, np.stack(xs))
    r = check_violation_derivative(traj, p, c, 0.0, 0.0, eta_fn=lambda t: 1.0)
    assert r < 1e-9


def test_lemma_feasible_forever_is_vacuous():
    c = HalfSpace([1.0, 1.0], -100.0)
    p = random_field(0)
    _, traj = euler_integrate(p, np.zeros((5, 2)), c, K=100, eta_max=1.0, record=True)
    assert check_violation_derivative(traj, p, c, 1.0, 0.3) == 0.0


def test_lemma_residual_is_first_order_on_ring():
    p = random_field(1)
    x0 = np.random.default_rng(2).normal(scale=1.5, size=(500, 2))
    res = {}
    for K in (100, 200, 400):
        _, traj = euler_integrate(p, x0, RING, K=K, eta_max=1.0, record=True)
        res[K] = check_violation_derivative(traj, p, RING, 1.0, 0.3)
    ok, ratios = residual_ratio_test(res)
    assert res[100] > 0
    assert ok, (res, ratios)


def straight_run(c, start, vel, K):
    xs = [np.array([start]) + k / K * np.array(vel) for k in range(K + 1)]
    return Trajectory(np.arange(K + 1) / K, np.stack(xs))


def test_lemma_residual_near_ball_centre():
    # straight motion that grazes the centre of an obstacle, where |x - c| is not differentiable
    c = OutsideBall([0.0, 0.0], 1.0)
    p = constant_field([1.8, 0.0])
    raw, kept = {}, {}
    for K in (100, 200, 400):
        traj = straight_run(c, [-0.9, 0.004], [1.8, 0.0], K)
        raw[K] = check_violation_derivative(traj, p, c, 0.0, 0.0, centre_radius=0.0)
        kept[K] = check_violation_derivative(traj, p, c, 0.0, 0.0)
    assert raw[400] > 0.5 and not residual_ratio_test(raw)[0]
    assert residual_ratio_test(kept)[0], kept


def test_near_centre_flags():
    c = Conjunction((OutsideBall([0.0, 0.0], 1.0), HalfSpace([1.0, 0.0], -5.0)))
    x = np.array([[-1.0, 0.01], [-1.0, 0.5], [0.02, 0.0]])
    y = np.array([[1.0, 0.01], [1.0, 0.5], [0.5, 0.5]])
    np.testing.assert_array_equal(near_centre(c, x, y), [True, False, True])


def test_ratio_test_logic():
    assert residual_ratio_test({100: 0.1, 200: 0.05, 400: 0.026})[0]
    assert not residual_ratio_test({100: 0.1, 200: 0.09, 400: 0.08})[0]
    assert residual_ratio_test({100: 1e-15, 200: 2e-15})[0]


# sufficient eta and monotone decrease


def test_sufficient_eta_examples():
    c = HalfSpace([1.0, 1.0], 0.0)
    x = np.array([-1.0, -1.0])
    assert sufficient_eta(x, constant_field([-1.0, -1.0]), 0.5, c) == pytest.approx(1.0, rel=1e-15)
    assert sufficient_eta(x, constant_field([1.0, -1.0]), 0.5, c) == 0.0
    assert sufficient_eta(x, constant_field([2.0, 3.0]), 0.5, c) == 0.0
    assert sufficient_eta(np.array([1.0, 1.0]), constant_field([-9.0, -9.0]), 0.5, c) == 0.0


def test_sufficient_eta_zero_gradient_raises():
    c = OutsideBall([0.0, 0.0], 1.0)
    with pytest.raises(ValueError):
        sufficient_eta(np.zeros(2), zero_field(), 0.5, c)


@pytest.mark.parametrize("case", [1, 2, 3])
def test_certified_descent_is_monotone(case):
    c = builtin_case_study(case).constraint
    p = random_field(case)
    rng = np.random.default_rng(case)
    pts = rng.uniform(-4, 4, size=(5000, 2))
    # avoid ball centres, where the hinge gradient is undefined
    pts = pts[(c.violation(pts) > 0.05) & (np.linalg.norm(c.gradient(pts), axis=1) > 0)][:100]
    traj = certified_descent_run(p, c, pts, K=100, eta_max=1.0, t0=0.3, margin=0.1)
    holds, worst, n, n_kink = check_monotone(traj, c)
    assert n > 10 * n_kink
    assert holds, worst


def test_check_monotone_detects_increase():
    c = HalfSpace([1.0, 0.0], 0.0)
    xs = np.array([[[-1.0, 0.0]], [[-1.5, 0.0]]])
    holds, worst, n, n_kink = check_monotone(Trajectory(np.array([0.0, 1.0]), xs), c)
    assert not holds and worst == pytest.approx(0.5) and (n, n_kink) == (1, 0)


# one-step bound


def test_one_step_halfspace_exact():
    c = HalfSpace([1.0, 1.0], 0.0)
    p = random_field(2)
    x = np.random.default_rng(0).uniform(-3, -0.5, size=(200, 2))
    lhs, rhs, holds, kink = check_one_step_bound(x, p, 0.5, c, 0.4, 0.01, L_l=0.0)
    ok = ~kink
    assert ok.sum() > 150
    assert np.all(holds[ok])
    np.testing.assert_allclose(lhs[ok], rhs[ok], atol=1e-12)


def test_one_step_zero_eta():
    p = random_field(3)
    x = np.random.default_rng(1).uniform(-4, 4, size=(500, 2))
    _, _, holds, kink = check_one_step_bound(x, p, 0.7, RING, 0.0, 0.01)
    assert np.all(holds[~kink])


def test_one_step_random_probes_on_ring():
    rng = np.random.default_rng(4)
    n_ok = 0
    for trial in range(10):
        p = random_field(100 + trial)
        x = rng.uniform(-4, 4, size=(1000, 2))
        t = float(rng.uniform())
        eta = float(rng.uniform(0, 2))
        _, _, holds, kink = check_one_step_bound(x, p, t, RING, eta, 0.01)
        assert np.all(holds[~kink])
        n_ok += int((~kink).sum())
    assert n_ok > 9000


def test_kink_detection():
    c = OutsideBall([0.0, 0.0], 1.0)
    x = np.array([[-2.0, 0.5], [-2.0, 3.0], [0.5, 0.0]])
    y = np.array([[2.0, 0.5], [2.0, 3.0], [2.0, 0.0]])
    np.testing.assert_array_equal(crosses_kink(c, x, y), [True, False, True])


# constants and the deviation envelope


def test_analytic_constants():
    assert analytic_gradient_bound(HalfSpace([1.0, 1.0], 0.0)) == pytest.approx(np.sqrt(2))
    assert analytic_gradient_bound(OutsideBall([0.0, 0.0], 1.0)) == 1.0
    assert analytic_gradient_bound(InsideBall([0.0, 0.0], 1.0)) == 1.0
    assert analytic_gradient_bound(builtin_case_study(3).constraint) == 3.0


def test_estimate_constants_examples():
    region = np.random.default_rng(0).normal(size=(2000, 2))
    k = estimate_constants(zero_field(), HalfSpace([1.0, 1.0], 0.0), region)
    assert k.L_v == 0.0 and k.L_l == 0.0 and k.G == pytest.approx(np.sqrt(2))
    k = estimate_constants(zero_field(), OutsideBall([0.0, 0.0], 1.0), region)
    assert k.G == 1.0 and k.L_l > 0
    assert "L_v_method" in k.notes
    with pytest.raises(ValueError):
        estimate_constants(zero_field(), RING, region[:10])


def test_linear_field_lipschitz_estimate():
    A = np.array([[0.5, -1.0], [0.3, 0.2]])
    region = np.random.default_rng(1).normal(size=(2000, 2))
    k = estimate_constants(linear_field(A), RING, region)
    assert k.L_v == pytest.approx(1.5 * np.linalg.norm(A, 2), rel=1e-9)


def test_gronwall_zero_eta():
    p = random_field(5)
    base, adj = integrate_pair(p, RING, SampleConfig(n_samples=20, eta_max=0.0))
    dev, env, holds = check_gronwall(base, adj, 0.0, 0.3, TheoryConstants(1.0, 0.0, 1.0))
    assert holds and np.all(dev == 0) and np.all(env == 0)


@pytest.mark.parametrize("c", [HalfSpace([1.0, 1.0], 0.0), RING], ids=["halfspace", "ring"])
def test_gronwall_linear_field_exact_constant(c):
    A = np.array([[0.8, -0.5], [0.4, 0.6]])
    p = linear_field(A)
    G = analytic_gradient_bound(c)
    consts = TheoryConstants(float(np.linalg.norm(A, 2)), 0.0, G)
    base, adj = integrate_pair(p, c, SampleConfig(n_samples=200, eta_max=1.5, seed=3))
    dev, env, holds = check_gronwall(base, adj, 1.5, 0.3, consts)
    assert dev[-1].max() > 0
    assert np.all(dev <= env[:, None] + 1e-12)


def test_gronwall_random_field_estimated_constants():
    p = random_field(6)
    base, adj = integrate_pair(p, RING, SampleConfig(n_samples=50, eta_max=1.0, seed=0))
    k = trajectory_constants(p, RING, base, adj, np.random.default_rng(0))
    _, _, holds = check_gronwall(base, adj, 1.0, 0.3, k)
    assert holds


def test_envelope_values():
    ts = np.arange(11) / 10
    env = gronwall_envelope(ts, 1.0, 0.3, 0.0, 2.0)
    # with L_v = 0 the envelope is G times the left Riemann sum of eta
    eta = np.where(ts > 0.3, ((ts - 0.3) / 0.7) ** 2, 0.0)
    np.testing.assert_allclose(env, 2.0 * 0.1 * np.concatenate([[0.0], np.cumsum(eta)[:-1]]), atol=1e-15)


# spurious equilibria


def test_spurious_equilibria():
    single = Conjunction((OutsideBall([0.0, 0.0], 1.0),))
    assert len(find_spurious_equilibria(single, (-3, -3), (3, 3))) == 0
    two = Conjunction((OutsideBall([1.0, 0.0], 1.5), OutsideBall([-1.0, 0.0], 1.5)))
    found = find_spurious_equilibria(two, (-3, -3), (3, 3))
    assert np.any(np.all(np.abs(found) < 1e-12, axis=1))
    with pytest.raises(TypeError):
        find_spurious_equilibria(OutsideBall([0.0, 0.0], 1.0), (-1, -1), (1, 1))


def test_spurious_scan_on_obstacles_is_diagnostic():
    # the central and upper-right obstacles overlap, so cancellation inside the lens is possible
    c = builtin_case_study(3).constraint
    found = find_spurious_equilibria(c, (-5, -5), (5, 5))
    for x in found:
        active = [ch.violation(x) > 0 for ch in c.children]
        assert sum(active) >= 2
        assert np.linalg.norm(c.gradient(x)) < 1e-3
