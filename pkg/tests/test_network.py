import numpy as np
import pytest

from constrained_flow.network import (
    backward,
    forward,
    hidden_width_for,
    init_params,
    load_checkpoint,
    save_checkpoint,
)

H = 1e-6


def objective(p, x, t, up):
    v, _ = forward(p, x, t)
    return float(np.sum(up * v))


def fd_param(p, x, t, up, arr_idx, flat_idx):
    a = p.arrays()[arr_idx]
    old = a.flat[flat_idx]
    a.flat[flat_idx] = old + H
    f_plus = objective(p, x, t, up)
    a.flat[flat_idx] = old - H
    f_minus = objective(p, x, t, up)
    a.flat[flat_idx] = old
    return (f_plus - f_minus) / (2 * H)


def close(analytic, numeric, rtol=1e-5, atol=1e-8):
    return abs(analytic - numeric) <= atol + rtol * abs(numeric)


def random_bias(p, rng):
    for b in p.biases:
        b[:] = rng.normal(scale=0.1, size=b.shape)
    return p


def test_init_shapes_and_determinism():
    p = init_params(0, 2, 128)
    assert [w.shape for w in p.weights] == [(128, 3), (128, 128), (2, 128)]
    assert all(np.all(b == 0) for b in p.biases)
    q = init_params(0, 2, 128)
    for a, b in zip(p.arrays(), q.arrays()):
        assert np.array_equal(a, b)
    for w in p.weights:
        s = np.sqrt(6.0 / (w.shape[0] + w.shape[1]))
        assert np.abs(w).max() <= s


def test_highdim_width():
    h = hidden_width_for(100)
    assert h == 256
    p = init_params(0, 100, h)
    assert p.weights[0].shape == (256, 101)


def test_zero_params_give_zero_field():
    p = init_params(0, 3, 16).zeros_like()
    v, _ = forward(p, np.ones((5, 3)), 0.4)
    assert np.all(v == 0)


@pytest.mark.parametrize("k", [2.0, 0.5, 8.0, -4.0])
def test_last_layer_is_linear(k):
    # power-of-two factors keep the comparison bit-exact
    rng = np.random.default_rng(0)
    p = random_bias(init_params(1, 2, 32), rng)
    x = rng.normal(size=(10, 2))
    t = rng.uniform(size=10)
    v, _ = forward(p, x, t)
    q = p.copy()
    q.weights[2] *= k
    q.biases[2] *= k
    assert np.array_equal(forward(q, x, t)[0], k * v)


def test_doubling_w3_alone_doubles_output_with_zero_bias():
    p = init_params(2, 2, 32)
    x = np.random.default_rng(1).normal(size=(4, 2))
    v, _ = forward(p, x, 0.3)
    p.weights[2] *= 2
    assert np.array_equal(forward(p, x, 0.3)[0], 2 * v)


def test_forward_is_pure():
    p = init_params(3, 2, 64)
    x = np.array([0.3, -1.2])
    assert np.array_equal(forward(p, x, 0.7)[0], forward(p, x, 0.7)[0])


def test_non_finite_input_rejected():
    p = init_params(0, 2, 8)
    with pytest.raises(FloatingPointError):
        forward(p, [np.nan, 0.0], 0.1)
    with pytest.raises(ValueError):
        forward(p, np.zeros((3, 5)), 0.1)


def test_zero_upstream_gives_zero_gradients():
    p = init_params(0, 2, 16)
    _, tr = forward(p, np.ones((3, 2)), 0.5)
    g, gin = backward(p, tr, np.zeros((3, 2)))
    assert all(np.all(a == 0) for a in g.arrays())
    assert np.all(gin == 0)


def test_backward_shape_mismatch():
    p = init_params(0, 2, 16)
    _, tr = forward(p, np.ones((3, 2)), 0.5)
    with pytest.raises(ValueError):
        backward(p, tr, np.zeros((2, 2)))


@pytest.mark.parametrize("trial", range(20))
def test_backward_matches_finite_differences(trial):
    rng = np.random.default_rng(100 + trial)
    d = int(rng.integers(1, 4))
    p = random_bias(init_params(trial, d, 12), rng)
    x = rng.normal(size=d)
    t = float(rng.uniform())
    up = rng.normal(size=d)
    _, tr = forward(p, x, t)
    g, gin = backward(p, tr, up)
    g_arrays = g.arrays()
    # 5 random parameter entries
    for _ in range(5):
        ai = int(rng.integers(len(g_arrays)))
        fi = int(rng.integers(g_arrays[ai].size))
        assert close(g_arrays[ai].flat[fi], fd_param(p, x, t, up, ai, fi))
    # every input coordinate, time included
    for i in range(d + 1):
        z = np.concatenate([x, [t]])
        zp, zm = z.copy(), z.copy()
        zp[i] += H
        zm[i] -= H
        num = (objective(p, zp[:d], zp[d], up) - objective(p, zm[:d], zm[d], up)) / (2 * H)
        assert close(gin[0, i], num)


def test_batched_gradients_sum_over_samples():
    rng = np.random.default_rng(7)
    p = random_bias(init_params(4, 2, 16), rng)
    x = rng.normal(size=(6, 2))
    t = rng.uniform(size=6)
    up = rng.normal(size=(6, 2))
    _, tr = forward(p, x, t)
    g, _ = backward(p, tr, up)
    total = [np.zeros_like(a) for a in g.arrays()]
    for i in range(6):
        _, tri = forward(p, x[i], t[i])
        gi, _ = backward(p, tri, up[i])
        total = [s + a for s, a in zip(total, gi.arrays())]
    for a, b in zip(g.arrays(), total):
        np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-14)


def test_checkpoint_roundtrip(tmp_path):
    rng = np.random.default_rng(0)
    p = random_bias(init_params(5, 3, 20), rng)
    path = save_checkpoint(p, tmp_path / "ck.json")
    q = load_checkpoint(path)
    x = rng.normal(size=(50, 3))
    t = rng.uniform(size=50)
    assert np.max(np.abs(forward(p, x, t)[0] - forward(q, x, t)[0])) <= 1e-12
    assert q.seed == 5
    # saving again yields the same bytes
    again = save_checkpoint(q, tmp_path / "ck2.json")
    assert path.read_bytes() == again.read_bytes()


def test_checkpoint_rejects_bad_shapes(tmp_path):
    from constrained_flow.network import params_from_dict, params_to_dict

    obj = params_to_dict(init_params(0, 2, 4))
    obj["layers"][1]["weights"] = obj["layers"][1]["weights"][:-1]
    with pytest.raises(ValueError):
        params_from_dict(obj)
