import numpy as np
import pytest
from scipy import integrate, stats

from evsafe.nn import (
    AdamState,
    Mlp,
    ReplayBuffer,
    Transition,
    adam_step,
    backward,
    buffer_push,
    buffer_sample,
    forward,
    gaussian_tanh_backward,
    gaussian_tanh_sample,
    load_checkpoint,
    save_checkpoint,
    soft_update,
    squashed_log_prob,
)

from oracles import central_diff, mlp_forward_loops


def random_mlp(rng, dims=None):
    dims = dims or (int(rng.integers(1, 9)), int(rng.integers(1, 17)), int(rng.integers(1, 17)),
                    int(rng.integers(1, 5)))
    return Mlp(dims, rng)


def test_zero_network_outputs_zero():
    net = Mlp((3, 4, 4, 2))
    for p in net.params:
        p[...] = 0.0
    np.testing.assert_array_equal(net.forward(np.array([1.0, -2.0, 3.0])), np.zeros(2))


def test_identity_chain():
    net = Mlp((1, 1, 1, 1))
    for i, p in enumerate(net.params):
        p[...] = 1.0 if i % 2 == 0 else 0.0
    assert forward(net, np.array([2.0]))[0] == 2.0


def test_forward_matches_loop_oracle():
    rng = np.random.default_rng(3)
    for _ in range(10):
        net = random_mlp(rng)
        x = rng.normal(size=net.layer_dims[0])
        np.testing.assert_allclose(net.forward(x), mlp_forward_loops(net.params, x), rtol=1e-12, atol=1e-12)


def test_forward_dimension_mismatch():
    with pytest.raises(ValueError):
        Mlp((3, 4, 4, 2)).forward(np.zeros(2))


def test_needs_two_hidden_layers():
    with pytest.raises(ValueError):
        Mlp((3, 4, 2))


def test_zero_output_grad_gives_zero_grads():
    rng = np.random.default_rng(0)
    net = random_mlp(rng, (4, 8, 8, 3))
    grads, g_in = backward(net, rng.normal(size=(5, 4)), np.zeros((5, 3)))
    assert all(np.all(g == 0) for g in grads) and np.all(g_in == 0)


def _rel_err(a, b):
    return np.max(np.abs(a - b) / np.maximum(np.abs(a) + np.abs(b), 1e-8))


@pytest.mark.parametrize("seed", range(5))
def test_param_grads_match_finite_differences(seed):
    rng = np.random.default_rng(seed)
    net = random_mlp(rng)
    x = rng.normal(size=(3, net.layer_dims[0]))
    w = rng.normal(size=(3, net.layer_dims[-1]))
    grads, _ = net.backward(x, w)
    for p, g in zip(net.params, grads):
        fd = central_diff(lambda: float(np.sum(net.forward(x) * w)), p)
        assert _rel_err(g, fd) < 1e-4


@pytest.mark.parametrize("seed", range(5))
def test_input_grads_match_finite_differences(seed):
    rng = np.random.default_rng(100 + seed)
    net = random_mlp(rng)
    x = rng.normal(size=net.layer_dims[0])
    w = rng.normal(size=net.layer_dims[-1])
    _, g_in = net.backward(x, w)
    fd = central_diff(lambda: float(np.sum(net.forward(x) * w)), x)
    assert _rel_err(g_in, fd) < 1e-4


def test_backward_leaves_params_untouched():
    rng = np.random.default_rng(1)
    net = random_mlp(rng)
    before = [p.copy() for p in net.params]
    x = rng.normal(size=(4, net.layer_dims[0]))
    net.backward(x, rng.normal(size=(4, net.layer_dims[-1])))
    for a, b in zip(before, net.params):
        np.testing.assert_array_equal(a, b)


def test_adam_zero_grad_keeps_params():
    p = [np.array([1.0, 2.0])]
    opt = AdamState.for_params(p)
    adam_step(p, [np.zeros(2)], opt)
    np.testing.assert_array_equal(p[0], [1.0, 2.0])
    assert opt.step == 1


def test_adam_first_step():
    p = [np.array([0.5])]
    opt = AdamState.for_params(p, lr=3e-4)
    adam_step(p, [np.array([1.0])], opt)
    assert p[0][0] - 0.5 == pytest.approx(-3e-4 / (1.0 + 1e-8), rel=1e-12)


def test_adam_constant_gradient_moves_monotonically():
    p = [np.array([0.0])]
    opt = AdamState.for_params(p, lr=1e-2)
    trail = []
    for _ in range(50):
        adam_step(p, [np.array([2.0])], opt)
        trail.append(p[0][0])
    assert np.all(np.diff(trail) < 0)


def test_adam_shape_mismatch():
    p = [np.zeros(2)]
    with pytest.raises(ValueError):
        adam_step(p, [np.zeros(3)], AdamState.for_params(p))


def test_soft_update():
    rng = np.random.default_rng(0)
    a, b = Mlp((2, 3, 3, 1), rng), Mlp((2, 3, 3, 1), rng)
    expect = [0.9 * pa + 0.1 * pb for pa, pb in zip(a.params, b.params)]
    soft_update(a, b, 0.1)
    for e, pa in zip(expect, a.params):
        np.testing.assert_allclose(pa, e, rtol=1e-15)
    soft_update(a, b, 1.0)
    for pa, pb in zip(a.params, b.params):
        np.testing.assert_array_equal(pa, pb)


# --- squashed Gaussian ------------------------------------------------------

def test_deterministic_limit():
    mean = np.array([0.3, -1.2])
    action, _ = gaussian_tanh_sample(mean, np.full(2, -20.0), np.array([5.0, -5.0]))
    np.testing.assert_allclose(action, np.tanh(mean), atol=1e-7)


def test_actions_bounded_with_finite_log_prob():
    rng = np.random.default_rng(0)
    action, logp = gaussian_tanh_sample(rng.normal(0, 3, (1000, 4)), rng.uniform(-3, 2, (1000, 4)),
                                        rng.normal(size=(1000, 4)))
    assert np.all(np.abs(action) <= 1.0)
    assert np.all(np.isfinite(logp))


def test_log_prob_finite_at_saturation():
    action, logp = gaussian_tanh_sample(np.array([30.0]), np.array([2.0]), np.array([3.0]))
    assert np.isfinite(logp)


@pytest.mark.parametrize("mean, log_std", [(0.0, 0.0), (0.7, -0.5), (-1.5, 0.4)])
def test_squashed_density_integrates_to_one(mean, log_std):
    def density(a):
        return float(np.exp(squashed_log_prob(np.array([a]), np.array([mean]), np.array([log_std]))))

    total, _ = integrate.quad(density, -1.0, 1.0, limit=400, points=[np.tanh(mean)])
    assert total == pytest.approx(1.0, abs=1e-3)


def test_sample_log_prob_matches_density():
    rng = np.random.default_rng(0)
    mean, log_std = rng.normal(size=3), rng.uniform(-1, 0.5, 3)
    noise = rng.normal(size=3)
    action, logp = gaussian_tanh_sample(mean, log_std, noise)
    # change of variables from the base normal
    base = stats.norm.logpdf(np.arctanh(action), mean, np.exp(log_std)).sum()
    assert logp == pytest.approx(base - np.log(1 - action ** 2).sum(), rel=1e-9)


@pytest.mark.parametrize("seed", range(5))
def test_head_gradients_match_finite_differences(seed):
    rng = np.random.default_rng(seed)
    mean = rng.normal(size=(2, 3))
    log_std = rng.uniform(-2, 1, (2, 3))
    noise = rng.normal(size=(2, 3))
    wa = rng.normal(size=(2, 3))
    wl = rng.normal(size=2)

    def objective():
        a, lp = gaussian_tanh_sample(mean, log_std, noise)
        return float(np.sum(a * wa) + np.sum(lp * wl))

    g_mean, g_ls = gaussian_tanh_backward(mean, log_std, noise, wa, wl)
    assert _rel_err(g_mean, central_diff(objective, mean)) < 1e-4
    assert _rel_err(g_ls, central_diff(objective, log_std)) < 1e-4


def test_head_clamp_blocks_gradient():
    g_mean, g_ls = gaussian_tanh_backward(np.zeros(1), np.array([5.0]), np.ones(1), np.ones(1), np.ones(1))
    assert g_ls[0] == 0.0


def test_non_finite_head_input():
    with pytest.raises(ValueError):
        gaussian_tanh_sample(np.array([np.nan]), np.zeros(1), np.zeros(1))


# --- replay buffer -----------------------------------------------------------

def _tr(k, obs=2, act=1):
    return Transition(np.full(obs, k, float), np.full(act, k, float), float(k), 0.0, np.full(obs, k, float), False)


def test_buffer_eviction():
    buf = ReplayBuffer(2, 1, capacity=2)
    for k in range(3):
        buffer_push(buf, _tr(k))
    assert len(buf) == 2
    assert sorted(buf.data["reward"]) == [1.0, 2.0]


def test_buffer_underfilled():
    buf = ReplayBuffer(2, 1, capacity=10)
    buf.push(_tr(0))
    with pytest.raises(ValueError, match="need 4"):
        buffer_sample(buf, 4, np.random.default_rng(0))


def test_buffer_shape_check():
    buf = ReplayBuffer(2, 1, capacity=10)
    with pytest.raises(ValueError):
        buf.push(_tr(0, obs=3))


def test_buffer_seeded_sampling_reproducible():
    buf = ReplayBuffer(2, 1, capacity=50)
    for k in range(50):
        buf.push(_tr(k))
    a = buf.sample(16, np.random.default_rng(7))
    b = buf.sample(16, np.random.default_rng(7))
    for key in a:
        np.testing.assert_array_equal(a[key], b[key])


def test_buffer_sampling_uniform():
    n = 20
    buf = ReplayBuffer(1, 1, capacity=n)
    for k in range(n):
        buf.push(_tr(k, obs=1))
    draws = 100_000
    rng = np.random.default_rng(0)
    idx = np.concatenate([buf.sample(n, rng)["reward"] for _ in range(draws // n)]).astype(int)
    counts = np.bincount(idx, minlength=n)
    expect = draws / n
    sd = np.sqrt(draws * (1 / n) * (1 - 1 / n))
    assert np.all(np.abs(counts - expect) < 3 * sd + 1)
    assert stats.chisquare(counts).pvalue > 1e-3


def test_checkpoint_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    arrays = {"a/0": rng.normal(size=(3, 4)), "b": np.array([np.pi])}
    path = save_checkpoint(tmp_path / "ck.npz", arrays, {"algorithm": "x", "n": 3})
    loaded, meta = load_checkpoint(path)
    assert meta["algorithm"] == "x" and meta["version"] == 1
    for k in arrays:
        assert loaded[k].tobytes() == arrays[k].tobytes()
