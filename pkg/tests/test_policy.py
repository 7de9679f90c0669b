import numpy as np
import pytest

from manip2d import nn
from manip2d.nn import ParamSet, Var, backward, no_grad
from manip2d.policy import (
    ACTION_DIM,
    FEATURE_DIM,
    GsdeState,
    OBS_DIM,
    PRIV_DIM,
    STACK,
    ObsStack,
    ShapeError,
    actor_forward,
    critic_forward,
    entropy_mean,
    gaussian_logprob,
    init_actor_critic,
    marginal_variance,
    normalize_frame,
    sample_gsde,
)


@pytest.fixture(scope="module")
def params():
    return init_actor_critic(seed=0)


def rand_obs(rng, n):
    return rng.normal(0, 0.5, (n, OBS_DIM))


def rand_priv(rng, n):
    return rng.normal(0, 0.5, (n, PRIV_DIM))


def test_actor_deterministic_and_bounded(params):
    rng = np.random.default_rng(0)
    obs = rand_obs(rng, 16)
    with no_grad():
        m1, phi1, s1 = actor_forward(obs, params)
        m2, phi2, s2 = actor_forward(obs, params)
    assert np.array_equal(m1.data, m2.data)
    assert np.array_equal(phi1.data, phi2.data)
    assert np.all(np.abs(m1.data) <= 1.0)
    assert s1.data.shape == (ACTION_DIM, FEATURE_DIM)


def test_actor_zero_weights_zero_mean():
    params = init_actor_critic(seed=1)
    params["actor.mean_w"].data[:] = 0.0
    params["actor.mean_b"].data[:] = 0.0
    rng = np.random.default_rng(1)
    with no_grad():
        mean, _, _ = actor_forward(rand_obs(rng, 4), params)
    assert np.array_equal(mean.data, np.zeros((4, ACTION_DIM)))


def test_actor_fuzz_finite(params):
    rng = np.random.default_rng(2)
    obs = rng.normal(0, 3, (10_000, OBS_DIM))
    with no_grad():
        mean, phi, sigma = actor_forward(obs, params)
        action, pre, logprob = sample_gsde(mean, phi, sigma, GsdeState(10_000, seed=3))
    assert np.all(np.isfinite(mean.data))
    assert np.all(np.isfinite(logprob))


def test_actor_shape_error(params):
    with pytest.raises(ShapeError):
        actor_forward(np.zeros((4, OBS_DIM + 1)), params)
    with pytest.raises(ShapeError):
        critic_forward(np.zeros((4, OBS_DIM)), np.zeros((4, PRIV_DIM - 2)), params)


def test_critic_value_and_sensitivity(params):
    rng = np.random.default_rng(3)
    obs = rand_obs(rng, 8)
    priv = rand_priv(rng, 8)
    with no_grad():
        v1 = critic_forward(obs, priv, params)
        v2 = critic_forward(obs, priv, params)
    assert np.array_equal(v1.data, v2.data)
    # permuting privileged fields changes the value (smoke sensitivity)
    priv_perm = priv[:, ::-1].copy()
    with no_grad():
        v3 = critic_forward(obs, priv_perm, params)
    assert not np.allclose(v1.data, v3.data)


def test_critic_zero_net_bias():
    params = init_actor_critic(seed=2)
    for name in params.names():
        if name.startswith("critic"):
            params[name].data[:] = 0.0
    params["critic.v_b"].data[:] = 1.5
    rng = np.random.default_rng(4)
    with no_grad():
        v = critic_forward(rand_obs(rng, 4), rand_priv(rng, 4), params)
    assert np.allclose(v.data, 1.5)


def test_actor_independent_of_critic_params(params):
    rng = np.random.default_rng(5)
    obs = rand_obs(rng, 8)
    with no_grad():
        m1, _, s1 = actor_forward(obs, params)
    mutated = init_actor_critic(seed=0)
    for name in mutated.names():
        if name.startswith("critic"):
            mutated[name].data += 17.0
    with no_grad():
        m2, _, s2 = actor_forward(obs, mutated)
    assert np.array_equal(m1.data, m2.data)
    assert np.array_equal(s1.data, s2.data)


def test_gsde_noise_deterministic_within_interval(params):
    rng = np.random.default_rng(6)
    obs = rand_obs(rng, 4)
    state = GsdeState(4, seed=7)
    with no_grad():
        mean, phi, sigma = actor_forward(obs, params)
    a1, p1, lp1 = sample_gsde(mean, phi, sigma, state)
    a2, p2, lp2 = sample_gsde(mean, phi, sigma, state)  # same W, same obs
    assert np.array_equal(a1, a2) and np.array_equal(lp1, lp2)


def test_gsde_resample_schedule():
    state = GsdeState(3, seed=8)
    w0 = state.w.copy()
    for _ in range(state.resample_interval - 1):
        state.tick()
    assert np.array_equal(state.w, w0)
    state.tick()  # interval elapsed
    assert not np.array_equal(state.w, w0)


def test_gsde_zero_features_mean_action(params):
    state = GsdeState(2, seed=9)
    mean = np.array([[0.1, -0.2, 0.3, 0.0], [0.5, 0.0, -0.5, 0.9]])
    phi = np.zeros((2, FEATURE_DIM))
    sigma = np.ones((ACTION_DIM, FEATURE_DIM))
    action, pre, logprob = sample_gsde(mean, phi, sigma, state)
    assert np.array_equal(pre, mean)
    assert np.all(np.isfinite(logprob))  # variance floor handles phi = 0


def test_logprob_matches_reference_density(params):
    rng = np.random.default_rng(10)
    obs = rand_obs(rng, 32)
    state = GsdeState(32, seed=11)
    with no_grad():
        mean, phi, sigma = actor_forward(obs, params)
    action, pre, logprob = sample_gsde(mean, phi, sigma, state)
    var = phi.data**2 @ (sigma.data**2).T + 1e-8
    ref = np.sum(
        -0.5 * ((pre - mean.data) ** 2 / var + np.log(2 * np.pi * var)), axis=1
    )
    assert np.max(np.abs(logprob - ref)) < 1e-9


def test_logprob_integrates_to_one_1d():
    # dense action-grid quadrature over one dimension of the marginal
    mean = np.zeros((1, ACTION_DIM))
    var = np.full((1, ACTION_DIM), 0.07)
    xs = np.linspace(-6, 6, 20001)
    with no_grad():
        probs = []
        for x in xs:
            a = np.zeros((1, ACTION_DIM))
            a[0, 0] = x
            lp = gaussian_logprob(mean, var, a).data[0]
            # remove the other dims' contribution at zero
            lp -= np.sum(-0.5 * (np.log(2 * np.pi * var[0, 1:])))
            probs.append(np.exp(lp))
    integral = np.trapezoid(probs, xs)
    assert integral == pytest.approx(1.0, abs=1e-3)


def test_marginal_variance_gradcheck(params):
    rng = np.random.default_rng(12)
    obs = rand_obs(rng, 3)
    actions = rng.uniform(-1, 1, (3, ACTION_DIM))

    def loss_fn():
        mean, phi, sigma = actor_forward(obs, params)
        var = marginal_variance(phi, sigma)
        return nn.vmean(gaussian_logprob(mean, var, Var(actions)))

    params.zero_grad()
    loss = loss_fn()
    backward(loss)
    for name in ("actor.logstd", "actor.mean_w", "actor.log_scale", "actor.w0"):
        v = params[name]
        analytic = v.grad
        flat = v.data.ravel()
        check_idx = np.random.default_rng(13).choice(flat.size, size=min(40, flat.size), replace=False)
        for i in check_idx:
            orig = flat[i]
            flat[i] = orig + 1e-5
            fp = float(loss_fn().data)
            flat[i] = orig - 1e-5
            fm = float(loss_fn().data)
            flat[i] = orig
            num = (fp - fm) / 2e-5
            scale = max(abs(num), 1e-3)
            assert abs(analytic.ravel()[i] - num) / scale < 1e-4, name


def test_obs_stack_padding_and_roll():
    stack = ObsStack(2)
    f0 = np.ones((2, 23)) * 0.5
    stack.reset_env(np.arange(2), f0)
    assert np.array_equal(stack.buf[0, 0], stack.buf[0, STACK - 1])
    f1 = np.ones((2, 23))
    stack.push(f1)
    assert np.array_equal(stack.buf[:, -1], f1)
    assert np.array_equal(stack.buf[:, 0], f0)
    assert stack.flat().shape == (2, OBS_DIM)


def test_normalize_frame_shape_guard():
    with pytest.raises(ShapeError):
        normalize_frame(np.zeros(10))


def test_entropy_mean_positive():
    var = np.full((4, ACTION_DIM), 0.1)
    assert entropy_mean(var) > 0
