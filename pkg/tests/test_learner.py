import numpy as np
import pytest
from scipy import stats

from fairfeeder.data import split_train_test, synthesize
from fairfeeder.env import CurtailmentEnv, RewardWeights
from fairfeeder.fairness import FairnessCase
from fairfeeder.feeder import FeederModel, FeederNetwork
from fairfeeder.learner import (
    CheckpointError,
    Normalizer,
    ReplayBuffer,
    SACAgent,
    SquashedGaussianPolicy,
    TrainConfig,
    load_checkpoint,
    random_policy_mean_reward,
    save_checkpoint,
    select_action,
    train,
)
from fairfeeder.nn import MLP, Adam, soft_update


def agent(obs=3, act=2, hidden=(8,), seed=0, **kw):
    cfg = TrainConfig(hidden=hidden, dtype="float64", **kw)
    return SACAgent(obs, act, cfg, np.random.default_rng(seed))


def batch(rng, n=16, obs=3, act=2, done=0.0):
    return {
        "states": rng.normal(size=(n, obs)),
        "actions": rng.uniform(0, 1, (n, act)),
        "rewards": rng.normal(size=n),
        "next_states": rng.normal(size=(n, obs)),
        "dones": np.full(n, done),
    }


def set_log_std(policy: SquashedGaussianPolicy, value: float):
    A = policy.action_dim
    policy.params[-2][...] = 0.0
    policy.params[-1][0, :A] = 0.0
    policy.params[-1][0, A:] = value


def numeric_grad(f, flat, eps=1e-6):
    g = np.zeros_like(flat)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + eps
        up = f()
        flat[i] = old - eps
        down = f()
        flat[i] = old
        g[i] = (up - down) / (2 * eps)
    return g


class TestSelectAction:
    def test_range(self, rng):
        a = agent()
        for _ in range(200):
            act = select_action(a.policy, rng.normal(size=3) * 10, "stochastic", rng)
            assert np.all((act >= 0) & (act <= 1))

    def test_deterministic_repeatable(self, rng):
        a = agent()
        s = rng.normal(size=3)
        np.testing.assert_array_equal(select_action(a.policy, s, "deterministic"),
                                      select_action(a.policy, s, "deterministic"))

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            select_action(agent().policy, np.zeros(4), "deterministic")

    def test_stochastic_needs_rng(self):
        with pytest.raises(ValueError):
            select_action(agent().policy, np.zeros(3), "stochastic")

    def test_entropy_falls_with_log_std(self):
        a = agent(obs=2, act=1)
        noise = np.random.default_rng(1).standard_normal((20000, 1))
        obs = np.zeros((20000, 2))
        entropies = []
        for ls in [0.0, -2.0, -5.0, -20.0]:
            set_log_std(a.policy, ls)
            entropies.append(-np.mean(a.policy.sample(obs, noise)["log_prob"]))
        assert all(x > y for x, y in zip(entropies, entropies[1:]))

    def test_log_std_is_clamped(self):
        a = agent(obs=2, act=1)
        set_log_std(a.policy, -50.0)
        draw = a.policy.sample(np.zeros((1, 2)), np.zeros((1, 1)))
        assert draw["std"][0, 0] == pytest.approx(np.exp(-20.0))

    def test_squashed_density_matches_samples(self):
        """KS distance between sampled actions and the CDF integrated from the analytic density."""
        a = agent(obs=1, act=1, hidden=())
        a.policy.params[0][...] = 0.0
        a.policy.params[1][...] = np.array([[0.3, np.log(0.8)]])
        n = 100_000
        draws = a.policy.sample(np.zeros((n, 1)), np.random.default_rng(4).standard_normal((n, 1)))["action"][:, 0]
        grid = np.linspace(1e-6, 1 - 1e-6, 20001)
        u = np.arctanh(2 * grid - 1)
        noise = (u - 0.3) / 0.8
        logp = a.policy.sample(np.zeros((grid.size, 1)), noise[:, None])["log_prob"]
        pdf = np.exp(logp)
        cdf = np.concatenate([[0.0], np.cumsum(0.5 * (pdf[1:] + pdf[:-1]) * np.diff(grid))])
        ks = stats.kstest(draws, lambda x: np.interp(x, grid, cdf)).statistic
        assert ks < 0.05
        assert cdf[-1] == pytest.approx(1.0, abs=1e-3)


class TestCritic:
    def test_terminal_target_is_reward(self, rng):
        a = agent()
        b = batch(rng, done=1.0)
        b["states"][:] = b["states"][0]
        b["rewards"][:] = 1.5
        target = a.critic_target_values(b, a.noise(16))
        np.testing.assert_array_equal(target, 1.5)

    def test_gamma_zero_loss_is_mse(self, rng):
        a = agent(gamma=1e-12)
        b = batch(rng)
        target = a.critic_target_values(b, a.noise(16))
        np.testing.assert_allclose(target, b["rewards"], atol=1e-9)
        losses, _ = a.critic_loss(b, b["rewards"])
        q = a.critic(np.concatenate([b["states"], b["actions"]], axis=1))[..., 0]
        np.testing.assert_allclose(losses, np.mean((q - b["rewards"]) ** 2, axis=1))

    def test_loss_decreases_on_fixed_batch(self, rng):
        a = agent(learning_rate=1e-2)
        b = batch(rng, done=1.0)
        noise = a.noise(16)
        first = sum(a.critic_update(b, noise).values())
        for _ in range(100):
            last = sum(a.critic_update(b, noise).values())
        assert last < 0.5 * first

    def test_critic_gradient(self, rng):
        a = agent(hidden=(4,))
        b = batch(rng, n=5)
        target = rng.normal(size=5)
        _, grads = a.critic_loss(b, target)
        analytic = np.concatenate([g.ravel() for g in grads])
        flat = a.critic.flat
        numeric = numeric_grad(lambda: float(np.sum(a.critic_loss(b, target)[0])), flat)
        np.testing.assert_allclose(analytic, numeric, rtol=1e-4, atol=1e-8)


class TestActorAndTemperature:
    def test_policy_loss_gradient_toy(self, rng):
        """Four policy parameters: one input, mean and log-std heads, no hidden layer."""
        a = agent(obs=1, act=1, hidden=())
        assert a.policy.net.n_params == 4
        b = batch(rng, n=7, obs=1, act=1)
        noise = rng.normal(size=(7, 1))
        _, grads, _ = a.actor_loss(b, noise)
        analytic = np.concatenate([g.ravel() for g in grads])
        numeric = numeric_grad(lambda: a.actor_loss(b, noise)[0], a.policy.net.flat)
        np.testing.assert_allclose(analytic, numeric, rtol=1e-4, atol=1e-8)

    def test_policy_loss_gradient_hidden(self, rng):
        a = agent(obs=2, act=2, hidden=(3,))
        b = batch(rng, n=6, obs=2, act=2)
        noise = rng.normal(size=(6, 2))
        _, grads, _ = a.actor_loss(b, noise)
        analytic = np.concatenate([g.ravel() for g in grads])
        numeric = numeric_grad(lambda: a.actor_loss(b, noise)[0], a.policy.net.flat)
        np.testing.assert_allclose(analytic, numeric, rtol=1e-4, atol=1e-8)

    def test_uniform_critic_raises_entropy(self, rng):
        a = agent(learning_rate=1e-2)
        a.critic.flat[...] = 0.0  # Q == 0 everywhere
        set_log_std(a.policy, -2.0)
        b = batch(rng, n=64)
        noise = a.noise(64)
        before = -np.mean(a.policy.sample(b["states"], noise)["log_prob"])
        for _ in range(20):
            a.actor_and_temperature_update(b, noise)
        after = -np.mean(a.policy.sample(b["states"], noise)["log_prob"])
        assert after > before

    def test_temperature_rises_when_entropy_below_target(self, rng):
        a = agent()
        set_log_std(a.policy, -5.0)
        t0 = a.temperature
        out = a.actor_and_temperature_update(batch(rng))
        assert out["entropy"] < a.target_entropy
        assert a.temperature > t0

    def test_temperature_falls_when_entropy_above_target(self, rng):
        a = agent()
        set_log_std(a.policy, 0.0)
        t0 = a.temperature
        a.actor_and_temperature_update(batch(rng))
        assert a.temperature < t0


class TestSoftUpdate:
    def test_tau_one_copies(self):
        src, dst = [np.array([1.0, 2.0])], [np.array([5.0, 5.0])]
        soft_update(src, dst, 1.0)
        np.testing.assert_array_equal(dst[0], src[0])

    def test_tau_zero_identity(self):
        src, dst = [np.array([1.0, 2.0])], [np.array([5.0, 5.0])]
        soft_update(src, dst, 0.0)
        np.testing.assert_array_equal(dst[0], [5.0, 5.0])

    def test_two_half_steps(self):
        src, dst = [np.array([1.0])], [np.array([0.0])]
        soft_update(src, dst, 0.5)
        soft_update(src, dst, 0.5)
        assert dst[0][0] == 0.75

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            soft_update([np.zeros(2)], [np.zeros(3)], 0.5)

    def test_agent_target_tracks_critic(self):
        a = agent()
        a.critic.flat[...] += 1.0
        a.soft_target_update(1.0)
        np.testing.assert_array_equal(a.critic_target.flat, a.critic.flat)


class TestNetwork:
    def test_mlp_gradient_with_ensemble(self, rng):
        net = MLP((3, 4, 2), rng, ensemble=2)
        x = rng.normal(size=(5, 3))
        w = rng.normal(size=(2, 5, 2))
        y, cache = net.forward(x)
        grads, gx = net.backward(cache, w)
        numeric = numeric_grad(lambda: float(np.sum(net.forward(x)[0] * w)), net.flat)
        np.testing.assert_allclose(np.concatenate([g.ravel() for g in grads]), numeric, rtol=1e-4, atol=1e-8)
        numeric_x = numeric_grad(lambda: float(np.sum(net.forward(x)[0] * w)), x.reshape(-1))
        np.testing.assert_allclose(gx, numeric_x.reshape(x.shape), rtol=1e-4, atol=1e-8)

    def test_set_flat_checks_size(self, rng):
        net = MLP((2, 2), rng)
        with pytest.raises(ValueError):
            net.set_flat(np.zeros(3))

    def test_adam_minimises_quadratic(self):
        x = np.array([3.0, -2.0])
        opt = Adam([x], lr=0.1)
        for _ in range(500):
            opt.step([2 * x])
        np.testing.assert_allclose(x, 0.0, atol=1e-2)


class TestReplayBuffer:
    def test_fifo_eviction(self):
        buf = ReplayBuffer(3, 2, 1)
        for i in range(5):
            buf.add([i, i], [0.5], float(i), [i, i], False)
        assert len(buf) == 3
        np.testing.assert_array_equal(buf.rewards[buf.ordered_indices()], [2.0, 3.0, 4.0])

    def test_sample_without_replacement(self, rng):
        buf = ReplayBuffer(10, 1, 1)
        for i in range(10):
            buf.add([i], [0.0], float(i), [i], False)
        b = buf.sample(10, rng)
        assert sorted(b["rewards"]) == list(range(10))
        with pytest.raises(ValueError):
            buf.sample(11, rng)

    def test_rejects_wrong_shapes(self):
        buf = ReplayBuffer(4, 2, 1)
        with pytest.raises(ValueError):
            buf.add([1.0], [0.0], 0.0, [1.0, 2.0], False)
        with pytest.raises(ValueError):
            buf.add([1.0, 2.0], [0.0, 1.0], 0.0, [1.0, 2.0], False)


class TestConfig:
    @pytest.mark.parametrize("kw", [{"gamma": 1.0}, {"batch_size": 0}, {"tau": 2.0}, {"warmup_steps": -1}])
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            TrainConfig(**kw)

    def test_defaults(self):
        c = TrainConfig()
        assert (c.gamma, c.learning_rate, c.batch_size, c.total_steps) == (0.99, 3e-4, 64, 30_000)
        assert (c.tau, c.buffer_capacity, c.warmup_steps, c.hidden) == (5e-3, 100_000, 1_000, (64, 64))

    def test_normalizer(self):
        n = Normalizer.fit(np.array([[1.0, 5.0], [3.0, 5.0]]))
        np.testing.assert_allclose(n(np.array([2.0, 5.0])), [0.0, 0.0])


@pytest.fixture(scope="module")
def tiny_setup():
    ds = synthesize(3, 12, seed=2)
    train_days, _ = split_train_test(ds.n_days, 0.8, 0)
    env = CurtailmentEnv(FeederModel(FeederNetwork.uniform(3, 0.02, 0.007)), FairnessCase("d1", "instant"),
                         RewardWeights())
    return env, ds, train_days


class TestTrain:
    CFG = dict(total_steps=2000, warmup_steps=500, hidden=(32, 32), normalizer_days=3)

    def test_smoke_and_determinism(self, tiny_setup):
        env, ds, days = tiny_setup
        a = train(env, ds, days, TrainConfig(**self.CFG), seed=3)
        b = train(env, ds, days, TrainConfig(**self.CFG), seed=3)
        assert a.steps == 2000
        assert len(a.curve) >= 40
        assert a.curve == b.curve
        np.testing.assert_array_equal(a.agent.policy.net.flat, b.agent.policy.net.flat)
        assert np.all(np.isfinite(a.agent.critic.flat))

    def test_random_baseline_is_below_ceiling(self, tiny_setup):
        env, ds, days = tiny_setup
        assert random_policy_mean_reward(env, ds, days, episodes=3) < 3.0

    def test_checkpoint_round_trip(self, tiny_setup, tmp_path):
        env, ds, days = tiny_setup
        res = train(env, ds, days, TrainConfig(**{**self.CFG, "total_steps": 600}), seed=1)
        path = tmp_path / "ckpt.json"
        save_checkpoint(path, res.agent, {"seed": 1}, "abc123")
        loaded, doc = load_checkpoint(path)
        assert doc["config_hash"] == "abc123"
        s = np.ones(env.observation_size)
        np.testing.assert_array_equal(loaded.act(s, True), res.agent.act(s, True))
        np.testing.assert_array_equal(loaded.normalizer.mean, res.agent.normalizer.mean)

    def test_corrupt_checkpoint(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text("{\"format\": \"other\"}")
        with pytest.raises(CheckpointError):
            load_checkpoint(path)
