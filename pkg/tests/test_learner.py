"""Recurrent actor-critic: forward passes, losses, gradients, updates, training."""

import copy
import math

import numpy as np
import pytest

import ramals.learner as learner
from ramals import (
    ActionDistribution,
    GeneratorConfig,
    LearnerError,
    SiteConfig,
    TrainConfig,
    generate_synthetic,
    train,
)
from ramals.learner import (
    Coordinator,
    EpisodeBatch,
    SharedModel,
    apply_update,
    backward,
    bootstrap_targets,
    clipped_delta,
    episode_loss_value,
    episode_losses,
    forward_episode,
    grad_norm,
    init_params,
    policy_entropy,
    policy_loss,
    policy_value_forward,
    rnn_forward,
    td_advantage,
    total_loss,
    value_loss,
)

from helpers import site_for


def random_params(hidden=8, seed=0, scale=None):
    params = init_params(hidden, np.random.default_rng(seed))
    if scale is not None:
        for key in params:
            params[key] = np.random.default_rng(seed + 1).uniform(
                -scale, scale, params[key].shape)
    return params


def random_batch(hidden=8, n=3, seed=0, beta=0.05):
    rng = np.random.default_rng(seed)
    params = random_params(hidden, seed)
    states = rng.uniform(0.0, 1.0, (n, 6))
    forward = forward_episode(params, states)
    actions = rng.integers(0, 2, n)
    rewards = rng.uniform(0.0, 2.0, n)
    q, adv = bootstrap_targets(rewards, forward.values, 0.9)
    return params, forward, EpisodeBatch(states, actions, q, adv, beta)


def finite_difference_grads(params, batch, h=1e-5):
    grads = {}
    for key, tensor in params.items():
        grad = np.zeros_like(tensor)
        flat = tensor.ravel()
        for i in range(flat.size):
            original = flat[i]
            flat[i] = original + h
            up = episode_loss_value(params, batch)
            flat[i] = original - h
            down = episode_loss_value(params, batch)
            flat[i] = original
            grad.ravel()[i] = (up - down) / (2.0 * h)
        grads[key] = grad
    return grads


def max_relative_error(analytic, numeric):
    worst = 0.0
    for key in analytic:
        denom = np.maximum(np.maximum(np.abs(analytic[key]), np.abs(numeric[key])),
                           1e-6)
        worst = max(worst, float(np.max(np.abs(analytic[key] - numeric[key]) / denom)))
    return worst


class TestRnnForward:
    def test_zero_weights_zero_carry_zero_hidden(self):
        params = {k: np.zeros_like(v) for k, v in init_params(4, np.random.default_rng(0)).items()}
        hiddens, (h, c) = rnn_forward(params, np.ones((3, 6)) * 0.5)
        assert np.allclose(hiddens, 0.0)
        assert np.allclose(h, 0.0) and np.allclose(c, 0.0)

    def test_deterministic(self):
        params = random_params(6, 1)
        states = np.random.default_rng(2).uniform(0, 1, (5, 6))
        a, carry_a = rnn_forward(params, states)
        b, carry_b = rnn_forward(params, states)
        assert np.array_equal(a, b)
        assert np.array_equal(carry_a[0], carry_b[0])

    def test_bounded_outputs_random_sampling(self):
        rng = np.random.default_rng(3)
        for _ in range(200):
            hidden = int(rng.integers(2, 10))
            params = init_params(hidden, rng)
            for key in params:
                params[key] = rng.uniform(-1.0, 1.0, params[key].shape)
            states = rng.uniform(0.0, 1.0, (4, 6))
            hiddens, _ = rnn_forward(params, states)
            assert np.all(np.isfinite(hiddens))
            assert np.all(np.abs(hiddens) <= 1.0)  # gated tanh output

    def test_shape_mismatch(self):
        with pytest.raises(LearnerError):
            rnn_forward(random_params(4, 0), np.ones((2, 5)))


class TestPolicyValueForward:
    def test_zero_heads_uniform_policy_zero_value(self):
        params = random_params(6, 4)
        params["wp"][:] = 0.0
        params["bp"][:] = 0.0
        params["wv"][:] = 0.0
        params["bv"][:] = 0.0
        dist, value, _ = policy_value_forward(params, np.full(6, 0.3))
        assert dist.schedule_prob == pytest.approx(0.5)
        assert value == 0.0

    def test_probabilities_sum_to_one_many_parameterizations(self):
        rng = np.random.default_rng(5)
        for _ in range(500):
            params = init_params(4, rng)
            dist, _, _ = policy_value_forward(params, rng.uniform(0, 1, 6))
            assert dist.schedule_prob + dist.queue_prob == pytest.approx(1.0, abs=1e-9)

    def test_value_head_separate_from_policy_head(self):
        params = random_params(6, 6)
        state = np.full(6, 0.4)
        _, value_before, _ = policy_value_forward(params, state)
        params["wp"] += 0.5
        _, value_after, _ = policy_value_forward(params, state)
        assert value_before == value_after


class TestLosses:
    def test_td_advantage(self):
        assert td_advantage(3.0, 3.0) == 0.0
        assert td_advantage(1.0 + 0.9 * 2.0, 2.0) == pytest.approx(0.8)
        assert td_advantage(1.0, 2.0) == -td_advantage(3.0, 2.0)

    def test_value_loss_perfect_prediction(self):
        assert value_loss([1.0, 2.0], [1.0, 2.0]) == 0.0

    def test_value_loss_single_residual(self):
        assert value_loss([3.0], [1.0]) == pytest.approx(2.0)

    def test_value_loss_non_negative(self):
        rng = np.random.default_rng(7)
        q, v = rng.normal(size=20), rng.normal(size=20)
        assert value_loss(q, v) >= 0.0

    def test_policy_loss_zero_advantages(self):
        assert policy_loss([0.0, 0.0], [0.5, 0.5]) == 0.0

    def test_policy_loss_unit_advantage(self):
        assert policy_loss([1.0], [math.exp(-1.0)]) == pytest.approx(1.0)

    def test_policy_loss_sign_flips_with_advantage(self):
        assert policy_loss([-1.0], [math.exp(-1.0)]) == pytest.approx(-1.0)

    def test_entropy_values(self):
        assert policy_entropy(ActionDistribution(0.5, 0.5)) == pytest.approx(math.log(2.0))
        assert policy_entropy(ActionDistribution(1.0, 0.0)) == pytest.approx(0.0, abs=1e-9)

    def test_entropy_maximal_at_uniform(self):
        grid = np.linspace(0.01, 0.99, 99)
        values = [policy_entropy(ActionDistribution(p, 1.0 - p)) for p in grid]
        assert max(values) == pytest.approx(math.log(2.0), rel=1e-3)
        assert np.argmax(values) == 49

    def test_total_loss_composition(self):
        assert total_loss(1.25, -0.5, 0.6, 0.0) == pytest.approx(0.75)
        uniform_entropy = math.log(2.0)
        assert total_loss(0.0, 0.0, uniform_entropy, 0.05) \
            == pytest.approx(-0.05 * uniform_entropy)

    def test_entropy_term_never_increases_when_beta_zero(self):
        _, forward, batch = random_batch(seed=11)
        v, p, ent, total_b = episode_losses(forward, batch)
        total_0 = total_loss(v, p, ent, 0.0)
        assert total_b <= total_0 + 1e-12


class TestBackward:
    def test_gradcheck_total_loss(self):
        params, forward, batch = random_batch(hidden=6, n=4, seed=1)
        analytic = backward(params, forward, batch)
        numeric = finite_difference_grads(params, batch)
        assert max_relative_error(analytic, numeric) < 1e-4

    def test_gradcheck_term_isolation(self):
        # value only: zero advantages and beta
        params, forward, batch = random_batch(hidden=5, n=3, seed=2)
        value_only = EpisodeBatch(batch.states, batch.actions, batch.q_targets,
                                  np.zeros_like(batch.advantages), 0.0)
        assert max_relative_error(backward(params, forward, value_only),
                                  finite_difference_grads(params, value_only)) < 1e-4
        # policy only: targets equal to values kill the value residual
        policy_only = EpisodeBatch(batch.states, batch.actions, forward.values.copy(),
                                   batch.advantages, 0.0)
        assert max_relative_error(backward(params, forward, policy_only),
                                  finite_difference_grads(params, policy_only)) < 1e-4
        # entropy only
        entropy_only = EpisodeBatch(batch.states, batch.actions, forward.values.copy(),
                                    np.zeros_like(batch.advantages), 0.7)
        assert max_relative_error(backward(params, forward, entropy_only),
                                  finite_difference_grads(params, entropy_only)) < 1e-4

    def test_zero_signal_zero_gradient(self):
        params, forward, batch = random_batch(hidden=4, n=3, seed=3)
        silent = EpisodeBatch(batch.states, batch.actions, forward.values.copy(),
                              np.zeros_like(batch.advantages), 0.0)
        grads = backward(params, forward, silent)
        assert grad_norm(grads) == pytest.approx(0.0, abs=1e-12)

    def test_record_additivity(self):
        """With per-record mean losses, the gradient decomposes over records:
        silencing complementary halves of the batch and summing the two
        gradients reproduces the full gradient."""
        params = random_params(5, 9)
        rng = np.random.default_rng(10)
        states = rng.uniform(0, 1, (6, 6))
        actions = rng.integers(0, 2, 6)
        forward = forward_episode(params, states)
        q = forward.values + rng.normal(size=6)
        adv = rng.normal(size=6)

        def silenced(keep):
            q_part = forward.values.copy()
            adv_part = np.zeros(6)
            q_part[keep] = q[keep]
            adv_part[keep] = adv[keep]
            return backward(params, forward,
                            EpisodeBatch(states, actions, q_part, adv_part, 0.0))

        full = backward(params, forward, EpisodeBatch(states, actions, q, adv, 0.0))
        first = silenced(slice(0, 3))
        second = silenced(slice(3, 6))
        combined = {k: first[k] + second[k] for k in full}
        assert max_relative_error(full, combined) < 1e-9

    def test_grad_norm(self):
        assert grad_norm({"a": np.zeros(3)}) == 0.0
        assert grad_norm({"a": np.array([3.0]), "b": np.array([4.0])}) == 5.0
        grads = {"a": np.array([1.0, -2.0]), "b": np.array([[2.0]])}
        assert grad_norm({k: 3.0 * v for k, v in grads.items()}) \
            == pytest.approx(3.0 * grad_norm(grads))


class TestClippedDelta:
    def test_below_threshold_unchanged(self):
        grads = {"a": np.array([0.3, 0.4])}
        delta = clipped_delta(grads, 40.0)
        assert np.array_equal(delta["a"], grads["a"])

    def test_double_norm_halved(self):
        grads = {"a": np.array([16.0]), "b": np.array([12.0])}  # norm 20
        delta = clipped_delta(grads, 10.0)
        assert grad_norm(delta) == pytest.approx(10.0)
        assert delta["a"][0] == pytest.approx(8.0)

    def test_post_clip_norm_bounded(self):
        rng = np.random.default_rng(11)
        for _ in range(50):
            grads = {"a": rng.normal(size=7) * rng.uniform(0, 100)}
            assert grad_norm(clipped_delta(grads, 5.0)) <= 5.0 + 1e-9

    def test_rejects_non_positive_threshold(self):
        with pytest.raises(LearnerError):
            clipped_delta({"a": np.ones(2)}, 0.0)


class TestApplyUpdate:
    def test_zero_delta_keeps_parameters(self):
        coordinator = Coordinator(random_params(4, 12), learning_rate=0.001)
        before = {k: v.copy() for k, v in coordinator.params.items()}
        agent = apply_update(coordinator, coordinator.sync_copy(),
                             {k: np.zeros_like(v) for k, v in before.items()})
        for key in before:
            assert np.array_equal(coordinator.params[key], before[key])
            assert np.array_equal(agent[key], before[key])
        assert coordinator.step == 1

    def test_two_identical_deltas_descend(self):
        coordinator = Coordinator(random_params(4, 13), learning_rate=0.001)
        delta = {k: np.full_like(v, 0.5) for k, v in coordinator.params.items()}
        start = {k: v.copy() for k, v in coordinator.params.items()}
        coordinator.apply_update(delta)
        mid = {k: v.copy() for k, v in coordinator.params.items()}
        coordinator.apply_update(delta)
        for key in start:
            assert np.all(mid[key] < start[key])
            assert np.all(coordinator.params[key] < mid[key])

    def test_agent_equals_coordinator_after_sync(self):
        coordinator = Coordinator(random_params(4, 14))
        coordinator.apply_update({k: np.full_like(v, 0.1)
                                  for k, v in coordinator.params.items()})
        agent = coordinator.sync_copy()
        for key in agent:
            assert np.array_equal(agent[key], coordinator.params[key])


def small_scenario(seed=0, n_sessions=40, cv=0.7):
    batch = generate_synthetic(
        GeneratorConfig(n_sessions=n_sessions, cv_fraction=cv, n_evses=2,
                        mean_gap_minutes=200), seed=seed)
    return batch, site_for(batch)


class TestTrain:
    def test_deterministic_logs(self):
        batch, site = small_scenario()
        config = TrainConfig(episodes=5, seed=3, hidden=8, alpha=0.9)
        _, logs_a = train(batch, site, config, risk_value=0.05)
        _, logs_b = train(batch, site, config, risk_value=0.05)
        assert [(l.cumulative_reward, l.value_loss, l.policy_loss, l.entropy)
                for l in logs_a] == \
               [(l.cumulative_reward, l.value_loss, l.policy_loss, l.entropy)
                for l in logs_b]

    def test_all_av_reward_is_twice_sessions(self):
        batch, site = small_scenario(seed=5, cv=0.0)
        config = TrainConfig(episodes=3, seed=1, hidden=8)
        _, logs = train(batch, site, config, risk_value=0.0)
        for entry in logs:
            assert entry.cumulative_reward == pytest.approx(2.0 * len(batch))

    def test_agents_match_coordinator_after_training(self):
        batch, site = small_scenario(seed=6)
        model, _ = train(batch, site, TrainConfig(episodes=2, seed=2, hidden=8),
                         risk_value=0.1)
        for params in model.agents.values():
            for key in params:
                assert np.array_equal(params[key], model.coordinator.params[key])

    def test_entropy_regularization_keeps_entropy_higher(self):
        batch, site = small_scenario(seed=7, n_sessions=30)
        wins = 0
        for seed in range(5):
            base = TrainConfig(episodes=200, seed=seed, hidden=16, beta=0.05)
            off = TrainConfig(episodes=200, seed=seed, hidden=16, beta=0.0)
            _, logs_on = train(batch, site, base, risk_value=0.1)
            _, logs_off = train(batch, site, off, risk_value=0.1)
            mean_on = np.mean([l.entropy for l in logs_on])
            mean_off = np.mean([l.entropy for l in logs_off])
            wins += mean_on >= mean_off
        assert wins >= 4

    def test_risk_out_of_range_rejected(self):
        batch, site = small_scenario()
        with pytest.raises(LearnerError):
            train(batch, site, TrainConfig(episodes=1, hidden=8), risk_value=1.5)


class TestSerialization:
    def test_roundtrip(self, tmp_path):
        batch, site = small_scenario(seed=8)
        model, _ = train(batch, site, TrainConfig(episodes=2, seed=4, hidden=8),
                         risk_value=0.2)
        path = tmp_path / "model.json"
        model.save(path)
        loaded = SharedModel.load(path)
        assert loaded.hidden == model.hidden
        assert loaded.risk_value == model.risk_value
        assert loaded.coordinator.step == model.coordinator.step
        for key in model.coordinator.params:
            assert np.array_equal(loaded.coordinator.params[key],
                                  model.coordinator.params[key])
        for evse, params in model.agents.items():
            for key in params:
                assert np.array_equal(loaded.agents[evse][key], params[key])

    def test_resume_continues_step_counter(self, tmp_path):
        batch, site = small_scenario(seed=9)
        model, _ = train(batch, site, TrainConfig(episodes=3, seed=4, hidden=8),
                         risk_value=0.2)
        steps = model.coordinator.step
        episodes = model.train_episodes
        path = tmp_path / "model.json"
        model.save(path)
        resumed = SharedModel.load(path)
        more, logs = train(batch, site, TrainConfig(episodes=2, seed=4, hidden=8),
                           risk_value=0.2, initial_model=resumed)
        assert more.coordinator.step > steps
        assert more.train_episodes == episodes + 2
        assert logs[0].episode == episodes + 1

    def test_corrupt_model_names_field(self, tmp_path):
        path = tmp_path / "model.json"
        path.write_text('{"format": "ramals-model-v1", "hidden": 8}')
        with pytest.raises(LearnerError, match="missing field"):
            SharedModel.load(path)

    def test_corrupt_tensor_named(self, tmp_path):
        batch, site = small_scenario(seed=10)
        model, _ = train(batch, site, TrainConfig(episodes=1, seed=4, hidden=8),
                         risk_value=0.2)
        path = tmp_path / "model.json"
        model.save(path)
        import json
        payload = json.loads(path.read_text())
        del payload["coordinator"]["wx"]
        path.write_text(json.dumps(payload))
        with pytest.raises(LearnerError, match="coordinator.wx"):
            SharedModel.load(path)
