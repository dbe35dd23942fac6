import numpy as np
import pytest

from deep_aif.agent import (
    collect_random,
    expert_demonstration,
    initial_particles,
    preferred_state,
    run_active_inference,
    track_posterior,
)
from deep_aif.env import Action, EnvConfig, MountainCar, dynamics, CarState
from deep_aif.errors import ConfigError
from deep_aif.gaussian import DiagGaussian
from deep_aif.genmodel import GenerativeModel, encode_sequence, posterior_infer
from deep_aif.planner import PlanConfig


@pytest.fixture(scope="module")
def model():
    return GenerativeModel.create(seed=2)


def test_collect_random_reproducible():
    cfg = EnvConfig(max_steps=30)
    a = collect_random(cfg, 5, np.random.default_rng(4))
    b = collect_random(cfg, 5, np.random.default_rng(4))
    for x, y in zip(a, b):
        np.testing.assert_array_equal(x.observations, y.observations)
        np.testing.assert_array_equal(x.actions, y.actions)


def test_collect_random_actions_balanced():
    eps = collect_random(EnvConfig(max_steps=100), 100, np.random.default_rng(0))
    acts = np.concatenate([e.actions for e in eps])
    assert acts.size == 10_000
    # binomial sd is 0.005 at this size
    assert abs(acts.mean() - 0.5) < 0.02


def test_collect_random_held_actions_balanced():
    eps = collect_random(EnvConfig(max_steps=100), 100, np.random.default_rng(1), max_hold=30)
    acts = np.concatenate([e.actions for e in eps])
    assert abs(acts.mean() - 0.5) < 0.06
    runs = np.flatnonzero(np.diff(acts)).size
    assert runs < acts.size / 5


def test_collect_random_lengths_bounded():
    eps = collect_random(EnvConfig(max_steps=40, start_position=None), 30, np.random.default_rng(2))
    assert all(1 <= len(e.actions) <= 40 for e in eps)
    assert all(len(e.observations) == len(e.actions) + 1 for e in eps)


@pytest.mark.parametrize("kw", [dict(episodes=0), dict(max_hold=0)])
def test_collect_random_rejects_bad_counts(kw):
    args = dict(episodes=1, max_hold=1) | kw
    with pytest.raises(ConfigError):
        collect_random(EnvConfig(), args["episodes"], np.random.default_rng(0), max_hold=args["max_hold"])


def test_expert_reaches_goal_noise_free():
    ep = expert_demonstration(EnvConfig(obs_noise_std=0.0))
    assert ep.observations[-1] >= 0.5
    assert ep.actions[0] == Action.LEFT
    # replay the actions through the physics
    s = CarState(-0.5, 0.0)
    for a in ep.actions:
        s = dynamics(s, Action(int(a)))
    assert s.position == pytest.approx(ep.observations[-1])


def test_expert_reaches_goal_with_noise():
    ep = expert_demonstration(EnvConfig(), np.random.default_rng(5))
    assert len(ep.actions) < 200


def test_expert_failure_is_config_error():
    with pytest.raises(ConfigError):
        expert_demonstration(EnvConfig(max_steps=50))


def test_preferred_state_is_unit_std_around_encoding(model):
    ep = expert_demonstration(EnvConfig(obs_noise_std=0.0))
    pref = preferred_state(model, ep, np.random.default_rng(0))
    np.testing.assert_array_equal(pref.mean, encode_sequence(model, ep, np.random.default_rng(0)))
    np.testing.assert_array_equal(pref.std, np.ones(4))
    assert preferred_state(model, ep, np.random.default_rng(0), std=0.5).std[0] == 0.5


def test_track_posterior_preserves_count_and_seed(model):
    parts = np.random.default_rng(0).normal(size=(13, 4))
    a = track_posterior(model, parts, Action.LEFT, -0.4, np.random.default_rng(3))
    b = track_posterior(model, parts, Action.LEFT, -0.4, np.random.default_rng(3))
    assert a.shape == (13, 4)
    np.testing.assert_array_equal(a, b)


def test_track_posterior_samples_posterior(model):
    parts = np.zeros((20_000, 4))
    out = track_posterior(model, parts, Action.RIGHT, 0.1, np.random.default_rng(1))
    q = posterior_infer(model, np.zeros(4), Action.RIGHT, 0.1)
    np.testing.assert_allclose(out.mean(axis=0), q.mean, atol=4 * q.std.max() / np.sqrt(20_000))
    np.testing.assert_allclose(out.std(axis=0), q.std, rtol=0.03)


def test_initial_particles_use_null_action(model):
    p = initial_particles(model, -0.5, 8, np.random.default_rng(0))
    q = posterior_infer(model, np.zeros((8, 4)), None, -0.5)
    expected = q.mean + np.random.default_rng(0).standard_normal((8, 4)) * q.std
    np.testing.assert_array_equal(p, expected)


def small_plan():
    return PlanConfig(preferred=DiagGaussian(np.zeros(4), np.ones(4)), K=5, D=2, N=4)


def test_run_timeout_path(model):
    rec = run_active_inference(model, EnvConfig(max_steps=12), small_plan(), seed=0)
    assert not rec.goal_reached
    assert rec.steps_taken == 12
    assert len(rec.true_positions) == len(rec.observations) == len(rec.actions) == 13
    assert rec.actions[-1] is None
    assert [e.t for e in rec.replans] == [0, 5, 10]


def test_committed_actions_follow_replans(model):
    rec = run_active_inference(model, EnvConfig(max_steps=23), small_plan(), seed=1)
    for e in rec.replans:
        held = rec.actions[e.t:e.t + 5]
        assert all(a == int(e.action) for a in held if a is not None)
        roots = {r.action: r.g_value for r in e.root}
        assert roots[e.action] <= min(roots.values())


def test_run_reproducible_and_records_truth(model):
    env_cfg = EnvConfig(max_steps=10)
    a = run_active_inference(model, env_cfg, small_plan(), seed=4)
    b = run_active_inference(model, env_cfg, small_plan(), seed=4)
    assert a.observations == b.observations and a.actions == b.actions
    assert a.seed == 4 and a.first_action is a.replans[0].action
    env = MountainCar(env_cfg, np.random.default_rng([4, 0]))
    env.reset()
    for act in a.actions[:-1]:
        env.step(Action(act))
    assert env.true_state().position == a.true_positions[-1]
