import math

import numpy as np
import pytest

from deep_aif.env import Action, CarState, EnvConfig, MountainCar, Variant, dynamics
from deep_aif.errors import ConfigError, ContractError


def noiseless(**kw):
    return EnvConfig(obs_noise_std=0.0, **kw)


def test_reset_zero_velocity_observation():
    env = MountainCar(noiseless())
    assert env.reset() == -0.5
    assert env.true_state() == CarState(-0.5, 0.0)


def test_random_velocity_reset_is_seeded():
    cfg = EnvConfig(variant=Variant.RANDOM_VELOCITY, seed=11)
    a, b = MountainCar(cfg), MountainCar(cfg)
    assert a.reset() == b.reset()
    assert a.true_state() == b.true_state()


def test_random_velocity_reset_distribution():
    cfg = EnvConfig(variant=Variant.RANDOM_VELOCITY)
    env = MountainCar(cfg, np.random.default_rng(0))
    vels = []
    for _ in range(10_000):
        env.reset()
        vels.append(env.true_state().velocity)
    vels = np.array(vels)
    assert vels.min() >= -0.07 and vels.max() <= 0.07
    assert abs(vels.mean()) < 0.002


def test_spawn_random_position_range():
    env = MountainCar(noiseless(start_position=None), np.random.default_rng(1))
    pos = [env.reset() for _ in range(2000)]
    assert min(pos) >= -1.1 and max(pos) <= 0.4


def test_step_right_from_rest():
    # hand evaluation: 0.001 - 0.0025 * cos(-1.5)
    assert math.cos(-1.5) == pytest.approx(0.070737, abs=1e-6)
    s = dynamics(CarState(-0.5, 0.0), Action.RIGHT)
    assert s.velocity == pytest.approx(0.000823, abs=1e-6)
    assert s.position == pytest.approx(-0.499177, abs=1e-6)


def test_step_left_from_rest():
    s = dynamics(CarState(-0.5, 0.0), Action.LEFT)
    assert s.velocity == pytest.approx(-0.001177, abs=1e-6)


def test_left_wall_stops_car():
    s = dynamics(CarState(-1.19, -0.05), Action.LEFT)
    assert s.position == -1.2
    assert s.velocity == 0.0


def test_speed_is_clamped():
    s = dynamics(CarState(-0.5, 0.0699), Action.RIGHT)
    assert s.velocity <= 0.07


def test_step_after_done_raises():
    env = MountainCar(noiseless(max_steps=2))
    env.reset()
    env.step(Action.LEFT)
    _, done = env.step(Action.LEFT)
    assert done
    with pytest.raises(ContractError):
        env.step(Action.LEFT)


def test_step_before_reset_raises():
    with pytest.raises(ContractError):
        MountainCar(noiseless()).step(Action.RIGHT)


def test_noise_free_observation_is_position():
    env = MountainCar(noiseless())
    env.reset()
    for a in [Action.LEFT] * 20 + [Action.RIGHT] * 20:
        o, _ = env.step(a)
        assert o == env.true_state().position


def test_observation_noise_statistics():
    env = MountainCar(EnvConfig(obs_noise_std=0.05, max_steps=10_001), np.random.default_rng(3))
    env.reset()
    diffs = []
    for i in range(10_000):
        o, _ = env.step(Action(i % 2))
        diffs.append(o - env.true_state().position)
    diffs = np.array(diffs)
    assert abs(diffs.mean()) < 3 * 0.05 / 100
    assert diffs.std() == pytest.approx(0.05, rel=0.03)


def test_constant_right_does_not_reach_goal():
    env = MountainCar(noiseless())
    env.reset()
    done = False
    while not done:
        _, done = env.step(Action.RIGHT)
    assert not env.goal_reached
    assert env.steps == 200


def test_trajectory_determinism():
    a, b = CarState(-0.3, 0.01), CarState(-0.3, 0.01)
    for act in [Action.LEFT, Action.RIGHT] * 50:
        a, b = dynamics(a, act), dynamics(b, act)
    assert a == b


def test_negative_noise_rejected():
    with pytest.raises(ConfigError):
        EnvConfig(obs_noise_std=-1)


def test_action_letters_round_trip():
    for a in Action:
        assert Action.from_letter(a.letter) is a
