"""Experiment orchestration: random bootstrap data, expert demo, closed-loop runs."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .env import Action, EnvConfig, MountainCar
from .errors import ConfigError
from .gaussian import DiagGaussian, sample
from .genmodel import Episode, GenerativeModel, encode_sequence, posterior_infer
from .planner import BranchEvaluation, PlanConfig, select_policy

BOOTSTRAP_STEPS = 100


def collect_random(env_cfg: EnvConfig, episodes: int, rng: np.random.Generator,
                   max_hold: int = 1) -> list[Episode]:
    """Uniformly random throttle episodes, stopping early only at the goal.

    Each drawn action is held for a uniform random 1..max_hold steps; with
    ``max_hold=1`` a fresh action is drawn every step.
    """
    if episodes < 1:
        raise ConfigError("episodes must be >= 1")
    if max_hold < 1:
        raise ConfigError("max_hold must be >= 1")
    out = []
    for _ in range(episodes):
        env = MountainCar(env_cfg, rng)
        obs = [env.reset()]
        acts = []
        done = False
        hold = 0
        while not done:
            if hold == 0:
                a = Action(int(rng.integers(2)))
                hold = int(rng.integers(1, max_hold + 1))
            hold -= 1
            o, done = env.step(a)
            acts.append(int(a))
            obs.append(o)
        out.append(Episode(np.array(obs), np.array(acts, dtype=np.int64)))
    return out


def expert_demonstration(env_cfg: EnvConfig, rng: np.random.Generator | None = None) -> Episode:
    """Scripted driver that pumps energy: throttle along the current velocity.

    From rest it starts left, so the first swing builds momentum on the left
    slope; each later reversal of the car flips the throttle. It reads the
    true velocity and stands in for a human driver.
    """
    env = MountainCar(env_cfg, rng if rng is not None else np.random.default_rng(env_cfg.seed))
    obs = [env.reset()]
    acts = []
    done = False
    while not done:
        a = Action.RIGHT if env.true_state().velocity > 0 else Action.LEFT
        o, done = env.step(a)
        acts.append(int(a))
        obs.append(o)
    if not env.goal_reached:
        raise ConfigError(f"scripted expert failed to reach the goal within {env_cfg.max_steps} steps")
    return Episode(np.array(obs), np.array(acts, dtype=np.int64))


def preferred_state(m: GenerativeModel, demo: Episode, rng: np.random.Generator,
                    std: float = 1.0, sample_final: bool = False) -> DiagGaussian:
    """Unit-std Gaussian around the encoded end state of a demonstration."""
    mean = encode_sequence(m, demo, rng, sample_final=sample_final)
    return DiagGaussian(mean, np.full(m.state_dim, float(std)))


def track_posterior(m: GenerativeModel, particles: np.ndarray, action, obs: float,
                    rng: np.random.Generator) -> np.ndarray:
    """Advance every belief particle by one posterior sample."""
    return np.asarray(sample(posterior_infer(m, particles, action, obs), rng))


def initial_particles(m: GenerativeModel, obs: float, n: int, rng: np.random.Generator) -> np.ndarray:
    return track_posterior(m, np.zeros((n, m.state_dim)), None, obs, rng)


@dataclass
class ReplanEvent:
    t: int
    action: Action
    root: list[BranchEvaluation]


@dataclass
class RunRecord:
    true_positions: list[float] = field(default_factory=list)
    true_velocities: list[float] = field(default_factory=list)
    observations: list[float] = field(default_factory=list)
    actions: list[int | None] = field(default_factory=list)
    replans: list[ReplanEvent] = field(default_factory=list)
    goal_reached: bool = False
    steps_taken: int = 0
    seed: int | None = None

    @property
    def first_action(self) -> Action | None:
        return self.replans[0].action if self.replans else None


def run_active_inference(m: GenerativeModel, env_cfg: EnvConfig, plan_cfg: PlanConfig,
                         seed: int) -> RunRecord:
    """Plan, commit the chosen throttle for K steps while filtering, repeat."""
    env_rng, belief_rng, plan_rng = (np.random.default_rng([seed, k]) for k in range(3))
    env = MountainCar(env_cfg, env_rng)
    rec = RunRecord(seed=seed)

    def log_state(obs):
        st = env.true_state()
        rec.true_positions.append(st.position)
        rec.true_velocities.append(st.velocity)
        rec.observations.append(obs)

    obs = env.reset()
    log_state(obs)
    particles = initial_particles(m, obs, plan_cfg.N, belief_rng)
    done = False
    while not done:
        action, tree = select_policy(m, particles, plan_cfg, plan_rng)
        rec.replans.append(ReplanEvent(env.steps, action, tree))
        for _ in range(plan_cfg.K):
            obs, done = env.step(action)
            rec.actions.append(int(action))
            log_state(obs)
            particles = track_posterior(m, particles, action, obs, belief_rng)
            if done:
                break
    rec.actions.append(None)
    rec.goal_reached = env.goal_reached
    rec.steps_taken = env.steps
    return rec
