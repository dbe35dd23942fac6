"""Discrete-action Mountain Car with a noisy position-only sensor."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import ConfigError, ContractError

MIN_POSITION = -1.2
MAX_POSITION = 0.6
MAX_SPEED = 0.07
FORCE = 0.001
GRAVITY = 0.0025
SPAWN_LOW, SPAWN_HIGH = -1.1, 0.4


class Action(enum.IntEnum):
    LEFT = 0
    RIGHT = 1

    @property
    def letter(self) -> str:
        return "L" if self is Action.LEFT else "R"

    @classmethod
    def from_letter(cls, letter: str) -> "Action":
        try:
            return {"L": cls.LEFT, "R": cls.RIGHT}[letter.strip().upper()]
        except KeyError:
            raise ValueError(f"unknown action {letter!r}") from None


class Variant(str, enum.Enum):
    ZERO_VELOCITY = "zero"
    RANDOM_VELOCITY = "random"


@dataclass(frozen=True)
class CarState:
    position: float
    velocity: float


@dataclass(frozen=True)
class EnvConfig:
    variant: Variant = Variant.ZERO_VELOCITY
    obs_noise_std: float = 0.05
    # None spawns uniformly in [SPAWN_LOW, SPAWN_HIGH]
    start_position: float | None = -0.5
    goal_position: float = 0.5
    max_steps: int = 200
    seed: int = 0

    def __post_init__(self) -> None:
        if self.obs_noise_std < 0:
            raise ConfigError("obs_noise_std must be >= 0")
        if self.max_steps < 1:
            raise ConfigError("max_steps must be >= 1")
        object.__setattr__(self, "variant", Variant(self.variant))

    def with_(self, **changes) -> "EnvConfig":
        return replace(self, **changes)


def dynamics(state: CarState, action: Action) -> CarState:
    """One deterministic physics step."""
    force = FORCE if action == Action.RIGHT else -FORCE
    velocity = state.velocity + force - GRAVITY * math.cos(3.0 * state.position)
    velocity = min(max(velocity, -MAX_SPEED), MAX_SPEED)
    position = min(max(state.position + velocity, MIN_POSITION), MAX_POSITION)
    if position == MIN_POSITION and velocity < 0:
        velocity = 0.0
    return CarState(position, velocity)


class MountainCar:
    def __init__(self, cfg: EnvConfig, rng: np.random.Generator | None = None) -> None:
        self.cfg = cfg
        self.rng = rng if rng is not None else np.random.default_rng(cfg.seed)
        self._state: CarState | None = None
        self.steps = 0
        self.done = False

    def reset(self) -> float:
        cfg = self.cfg
        if cfg.start_position is None:
            position = float(self.rng.uniform(SPAWN_LOW, SPAWN_HIGH))
        else:
            position = float(cfg.start_position)
        if cfg.variant is Variant.RANDOM_VELOCITY:
            velocity = float(self.rng.uniform(-MAX_SPEED, MAX_SPEED))
        else:
            velocity = 0.0
        self._state = CarState(position, velocity)
        self.steps = 0
        self.done = False
        return self._observe()

    def step(self, action: Action) -> tuple[float, bool]:
        if self._state is None:
            raise ContractError("step() before reset()")
        if self.done:
            raise ContractError("step() after episode finished")
        self._state = dynamics(self._state, Action(action))
        self.steps += 1
        self.done = self.goal_reached or self.steps >= self.cfg.max_steps
        return self._observe(), self.done

    @property
    def goal_reached(self) -> bool:
        return self._state is not None and self._state.position >= self.cfg.goal_position

    def true_state(self) -> CarState:
        """Exact hidden state. Test and logging use only; the agent never reads it."""
        if self._state is None:
            raise ContractError("true_state() before reset()")
        return self._state

    def _observe(self) -> float:
        noise = self.rng.normal(0.0, self.cfg.obs_noise_std) if self.cfg.obs_noise_std > 0 else 0.0
        return self._state.position + noise
