"""Deep active inference: a learned latent state-space model plus tree planning."""

from .env import Action, EnvConfig, MountainCar, Variant
from .gaussian import DiagGaussian
from .genmodel import GenerativeModel, TrainConfig
from .planner import PlanConfig

__all__ = ["Action", "DiagGaussian", "EnvConfig", "GenerativeModel", "MountainCar", "PlanConfig",
           "TrainConfig", "Variant"]
__version__ = "0.1.0"
