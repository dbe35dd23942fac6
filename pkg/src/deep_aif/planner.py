"""Monte-Carlo expected free energy over a binary policy tree.

Each tree node follows one action for K steps from a cloud of N state
particles. Per step a Gaussian is moment-matched to the predicted states and
to the sampled observations; the node scores

    sum_k KL(fitted_state_k || preferred) + entropy(fitted_obs_k) / rho

plus, below the last level, the children's G weighted by their policy prior.
Every node draws from its own generator derived from one base seed and the
node's position in the tree, so nodes can be evaluated in any order.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .env import Action
from .errors import ConfigError
from .gaussian import DiagGaussian, entropy, fit_from_samples, kl_divergence
from .genmodel import GenerativeModel, likelihood, transition_predict

ACTIONS = (Action.LEFT, Action.RIGHT)


@dataclass
class PlanConfig:
    preferred: DiagGaussian
    K: int = 30
    D: int = 3
    N: int = 100
    gamma: float = 1.0
    rho: float = 0.1
    stochastic: bool = False
    workers: int = 1

    def __post_init__(self) -> None:
        if min(self.K, self.D) < 1:
            raise ConfigError("K and D must be >= 1")
        if self.N < 2:
            raise ConfigError("N must be >= 2 to fit Gaussians over particles")
        if self.gamma < 0 or not self.rho > 0:
            raise ConfigError("need gamma >= 0 and rho > 0")

    @property
    def horizon(self) -> int:
        return self.K * self.D


@dataclass
class SegmentRollout:
    states: np.ndarray          # (N, K, state_dim)
    observations: np.ndarray    # (N, K, obs_dim) sampled
    obs_means: np.ndarray       # (N, K, obs_dim) likelihood means
    state_fits: list[DiagGaussian]
    obs_fits: list[DiagGaussian]


@dataclass
class BranchEvaluation:
    """One tree node: K steps of ``policy_sequence[-1]`` after its ancestors."""

    policy_sequence: tuple[Action, ...]
    per_step_kl: np.ndarray
    per_step_entropy: np.ndarray
    kl_total: float
    entropy_total: float
    g_value: float
    sampled_positions: np.ndarray   # (N, K) predicted observation means
    children: list["BranchEvaluation"] = field(default_factory=list)

    @property
    def action(self) -> Action:
        return self.policy_sequence[-1]

    @property
    def label(self) -> str:
        return "".join(a.letter for a in self.policy_sequence)


def segment_rollout(m: GenerativeModel, states: np.ndarray, action: Action, K: int,
                    rng: np.random.Generator) -> SegmentRollout:
    states = np.asarray(states, dtype=np.float64)
    n = states.shape[0]
    if n < 2:
        raise ConfigError("segment_rollout needs at least two particles")
    s_out = np.empty((n, K, m.state_dim))
    o_out = np.empty((n, K, m.obs_dim))
    o_mean = np.empty((n, K, m.obs_dim))
    s = states
    for k in range(K):
        p = transition_predict(m, s, action)
        s = p.mean + rng.standard_normal(s.shape) * p.std
        lik = likelihood(m, s)
        o = lik.mean + rng.standard_normal(lik.mean.shape) * lik.std
        s_out[:, k], o_out[:, k], o_mean[:, k] = s, o, lik.mean
    return SegmentRollout(
        s_out, o_out, o_mean,
        [fit_from_samples(s_out[:, k]) for k in range(K)],
        [fit_from_samples(o_out[:, k]) for k in range(K)],
    )


def policy_prior(g_values, gamma: float) -> np.ndarray:
    """Softmax of ``-gamma * G``; accepts a sequence or an action-keyed mapping."""
    if isinstance(g_values, Mapping):
        g_values = [g_values[a] for a in ACTIONS]
    z = -gamma * np.asarray(g_values, dtype=np.float64)
    z = z - z.max()
    w = np.exp(z)
    return w / w.sum()


def _node_rng(base: int, path: tuple[Action, ...]) -> np.random.Generator:
    code = int("1" + "".join(str(int(a)) for a in path), 2)
    return np.random.default_rng([base, code])


def _evaluate(m, states, cfg: PlanConfig, depth_remaining: int, base: int,
              path: tuple[Action, ...]) -> BranchEvaluation:
    roll = segment_rollout(m, states, path[-1], cfg.K, _node_rng(base, path))
    kl = np.array([float(kl_divergence(f, cfg.preferred)) for f in roll.state_fits])
    ent = np.array([float(entropy(f)) for f in roll.obs_fits])
    node = BranchEvaluation(
        policy_sequence=path,
        per_step_kl=kl,
        per_step_entropy=ent,
        kl_total=float(kl.sum()),
        entropy_total=float(ent.sum()),
        g_value=0.0,
        sampled_positions=roll.obs_means[..., 0],
    )
    g = node.kl_total + node.entropy_total / cfg.rho
    if depth_remaining > 1:
        leaf_states = roll.states[:, -1]
        node.children = [
            _evaluate(m, leaf_states, cfg, depth_remaining - 1, base, path + (a,)) for a in ACTIONS
        ]
        g += continuation(node.children, cfg.gamma)
    node.g_value = g
    return node


def continuation(children: list[BranchEvaluation], gamma: float) -> float:
    gs = np.array([c.g_value for c in children])
    return float(policy_prior(gs, gamma) @ gs)


def expected_free_energy(m: GenerativeModel, root_states: np.ndarray, cfg: PlanConfig,
                         depth_remaining: int | None = None,
                         rng: np.random.Generator | None = None,
                         base_seed: int | None = None) -> dict[Action, BranchEvaluation]:
    """G for each first action, with the full evaluation tree below it."""
    depth = cfg.D if depth_remaining is None else depth_remaining
    if not 1 <= depth <= cfg.D:
        raise ConfigError(f"depth_remaining must lie in [1, {cfg.D}]")
    if base_seed is None:
        if rng is None:
            raise ConfigError("expected_free_energy needs an rng or a base seed")
        base_seed = int(rng.integers(2**63))
    args = [(m, root_states, cfg, depth, base_seed, (a,)) for a in ACTIONS]
    if cfg.workers > 1:
        with ThreadPoolExecutor(cfg.workers) as pool:
            nodes = list(pool.map(lambda x: _evaluate(*x), args))
    else:
        nodes = [_evaluate(*x) for x in args]
    return dict(zip(ACTIONS, nodes))


def select_policy(m: GenerativeModel, particles: np.ndarray, cfg: PlanConfig,
                  rng: np.random.Generator) -> tuple[Action, list[BranchEvaluation]]:
    """Root action by argmax prior (ties go left) or by sampling the prior."""
    tree = expected_free_energy(m, particles, cfg, rng=rng)
    roots = [tree[a] for a in ACTIONS]
    probs = policy_prior([r.g_value for r in roots], cfg.gamma)
    if cfg.stochastic:
        idx = int(rng.choice(len(ACTIONS), p=probs))
    else:
        idx = int(np.argmax(probs))
    return ACTIONS[idx], roots


# -- flattening ---------------------------------------------------------------


@dataclass
class BranchPath:
    """A root-to-leaf policy sequence with its per-step terms concatenated."""

    branch_id: int
    nodes: list[BranchEvaluation]
    rho: float

    @property
    def policy_sequence(self) -> tuple[Action, ...]:
        return self.nodes[-1].policy_sequence

    @property
    def label(self) -> str:
        return self.nodes[-1].label

    @property
    def per_step_kl(self) -> np.ndarray:
        return np.concatenate([n.per_step_kl for n in self.nodes])

    @property
    def per_step_entropy(self) -> np.ndarray:
        return np.concatenate([n.per_step_entropy for n in self.nodes])

    @property
    def kl_total(self) -> float:
        return float(sum(n.kl_total for n in self.nodes))

    @property
    def entropy_total(self) -> float:
        return float(sum(n.entropy_total for n in self.nodes))

    @property
    def g_value(self) -> float:
        """Open-loop G of following exactly this sequence."""
        return self.kl_total + self.entropy_total / self.rho

    @property
    def sampled_positions(self) -> np.ndarray:
        return np.concatenate([n.sampled_positions for n in self.nodes], axis=1)


def branch_paths(roots: list[BranchEvaluation], rho: float) -> list[BranchPath]:
    """All 2^D root-to-leaf paths, ordered like binary numbers with L=0."""
    out: list[BranchPath] = []

    def walk(node, trail):
        trail = trail + [node]
        if not node.children:
            out.append(BranchPath(len(out), trail, rho))
        for c in node.children:
            walk(c, trail)

    for r in roots:
        walk(r, [])
    return out


def selected_path(roots: list[BranchEvaluation], gamma: float) -> tuple[Action, ...]:
    """Greedy descent: the most probable child at every level (ties go left)."""
    level = roots
    seq: list[Action] = []
    while level:
        idx = int(np.argmax(policy_prior([n.g_value for n in level], gamma)))
        seq.append(level[idx].action)
        level = level[idx].children
    return tuple(seq)


def walk_nodes(roots: list[BranchEvaluation]):
    stack = list(reversed(roots))
    while stack:
        node = stack.pop()
        yield node
        stack.extend(reversed(node.children))
