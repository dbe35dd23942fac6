"""Three-network latent state-space model trained by free-energy minimization.

The transition, posterior and likelihood networks each map their inputs to a
diagonal Gaussian: the output layer holds the means followed by pre-std
values ``r`` with ``std = softplus(r) + STD_FLOOR``.

The first step of every sequence conditions on a zero state and an all-zero
("null") action vector.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import STD_FLOOR, NetParams
from .env import Action
from .errors import ContractError, DimensionError, DivergenceError
from .gaussian import DiagGaussian, kl_divergence, log_prob, sample

log = logging.getLogger(__name__)

NET_NAMES = ("transition", "posterior", "likelihood")


@dataclass
class Episode:
    """``observations[t]`` is seen at step t; ``actions[t]`` is taken after it."""

    observations: np.ndarray
    actions: np.ndarray

    def __post_init__(self) -> None:
        self.observations = np.asarray(self.observations, dtype=np.float64).reshape(-1)
        self.actions = np.asarray(self.actions, dtype=np.int64).reshape(-1)
        if len(self.observations) < 1:
            raise ContractError("an episode needs at least one observation")
        if len(self.actions) != len(self.observations) - 1:
            raise ContractError(
                f"{len(self.observations)} observations need {len(self.observations) - 1} actions, "
                f"got {len(self.actions)}"
            )
        if np.any((self.actions < 0) | (self.actions > 1)):
            raise ContractError("actions must be 0 (left) or 1 (right)")

    def __len__(self) -> int:
        return len(self.observations)


@dataclass
class TrainConfig:
    learning_rate: float = 1e-2
    epochs: int = 100
    seed: int = 0
    minibatch_episodes: int = 10
    # "sgd" is the plain p <- p - lr * g rule
    optimizer: str = "adam"

    def __post_init__(self) -> None:
        if self.optimizer not in ("adam", "sgd"):
            raise ContractError(f"unknown optimizer {self.optimizer!r}")
        if self.learning_rate < 0:
            raise ContractError("learning_rate must be >= 0")
        if self.epochs < 0:
            raise ContractError("epochs must be >= 0")
        if self.minibatch_episodes < 1:
            raise ContractError("minibatch_episodes must be >= 1")


@dataclass
class GenerativeModel:
    transition: NetParams
    posterior: NetParams
    likelihood: NetParams
    state_dim: int = 4
    obs_dim: int = 1
    action_count: int = 2
    hidden: int = 20
    # when set, state-to-state nets predict an increment on the previous state
    residual: bool = False
    # prior on the first state: "standard" is N(0, I), "transition" runs the
    # transition net on the zero state with the null action
    initial_prior: str = "transition"
    meta: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        s, o, a = self.state_dim, self.obs_dim, self.action_count
        expected = {
            "transition": (s + a, 2 * s),
            "posterior": (s + a + o, 2 * s),
            "likelihood": (s, 2 * o),
        }
        if self.initial_prior not in ("standard", "transition"):
            raise ContractError(f"unknown initial_prior {self.initial_prior!r}")
        for name, (n_in, n_out) in expected.items():
            widths = getattr(self, name).widths
            if widths[0] != n_in or widths[-1] != n_out:
                raise DimensionError(f"{name} net widths {widths} do not fit ({n_in} -> {n_out})")

    @classmethod
    def create(cls, seed: int = 0, state_dim: int = 4, obs_dim: int = 1, action_count: int = 2,
               hidden: int = 20, residual: bool = False,
               initial_prior: str = "transition") -> "GenerativeModel":
        rng = np.random.default_rng(seed)
        s, o, a = state_dim, obs_dim, action_count
        return cls(
            transition=ad.init_params([s + a, hidden, 2 * s], rng),
            posterior=ad.init_params([s + a + o, hidden, 2 * s], rng),
            likelihood=ad.init_params([s, hidden, 2 * o], rng),
            state_dim=s, obs_dim=o, action_count=a, hidden=hidden, residual=residual,
            initial_prior=initial_prior, meta={"seed": seed},
        )

    def nets(self) -> dict[str, NetParams]:
        return {name: getattr(self, name) for name in NET_NAMES}

    def with_nets(self, nets: dict[str, NetParams]) -> "GenerativeModel":
        return GenerativeModel(**nets, state_dim=self.state_dim, obs_dim=self.obs_dim,
                               action_count=self.action_count, hidden=self.hidden, residual=self.residual,
                               initial_prior=self.initial_prior,
                               meta=dict(self.meta))

    def bind(self, tape: ad.Tape) -> "GenerativeModel":
        """Same model with every parameter a leaf on ``tape``."""
        return self.with_nets({k: v.bind(tape) for k, v in self.nets().items()})

    def grads(self) -> dict[str, NetParams]:
        return {k: v.grads() for k, v in self.nets().items()}


# -- network heads ------------------------------------------------------------


def action_input(action, batch_shape: tuple = (), count: int = 2) -> np.ndarray:
    """One-hot encoding; ``None`` or -1 map to the all-zero null action."""
    if action is None:
        return np.zeros(batch_shape + (count,))
    a = np.asarray(action, dtype=np.int64)
    if a.ndim == 0:
        out = np.zeros(count)
        if a >= 0:
            out[int(a)] = 1.0
        return np.broadcast_to(out, batch_shape + (count,)).copy()
    out = np.zeros(a.shape + (count,))
    rows = np.nonzero(a >= 0)
    out[rows + (a[rows],)] = 1.0
    return out


def gaussian_head(params: NetParams, x, out_dim: int, offset=None) -> DiagGaussian:
    out = ad.affine_forward(params, x)[-1]
    mean = out[..., :out_dim]
    if offset is not None:
        mean = mean + offset
    std = ad.softplus(out[..., out_dim:]) + STD_FLOOR
    return DiagGaussian(mean, std)


def _check_state(m: GenerativeModel, s) -> None:
    if ad.value_of(s).shape[-1] != m.state_dim:
        raise DimensionError(f"state has width {ad.value_of(s).shape[-1]}, model expects {m.state_dim}")


def transition_predict(m: GenerativeModel, s_prev, action) -> DiagGaussian:
    _check_state(m, s_prev)
    batch = ad.value_of(s_prev).shape[:-1]
    x = ad.concat([s_prev, action_input(action, batch, m.action_count)])
    return gaussian_head(m.transition, x, m.state_dim, s_prev if m.residual else None)


def posterior_infer(m: GenerativeModel, s_prev, action, obs) -> DiagGaussian:
    _check_state(m, s_prev)
    batch = ad.value_of(s_prev).shape[:-1]
    o = np.asarray(obs, dtype=np.float64)
    if batch and o.shape == batch:
        o = o[..., None]
    o = np.broadcast_to(o, batch + (m.obs_dim,))
    x = ad.concat([s_prev, action_input(action, batch, m.action_count), o])
    return gaussian_head(m.posterior, x, m.state_dim, s_prev if m.residual else None)


def initial_prior(m: GenerativeModel, batch: int | None = None) -> DiagGaussian:
    """Prior over the first state of a sequence."""
    shape = (m.state_dim,) if batch is None else (batch, m.state_dim)
    if m.initial_prior == "standard":
        return DiagGaussian(np.zeros(shape), np.ones(shape))
    return transition_predict(m, np.zeros(shape), None)


def likelihood(m: GenerativeModel, s) -> DiagGaussian:
    _check_state(m, s)
    return gaussian_head(m.likelihood, s, m.obs_dim)


# -- free energy --------------------------------------------------------------


def _stack(episodes: Sequence[Episode]):
    """Pad a batch of episodes to a common length; returns obs, actions, mask."""
    T = max(len(ep) for ep in episodes)
    B = len(episodes)
    obs = np.zeros((T, B))
    prev_act = np.full((T, B), -1, dtype=np.int64)
    mask = np.zeros((T, B))
    for b, ep in enumerate(episodes):
        n = len(ep)
        obs[:n, b] = ep.observations
        obs[n:, b] = ep.observations[-1]
        prev_act[1:n, b] = ep.actions
        mask[:n, b] = 1.0 / n
    return obs, prev_act, mask


def episode_noise(episodes: Sequence[Episode], rng: np.random.Generator, state_dim: int) -> np.ndarray:
    """Standard-normal draws ``(T, B, state_dim)`` for the posterior samples."""
    T = max(len(ep) for ep in episodes)
    return rng.standard_normal((T, len(episodes), state_dim))


def free_energy_loss(m: GenerativeModel, episodes, rng: np.random.Generator | None = None,
                     noise: np.ndarray | None = None):
    """Length-normalized free energy, averaged over a batch of episodes.

    Per step: reconstruction ``-log p(o_t | s_t)`` with ``s_t`` a reparameterized
    posterior sample, plus ``KL(posterior || transition)``. Returns an autodiff
    node when ``m`` is bound to a tape, else a float.
    """
    if isinstance(episodes, Episode):
        episodes = [episodes]
    if noise is None:
        if rng is None:
            raise ContractError("free_energy_loss needs an rng or explicit noise")
        noise = episode_noise(episodes, rng, m.state_dim)
    obs, prev_act, mask = _stack(episodes)
    B = len(episodes)
    s = np.zeros((B, m.state_dim))
    total = 0.0
    for t in range(obs.shape[0]):
        q = posterior_infer(m, s, prev_act[t], obs[t])
        p = initial_prior(m, B) if t == 0 else transition_predict(m, s, prev_act[t])
        s = q.mean + noise[t] * q.std
        step = kl_divergence(q, p) - log_prob(likelihood(m, s), obs[t][:, None])
        total = total + ad.reduce_sum(step * mask[t])
    loss = total / B
    if not np.isfinite(ad.value_of(loss)):
        raise DivergenceError("free energy is not finite")
    return loss


def loss_and_grads(m: GenerativeModel, episodes, noise: np.ndarray) -> tuple[float, dict[str, NetParams]]:
    tape = ad.Tape()
    bound = m.bind(tape)
    loss = free_energy_loss(bound, episodes, noise=noise)
    ad.backward(tape, loss)
    return float(loss.value), bound.grads()


class Optimizer:
    """Applies SGD or Adam updates to all three networks of a model in place."""

    def __init__(self, m: GenerativeModel, kind: str, lr: float) -> None:
        self.kind = kind
        self.lr = lr
        self.state = {k: ad.AdamState.zeros_like(v) for k, v in m.nets().items()} if kind == "adam" else None

    def step(self, m: GenerativeModel, grads: dict[str, NetParams]) -> None:
        for name, g in grads.items():
            if self.kind == "sgd":
                setattr(m, name, ad.sgd_step(getattr(m, name), g, self.lr))
            else:
                new, self.state[name] = ad.adam_step(getattr(m, name), g, self.state[name], self.lr)
                setattr(m, name, new)


def train(m: GenerativeModel, dataset: Sequence[Episode], cfg: TrainConfig, progress=None) -> list[float]:
    """Minibatch stochastic gradient training on the free energy, in place.

    Each episode keeps the same posterior noise in every epoch, so with a zero
    learning rate the curve is flat and episode order does not matter.
    Returns the mean loss of every epoch, measured before each update.
    """
    if not dataset:
        raise ContractError("empty dataset")
    noise = [
        np.random.default_rng([cfg.seed, i]).standard_normal((len(ep), m.state_dim))
        for i, ep in enumerate(dataset)
    ]
    order_rng = np.random.default_rng([cfg.seed, len(dataset)])
    opt = Optimizer(m, cfg.optimizer, cfg.learning_rate)
    curve = []
    for epoch in range(cfg.epochs):
        order = order_rng.permutation(len(dataset))
        total = 0.0
        for start in range(0, len(order), cfg.minibatch_episodes):
            idx = order[start:start + cfg.minibatch_episodes]
            batch = [dataset[i] for i in idx]
            T = max(len(ep) for ep in batch)
            eps = np.zeros((T, len(idx), m.state_dim))
            for b, i in enumerate(idx):
                eps[: len(dataset[i]), b] = noise[i]
            try:
                value, grads = loss_and_grads(m, batch, eps)
                opt.step(m, grads)
            except DivergenceError as exc:
                raise DivergenceError(f"epoch {epoch}, batch starting at {start}: {exc}") from exc
            total += value * len(idx)
        curve.append(total / len(dataset))
        log.debug("epoch %d loss %.5f", epoch, curve[-1])
        if progress is not None:
            progress(epoch, curve[-1])
    return curve


def train_stages(m: GenerativeModel, dataset: Sequence[Episode], stages, cfg: TrainConfig,
                 progress=None) -> list[float]:
    """Run ``train`` once per ``(learning_rate, epochs)`` stage; curves are joined.

    Stage i uses seed ``cfg.seed + i`` and a fresh optimizer.
    """
    curve: list[float] = []
    for i, (lr, epochs) in enumerate(stages):
        stage_cfg = TrainConfig(learning_rate=float(lr), epochs=int(epochs), seed=cfg.seed + i,
                                minibatch_episodes=cfg.minibatch_episodes, optimizer=cfg.optimizer)
        offset = len(curve)
        hook = None if progress is None else (lambda e, v, o=offset: progress(o + e, v))
        curve += train(m, dataset, stage_cfg, hook)
    return curve


def encode_sequence(m: GenerativeModel, ep: Episode, rng: np.random.Generator,
                    sample_final: bool = False) -> np.ndarray:
    """Run the posterior chain over ``ep``; final posterior mean (or a sample)."""
    s = np.zeros(m.state_dim)
    q = None
    for t in range(len(ep)):
        act = None if t == 0 else int(ep.actions[t - 1])
        q = posterior_infer(m, s, act, ep.observations[t])
        s = sample(q, rng)
    if sample_final:
        return np.asarray(s)
    return np.asarray(q.mean)


# -- checkpoints --------------------------------------------------------------


def to_json(m: GenerativeModel) -> dict:
    params = {}
    for name, net in m.nets().items():
        params[name] = [
            {"shape": list(np.shape(w)), "weight": np.ravel(w).tolist(), "bias": np.ravel(b).tolist()}
            for w, b in zip(net.weights, net.biases)
        ]
    meta = {"state_dim": m.state_dim, "obs_dim": m.obs_dim, "action_count": m.action_count,
            "hidden": m.hidden, "residual": m.residual,
            "initial_prior": m.initial_prior, **{k: v for k, v in m.meta.items() if k not in ("state_dim", "obs_dim")}}
    meta.setdefault("seed", None)
    meta.setdefault("variant", None)
    return {"meta": meta, "params": params}


def from_json(doc: dict) -> GenerativeModel:
    meta = doc["meta"]
    nets = {}
    for name in NET_NAMES:
        layers = doc["params"][name]
        nets[name] = NetParams(
            [np.asarray(l["weight"], dtype=np.float64).reshape(l["shape"]) for l in layers],
            [np.asarray(l["bias"], dtype=np.float64) for l in layers],
        )
    fixed = ("state_dim", "obs_dim", "action_count", "hidden", "residual", "initial_prior")
    extra = {k: v for k, v in meta.items() if k not in fixed}
    return GenerativeModel(**nets, state_dim=meta["state_dim"], obs_dim=meta["obs_dim"],
                           action_count=meta["action_count"], hidden=meta["hidden"],
                           residual=meta.get("residual", False),
                           initial_prior=meta.get("initial_prior", "transition"), meta=extra)


def save_checkpoint(m: GenerativeModel, path) -> None:
    Path(path).write_text(json.dumps(to_json(m)))


def load_checkpoint(path) -> GenerativeModel:
    return from_json(json.loads(Path(path).read_text()))
