"""Shared environment machinery: batches, step distributions, initialisation."""
from __future__ import annotations

from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import ClassVar, NamedTuple, Sequence

import numpy as np
import torch
from scipy.special import expit, logsumexp

from ..diff import DTYPE, DistributionHead, ParamStore, sample_categorical, tensor
from ..errors import DimensionError
from ..schema import DomainSchema, Trajectory, canonical_json, sha256_hex


class SequenceBatch(NamedTuple):
    """Right-padded trajectories. ``noise`` carries pre-drawn randomness for MC objectives."""

    static: torch.Tensor  # [B, ds]
    obs: torch.Tensor  # [B, T, dx]
    actions: torch.Tensor  # [B, T] long
    act_onehot: torch.Tensor  # [B, T, |Y|]
    mask: torch.Tensor  # [B, T]
    noise: torch.Tensor  # [B, ...]

    @property
    def lengths(self) -> torch.Tensor:
        return self.mask.sum(1)

    def prev_onehot(self) -> torch.Tensor:
        """Action preceding each step, zeros at t = 1."""
        a = self.act_onehot
        return torch.cat([torch.zeros_like(a[:, :1]), a[:, :-1]], dim=1)


def collate(trajectories: Sequence[Trajectory], n_actions: int, noise: np.ndarray | None = None) -> SequenceBatch:
    B = len(trajectories)
    T = max(t.length for t in trajectories)
    ds = trajectories[0].static.shape[0]
    dx = trajectories[0].observations.shape[1]
    static = np.zeros((B, ds))
    obs = np.zeros((B, T, dx))
    actions = np.zeros((B, T), dtype=np.int64)
    mask = np.zeros((B, T))
    for i, tr in enumerate(trajectories):
        L = tr.length
        static[i] = tr.static
        obs[i, :L] = tr.observations
        actions[i, :L] = tr.actions
        mask[i, :L] = 1.0
    act = torch.as_tensor(actions)
    onehot = torch.nn.functional.one_hot(act, n_actions).to(DTYPE)
    noise_t = tensor(noise) if noise is not None else torch.zeros((B, 0), dtype=DTYPE)
    return SequenceBatch(tensor(static), tensor(obs), act, onehot, tensor(mask), noise_t)


def history_batch(schema: DomainSchema, static, observations, actions) -> SequenceBatch:
    """Single-row batch for a history (x_1..x_t, y_1..y_t), with dimension checks."""
    static = np.asarray(static, dtype=np.float64)
    obs = np.asarray(observations, dtype=np.float64)
    acts = np.asarray(actions, dtype=np.int64)
    if static.shape != (schema.static_space.dim,):
        raise DimensionError(f"static has shape {static.shape}, expected ({schema.static_space.dim},)")
    if obs.ndim != 2 or obs.shape[0] < 1 or obs.shape[1] != schema.temporal_space.dim:
        raise DimensionError(f"history has shape {obs.shape}, expected (t >= 1, {schema.temporal_space.dim})")
    if acts.shape != (obs.shape[0],):
        raise DimensionError("history needs one action per observation")
    if acts.min() < 0 or acts.max() >= schema.n_actions:
        raise DimensionError("action index outside the action space")
    return collate([Trajectory(static, obs, acts)], schema.n_actions)


@dataclass(frozen=True)
class StepDistribution:
    """Finite mixture of heads: the law of the next observation."""

    head: DistributionHead
    weights: np.ndarray  # [K]
    params: np.ndarray  # [K, P]

    def log_prob(self, x) -> float:
        with torch.no_grad():
            lp = self.head.log_prob(tensor(self.params), tensor(np.broadcast_to(x, (len(self.weights), self.head.dim))))
        return float(logsumexp(lp.numpy(), b=self.weights))

    def sample(self, rng: np.random.Generator) -> np.ndarray:
        k = sample_categorical(self.weights, rng) if len(self.weights) > 1 else 0
        return self.head.sample(self.params[k], rng)

    def mean(self) -> np.ndarray:
        return self.weights @ self.head.mean(self.params)


@dataclass(frozen=True, eq=False)
class InitModel:
    """P(x_s) P(x_1 | x_s): gaussian/bernoulli statics, linear-gaussian/logistic first step."""

    static_mean: np.ndarray  # [sc]
    static_chol: np.ndarray  # [sc, sc]
    static_prob: np.ndarray  # [sb]
    first_weight: np.ndarray  # [xc, ds]
    first_bias: np.ndarray  # [xc]
    first_chol: np.ndarray  # [xc, xc]
    first_logit_weight: np.ndarray  # [xb, ds]
    first_logit_bias: np.ndarray  # [xb]

    def __post_init__(self):
        for name in self.__dataclass_fields__:
            arr = np.array(getattr(self, name), dtype=np.float64)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @classmethod
    def standard(cls, schema: DomainSchema) -> "InitModel":
        """Unit gaussians, fair coins, no dependence of x_1 on x_s."""
        ss, xs = schema.static_space, schema.temporal_space
        sc, sb, xc, xb = ss.continuous_dims, ss.binary_dims, xs.continuous_dims, xs.binary_dims
        return cls(
            np.zeros(sc), np.eye(sc), np.full(sb, 0.5),
            np.zeros((xc, ss.dim)), np.zeros(xc), np.eye(xc),
            np.zeros((xb, ss.dim)), np.zeros(xb),
        )

    def sample(self, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
        sc, xc = len(self.static_mean), len(self.first_bias)
        s_c = self.static_mean + self.static_chol @ rng.standard_normal(sc)
        s_b = (rng.random(len(self.static_prob)) < self.static_prob).astype(np.float64)
        x_s = np.concatenate([s_c, s_b])
        x_c = self.first_weight @ x_s + self.first_bias + self.first_chol @ rng.standard_normal(xc)
        p_b = expit(self.first_logit_weight @ x_s + self.first_logit_bias)
        x_b = (rng.random(len(self.first_logit_bias)) < p_b).astype(np.float64)
        return x_s, np.concatenate([x_c, x_b])

    def static_moments(self) -> tuple[np.ndarray, np.ndarray]:
        mean = np.concatenate([self.static_mean, self.static_prob])
        var = np.concatenate(
            [np.sum(self.static_chol**2, axis=1), self.static_prob * (1.0 - self.static_prob)]
        )
        return mean, var

    @classmethod
    def fit(cls, schema: DomainSchema, trajectories: Sequence[Trajectory], ridge: float = 1e-3) -> "InitModel":
        """Closed-form maximum likelihood (ridge-stabilised) from the first step of each trajectory."""
        if not trajectories:
            return cls.standard(schema)
        ss, xs = schema.static_space, schema.temporal_space
        S = np.stack([t.static for t in trajectories])
        X1 = np.stack([t.observations[0] for t in trajectories])
        n = len(trajectories)
        sc, xc = ss.continuous_dims, xs.continuous_dims

        s_cont = S[:, :sc]
        static_mean = s_cont.mean(0)
        static_chol = _chol(np.atleast_2d(np.cov(s_cont, rowvar=False, bias=True)) if n > 1 else np.eye(sc), sc)
        static_prob = np.clip(S[:, sc:].mean(0), 1e-6, 1 - 1e-6)

        design = np.hstack([S, np.ones((n, 1))])
        gram = design.T @ design + ridge * np.eye(design.shape[1])
        coef = np.linalg.solve(gram, design.T @ X1[:, :xc])
        resid = X1[:, :xc] - design @ coef
        first_chol = _chol(resid.T @ resid / n, xc)

        logit_coef = np.stack([_logistic_irls(design, X1[:, xc + j]) for j in range(xs.binary_dims)]) \
            if xs.binary_dims else np.zeros((0, design.shape[1]))
        return cls(
            static_mean, static_chol, static_prob,
            coef[:-1].T, coef[-1], first_chol,
            logit_coef[:, :-1], logit_coef[:, -1],
        )

    def to_dict(self) -> dict:
        return {k: getattr(self, k).tolist() for k in self.__dataclass_fields__}

    @classmethod
    def from_dict(cls, d: dict) -> "InitModel":
        return cls(**{k: np.asarray(v, dtype=np.float64) for k, v in d.items()})

    def digest(self) -> str:
        return sha256_hex(canonical_json(self.to_dict()))


def _chol(cov: np.ndarray, dim: int) -> np.ndarray:
    if dim == 0:
        return np.zeros((0, 0))
    cov = np.asarray(cov).reshape(dim, dim)
    jitter = 1e-9
    while True:
        try:
            return np.linalg.cholesky(cov + jitter * np.eye(dim))
        except np.linalg.LinAlgError:
            jitter *= 10


def _logistic_irls(design: np.ndarray, y: np.ndarray, ridge: float = 1e-2, iters: int = 25) -> np.ndarray:
    w = np.zeros(design.shape[1])
    reg = ridge * np.eye(design.shape[1])
    for _ in range(iters):
        p = expit(design @ w)
        grad = design.T @ (y - p) - ridge * w
        hess = (design * (p * (1 - p))[:, None]).T @ design + reg
        step = np.linalg.solve(hess, grad)
        w = w + step
        if np.max(np.abs(step)) < 1e-10:
            break
    return w


class Simulator(ABC):
    """Live state of one patient under an environment."""

    @abstractmethod
    def step(self, action: int) -> np.ndarray:
        """Advance with y_t and return x_{t+1}."""


class Environment(ABC):
    """Autoregressive environment P(x_{t+1} | x_1..x_t, y_1..y_t, x_s) plus initialisation."""

    kind: ClassVar[str]
    schema: DomainSchema
    params: ParamStore
    init: InitModel

    @property
    def head(self) -> DistributionHead:
        return DistributionHead.factored(self.schema.temporal_space)

    @abstractmethod
    def hyperparameters(self) -> dict: ...

    @abstractmethod
    def with_params(self, params: ParamStore, init: InitModel | None = None) -> "Environment": ...

    @abstractmethod
    def loss(self, params, batch: SequenceBatch) -> torch.Tensor:
        """Per-example training loss [B] (negative log-likelihood or -ELBO per step)."""

    @abstractmethod
    def simulator(self, x_s: np.ndarray, x_1: np.ndarray, rng: np.random.Generator) -> Simulator: ...

    @abstractmethod
    def step_distribution(self, static, observations, actions) -> StepDistribution: ...

    def sample_initial(self, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
        return self.init.sample(rng)

    def config(self) -> dict:
        return {
            "kind": self.kind,
            "schema": self.schema.to_dict(),
            "hyperparameters": self.hyperparameters(),
            "params_digest": self.params.digest(),
            "init_digest": self.init.digest(),
        }

    def digest(self) -> str:
        return sha256_hex(canonical_json(self.config()))
