"""Environments that model the observed history directly."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

import numpy as np
import torch

from ..diff import (
    DTYPE,
    ParamStore,
    gru_cell,
    gru_shapes,
    mlp,
    mlp_shapes,
    dense,
    dense_shapes,
    reverse_gradient,
    run_gru,
    tensor,
)
from ..errors import ConfigError
from ..schema import DomainSchema
from .base import Environment, InitModel, SequenceBatch, Simulator, StepDistribution, history_batch


@dataclass(frozen=True, eq=False)
class TForceModel(Environment):
    """Recurrent next-observation model trained with teacher forcing.

    The cell reads ``[x_t, onehot(y_{t-1}), x_s]`` and its state h_t is the
    history representation; the head reads ``[h_t, onehot(y_t)]`` and emits
    the factored gaussian/bernoulli parameters of x_{t+1}.
    """

    schema: DomainSchema
    params: ParamStore
    init: InitModel
    hidden: int = 32
    dense_sizes: tuple[int, ...] = (32, 32)

    kind = "tforce"

    @classmethod
    def param_shapes(cls, schema: DomainSchema, hidden: int = 32, dense_sizes=(32, 32), **_) -> dict:
        dx, ds, ny = schema.temporal_space.dim, schema.static_space.dim, schema.n_actions
        n_out = 2 * schema.temporal_space.continuous_dims + schema.temporal_space.binary_dims
        shapes = gru_shapes("cell", dx + ny + ds, hidden)
        shapes.update(mlp_shapes("head", (hidden + ny, *dense_sizes, n_out)))
        return shapes

    @classmethod
    def create(cls, schema: DomainSchema, seed: int = 0, init: InitModel | None = None, **hyper):
        hyper.setdefault("hidden", 32)
        hyper["dense_sizes"] = tuple(hyper.get("dense_sizes", (32, 32)))
        params = ParamStore.initialize(cls.param_shapes(schema, **hyper), seed)
        return cls(schema, params, init or InitModel.standard(schema), **hyper)

    def hyperparameters(self) -> dict:
        return {"hidden": self.hidden, "dense_sizes": list(self.dense_sizes)}

    def with_params(self, params, init=None):
        return type(self)(self.schema, params, init or self.init, **self._hyper_kwargs())

    def _hyper_kwargs(self) -> dict:
        return {"hidden": self.hidden, "dense_sizes": self.dense_sizes}

    def _cell_inputs(self, batch: SequenceBatch) -> torch.Tensor:
        T = batch.obs.shape[1]
        static = batch.static.unsqueeze(1).expand(-1, T, -1)
        return torch.cat([batch.obs, batch.prev_onehot(), static], dim=-1)

    def representation(self, p: Mapping, batch: SequenceBatch) -> torch.Tensor:
        return run_gru(p, "cell", self._cell_inputs(batch))

    def head_params(self, p: Mapping, h: torch.Tensor, act_onehot: torch.Tensor) -> torch.Tensor:
        return mlp(p, "head", torch.cat([h, act_onehot], dim=-1))

    def nll(self, p: Mapping, batch: SequenceBatch, h: torch.Tensor | None = None) -> torch.Tensor:
        """Mean per-step NLL of x_2..x_T for each example; zero when T = 1."""
        if h is None:
            h = self.representation(p, batch)
        raw = self.head_params(p, h[:, :-1], batch.act_onehot[:, :-1])
        lp = self.head.log_prob(raw, batch.obs[:, 1:]) * batch.mask[:, 1:]
        count = batch.mask[:, 1:].sum(1).clamp_min(1.0)
        return -lp.sum(1) / count

    def loss(self, p, batch):
        return self.nll(p, batch)

    def step_distribution(self, static, observations, actions) -> StepDistribution:
        batch = history_batch(self.schema, static, observations, actions)
        with torch.no_grad():
            h = self.representation(self.params, batch)
            raw = self.head_params(self.params, h[:, -1], batch.act_onehot[:, -1])
        return StepDistribution(self.head, np.ones(1), raw.numpy().copy())

    def simulator(self, x_s, x_1, rng):
        return _RecurrentSimulator(self, x_s, x_1, rng)


class _RecurrentSimulator(Simulator):
    def __init__(self, model: TForceModel, x_s, x_1, rng):
        self.model = model
        self.rng = rng
        self.static = tensor(x_s).reshape(1, -1)
        self.ny = model.schema.n_actions
        with torch.no_grad():
            u = torch.cat([tensor(x_1).reshape(1, -1), torch.zeros((1, self.ny), dtype=DTYPE), self.static], -1)
            self.h = gru_cell(model.params, "cell", u, torch.zeros((1, model.hidden), dtype=DTYPE))

    def step(self, action: int) -> np.ndarray:
        onehot = torch.zeros((1, self.ny), dtype=DTYPE)
        onehot[0, int(action)] = 1.0
        with torch.no_grad():
            raw = self.model.head_params(self.model.params, self.h, onehot)
            x = self.model.head.sample(raw[0], self.rng)
            u = torch.cat([tensor(x).reshape(1, -1), onehot, self.static], -1)
            self.h = gru_cell(self.model.params, "cell", u, self.h)
        return x


@dataclass(frozen=True, eq=False)
class BalancedModel(TForceModel):
    """Teacher-forced model with an adversarially balanced history representation.

    An action classifier reads h_t through a gradient-reversal layer: the
    classifier minimises its cross-entropy while the representation receives
    ``-balance`` times that gradient.  ``balance = 0`` trains exactly like
    :class:`TForceModel` apart from the (detached) classifier itself.
    """

    balance: float = 1.0

    kind = "balanced"

    def __post_init__(self):
        if self.balance < 0:
            raise ConfigError("balance weight must be >= 0", "balance")

    @classmethod
    def param_shapes(cls, schema, hidden=32, dense_sizes=(32, 32), **_):
        shapes = TForceModel.param_shapes(schema, hidden, dense_sizes)
        shapes.update(dense_shapes("adv", hidden, schema.n_actions))
        return shapes

    @classmethod
    def create(cls, schema, seed=0, init=None, **hyper):
        hyper.setdefault("balance", 1.0)
        return super().create(schema, seed, init, **hyper)

    def hyperparameters(self):
        return {**super().hyperparameters(), "balance": self.balance}

    def _hyper_kwargs(self):
        return {**super()._hyper_kwargs(), "balance": self.balance}

    def action_nll(self, p: Mapping, batch: SequenceBatch, h: torch.Tensor) -> torch.Tensor:
        """Mean cross-entropy of predicting y_t from h_t, per example."""
        logp = torch.log_softmax(dense(p, "adv", h), dim=-1)
        ce = -(logp * batch.act_onehot).sum(-1) * batch.mask
        return ce.sum(1) / batch.mask.sum(1).clamp_min(1.0)

    def action_accuracy(self, batch: SequenceBatch, p: Mapping | None = None) -> float:
        p = self.params if p is None else p
        with torch.no_grad():
            h = self.representation(p, batch)
            pred = dense(p, "adv", h).argmax(-1)
            hit = (pred == batch.actions).to(DTYPE) * batch.mask
        return float(hit.sum() / batch.mask.sum())

    def loss(self, p, batch):
        h = self.representation(p, batch)
        return self.nll(p, batch, h) + self.action_nll(p, batch, reverse_gradient(h, self.balance))


def balanced_repr_loss(m: BalancedModel, batch: SequenceBatch, params: Mapping | None = None):
    """(next-observation NLL, action-prediction NLL), each per example.

    The balanced objective reported to users is ``nll - balance * adv``.
    """
    p = m.params if params is None else params
    h = m.representation(p, batch)
    return m.nll(p, batch, h), m.action_nll(p, batch, h)
