"""Attentive discrete state-space environment.

Latent stages z_t in {0..Z-1} evolve as

    p(z_t | z_1..z_{t-1}, y_1..y_{t-1}) = sum_k alpha_k P_{y_{t-k}}[z_{t-k}, z_t]

with one row-stochastic matrix P_y per action and attention weights alpha
over lags k = 1..t-1.  Observations are emitted by a network of
(onehot(z_t), x_s).  Every supported attention spec has a finite window W,
so the exact likelihood is a forward recursion over the last W latents.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np
import torch
from scipy.optimize import linear_sum_assignment
from scipy.special import logsumexp

from ..diff import (
    DTYPE,
    PROB_FLOOR,
    ParamStore,
    gru_shapes,
    mlp,
    mlp_shapes,
    run_gru,
    sample_categorical,
    softmax_np,
    tensor,
)
from ..errors import ConfigError, SizeError
from ..schema import DomainSchema, Trajectory
from .base import Environment, InitModel, SequenceBatch, Simulator, StepDistribution, collate, history_batch

ENUMERATION_LIMIT = 10**6


@dataclass(frozen=True)
class Attention:
    """How past (state, action) pairs are weighted in the transition.

    ``markov``: all mass on lag 1.  ``fixed``: explicit weights over lags
    1..len(weights); mass of lags not yet available folds onto the oldest
    available lag.  ``window``: softmax of logits over the last ``window``
    lags (uniform unless ``learned``).
    """

    mode: str = "markov"
    weights: tuple[float, ...] = ()
    window: int = 1
    learned: bool = False

    def __post_init__(self):
        object.__setattr__(self, "weights", tuple(float(w) for w in self.weights))
        if self.mode == "markov":
            if self.learned or self.weights:
                raise ConfigError("markov attention takes no weights", "attention")
        elif self.mode == "fixed":
            w = np.asarray(self.weights)
            if w.size == 0 or np.any(w < 0) or not np.all(np.isfinite(w)) or w.sum() <= 0:
                raise ConfigError("fixed attention needs non-negative weights with positive sum", "attention.weights")
            if self.learned:
                raise ConfigError("fixed attention cannot be learned", "attention.learned")
        elif self.mode == "window":
            if self.window < 1:
                raise ConfigError("attention window must be >= 1", "attention.window")
        else:
            raise ConfigError(f"unknown attention mode {self.mode!r}", "attention.mode")

    @property
    def width(self) -> int:
        if self.mode == "markov":
            return 1
        if self.mode == "fixed":
            return len(self.weights)
        return self.window

    def to_dict(self) -> dict:
        return {"mode": self.mode, "weights": list(self.weights), "window": self.window, "learned": self.learned}

    @classmethod
    def from_dict(cls, d: dict | str) -> "Attention":
        if d == "markov":
            return cls()
        return cls(d.get("mode", "markov"), tuple(d.get("weights", ())), int(d.get("window", 1)), bool(d.get("learned", False)))


def _available_weights(spec: Attention, m: int, logits) -> list:
    """Weights over the m available lags (1..m), as a list of scalars/tensors."""
    if spec.mode == "markov":
        return [1.0] + [0.0] * (m - 1)
    if spec.mode == "fixed":
        w = np.asarray(spec.weights) / math.fsum(spec.weights)
        head = list(w[: m - 1])
        return head + [math.fsum(w[m - 1 :])]
    z = logits[:m]
    if isinstance(z, torch.Tensor):
        return list(torch.softmax(z, dim=0).unbind(0))
    return list(softmax_np(z))


def css_attention(spec: Attention, t: int, logits=None) -> np.ndarray:
    """Attention weights at time t over lags 1..t-1 (lag 1 = previous step)."""
    if t < 2:
        raise ConfigError("attention is defined for t >= 2", "t")
    if logits is None:
        logits = np.zeros(spec.width)
    logits = np.asarray(logits, dtype=np.float64)
    m = min(spec.width, t - 1)
    out = np.zeros(t - 1)
    out[:m] = [float(w) for w in _available_weights(spec, m, logits)]
    return out


@dataclass(frozen=True, eq=False)
class CssModel(Environment):
    schema: DomainSchema
    params: ParamStore
    init: InitModel
    n_states: int = 3
    attention: Attention = Attention()
    emission_hidden: tuple[int, ...] = (32,)

    kind = "css"

    def __post_init__(self):
        if self.n_states < 2:
            raise ConfigError("CSS needs at least two latent states", "n_states")

    # ------------------------------------------------------------ setup

    @classmethod
    def param_shapes(cls, schema, n_states=3, attention=Attention(), emission_hidden=(32,), **_):
        Z, ny, ds = n_states, schema.n_actions, schema.static_space.dim
        n_out = 2 * schema.temporal_space.continuous_dims + schema.temporal_space.binary_dims
        shapes = {"init_logits": (Z,), "trans_logits": (ny, Z, Z)}
        if attention.learned:
            shapes["attn_logits"] = (attention.window,)
        shapes.update(mlp_shapes("emit", (Z + ds, *emission_hidden, n_out)))
        return shapes

    @classmethod
    def create(cls, schema, seed=0, init=None, n_states=3, attention=Attention(), emission_hidden=(32,)):
        emission_hidden = tuple(emission_hidden)
        shapes = cls.param_shapes(schema, n_states, attention, emission_hidden)
        params = ParamStore.initialize(shapes, seed)
        if "attn_logits" in params:
            params = params.updated({"attn_logits": torch.zeros(attention.window, dtype=DTYPE)})
        return cls(schema, params, init or InitModel.standard(schema), n_states, attention, emission_hidden)

    @classmethod
    def from_probabilities(
        cls, schema, initial, transitions, emission_params: Mapping, init=None,
        attention=Attention(), emission_hidden=(), attn_logits=None,
    ) -> "CssModel":
        """Hand-specified model from probability tables.

        Zero probabilities map to logit -700 so every row still sums to 1
        within round-off while sampling never reaches them.
        """
        initial = np.asarray(initial, dtype=np.float64)
        transitions = np.asarray(transitions, dtype=np.float64)
        params = {
            "init_logits": _safe_log(initial),
            "trans_logits": _safe_log(transitions),
            **{k: np.asarray(v, dtype=np.float64) for k, v in emission_params.items()},
        }
        if attention.learned:
            params["attn_logits"] = np.zeros(attention.window) if attn_logits is None else np.asarray(attn_logits)
        model = cls(schema, ParamStore(params), init or InitModel.standard(schema), len(initial), attention, tuple(emission_hidden))
        expected = cls.param_shapes(schema, len(initial), attention, tuple(emission_hidden))
        if model.params.shapes != {k: tuple(v) for k, v in expected.items()}:
            raise ConfigError(f"parameter shapes {model.params.shapes} do not match {expected}", "params")
        return model

    def hyperparameters(self):
        return {
            "n_states": self.n_states,
            "attention": self.attention.to_dict(),
            "emission_hidden": list(self.emission_hidden),
        }

    def with_params(self, params, init=None):
        return CssModel(self.schema, params, init or self.init, self.n_states, self.attention, self.emission_hidden)

    # ------------------------------------------------------ distributions

    def initial_probs(self, p=None) -> torch.Tensor:
        p = self.params if p is None else p
        return torch.softmax(p["init_logits"], dim=-1)

    def transition_probs(self, p=None) -> torch.Tensor:
        """[|Y|, Z, Z] row-stochastic baseline matrices."""
        p = self.params if p is None else p
        return torch.softmax(p["trans_logits"], dim=-1)

    def _attn_logits(self, p):
        if self.attention.learned:
            return p["attn_logits"]
        return torch.zeros(self.attention.width, dtype=DTYPE)

    def attention_weights(self, t: int, p=None) -> np.ndarray:
        p = self.params if p is None else p
        with torch.no_grad():
            logits = self._attn_logits(p).numpy()
        return css_attention(self.attention, t, logits)

    def emission_raw(self, p, static: torch.Tensor) -> torch.Tensor:
        """Head parameters for every state: [B, Z, P]."""
        B, Z = static.shape[0], self.n_states
        eye = torch.eye(Z, dtype=DTYPE).unsqueeze(0).expand(B, Z, Z)
        s = static.unsqueeze(1).expand(B, Z, static.shape[-1])
        return mlp(p, "emit", torch.cat([eye, s], dim=-1))

    def emission_logp(self, p, batch: SequenceBatch) -> torch.Tensor:
        """log p(x_t | z, x_s) for every step and state: [B, T, Z]."""
        raw = self.emission_raw(p, batch.static)  # [B, Z, P]
        B, T = batch.obs.shape[:2]
        Z = self.n_states
        raw_e = raw.unsqueeze(1).expand(B, T, Z, raw.shape[-1])
        obs_e = batch.obs.unsqueeze(2).expand(B, T, Z, batch.obs.shape[-1])
        return self.head.log_prob(raw_e, obs_e)

    # ---------------------------------------------------- exact inference

    def _log_transition(self, P: torch.Tensor, alphas: list, actions: torch.Tensor, t: int, K: int) -> torch.Tensor:
        """log p(z_t | window) as [B, Z_new, Z_{t-1}, ..., Z_{t-K}] (0-based t)."""
        B, Z = actions.shape[0], self.n_states
        acc = None
        for k in range(1, len(alphas) + 1):
            Pk = P[actions[:, t - k]].transpose(1, 2)  # [B, Z_new, Z_from]
            shape = [B, Z] + [1] * (k - 1) + [Z] + [1] * (K - k)
            term = alphas[k - 1] * Pk.reshape(shape)
            acc = term if acc is None else acc + term
        return torch.log(acc.clamp_min(PROB_FLOOR))

    def _check_size(self, keep: int) -> None:
        if self.n_states ** (keep + 1) > ENUMERATION_LIMIT:
            raise SizeError(
                f"exact inference needs {self.n_states}^{keep + 1} joint states "
                f"(> {ENUMERATION_LIMIT}); use the ELBO instead"
            )

    def _forward(self, p, batch: SequenceBatch, keep: int):
        """Run the windowed forward recursion; returns (loglik [B], final message)."""
        self._check_size(keep)
        log_pi = torch.log_softmax(p["init_logits"], dim=-1)
        P = torch.softmax(p["trans_logits"], dim=-1)
        logits = self._attn_logits(p)
        E = self.emission_logp(p, batch)
        B, T, Z = E.shape
        lengths = batch.lengths
        msg = log_pi.unsqueeze(0) + E[:, 0]
        loglik = torch.where(lengths == 1, torch.logsumexp(msg, dim=-1), torch.zeros(B, dtype=DTYPE))
        W = self.attention.width
        for t in range(1, T):
            K = msg.dim() - 1
            alphas = _available_weights(self.attention, min(W, t), logits)
            logtrans = self._log_transition(P, alphas, batch.actions, t, K)
            new = msg.unsqueeze(1) + logtrans + E[:, t].reshape([B, Z] + [1] * K)
            if K + 1 > keep:
                new = torch.logsumexp(new, dim=-1)
            msg = new
            total = torch.logsumexp(msg.reshape(B, -1), dim=-1)
            loglik = torch.where(lengths == t + 1, total, loglik)
        return loglik, msg

    def log_likelihood(self, p, batch: SequenceBatch) -> torch.Tensor:
        keep = max(1, min(self.attention.width, batch.obs.shape[1] - 1))
        return self._forward(p, batch, keep)[0]

    def loss(self, p, batch):
        return -self.log_likelihood(p, batch) / batch.lengths

    def step_distribution(self, static, observations, actions) -> StepDistribution:
        batch = history_batch(self.schema, static, observations, actions)
        T = batch.obs.shape[1]
        keep = min(self.attention.width, T)
        p = self.params
        with torch.no_grad():
            _, msg = self._forward(p, batch, keep)
            msg = msg - torch.logsumexp(msg.reshape(-1), dim=0)
            alphas = _available_weights(self.attention, min(self.attention.width, T), self._attn_logits(p))
            K = msg.dim() - 1
            actions_ext = torch.cat([batch.actions, batch.actions[:, :1]], dim=1)
            logtrans = self._log_transition(self.transition_probs(p), alphas, actions_ext, T, K)
            pred = torch.logsumexp((msg.unsqueeze(1) + logtrans).reshape(1, self.n_states, -1), dim=-1)[0]
            raw = self.emission_raw(p, batch.static)[0]
        w = np.exp(pred.numpy() - logsumexp(pred.numpy()))
        return StepDistribution(self.head, w / w.sum(), raw.numpy().copy())

    def simulator(self, x_s, x_1, rng):
        return _CssSimulator(self, x_s, x_1, rng)

    # ---------------------------------------------- paths (small instances)

    def log_joint(self, p, trajectory: Trajectory, paths) -> torch.Tensor:
        """log p(x_1..x_T, z_1..z_T | y, x_s) for each row of ``paths`` [n, T]."""
        batch = collate([trajectory], self.schema.n_actions)
        paths = torch.as_tensor(np.asarray(paths), dtype=torch.long)
        return self._log_joint_batch(p, batch, paths.unsqueeze(0))[0]

    def _log_joint_batch(self, p, batch: SequenceBatch, paths: torch.Tensor) -> torch.Tensor:
        """paths [B, S, T] -> log joint [B, S] (masked beyond each length)."""
        log_pi = torch.log_softmax(p["init_logits"], dim=-1)
        P = torch.softmax(p["trans_logits"], dim=-1)
        logits = self._attn_logits(p)
        E = self.emission_logp(p, batch)  # [B, T, Z]
        B, S, T = paths.shape
        mask = batch.mask
        out = log_pi[paths[:, :, 0]] + E[:, 0].gather(1, paths[:, :, 0])
        W = self.attention.width
        for t in range(1, T):
            alphas = _available_weights(self.attention, min(W, t), logits)
            prob = None
            for k in range(1, len(alphas) + 1):
                y = batch.actions[:, t - k].unsqueeze(1).expand(B, S)
                term = alphas[k - 1] * P[y, paths[:, :, t - k], paths[:, :, t]]
                prob = term if prob is None else prob + term
            step = torch.log(prob.clamp_min(PROB_FLOOR)) + E[:, t].gather(1, paths[:, :, t])
            out = out + step * mask[:, t : t + 1]
        return out


def _safe_log(p: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore"):
        return np.where(p > 0, np.log(np.where(p > 0, p, 1.0)), -700.0)


class _CssSimulator(Simulator):
    def __init__(self, model: CssModel, x_s, x_1, rng):
        self.model = model
        self.rng = rng
        p = model.params
        with torch.no_grad():
            static = tensor(x_s).reshape(1, -1)
            self.raw = model.emission_raw(p, static)[0].numpy().copy()
            self.P = model.transition_probs(p).numpy().copy()
            self.attn_logits = model._attn_logits(p).numpy().copy()
            Z = model.n_states
            lp = model.head.log_prob(tensor(self.raw), tensor(np.broadcast_to(x_1, (Z, len(x_1)))))
            post = torch.log_softmax(p["init_logits"], -1) + lp
        post = post.numpy()
        self.z = [sample_categorical(np.exp(post - logsumexp(post)), rng)]
        self.y: list[int] = []

    def step(self, action: int) -> np.ndarray:
        self.y.append(int(action))
        t = len(self.z) + 1  # 1-based index of the state being drawn
        alpha = css_attention(self.model.attention, t, self.attn_logits)
        probs = np.zeros(self.model.n_states)
        for k, a in enumerate(alpha, start=1):
            if a:
                probs += a * self.P[self.y[-k], self.z[-k]]
        z = sample_categorical(probs, self.rng)
        self.z.append(z)
        return self.model.head.sample(self.raw[z], self.rng)


# ------------------------------------------------------------ variational


@dataclass(frozen=True)
class MarkovPosterior:
    """q(z_1) prod_t q(z_t | z_{t-1}) given as probability tables."""

    first: np.ndarray  # [Z]
    trans: np.ndarray  # [T-1, Z, Z]

    @property
    def length(self) -> int:
        return self.trans.shape[0] + 1

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        T = self.length
        u = rng.random((n, T))
        paths = np.zeros((n, T), dtype=np.int64)
        paths[:, 0] = _inverse_cdf(self.first[None, :].repeat(n, 0), u[:, 0])
        for t in range(1, T):
            paths[:, t] = _inverse_cdf(self.trans[t - 1][paths[:, t - 1]], u[:, t])
        return paths

    def log_prob(self, paths) -> np.ndarray:
        paths = np.asarray(paths)
        with np.errstate(divide="ignore"):
            out = np.log(self.first[paths[:, 0]])
            for t in range(1, paths.shape[1]):
                out = out + np.log(self.trans[t - 1][paths[:, t - 1], paths[:, t]])
        return out


@dataclass(frozen=True)
class PathPosterior:
    """Explicit distribution over whole latent paths."""

    paths: np.ndarray  # [N, T]
    probs: np.ndarray  # [N]

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        idx = _inverse_cdf(np.broadcast_to(self.probs, (n, len(self.probs))), rng.random(n))
        return self.paths[idx]

    def log_prob(self, paths) -> np.ndarray:
        lookup = {tuple(p): i for i, p in enumerate(self.paths.tolist())}
        idx = np.array([lookup[tuple(p)] for p in np.asarray(paths).tolist()])
        with np.errstate(divide="ignore"):
            return np.log(self.probs[idx])


def _inverse_cdf(probs: np.ndarray, u: np.ndarray) -> np.ndarray:
    cdf = np.cumsum(probs, axis=-1)
    idx = (u[:, None] >= cdf).sum(-1)
    return np.minimum(idx, probs.shape[-1] - 1)


def all_paths(n_states: int, T: int) -> np.ndarray:
    if n_states**T > ENUMERATION_LIMIT:
        raise SizeError(f"{n_states}^{T} paths exceed the enumeration limit; use the ELBO")
    return np.array(list(itertools.product(range(n_states), repeat=T)), dtype=np.int64).reshape(-1, T)


def exact_posterior(model: CssModel, trajectory: Trajectory) -> PathPosterior:
    paths = all_paths(model.n_states, trajectory.length)
    with torch.no_grad():
        lj = model.log_joint(model.params, trajectory, paths).numpy()
    return PathPosterior(paths, np.exp(lj - logsumexp(lj)))


class CssInferenceNet:
    """Backward GRU summary of (x_t.., y_t..) plus a combiner of (z_{t-1}, summary)."""

    def __init__(self, model: CssModel, hidden: int = 16, seed: int = 0, params: ParamStore | None = None):
        self.model = model
        self.hidden = hidden
        dx, ny, ds = model.schema.temporal_space.dim, model.schema.n_actions, model.schema.static_space.dim
        shapes = gru_shapes("enc.cell", dx + ny + ds, hidden)
        shapes.update(mlp_shapes("enc.comb", (model.n_states + hidden, hidden, model.n_states)))
        self.params = params if params is not None else ParamStore.initialize(shapes, seed)

    def tables(self, p, batch: SequenceBatch) -> tuple[torch.Tensor, torch.Tensor]:
        """Log-probability tables: first [B, Z], trans [B, T, Z_prev, Z]."""
        B, T = batch.obs.shape[:2]
        Z = self.model.n_states
        static = batch.static.unsqueeze(1).expand(-1, T, -1)
        u = torch.cat([batch.obs, batch.act_onehot, static], dim=-1)
        h = run_gru(p, "enc.cell", u, reverse=True, mask=batch.mask)  # [B, T, H]
        first = torch.log_softmax(mlp(p, "enc.comb", torch.cat([torch.zeros(B, Z, dtype=DTYPE), h[:, 0]], -1)), -1)
        eye = torch.eye(Z, dtype=DTYPE).reshape(1, 1, Z, Z).expand(B, T, Z, Z)
        hz = h.unsqueeze(2).expand(B, T, Z, h.shape[-1])
        trans = torch.log_softmax(mlp(p, "enc.comb", torch.cat([eye, hz], -1)), -1)
        return first, trans

    def posterior(self, trajectory: Trajectory) -> MarkovPosterior:
        batch = collate([trajectory], self.model.schema.n_actions)
        with torch.no_grad():
            first, trans = self.tables(self.params, batch)
        return MarkovPosterior(np.exp(first[0].numpy()), np.exp(trans[0, 1:].numpy()))


@dataclass(frozen=True)
class ElboEstimate:
    value: float
    stderr: float
    n_mc: int


def css_elbo(model: CssModel, trajectory: Trajectory, q, n_mc: int, rng: np.random.Generator) -> ElboEstimate:
    """Monte Carlo ELBO E_q[log p(x, z | y) - log q(z)] with its standard error."""
    if n_mc < 1:
        raise ConfigError("n_mc must be >= 1", "n_mc")
    paths = q.sample(rng, n_mc)
    with torch.no_grad():
        lj = model.log_joint(model.params, trajectory, paths).numpy()
    f = lj - q.log_prob(paths)
    se = float(f.std(ddof=1) / math.sqrt(n_mc)) if n_mc > 1 else float("inf")
    return ElboEstimate(float(f.mean()), se, n_mc)


def exact_elbo(model: CssModel, p, trajectory: Trajectory, log_q: torch.Tensor, paths: np.ndarray) -> torch.Tensor:
    """sum_z q(z) [log p(x, z) - log q(z)] over an enumerated path set (differentiable)."""
    lj = model.log_joint(p, trajectory, paths)
    q = torch.exp(log_q)
    return (q * (lj - log_q)).sum()


def markov_log_q(first: torch.Tensor, trans: torch.Tensor, paths: torch.Tensor) -> torch.Tensor:
    """log q of paths [S, T] under tables first [Z], trans [T, Z, Z] (row t used for z_t)."""
    out = first[paths[:, 0]]
    for t in range(1, paths.shape[1]):
        out = out + trans[t, paths[:, t - 1], paths[:, t]]
    return out


class CssVariationalObjective:
    """Score-function ELBO surrogate for joint training of model and inference net.

    Batches carry uniforms [B, S, T] in ``noise``; paths are drawn by
    inverse CDF from the inference tables.  The surrogate's gradient is
    unbiased for the ELBO gradient; a leave-one-out baseline reduces its
    variance.  Returned per-example losses are -surrogate / length.
    """

    def __init__(self, model: CssModel, net: CssInferenceNet):
        self.model = model
        self.net = net

    def __call__(self, p, batch: SequenceBatch) -> torch.Tensor:
        first, trans = self.net.tables(p, batch)
        u = batch.noise  # [B, S, T]
        B, S, T = u.shape
        with torch.no_grad():
            paths = torch.zeros((B, S, T), dtype=torch.long)
            cdf0 = torch.cumsum(torch.exp(first), -1)  # [B, Z]
            paths[:, :, 0] = (u[:, :, 0:1] >= cdf0.unsqueeze(1)).sum(-1).clamp_max(self.model.n_states - 1)
            for t in range(1, T):
                rows = torch.exp(trans[:, t]).gather(1, paths[:, :, t - 1].unsqueeze(-1).expand(B, S, self.model.n_states))
                cdf = torch.cumsum(rows, -1)
                paths[:, :, t] = (u[:, :, t : t + 1] >= cdf).sum(-1).clamp_max(self.model.n_states - 1)
        log_q = first.gather(1, paths[:, :, 0])
        for t in range(1, T):
            step = trans[:, t].gather(1, paths[:, :, t - 1].unsqueeze(-1).expand(B, S, self.model.n_states))
            log_q = log_q + step.gather(2, paths[:, :, t : t + 1]).squeeze(-1) * batch.mask[:, t : t + 1]
        log_p = self.model._log_joint_batch(p, batch, paths)
        f = log_p - log_q
        fd = f.detach()
        baseline = (fd.sum(1, keepdim=True) - fd) / max(S - 1, 1)
        surrogate = (f + (fd - baseline) * log_q).mean(1)
        return -surrogate / batch.lengths

    def elbo(self, p, batch: SequenceBatch) -> torch.Tensor:
        """Plain MC ELBO per example from the batch's uniforms (no gradient tricks)."""
        with torch.no_grad():
            first, trans = self.net.tables(p, batch)
        B, S, T = batch.noise.shape
        out = []
        for b in range(B):
            L = int(batch.lengths[b])
            q = MarkovPosterior(np.exp(first[b].numpy()), np.exp(trans[b, 1:L].numpy()))
            u = batch.noise[b, :, :L].numpy()
            paths = np.zeros((S, L), dtype=np.int64)
            paths[:, 0] = _inverse_cdf(np.broadcast_to(q.first, (S, len(q.first))), u[:, 0])
            for t in range(1, L):
                paths[:, t] = _inverse_cdf(q.trans[t - 1][paths[:, t - 1]], u[:, t])
            tr = Trajectory(batch.static[b].numpy(), batch.obs[b, :L].numpy(), batch.actions[b, :L].numpy())
            with torch.no_grad():
                lj = self.model.log_joint(p, tr, paths).numpy()
            out.append(float(np.mean(lj - q.log_prob(paths))))
        return torch.tensor(out, dtype=DTYPE)


def align_transitions(estimated: np.ndarray, truth: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Match estimated latent states to true ones and report row-wise TV.

    Relabelling moves rows and columns together, so the total row TV is
    minimised over all permutations for Z <= 6; larger state spaces use a
    Hungarian assignment on sorted rows.  Returns (perm, tv) where
    ``perm[i]`` is the estimated state playing true state i and ``tv`` has
    shape [|Y|, Z].
    """
    estimated, truth = np.asarray(estimated), np.asarray(truth)
    Z = truth.shape[-1]
    best = None
    if Z <= 6:
        for perm in itertools.permutations(range(Z)):
            p = np.array(perm)
            tv = 0.5 * np.abs(estimated[:, p][:, :, p] - truth).sum(-1)
            if best is None or tv.sum() < best[1].sum():
                best = (p, tv)
        return best
    cost = np.zeros((Z, Z))
    for i in range(Z):
        for j in range(Z):
            cost[i, j] = np.abs(np.sort(estimated[:, j], -1) - np.sort(truth[:, i], -1)).sum()
    _, cols = linear_sum_assignment(cost)
    p = np.asarray(cols)
    return p, 0.5 * np.abs(estimated[:, p][:, :, p] - truth).sum(-1)
