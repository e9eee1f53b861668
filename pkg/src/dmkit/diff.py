"""Small differentiable toolkit: parameters, layers, heads, losses and SGD.

Models in dmkit are written functionally: a network is a frozen description
of shapes, and its parameters live in a :class:`ParamStore`.  Gradients come
from torch autograd on float64 tensors; everything runs on the CPU.
"""
from __future__ import annotations

import json
import math
from collections.abc import Mapping
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Callable, Iterator, Sequence

import numpy as np
import torch
import torch.nn.functional as F
from scipy.special import expit

from .errors import ConfigError, DimensionError, DomainError, IntegrityError, TrainingError
from .rng import keyed_rng
from .schema import FeatureSpace, canonical_json, sha256_hex

DTYPE = torch.float64
LOG_2PI = math.log(2.0 * math.pi)
LOGVAR_MIN, LOGVAR_MAX = -10.0, 10.0
PROB_FLOOR = 1e-12


def tensor(x) -> torch.Tensor:
    if isinstance(x, torch.Tensor):
        return x.to(DTYPE)
    arr = np.asarray(x, dtype=np.float64)
    if not arr.flags.writeable:
        arr = arr.copy()
    return torch.as_tensor(arr)


class ParamStore(Mapping):
    """Named float64 tensors with fixed shapes.

    Stores are treated as values: updates return a new store.
    """

    def __init__(self, tensors: Mapping, seed: int | None = None):
        self._t: dict[str, torch.Tensor] = {}
        for name, value in tensors.items():
            t = tensor(value).detach().clone()
            if not torch.isfinite(t).all():
                raise TrainingError(f"parameter {name!r} holds non-finite values")
            self._t[name] = t
        self.seed = seed

    @classmethod
    def initialize(cls, shapes: Mapping[str, tuple], seed: int) -> "ParamStore":
        """Glorot-uniform for ``*weight`` matrices, N(0, 0.1^2) for ``*logits``, zeros otherwise.

        Each entry draws from its own stream keyed by (seed, name).
        """
        out = {}
        for name, shape in shapes.items():
            shape = tuple(int(s) for s in shape)
            rng = keyed_rng("param-init", seed, name)
            if name.endswith("weight") and len(shape) == 2:
                bound = math.sqrt(6.0 / (shape[0] + shape[1]))
                out[name] = rng.uniform(-bound, bound, size=shape)
            elif name.endswith("logits"):
                out[name] = 0.1 * rng.standard_normal(shape)
            else:
                out[name] = np.zeros(shape)
        return cls(out, seed=seed)

    def __getitem__(self, name: str) -> torch.Tensor:
        return self._t[name]

    def __iter__(self) -> Iterator[str]:
        return iter(self._t)

    def __len__(self) -> int:
        return len(self._t)

    @property
    def shapes(self) -> dict[str, tuple[int, ...]]:
        return {k: tuple(v.shape) for k, v in self._t.items()}

    def numel(self) -> int:
        return sum(v.numel() for v in self._t.values())

    def leaves(self) -> dict[str, torch.Tensor]:
        """Fresh copies that require grad, for building an autograd graph."""
        return {k: v.clone().requires_grad_(True) for k, v in self._t.items()}

    def updated(self, values: Mapping) -> "ParamStore":
        new = dict(self._t)
        for name, value in values.items():
            if name not in self._t:
                raise DimensionError(f"unknown parameter {name!r}")
            v = tensor(value)
            if tuple(v.shape) != tuple(self._t[name].shape):
                raise DimensionError(
                    f"parameter {name!r}: shape {tuple(v.shape)} != {tuple(self._t[name].shape)}"
                )
            new[name] = v
        return ParamStore(new, seed=self.seed)

    def flatten(self) -> np.ndarray:
        if not self._t:
            return np.zeros(0)
        return np.concatenate([v.numpy().ravel() for v in self._t.values()])

    def from_flat(self, vector) -> "ParamStore":
        vector = np.asarray(vector, dtype=np.float64)
        if vector.size != self.numel():
            raise DimensionError(f"expected {self.numel()} values, got {vector.size}")
        out, i = {}, 0
        for name, v in self._t.items():
            n = v.numel()
            out[name] = vector[i : i + n].reshape(tuple(v.shape))
            i += n
        return ParamStore(out, seed=self.seed)

    def to_dict(self) -> dict:
        return {
            "shapes": {k: list(v.shape) for k, v in self._t.items()},
            "values": {k: v.numpy().ravel().tolist() for k, v in self._t.items()},
        }

    @classmethod
    def from_dict(cls, d: dict, seed: int | None = None) -> "ParamStore":
        out = {}
        for name, shape in d["shapes"].items():
            out[name] = np.asarray(d["values"][name], dtype=np.float64).reshape(shape)
        return cls(out, seed=seed)

    def digest(self) -> str:
        return sha256_hex(canonical_json(self.to_dict()))

    def bit_equal(self, other: "ParamStore") -> bool:
        if set(self) != set(other):
            return False
        return all(
            self[k].shape == other[k].shape and self[k].numpy().tobytes() == other[k].numpy().tobytes()
            for k in self
        )


# ---------------------------------------------------------------- layers


def dense_shapes(prefix: str, n_in: int, n_out: int) -> dict:
    return {f"{prefix}.weight": (n_out, n_in), f"{prefix}.bias": (n_out,)}


def dense(p: Mapping, prefix: str, x: torch.Tensor) -> torch.Tensor:
    return x @ p[f"{prefix}.weight"].T + p[f"{prefix}.bias"]


def elu(x: torch.Tensor) -> torch.Tensor:
    # torch treats 0 as the negative branch, whose slope exp(0) = 1 matches the positive branch.
    return F.elu(x)


def mlp_shapes(prefix: str, sizes: Sequence[int]) -> dict:
    out = {}
    for i, (a, b) in enumerate(zip(sizes[:-1], sizes[1:])):
        out.update(dense_shapes(f"{prefix}.{i}", a, b))
    return out


def mlp(p: Mapping, prefix: str, x: torch.Tensor) -> torch.Tensor:
    """Dense stack with ELU between layers and a linear output."""
    i = 0
    while f"{prefix}.{i + 1}.weight" in p:
        x = elu(dense(p, f"{prefix}.{i}", x))
        i += 1
    return dense(p, f"{prefix}.{i}", x)


def gru_shapes(prefix: str, n_in: int, n_hidden: int) -> dict:
    return {
        f"{prefix}.input_weight": (3 * n_hidden, n_in),
        f"{prefix}.hidden_weight": (3 * n_hidden, n_hidden),
        f"{prefix}.bias": (3 * n_hidden,),
    }


def gru_cell(p: Mapping, prefix: str, x: torch.Tensor, h: torch.Tensor) -> torch.Tensor:
    gi = x @ p[f"{prefix}.input_weight"].T + p[f"{prefix}.bias"]
    gh = h @ p[f"{prefix}.hidden_weight"].T
    i_r, i_z, i_n = gi.chunk(3, dim=-1)
    h_r, h_z, h_n = gh.chunk(3, dim=-1)
    r = torch.sigmoid(i_r + h_r)
    z = torch.sigmoid(i_z + h_z)
    n = torch.tanh(i_n + r * h_n)
    return (1.0 - z) * n + z * h


def gru_hidden_size(p: Mapping, prefix: str) -> int:
    return p[f"{prefix}.hidden_weight"].shape[1]


def run_gru(
    p: Mapping, prefix: str, inputs: torch.Tensor, reverse: bool = False, mask: torch.Tensor | None = None
) -> torch.Tensor:
    """Hidden states for every step of ``inputs`` [B, T, D] -> [B, T, H].

    With ``reverse`` the sequence is consumed from the end, so output t
    summarises steps t..T.  ``mask`` [B, T] freezes the state on padded steps,
    which keeps a reverse pass aligned with each sequence's true end.
    """
    B, T, _ = inputs.shape
    H = gru_hidden_size(p, prefix)
    h = inputs.new_zeros((B, H))
    outs = [None] * T
    order = range(T - 1, -1, -1) if reverse else range(T)
    for t in order:
        h_new = gru_cell(p, prefix, inputs[:, t], h)
        if mask is not None:
            m = mask[:, t : t + 1]
            h_new = m * h_new + (1.0 - m) * h
        h = h_new
        outs[t] = h
    return torch.stack(outs, dim=1)


@dataclass(frozen=True)
class DenseNet:
    sizes: tuple[int, ...]
    prefix: str = "net"

    def shapes(self) -> dict:
        return mlp_shapes(self.prefix, self.sizes)

    def __call__(self, params: Mapping, x: torch.Tensor) -> torch.Tensor:
        return mlp(params, self.prefix, x)

    @property
    def n_in(self) -> int:
        return self.sizes[0]


@dataclass(frozen=True)
class RecurrentNet:
    """GRU cell followed by a dense ELU stack, applied at every step."""

    n_in: int
    n_hidden: int
    dense_sizes: tuple[int, ...]
    n_out: int
    prefix: str = "net"

    def shapes(self) -> dict:
        out = gru_shapes(f"{self.prefix}.cell", self.n_in, self.n_hidden)
        sizes = (self.n_hidden, *self.dense_sizes, self.n_out)
        out.update(mlp_shapes(f"{self.prefix}.head", sizes))
        return out

    def __call__(self, params: Mapping, x: torch.Tensor) -> torch.Tensor:
        hs = run_gru(params, f"{self.prefix}.cell", x)
        return mlp(params, f"{self.prefix}.head", hs)


def forward(net, params: Mapping, inputs) -> torch.Tensor:
    """Evaluate ``net`` on a vector/sequence; raises DimensionError on a width mismatch."""
    x = tensor(inputs)
    squeeze = 0
    if isinstance(net, RecurrentNet):
        while x.dim() < 3:
            x = x.unsqueeze(0)
            squeeze += 1
    elif x.dim() == 1:
        x = x.unsqueeze(0)
        squeeze = 1
    if x.shape[-1] != net.n_in:
        raise DimensionError(f"input width {x.shape[-1]} != network input {net.n_in}")
    out = net(params, x)
    for _ in range(squeeze):
        out = out.squeeze(0)
    return out


# ----------------------------------------------------------------- heads

_HEAD_KINDS = ("gaussian", "bernoulli", "mixed", "categorical")


@dataclass(frozen=True)
class DistributionHead:
    """Parameter layout of an output distribution.

    Factored heads use ``[means(nc), log-variances(nc), logits(nb)]``;
    categorical heads use ``[logits(k)]``.
    """

    kind: str
    n_continuous: int = 0
    n_binary: int = 0
    n_classes: int = 0

    def __post_init__(self):
        if self.kind not in _HEAD_KINDS:
            raise ConfigError(f"unknown head kind {self.kind!r}")
        if self.kind == "categorical":
            if self.n_classes < 2 or self.n_continuous or self.n_binary:
                raise ConfigError("categorical head needs n_classes >= 2 only")
        elif self.n_classes:
            raise ConfigError("factored heads take no n_classes")

    @classmethod
    def factored(cls, space: FeatureSpace) -> "DistributionHead":
        nc, nb = space.continuous_dims, space.binary_dims
        kind = "mixed" if nc and nb else ("gaussian" if nc else "bernoulli")
        return cls(kind, nc, nb)

    @classmethod
    def categorical(cls, k: int) -> "DistributionHead":
        return cls("categorical", n_classes=k)

    @property
    def n_params(self) -> int:
        if self.kind == "categorical":
            return self.n_classes
        return 2 * self.n_continuous + self.n_binary

    @property
    def dim(self) -> int:
        return self.n_continuous + self.n_binary

    def split(self, raw):
        nc = self.n_continuous
        mean = raw[..., :nc]
        logvar = raw[..., nc : 2 * nc]
        logits = raw[..., 2 * nc :]
        if isinstance(raw, torch.Tensor):
            logvar = logvar.clamp(LOGVAR_MIN, LOGVAR_MAX)
        else:
            logvar = np.clip(logvar, LOGVAR_MIN, LOGVAR_MAX)
        return mean, logvar, logits

    def log_prob(self, raw: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
        """Log density/mass per row (summed over the head's dimensions); no support checks."""
        if self.kind == "categorical":
            logp = torch.log_softmax(raw, dim=-1)
            return logp.gather(-1, target.long().unsqueeze(-1)).squeeze(-1)
        mean, logvar, logits = self.split(raw)
        nc = self.n_continuous
        x_c, x_b = target[..., :nc], target[..., nc:]
        out = -0.5 * (LOG_2PI + logvar + (x_c - mean) ** 2 * torch.exp(-logvar))
        total = out.sum(-1)
        if self.n_binary:
            total = total + (x_b * logits - F.softplus(logits)).sum(-1)
        return total

    def sample(self, raw, rng: np.random.Generator) -> np.ndarray:
        """One draw. Consumes exactly nc normals then nb uniforms (or one uniform)."""
        raw = _as_numpy(raw)
        if self.kind == "categorical":
            return np.asarray(sample_categorical(softmax_np(raw), rng))
        mean, logvar, logits = self.split(raw)
        eps = rng.standard_normal(self.n_continuous)
        u = rng.random(self.n_binary)
        x_c = mean + np.exp(0.5 * logvar) * eps
        x_b = (u < expit(logits)).astype(np.float64)
        return np.concatenate([x_c, x_b])

    def mean(self, raw) -> np.ndarray:
        raw = _as_numpy(raw)
        if self.kind == "categorical":
            return softmax_np(raw)
        mean, _, logits = self.split(raw)
        return np.concatenate([mean, expit(logits)], axis=-1)

    def to_dict(self) -> dict:
        return asdict(self)


def _as_numpy(x) -> np.ndarray:
    if isinstance(x, torch.Tensor):
        return x.detach().numpy()
    return np.asarray(x, dtype=np.float64)


def softmax_np(z, axis: int = -1) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    z = z - np.max(z, axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def sample_categorical(p: np.ndarray, rng: np.random.Generator) -> int:
    """Inverse-CDF draw using exactly one uniform."""
    u = rng.random()
    idx = int(np.searchsorted(np.cumsum(p), u, side="right"))
    return min(idx, len(p) - 1)


def nll(head: DistributionHead, params, target) -> torch.Tensor:
    """Exact negative log density/mass, summed over all rows."""
    raw = tensor(params)
    if head.kind == "categorical":
        tgt = torch.as_tensor(np.asarray(_as_numpy(target)), dtype=torch.long)
        if (tgt < 0).any() or (tgt >= head.n_classes).any():
            raise DomainError("categorical target outside 0..k-1")
    else:
        tgt = tensor(target)
        if tgt.shape[-1] != head.dim or raw.shape[-1] != head.n_params:
            raise DimensionError("target/parameter width does not match head")
        binary = tgt[..., head.n_continuous :]
        if ((binary != 0.0) & (binary != 1.0)).any():
            raise DomainError("bernoulli target outside {0, 1}")
    return -head.log_prob(raw, tgt).sum()


def gaussian_kl(mean_q, logvar_q, mean_p, logvar_p) -> torch.Tensor:
    """KL(N(q) || N(p)) for diagonal gaussians, summed over the last axis."""
    return 0.5 * (
        logvar_p - logvar_q + (torch.exp(logvar_q) + (mean_q - mean_p) ** 2) * torch.exp(-logvar_p) - 1.0
    ).sum(-1)


def reverse_gradient(x: torch.Tensor, scale: float) -> torch.Tensor:
    """Identity on the forward pass; multiplies incoming gradients by ``-scale``."""
    stopped = x.detach()
    return stopped - scale * (x - stopped)


# -------------------------------------------------------------- gradients


def value_and_grad(fn: Callable, params: ParamStore, *args, **kwargs) -> tuple[float, ParamStore]:
    """Scalar ``fn(param_dict, *args)`` and its gradient with the store's shapes."""
    leaves = params.leaves()
    loss = fn(leaves, *args, **kwargs)
    if not torch.isfinite(loss):
        raise TrainingError(f"loss is {float(loss.detach())}; cannot differentiate")
    names = list(leaves)
    if loss.requires_grad:
        grads = torch.autograd.grad(loss, [leaves[n] for n in names], allow_unused=True)
    else:
        grads = [None] * len(names)
    out = {
        n: (g.detach() if g is not None else torch.zeros_like(params[n]))
        for n, g in zip(names, grads)
    }
    return float(loss.detach()), ParamStore(out)


def backward(fn: Callable, params: ParamStore, *args, **kwargs) -> ParamStore:
    return value_and_grad(fn, params, *args, **kwargs)[1]


def per_example_grads(example_fn: Callable, params: ParamStore, batch) -> dict[str, torch.Tensor]:
    """Gradients of ``example_fn(params, example)`` for every example in ``batch``.

    ``batch`` is any pytree of tensors sharing a leading batch axis; the
    result maps parameter names to tensors of shape [B, *param_shape].
    """
    from torch.func import grad, vmap

    p = {k: v for k, v in params.items()}
    g = vmap(grad(example_fn), in_dims=(None, 0))(p, batch)
    for name, v in g.items():
        if not torch.isfinite(v).all():
            raise TrainingError(f"non-finite per-example gradient for {name!r}")
    return g


def global_norm(grads: Mapping) -> float:
    return math.sqrt(sum(float((g.double() ** 2).sum()) for g in grads.values()))


def clip_by_norm(grads: Mapping, max_norm: float) -> dict:
    norm = global_norm(grads)
    if norm <= max_norm or norm == 0.0:
        return dict(grads)
    scale = max_norm / norm
    return {k: g * scale for k, g in grads.items()}


def clip_per_example(per_example: Mapping[str, torch.Tensor], clip_norm: float) -> dict:
    """Rescale each example's full gradient to L2 norm at most ``clip_norm``."""
    names = list(per_example)
    B = per_example[names[0]].shape[0]
    sq = torch.zeros(B, dtype=DTYPE)
    for n in names:
        sq = sq + (per_example[n].reshape(B, -1) ** 2).sum(1)
    norms = torch.sqrt(sq)
    factor = torch.where(norms > clip_norm, clip_norm / norms.clamp_min(1e-300), torch.ones_like(norms))
    out = {}
    for n in names:
        shape = (B,) + (1,) * (per_example[n].dim() - 1)
        out[n] = per_example[n] * factor.reshape(shape)
    return out


@dataclass(frozen=True)
class DPConfig:
    clip_norm: float
    noise_multiplier: float = 0.0

    def __post_init__(self):
        if not self.clip_norm > 0:
            raise ConfigError("clip_norm must be positive", "dp.clip_norm")
        if self.noise_multiplier < 0:
            raise ConfigError("noise_multiplier must be non-negative", "dp.noise_multiplier")


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.01
    epochs: int = 20
    batch_size: int = 32
    grad_clip: float | None = None
    momentum: float = 0.0
    dp: DPConfig | None = None
    seed: int = 0

    def __post_init__(self):
        if not self.learning_rate >= 0:
            raise ConfigError("learning_rate must be non-negative", "learning_rate")
        if self.epochs < 0:
            raise ConfigError("epochs must be non-negative", "epochs")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1", "batch_size")
        if self.grad_clip is not None and not self.grad_clip > 0:
            raise ConfigError("grad_clip must be positive", "grad_clip")
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigError("momentum must lie in [0, 1)", "momentum")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        if d.get("dp") is not None:
            d["dp"] = DPConfig(**d["dp"])
        return cls(**d)

    def digest(self) -> str:
        return sha256_hex(canonical_json(self.to_dict()))


def aggregate_gradients(
    grads: Mapping, cfg: TrainConfig, step: int = 0, per_example: bool = False
) -> dict:
    """Turn raw gradients into the update direction.

    With ``per_example`` every tensor carries a leading batch axis.  When
    ``cfg.dp`` is set each example is clipped to ``clip_norm`` before the mean
    and gaussian noise with std ``clip_norm * noise_multiplier / B`` is added;
    noise draws come from a stream keyed by (seed, step).
    """
    if cfg.dp is not None and not per_example:
        raise ConfigError("differentially private steps need per-example gradients", "dp")
    if per_example:
        g = clip_per_example(grads, cfg.dp.clip_norm) if cfg.dp is not None else dict(grads)
        B = next(iter(g.values())).shape[0]
        g = {k: v.sum(0) / B for k, v in g.items()}
        if cfg.dp is not None:
            std = cfg.dp.clip_norm * cfg.dp.noise_multiplier / B
            if std > 0:
                rng = keyed_rng("dp-noise", cfg.seed, step)
                g = {k: v + tensor(std * rng.standard_normal(tuple(v.shape))) for k, v in g.items()}
    else:
        g = dict(grads)
    if cfg.grad_clip is not None:
        g = clip_by_norm(g, cfg.grad_clip)
    return g


def sgd_step(
    params: ParamStore, grads: Mapping, cfg: TrainConfig, step: int = 0, per_example: bool = False
) -> ParamStore:
    """params - lr * g, after optional clipping / privatisation (no momentum)."""
    g = aggregate_gradients(grads, cfg, step, per_example)
    return params.updated({k: params[k] - cfg.learning_rate * g[k] for k in params})


class SGD:
    """Stochastic gradient descent with optional heavy-ball momentum."""

    def __init__(self, cfg: TrainConfig):
        self.cfg = cfg
        self.velocity: dict[str, torch.Tensor] = {}
        self.steps = 0

    def step(self, params: ParamStore, grads: Mapping, per_example: bool = False) -> ParamStore:
        g = aggregate_gradients(grads, self.cfg, self.steps, per_example)
        self.steps += 1
        if self.cfg.momentum:
            for k in params:
                v = self.velocity.get(k)
                self.velocity[k] = g[k] if v is None else self.cfg.momentum * v + g[k]
            g = self.velocity
        return params.updated({k: params[k] - self.cfg.learning_rate * g[k] for k in params})


def fit(
    loss_fn: Callable,
    params: ParamStore,
    examples: Sequence,
    collate: Callable,
    cfg: TrainConfig,
    regulariser: Callable | None = None,
) -> tuple[ParamStore, list[float]]:
    """Minibatch training of ``mean(loss_fn(params, batch))``.

    ``loss_fn`` returns per-example losses [B]; ``collate`` builds a batch
    (a NamedTuple of tensors) from a list of examples.  Batch order per
    epoch comes from a stream keyed by (seed, epoch).  Returns the final
    parameters and the per-epoch mean of the per-example losses.
    """
    opt = SGD(cfg)
    n = len(examples)
    curve: list[float] = []
    for epoch in range(cfg.epochs):
        order = keyed_rng("shuffle", cfg.seed, epoch).permutation(n)
        total, count = 0.0, 0
        for b, start in enumerate(range(0, n, cfg.batch_size)):
            batch = collate([examples[i] for i in order[start : start + cfg.batch_size]])
            B = len(order[start : start + cfg.batch_size])
            if cfg.dp is not None:
                def single(p, ex, _cls=type(batch)):
                    one = _cls(*(v.unsqueeze(0) for v in ex))
                    return loss_fn(p, one)[0]

                with torch.no_grad():
                    losses = loss_fn(dict(params.items()), batch)
                mean_loss = float(losses.mean())
                _check_loss(mean_loss, epoch, b)
                grads = per_example_grads(single, params, batch)
                params = opt.step(params, grads, per_example=True)
            else:
                def objective(p):
                    total_ = loss_fn(p, batch).mean()
                    return total_ if regulariser is None else total_ + regulariser(p)

                try:
                    mean_loss, grads = value_and_grad(objective, params)
                except TrainingError as exc:
                    raise TrainingError(f"epoch {epoch} batch {b}: {exc}") from None
                _check_loss(mean_loss, epoch, b)
                params = opt.step(params, grads)
            total += mean_loss * B
            count += B
        curve.append(total / max(count, 1))
    return params, curve


def _check_loss(value: float, epoch: int, batch: int) -> None:
    if not math.isfinite(value):
        raise TrainingError(f"non-finite loss {value} at epoch {epoch} batch {batch}")


# ------------------------------------------------------ finite differences


def finite_difference_grads(fn: Callable, params: ParamStore, h: float = 1e-5) -> dict[str, np.ndarray]:
    """Central differences of scalar ``fn(param_dict)`` for every entry."""
    out = {}
    base = {k: v.clone() for k, v in params.items()}
    with torch.no_grad():
        for name, value in base.items():
            g = np.zeros(tuple(value.shape))
            flat = value.reshape(-1)
            for i in range(flat.numel()):
                orig = float(flat[i])
                flat[i] = orig + h
                up = float(fn(base))
                flat[i] = orig - h
                down = float(fn(base))
                flat[i] = orig
                g.reshape(-1)[i] = (up - down) / (2.0 * h)
            out[name] = g
    return out


def gradient_check(
    fn: Callable, params: ParamStore, h: float = 1e-5, floor: float = 1e-6
) -> float:
    """Largest elementwise relative error between autograd and central differences.

    Relative error is ``|a - n| / max(|a|, |n|, floor)``; ``floor`` keeps
    entries whose true gradient is ~0 from dividing round-off by zero.
    """
    _, analytic = value_and_grad(fn, params)
    numeric = finite_difference_grads(fn, params, h)
    worst = 0.0
    for name in params:
        a = analytic[name].numpy()
        n = numeric[name]
        rel = np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
        if rel.size:
            worst = max(worst, float(rel.max()))
    return worst


# ------------------------------------------------------------- checkpoints

CHECKPOINT_FORMAT = "dmkit.checkpoint/1"


def save_checkpoint(path, kind: str, params: ParamStore, meta: dict, train_config: TrainConfig | None = None) -> Path:
    path = Path(path)
    body = {
        "format": CHECKPOINT_FORMAT,
        "kind": kind,
        "meta": meta,
        "params": params.to_dict(),
        "train_config": None if train_config is None else train_config.to_dict(),
        "train_config_digest": None if train_config is None else train_config.digest(),
    }
    body["digest"] = sha256_hex(canonical_json(body))
    path.write_text(canonical_json(body) + "\n", encoding="utf-8")
    return path


def load_checkpoint(path) -> tuple[str, ParamStore, dict]:
    body = json.loads(Path(path).read_text(encoding="utf-8"))
    if body.get("format") != CHECKPOINT_FORMAT:
        raise ConfigError(f"not a dmkit checkpoint: {path}", "checkpoint")
    stored = body.pop("digest", None)
    if stored != sha256_hex(canonical_json(body)):
        raise IntegrityError(f"checkpoint digest mismatch in {path}")
    return body["kind"], ParamStore.from_dict(body["params"]), body["meta"]
