"""Behaviour policies built from base deciders.

A policy is a mixture of components.  Each component sees the history
through a feature mask and a look-back window, scores every action with a
base decider, and turns the scores into probabilities with a Boltzmann
softmax of inverse temperature beta:

    Q(y | h) = sum_i w_i softmax(beta_i * q_i(window_i(mask_i(h))))

Histories are ``(static, observations[t, dx], actions[t-1])``: the policy
picks y_t after seeing x_t.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence, Union

import numpy as np
import torch

from .diff import DTYPE, ParamStore, dense, dense_shapes, gru_cell, gru_shapes, sample_categorical, softmax_np
from .errors import ConfigError, IntegrityError
from .schema import DomainSchema, canonical_json, sha256_hex

MAX_TREE_LEAVES = 32
FULL = "full"
MIXING_MODES = ("step", "committee")


def _arr(x, dtype=np.float64) -> np.ndarray:
    a = np.array(x, dtype=dtype, copy=True)
    a.setflags(write=False)
    return a


# ------------------------------------------------------------------ history


def window_history(static, observations, actions, lag: int | str = FULL):
    """Keep the last ``lag`` observations and the last ``lag`` actions."""
    obs = np.asarray(observations)
    acts = np.asarray(actions)
    if lag == FULL:
        return np.asarray(static), obs, acts
    if not isinstance(lag, (int, np.integer)) or lag < 1:
        raise ConfigError("lag must be a positive integer or 'full'", "lag")
    return np.asarray(static), obs[-lag:], acts[max(len(acts) - lag, 0):]


def _indices(names: Sequence[str], chosen: Sequence[str] | None, label: str) -> np.ndarray:
    if chosen is None:
        return np.arange(len(names))
    lookup = {n: i for i, n in enumerate(names)}
    unknown = [c for c in chosen if c not in lookup]
    if unknown:
        raise ConfigError(f"unknown {label} features {unknown}", label)
    return np.array(sorted(lookup[c] for c in set(chosen)), dtype=np.int64)


def apply_mask(schema: DomainSchema, static, observations, mask: Sequence[str] | None,
               static_mask: Sequence[str] | None = None):
    """Drop every temporal (and static) feature outside the mask.

    Returns ``(static', observations', rationality)`` with rationality
    dim X' / dim X over the temporal space.
    """
    if mask is not None and len(mask) == 0:
        raise ConfigError("feature mask must keep at least one feature", "mask")
    keep = _indices(schema.temporal_space.names, mask, "mask")
    keep_s = _indices(schema.static_space.names, static_mask, "static_mask")
    obs = np.asarray(observations)
    return np.asarray(static)[keep_s], obs[:, keep], len(keep) / schema.temporal_space.dim


def rationality(schema: DomainSchema, mask: Sequence[str] | None) -> float:
    n = schema.temporal_space.dim if mask is None else len(set(mask))
    if n == 0:
        raise ConfigError("feature mask must keep at least one feature", "mask")
    return n / schema.temporal_space.dim


# ----------------------------------------------------------------- deciders


@dataclass(frozen=True, eq=False)
class LinearDecider:
    """q = sum over the last M steps of W_k x_{t-k} + V_k onehot(y_{t-1-k}), plus U x_s + b."""

    obs_weights: np.ndarray  # [M, |Y|, dx']
    action_weights: np.ndarray  # [M, |Y|, |Y|]
    static_weights: np.ndarray  # [|Y|, ds']
    bias: np.ndarray  # [|Y|]

    kind = "linear"

    def __post_init__(self):
        for name in ("obs_weights", "action_weights", "static_weights", "bias"):
            object.__setattr__(self, name, _arr(getattr(self, name)))
        M, ny, _ = self.obs_weights.shape
        if self.action_weights.shape != (M, ny, ny) or self.bias.shape != (ny,) or self.static_weights.shape[0] != ny:
            raise ConfigError("inconsistent linear decider shapes", "decider")

    @property
    def n_actions(self) -> int:
        return self.bias.shape[0]

    @property
    def input_dims(self) -> tuple[int, int]:
        return self.obs_weights.shape[2], self.static_weights.shape[1]

    def scores(self, static, obs, actions) -> np.ndarray:
        q = self.bias + self.static_weights @ static
        M = self.obs_weights.shape[0]
        for k in range(min(M, len(obs))):
            q = q + self.obs_weights[k] @ obs[-1 - k]
        for k in range(min(M, len(actions))):
            q = q + self.action_weights[k][:, int(actions[-1 - k])]
        return q

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "obs_weights": self.obs_weights.tolist(),
            "action_weights": self.action_weights.tolist(),
            "static_weights": self.static_weights.tolist(),
            "bias": self.bias.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "LinearDecider":
        return cls(
            np.asarray(d["obs_weights"], dtype=np.float64),
            np.asarray(d["action_weights"], dtype=np.float64),
            np.asarray(d["static_weights"], dtype=np.float64),
            np.asarray(d["bias"], dtype=np.float64),
        )

    @classmethod
    def random(cls, rng: np.random.Generator, n_actions: int, dx: int, ds: int, memory: int = 1, scale: float = 1.0):
        return cls(
            scale * rng.standard_normal((memory, n_actions, dx)),
            scale * rng.standard_normal((memory, n_actions, n_actions)),
            scale * rng.standard_normal((n_actions, ds)),
            scale * rng.standard_normal(n_actions),
        )


@dataclass(frozen=True, eq=False)
class TreeDecider:
    """Guideline-style decision tree over visible temporal features.

    Node i is a leaf when ``feature[i] < 0``; otherwise it sends the history
    left when ``x_{t - offset[i]}[feature[i]] <= threshold[i]``.  Offsets
    beyond the available window read the oldest observation in it.
    """

    feature: np.ndarray
    offset: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray  # [n_nodes, |Y|]; only leaf rows are read
    n_inputs: int = 0

    kind = "tree"

    def __post_init__(self):
        for name in ("feature", "offset", "left", "right"):
            object.__setattr__(self, name, _arr(getattr(self, name), np.int64))
        object.__setattr__(self, "threshold", _arr(self.threshold))
        object.__setattr__(self, "value", _arr(self.value))
        n = len(self.feature)
        if n == 0 or any(len(getattr(self, k)) != n for k in ("offset", "threshold", "left", "right", "value")):
            raise ConfigError("tree arrays must share one length", "decider")
        if int((self.feature < 0).sum()) > MAX_TREE_LEAVES:
            raise ConfigError(f"trees are limited to {MAX_TREE_LEAVES} leaves", "decider")
        if np.any(self.feature >= self.n_inputs):
            raise ConfigError("tree splits reference a feature outside the visible set", "decider")
        internal = self.feature >= 0
        for arr in (self.left, self.right):
            if np.any(internal & ((arr <= np.arange(n)) | (arr >= n))):
                raise ConfigError("tree children must point forward within the node list", "decider")
        if np.any(self.offset < 0):
            raise ConfigError("tree offsets must be >= 0", "decider")

    @property
    def n_actions(self) -> int:
        return self.value.shape[1]

    @property
    def input_dims(self) -> tuple[int, int | None]:
        return self.n_inputs, None

    def scores(self, static, obs, actions) -> np.ndarray:
        i = 0
        while self.feature[i] >= 0:
            row = obs[max(len(obs) - 1 - int(self.offset[i]), 0)]
            i = int(self.left[i] if row[self.feature[i]] <= self.threshold[i] else self.right[i])
        return np.array(self.value[i])

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "feature": self.feature.tolist(),
            "offset": self.offset.tolist(),
            "threshold": self.threshold.tolist(),
            "left": self.left.tolist(),
            "right": self.right.tolist(),
            "value": self.value.tolist(),
            "n_inputs": self.n_inputs,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TreeDecider":
        return cls(d["feature"], d["offset"], d["threshold"], d["left"], d["right"],
                   np.asarray(d["value"], dtype=np.float64), int(d["n_inputs"]))

    @classmethod
    def random(cls, rng: np.random.Generator, n_actions: int, dx: int, depth: int = 3, max_offset: int = 0,
               scale: float = 2.0):
        """Complete tree of the given depth with gaussian thresholds and leaf scores."""
        if 2**depth > MAX_TREE_LEAVES:
            raise ConfigError(f"depth {depth} exceeds {MAX_TREE_LEAVES} leaves", "depth")
        n_internal = 2**depth - 1
        n = 2 ** (depth + 1) - 1
        feature = np.full(n, -1)
        offset = np.zeros(n, dtype=np.int64)
        threshold = np.zeros(n)
        left = np.full(n, -1)
        right = np.full(n, -1)
        value = np.zeros((n, n_actions))
        for i in range(n_internal):
            feature[i] = rng.integers(dx)
            offset[i] = rng.integers(max_offset + 1)
            threshold[i] = rng.normal(0.0, 0.5)
            left[i], right[i] = 2 * i + 1, 2 * i + 2
        value[n_internal:] = scale * rng.standard_normal((n - n_internal, n_actions))
        return cls(feature, offset, threshold, left, right, value, dx)


class RecurrentDecider:
    """GRU over the windowed history; scores read from the final state.

    Step inputs are ``[x_k, onehot(y_{k-1}), x_s]`` with zeros for the
    action preceding the first step of the window.
    """

    kind = "recurrent"

    def __init__(self, params: ParamStore, n_actions: int, dx: int, ds: int):
        self.params = params
        self._n_actions = n_actions
        self.dx, self.ds = dx, ds
        H = params["cell.hidden_weight"].shape[1]
        expected = {**gru_shapes("cell", dx + n_actions + ds, H), **dense_shapes("out", H, n_actions)}
        if params.shapes != {k: tuple(v) for k, v in expected.items()}:
            raise ConfigError("recurrent decider parameters do not match its dimensions", "decider")

    @property
    def n_actions(self) -> int:
        return self._n_actions

    @property
    def input_dims(self) -> tuple[int, int]:
        return self.dx, self.ds

    def scores(self, static, obs, actions) -> np.ndarray:
        T = len(obs)
        prev = np.zeros((T, self._n_actions))
        # actions[-j] precedes obs[-j]; a full history holds one action fewer than observations.
        for j in range(1, min(len(actions), T) + 1):
            prev[T - j, int(actions[-j])] = 1.0
        u = np.hstack([obs, prev, np.broadcast_to(static, (T, len(static)))])
        with torch.no_grad():
            x = torch.as_tensor(u, dtype=DTYPE)
            h = torch.zeros((1, self.params["cell.hidden_weight"].shape[1]), dtype=DTYPE)
            for t in range(T):
                h = gru_cell(self.params, "cell", x[t : t + 1], h)
            return dense(self.params, "out", h)[0].numpy().copy()

    def to_dict(self) -> dict:
        return {"kind": self.kind, "n_actions": self._n_actions, "dx": self.dx, "ds": self.ds,
                "params": self.params.to_dict()}

    @classmethod
    def from_dict(cls, d: dict) -> "RecurrentDecider":
        return cls(ParamStore.from_dict(d["params"]), int(d["n_actions"]), int(d["dx"]), int(d["ds"]))

    @classmethod
    def random(cls, rng: np.random.Generator, n_actions: int, dx: int, ds: int, hidden: int = 8, scale: float = 1.0):
        shapes = {**gru_shapes("cell", dx + n_actions + ds, hidden), **dense_shapes("out", hidden, n_actions)}
        return cls(ParamStore({k: scale * rng.standard_normal(v) for k, v in shapes.items()}), n_actions, dx, ds)


Decider = Union[LinearDecider, TreeDecider, RecurrentDecider]
DECIDERS = {"linear": LinearDecider, "tree": TreeDecider, "recurrent": RecurrentDecider}


def decider_from_dict(d: dict) -> Decider:
    try:
        cls = DECIDERS[d["kind"]]
    except KeyError:
        raise ConfigError(f"unknown decider kind {d.get('kind')!r}", "decider.kind") from None
    try:
        return cls.from_dict(d)
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"malformed {d['kind']} decider: {exc}", "decider") from None


# ---------------------------------------------------------------- components


@dataclass(frozen=True, eq=False)
class PolicyComponent:
    decider: Decider
    mask: tuple[str, ...] | None = None  # None keeps every temporal feature
    static_mask: tuple[str, ...] | None = None
    lag: int | str = FULL
    beta: float = 1.0

    def __post_init__(self):
        if self.mask is not None:
            object.__setattr__(self, "mask", tuple(self.mask))
            if not self.mask:
                raise ConfigError("feature mask must keep at least one feature", "mask")
        if self.static_mask is not None:
            object.__setattr__(self, "static_mask", tuple(self.static_mask))
        if self.lag != FULL and (not isinstance(self.lag, (int, np.integer)) or isinstance(self.lag, bool) or self.lag < 1):
            raise ConfigError("lag must be a positive integer or 'full'", "lag")
        if not (self.beta >= 0 and math.isfinite(self.beta)):
            raise ConfigError("beta must be a finite non-negative number", "beta")
        object.__setattr__(self, "beta", float(self.beta))

    def to_dict(self) -> dict:
        return {
            "decider": self.decider.to_dict(),
            "mask": None if self.mask is None else list(self.mask),
            "static_mask": None if self.static_mask is None else list(self.static_mask),
            "lag": self.lag if self.lag == FULL else int(self.lag),
            "beta": self.beta,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PolicyComponent":
        return cls(
            decider_from_dict(d["decider"]),
            None if d.get("mask") is None else tuple(d["mask"]),
            None if d.get("static_mask") is None else tuple(d["static_mask"]),
            d.get("lag", FULL),
            float(d.get("beta", 1.0)),
        )

    def scores(self, schema: DomainSchema, static, observations, actions) -> np.ndarray:
        s, obs, _ = apply_mask(schema, static, observations, self.mask, self.static_mask)
        s, obs, acts = window_history(s, obs, actions, self.lag)
        q = np.asarray(self.decider.scores(s, obs, acts), dtype=np.float64)
        if not np.all(np.isfinite(q)):
            raise ConfigError("decider produced non-finite scores", "decider")
        return q


def component_distribution(c: PolicyComponent, schema: DomainSchema, static, observations, actions) -> np.ndarray:
    return softmax_np(c.beta * c.scores(schema, static, observations, actions))


# -------------------------------------------------------------------- policy


@dataclass(frozen=True, eq=False)
class PolicySpec:
    schema: DomainSchema
    components: tuple[PolicyComponent, ...]
    weights: tuple[float, ...] = (1.0,)
    mixing: str = "step"

    def __post_init__(self):
        object.__setattr__(self, "components", tuple(self.components))
        object.__setattr__(self, "weights", tuple(float(w) for w in self.weights))
        if not self.components:
            raise ConfigError("a policy needs at least one component", "components")
        w = np.asarray(self.weights)
        if len(w) != len(self.components):
            raise ConfigError("one mixture weight per component is required", "weights")
        if np.any(~np.isfinite(w)) or np.any(w <= 0) or abs(math.fsum(w) - 1.0) > 1e-9:
            raise ConfigError("mixture weights must be positive and sum to 1", "weights")
        if self.mixing not in MIXING_MODES:
            raise ConfigError(f"mixing must be one of {MIXING_MODES}", "mixing")
        ny = self.schema.n_actions
        for i, c in enumerate(self.components):
            dx = self.schema.temporal_space.dim if c.mask is None else len(set(c.mask))
            ds = self.schema.static_space.dim if c.static_mask is None else len(set(c.static_mask))
            _indices(self.schema.temporal_space.names, c.mask, "mask")
            _indices(self.schema.static_space.names, c.static_mask, "static_mask")
            in_x, in_s = c.decider.input_dims
            if c.decider.n_actions != ny or in_x != dx or (in_s is not None and in_s != ds):
                raise ConfigError(
                    f"component {i}: decider expects (|Y|={c.decider.n_actions}, dx={in_x}, ds={in_s}) "
                    f"but sees (|Y|={ny}, dx={dx}, ds={ds})",
                    f"components[{i}].decider",
                )

    def to_dict(self) -> dict:
        return {
            "schema": self.schema.to_dict(),
            "components": [c.to_dict() for c in self.components],
            "weights": list(self.weights),
            "mixing": self.mixing,
        }

    @classmethod
    def from_dict(cls, d: dict, schema: DomainSchema | None = None) -> "PolicySpec":
        if schema is None:
            schema = DomainSchema.from_dict(d["schema"])
        return cls(schema, tuple(PolicyComponent.from_dict(c) for c in d["components"]),
                   tuple(d.get("weights", (1.0,))), d.get("mixing", "step"))

    def digest(self) -> str:
        return sha256_hex(canonical_json(self.to_dict()))

    def rationality(self) -> list[float]:
        return [rationality(self.schema, c.mask) for c in self.components]


def component_distributions(p: PolicySpec, static, observations, actions) -> np.ndarray:
    return np.stack([component_distribution(c, p.schema, static, observations, actions) for c in p.components])


def policy_distribution(p: PolicySpec, static, observations, actions) -> np.ndarray:
    """sum_i w_i softmax(beta_i q_i): the per-step mixture."""
    comps = component_distributions(p, static, observations, actions)
    out = p.weights[0] * comps[0]
    for w, c in zip(p.weights[1:], comps[1:]):
        out = out + w * c
    return out


class PolicyRollout:
    """Action sampler for one trajectory.

    ``step`` mixing draws from the mixture at every step; ``committee``
    mixing picks one component per trajectory (one uniform at construction)
    and follows it throughout.  Each action consumes exactly one uniform.
    """

    def __init__(self, spec: PolicySpec, rng: np.random.Generator):
        self.spec = spec
        self.rng = rng
        self.component = sample_categorical(np.asarray(spec.weights), rng) if spec.mixing == "committee" else None

    def distribution(self, static, observations, actions) -> np.ndarray:
        if self.component is None:
            return policy_distribution(self.spec, static, observations, actions)
        return component_distribution(self.spec.components[self.component], self.spec.schema,
                                      static, observations, actions)

    def sample(self, static, observations, actions) -> int:
        return sample_categorical(self.distribution(static, observations, actions), self.rng)


# -------------------------------------------------------------- markovianity


@dataclass(frozen=True)
class AtLeast:
    """Sentinel for a Markovianity not found within the probe budget."""

    budget: int

    def __str__(self):
        return f"≥ {self.budget}"


def random_history(schema: DomainSchema, t: int, rng: np.random.Generator):
    """Random (static, observations[t], actions[t-1]) conforming to the schema."""
    ss, xs = schema.static_space, schema.temporal_space
    static = np.concatenate([rng.standard_normal(ss.continuous_dims), rng.integers(0, 2, ss.binary_dims)]).astype(float)
    obs = np.hstack([rng.standard_normal((t, xs.continuous_dims)), rng.integers(0, 2, (t, xs.binary_dims))]).astype(float)
    acts = rng.integers(0, schema.n_actions, t - 1)
    return static, obs, acts


def total_variation(p: np.ndarray, q: np.ndarray) -> float:
    return 0.5 * float(np.abs(np.asarray(p) - np.asarray(q)).sum())


def measure_markovianity(p: PolicySpec, budget: int = 10, trials: int = 20, seed: int = 0, tol: float = 1e-9):
    """Smallest look-back L such that perturbing anything older never moves the policy.

    For each candidate L < budget, ``trials`` random histories of length
    budget + 1 are compared against copies whose observations before
    x_{t-L+1} and actions before y_{t-L} are redrawn.  Returns L, or
    ``AtLeast(budget)`` when every L < budget is falsified.
    """
    if budget < 2:
        raise ConfigError("probe budget must be >= 2", "budget")
    rng = np.random.default_rng(seed)
    t = budget + 1
    probes = []
    for _ in range(trials):
        s, obs, acts = random_history(p.schema, t, rng)
        _, obs2, acts2 = random_history(p.schema, t, rng)
        probes.append((s, obs, acts, obs2, acts2, policy_distribution(p, s, obs, acts)))
    for L in range(1, budget):
        falsified = False
        for s, obs, acts, obs2, acts2, base in probes:
            o = obs.copy()
            a = acts.copy()
            o[: t - L] = obs2[: t - L]
            a[: max(t - 1 - L, 0)] = acts2[: max(t - 1 - L, 0)]
            if total_variation(policy_distribution(p, s, o, a), base) > tol:
                falsified = True
                break
        if not falsified:
            return L
    return AtLeast(budget)


# ------------------------------------------------------------- ground truth


@dataclass(frozen=True)
class GroundTruth:
    theta: dict
    digest: str

    @classmethod
    def seal(cls, theta: dict) -> "GroundTruth":
        """Attach the digest of ``theta``; use after deliberately editing parameters."""
        theta = json.loads(canonical_json(theta))
        return cls(theta, sha256_hex(canonical_json(theta)))

    def verify(self) -> None:
        if sha256_hex(canonical_json(self.theta)) != self.digest:
            raise IntegrityError("ground-truth digest does not match its parameters")

    def to_dict(self) -> dict:
        return {"format": "dmkit.ground_truth/1", "theta": self.theta, "digest": self.digest}


def export_ground_truth(p: PolicySpec) -> GroundTruth:
    return GroundTruth.seal(p.to_dict())


def load_ground_truth(g: GroundTruth) -> PolicySpec:
    g.verify()
    return PolicySpec.from_dict(g.theta)


def write_ground_truth(g: GroundTruth, path) -> Path:
    path = Path(path)
    path.write_text(canonical_json(g.to_dict()) + "\n", encoding="utf-8")
    return path


def read_ground_truth(path) -> GroundTruth:
    try:
        body = json.loads(Path(path).read_text(encoding="utf-8"))
        g = GroundTruth(body["theta"], body["digest"])
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise ConfigError(f"{path}: not a ground-truth export ({exc})", str(path)) from None
    g.verify()
    return g


# ---------------------------------------------------------------- builders


def random_component(schema: DomainSchema, rng: np.random.Generator, kind: str | None = None,
                     lag: int | str | None = None, beta: float | None = None, mask_fraction: float | None = None):
    """Random component for property tests and quick scenarios."""
    names = schema.temporal_space.names
    kind = kind or str(rng.choice(["linear", "tree", "recurrent"]))
    if mask_fraction is None:
        mask_fraction = float(rng.uniform(0.2, 1.0))
    k = max(1, int(round(mask_fraction * len(names))))
    mask = tuple(names[i] for i in sorted(rng.choice(len(names), k, replace=False)))
    if lag is None:
        lag = FULL if rng.random() < 0.25 else int(rng.integers(1, 4))
    if beta is None:
        beta = float(rng.exponential(2.0))
    ny, ds = schema.n_actions, schema.static_space.dim
    if kind == "linear":
        decider = LinearDecider.random(rng, ny, k, ds, memory=int(rng.integers(1, 4)))
    elif kind == "tree":
        decider = TreeDecider.random(rng, ny, k, depth=int(rng.integers(1, 5)), max_offset=2)
    else:
        decider = RecurrentDecider.random(rng, ny, k, ds, hidden=4)
    return PolicyComponent(decider, mask, None, lag, beta)


def random_policy(schema: DomainSchema, rng: np.random.Generator, n_components: int | None = None,
                  mixing: str = "step", **component_kw) -> PolicySpec:
    n = n_components or int(rng.integers(1, 4))
    comps = tuple(random_component(schema, rng, **component_kw) for _ in range(n))
    w = rng.dirichlet(np.ones(n)) if n > 1 else np.ones(1)
    w = np.maximum(w, 1e-3)
    w = w / w.sum()
    w[-1] = 1.0 - math.fsum(w[:-1])
    return PolicySpec(schema, comps, tuple(w), mixing)


def sticky_policy(schema: DomainSchema, beta: float = 20.0, first_action: int | None = None) -> PolicySpec:
    """Repeats the previous action; the first action is uniform unless ``first_action`` is given."""
    ny = schema.n_actions
    first = np.zeros(ny)
    if first_action is not None:
        first[first_action] = 1.0
    decider = LinearDecider(
        np.zeros((1, ny, schema.temporal_space.dim)),
        np.eye(ny)[None],
        np.zeros((ny, schema.static_space.dim)),
        first * 0.5,
    )
    return PolicySpec(schema, (PolicyComponent(decider, None, None, 1, beta),))


def lag_sensitive_policy(schema: DomainSchema, lag: int, rng: np.random.Generator, beta: float = 1.0) -> PolicySpec:
    """Single linear component whose output depends on every slot of a ``lag``-step window."""
    ny, dx, ds = schema.n_actions, schema.temporal_space.dim, schema.static_space.dim
    decider = LinearDecider.random(rng, ny, dx, ds, memory=lag + 2)
    return PolicySpec(schema, (PolicyComponent(decider, None, None, lag, beta),))


def policy_from_config(cfg: dict, schema: DomainSchema) -> PolicySpec:
    """Policy JSON: either a full spec, or ``{"random": seed, ...}`` / ``{"sticky": beta}`` shorthands."""
    if not isinstance(cfg, dict):
        raise ConfigError("policy config must be an object", "policy")
    if "random" in cfg:
        rng = np.random.default_rng(int(cfg["random"]))
        kw = {k: cfg[k] for k in ("n_components", "mixing") if k in cfg}
        return random_policy(schema, rng, **kw)
    if "sticky" in cfg:
        return sticky_policy(schema, beta=float(cfg["sticky"]))
    if "components" not in cfg:
        raise ConfigError("policy config needs 'components' (or 'random'/'sticky')", "policy.components")
    try:
        return PolicySpec.from_dict(cfg, schema=schema)
    except KeyError as exc:
        raise ConfigError(f"policy config is missing {exc}", "policy") from None

