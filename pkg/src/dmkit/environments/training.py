"""Training entry point, environment configs and checkpoints."""
from __future__ import annotations

import itertools
import json
from pathlib import Path

import numpy as np

from ..diff import ParamStore, TrainConfig, fit, load_checkpoint, save_checkpoint
from ..errors import ConfigError
from ..rng import keyed_rng
from ..schema import BatchDataset, DomainSchema, Trajectory, builtin_domain
from .base import Environment, InitModel, collate
from .builtin import ground_truth_css
from .css import (
    ENUMERATION_LIMIT,
    Attention,
    CssInferenceNet,
    CssModel,
    CssVariationalObjective,
    MarkovPosterior,
    PathPosterior,
    css_elbo,
)
from .recurrent import BalancedModel, TForceModel
from .svae import SvaeModel, svae_elbo

ENV_KINDS: dict[str, type[Environment]] = {
    "tforce": TForceModel,
    "balanced": BalancedModel,
    "css": CssModel,
    "svae": SvaeModel,
}


def env_class(kind: str) -> type[Environment]:
    try:
        return ENV_KINDS[kind]
    except KeyError:
        raise ConfigError(f"unknown environment kind {kind!r}; expected one of {sorted(ENV_KINDS)}", "kind") from None


def create_env(kind: str, schema: DomainSchema, seed: int = 0, init: InitModel | None = None, **hyper) -> Environment:
    cls = env_class(kind)
    if kind == "css" and "attention" in hyper and not isinstance(hyper["attention"], Attention):
        hyper["attention"] = Attention.from_dict(hyper["attention"])
    try:
        return cls.create(schema, seed=seed, init=init, **hyper)
    except TypeError as exc:
        raise ConfigError(f"bad hyperparameters for {kind}: {exc}", "hyperparameters") from None


class _NoisyCollate:
    """Collate that attaches fresh MC noise to every batch, keyed by (seed, batch counter)."""

    def __init__(self, n_actions: int, seed: int, shape_fn):
        self.n_actions = n_actions
        self.seed = seed
        self.shape_fn = shape_fn
        self.counter = itertools.count()

    def __call__(self, trajectories):
        T = max(t.length for t in trajectories)
        rng = keyed_rng("train-noise", self.seed, next(self.counter))
        return collate(trajectories, self.n_actions, self.shape_fn(rng, len(trajectories), T))


def train_env(
    kind: str,
    dataset: BatchDataset,
    cfg: TrainConfig,
    css_objective: str = "auto",
    mc_samples: int = 4,
    **hyper,
) -> tuple[Environment, list[float]]:
    """Fit an environment to ``dataset``; returns (model, per-epoch mean loss).

    The initialisation model is fitted in closed form; the autoregressive part
    by minibatch SGD.  CSS uses the exact likelihood when the state space
    allows (``css_objective="auto"``) and the variational objective otherwise.
    ``epochs = 0`` returns the freshly initialised model.
    """
    schema = dataset.visible_schema()
    trajectories = list(dataset.trajectories)
    if dataset.violations():
        raise ConfigError("dataset does not conform to its schema", "data")
    init = InitModel.fit(schema, trajectories)
    model = create_env(kind, schema, seed=cfg.seed, init=init, **hyper)
    if cfg.epochs == 0 or not trajectories:
        return model, []

    if kind == "css":
        exact = model.n_states ** (model.attention.width + 1) <= ENUMERATION_LIMIT
        if css_objective == "variational" or (css_objective == "auto" and not exact):
            return _train_css_variational(model, trajectories, cfg, mc_samples)
        if css_objective not in ("auto", "exact"):
            raise ConfigError(f"unknown CSS objective {css_objective!r}", "css_objective")

    if kind == "svae":
        d = model.latent_dim
        batcher = _NoisyCollate(schema.n_actions, cfg.seed, lambda rng, B, T: rng.standard_normal((B, mc_samples, T, d)))
    else:
        def batcher(trs):
            return collate(trs, schema.n_actions)

    params, curve = fit(model.loss, model.params, trajectories, batcher, cfg)
    return model.with_params(params), curve


def _train_css_variational(model: CssModel, trajectories, cfg: TrainConfig, mc_samples: int):
    net = CssInferenceNet(model, seed=cfg.seed)
    objective = CssVariationalObjective(model, net)
    joint = ParamStore({**dict(model.params.items()), **dict(net.params.items())}, seed=cfg.seed)
    batcher = _NoisyCollate(model.schema.n_actions, cfg.seed, lambda rng, B, T: rng.random((B, mc_samples, T)))
    joint, curve = fit(objective, joint, trajectories, batcher, cfg)
    params = ParamStore({k: joint[k] for k in model.params}, seed=cfg.seed)
    return model.with_params(params), curve


def elbo(env: Environment, trajectory: Trajectory, inference, n_mc: int, rng: np.random.Generator):
    """Monte Carlo ELBO for a latent environment.

    For CSS, ``inference`` is a posterior object (MarkovPosterior,
    PathPosterior) or a CssInferenceNet.  For SVAE it is ``"encoder"`` or
    ``"prior"``.
    """
    if isinstance(env, CssModel):
        q = inference.posterior(trajectory) if isinstance(inference, CssInferenceNet) else inference
        if not isinstance(q, (MarkovPosterior, PathPosterior)):
            raise ConfigError("CSS ELBO needs a MarkovPosterior, PathPosterior or CssInferenceNet", "inference")
        return css_elbo(env, trajectory, q, n_mc, rng)
    if isinstance(env, SvaeModel):
        return svae_elbo(env, trajectory, n_mc, rng, posterior=inference)
    raise ConfigError(f"{env.kind} has no latent variables; use its exact likelihood", "kind")


# ------------------------------------------------------------- persistence


def save_env(env: Environment, path, train_config: TrainConfig | None = None) -> Path:
    meta = {
        "schema": env.schema.to_dict(),
        "hyperparameters": env.hyperparameters(),
        "init": env.init.to_dict(),
    }
    return save_checkpoint(path, env.kind, env.params, meta, train_config)


def load_env(path) -> Environment:
    kind, params, meta = load_checkpoint(path)
    schema = DomainSchema.from_dict(meta["schema"])
    shell = create_env(kind, schema, seed=0, init=InitModel.from_dict(meta["init"]), **meta["hyperparameters"])
    if params.shapes != shell.params.shapes:
        raise ConfigError(f"checkpoint {path} does not match its declared architecture", "checkpoint")
    return shell.with_params(params)


def schema_from_config(value) -> DomainSchema:
    """A built-in name, ``{"name", "n_actions", "max_length"}`` for a built-in, or a full schema dict."""
    if isinstance(value, str):
        return builtin_domain(value)
    if isinstance(value, dict):
        if "static_space" in value:
            try:
                return DomainSchema.from_dict(value)
            except (KeyError, TypeError, ValueError) as exc:
                raise ConfigError(f"malformed schema: {exc}", "schema") from None
        if "name" in value:
            return builtin_domain(value["name"], int(value.get("n_actions", 8)), int(value.get("max_length", 30)))
    raise ConfigError("schema must be a built-in name or a schema object", "schema")


def env_from_config(cfg: dict, base_dir: Path | None = None) -> Environment:
    """Build an environment from its JSON config.

    ``{"kind", "schema", "hyperparameters"?, "attention"?, "checkpoint"?,
    "builtin"?, "seed"?}``.  ``"builtin": "ground_truth"`` selects the
    hand-specified CSS for the schema's domain.
    """
    if not isinstance(cfg, dict):
        raise ConfigError("environment config must be an object", "environment")
    kind = cfg.get("kind")
    if kind is None:
        raise ConfigError("environment config needs 'kind'", "environment.kind")
    env_class(kind)
    if "checkpoint" in cfg:
        path = Path(cfg["checkpoint"])
        if base_dir is not None and not path.is_absolute():
            path = base_dir / path
        if not path.exists():
            raise ConfigError(f"checkpoint {path} not found", "environment.checkpoint")
        env = load_env(path)
        if env.kind != kind:
            raise ConfigError(f"checkpoint holds a {env.kind} model, config says {kind}", "environment.kind")
        return env
    if "schema" not in cfg:
        raise ConfigError("environment config needs 'schema'", "environment.schema")
    schema = schema_from_config(cfg["schema"])
    if cfg.get("builtin") == "ground_truth":
        if kind != "css":
            raise ConfigError("the built-in ground truth is a css model", "environment.kind")
        return ground_truth_css(schema)
    if "builtin" in cfg:
        raise ConfigError(f"unknown builtin {cfg['builtin']!r}", "environment.builtin")
    hyper = dict(cfg.get("hyperparameters", {}))
    if "attention" in cfg:
        hyper["attention"] = cfg["attention"]
    return create_env(kind, schema, seed=int(cfg.get("seed", 0)), **hyper)


def env_config(env: Environment, checkpoint: str | None = None) -> dict:
    out = {"kind": env.kind, "schema": env.schema.to_dict(), "hyperparameters": env.hyperparameters()}
    if checkpoint is not None:
        out["checkpoint"] = checkpoint
    return out


def read_json(path) -> dict:
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError(f"config file {path} not found", str(path)) from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}", str(path)) from None
