"""Scenarios: a domain, an environment and a policy, plus what the user gets to see.

Every trajectory owns three random streams keyed by (seed, index): one for
the environment, one for the policy and one for its length.  Swapping the
policy therefore leaves the environment's draws untouched, and trajectories
can be generated in any order or process without changing the result.
"""
from __future__ import annotations

import contextlib
import multiprocessing
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .environments import Environment, env_from_config, read_json, schema_from_config
from .errors import ConfigError, DomainError, ScenarioError, SessionError
from .policies import PolicyRollout, PolicySpec, policy_from_config
from .rng import keyed_rng
from .schema import BatchDataset, DomainSchema, Trajectory, canonical_json, confoundedness, sha256_hex

LENGTH_DISTRIBUTION = "uniform"


@dataclass(frozen=True, eq=False)
class Scenario:
    domain: DomainSchema
    env: Environment
    policy: PolicySpec
    confounding: tuple[str, ...] = ()
    horizon: int = 30
    min_len: int = 5
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "confounding", tuple(self.confounding))
        if self.env.schema != self.domain:
            raise ScenarioError("environment was built for a different domain schema", "environment.schema")
        if self.policy.schema != self.domain:
            raise ScenarioError("policy was built for a different domain schema", "policy.schema")
        names = set(self.domain.temporal_space.names)
        unknown = [c for c in self.confounding if c not in names]
        if unknown:
            raise ScenarioError(f"unknown confounding features {unknown}", "confounding")
        if len(set(self.confounding)) == len(names):
            raise ScenarioError("confounding cannot hide every temporal feature", "confounding")
        if not 1 <= self.horizon <= self.domain.max_length:
            raise ScenarioError(f"horizon must lie in [1, {self.domain.max_length}]", "horizon")
        if not 1 <= self.min_len <= self.horizon:
            raise ScenarioError("min_len must lie in [1, horizon]", "min_len")

    def with_seed(self, seed: int) -> "Scenario":
        return Scenario(self.domain, self.env, self.policy, self.confounding, self.horizon, self.min_len, seed)

    def config(self) -> dict:
        return {
            "domain": self.domain.to_dict(),
            "environment": self.env.config(),
            "policy": self.policy.to_dict(),
            "confounding": list(self.confounding),
            "horizon": self.horizon,
            "min_len": self.min_len,
            "length_distribution": LENGTH_DISTRIBUTION,
            "seed": self.seed,
        }

    def digest(self) -> str:
        return sha256_hex(canonical_json(self.config()))

    def stream(self, index: int, purpose: str) -> np.random.Generator:
        """Random stream for one trajectory: purpose is "env", "policy" or "length"."""
        return keyed_rng("trajectory", self.seed, index, purpose)

    def visible_indices(self) -> np.ndarray:
        hidden = set(self.confounding)
        return np.array([i for i, n in enumerate(self.domain.temporal_space.names) if n not in hidden], dtype=np.int64)

    def confoundedness(self) -> float:
        return confoundedness(self.domain, self.confounding)


@contextlib.contextmanager
def _single_thread():
    # Bitwise reproducibility across --jobs values needs identical reduction orders.
    previous = torch.get_num_threads()
    torch.set_num_threads(1)
    try:
        yield
    finally:
        torch.set_num_threads(previous)


def sample_trajectory(s: Scenario, index: int) -> Trajectory:
    """Full (unprojected) trajectory number ``index`` of the scenario."""
    env_rng, pol_rng = s.stream(index, "env"), s.stream(index, "policy")
    T = int(s.stream(index, "length").integers(s.min_len, s.horizon + 1))
    x_s, x_1 = s.env.sample_initial(env_rng)
    sim = s.env.simulator(x_s, x_1, env_rng)
    policy = PolicyRollout(s.policy, pol_rng)
    obs = [np.asarray(x_1, dtype=np.float64)]
    acts: list[int] = [policy.sample(x_s, np.array(obs), np.zeros(0, dtype=np.int64))]
    for _ in range(1, T):
        obs.append(np.asarray(sim.step(acts[-1]), dtype=np.float64))
        acts.append(policy.sample(x_s, np.array(obs), np.array(acts, dtype=np.int64)))
    return Trajectory(x_s, np.array(obs), np.array(acts, dtype=np.int64))


def _project(t: Trajectory, keep: np.ndarray) -> Trajectory:
    return Trajectory(t.static, t.observations[:, keep], t.actions)


def _generate_range(s: Scenario, indices: list[int]) -> list[Trajectory]:
    with _single_thread():
        keep = s.visible_indices()
        return [_project(sample_trajectory(s, i), keep) for i in indices]


def generate_batch(s: Scenario, n: int, jobs: int = 1) -> BatchDataset:
    """n trajectories with hidden columns removed; identical for every ``jobs``."""
    if n < 0:
        raise ConfigError("n must be >= 0", "n")
    if jobs < 1:
        raise ConfigError("jobs must be >= 1", "jobs")
    indices = list(range(n))
    if jobs == 1 or n < 2:
        trajectories = _generate_range(s, indices)
    else:
        chunks = [indices[k::jobs] for k in range(jobs) if indices[k::jobs]]
        ctx = multiprocessing.get_context("spawn")
        with ProcessPoolExecutor(max_workers=len(chunks), mp_context=ctx) as pool:
            parts = list(pool.map(_generate_range, [s] * len(chunks), chunks))
        by_index = {}
        for chunk, part in zip(chunks, parts):
            by_index.update(zip(chunk, part))
        trajectories = [by_index[i] for i in indices]
    hidden = set(s.confounding)
    ordered = tuple(n for n in s.domain.temporal_space.names if n in hidden)
    return BatchDataset(s.domain, trajectories, s.seed, s.digest(), ordered)


def hide_confounders(d: BatchDataset, hidden) -> tuple[BatchDataset, float]:
    """Remove further temporal columns; returns the projected dataset and dim X' / dim X."""
    hidden = list(hidden)
    visible = d.visible_space.names
    unknown = [h for h in hidden if h not in visible]
    if unknown:
        raise ConfigError(f"cannot hide {unknown}: not visible temporal features", "confounding")
    drop = set(hidden)
    keep = np.array([i for i, n in enumerate(visible) if n not in drop], dtype=np.int64)
    all_hidden = set(d.hidden_columns) | drop
    ordered = tuple(n for n in d.schema.temporal_space.names if n in all_hidden)
    out = BatchDataset(d.schema, [_project(t, keep) for t in d.trajectories], d.seed, d.provenance, ordered)
    return out, confoundedness(d.schema, ordered)


# ----------------------------------------------------------------------- live


class LiveSession:
    """Step-by-step interaction with a scenario's environment; no policy, no reward.

    Episode ``episode`` uses the same environment stream as trajectory
    ``episode`` of :func:`generate_batch`, so feeding it the actions of that
    trajectory reproduces its observations.
    """

    def __init__(self, scenario: Scenario, episode: int = 0):
        self.scenario = scenario
        self.episode = episode
        self._keep = scenario.visible_indices()
        self._sim = None
        self.t = 0
        self.static: np.ndarray | None = None
        self.observations: list[np.ndarray] = []
        self.actions: list[int] = []

    @property
    def done(self) -> bool:
        return self._sim is not None and self.t >= self.scenario.horizon

    def reset(self) -> tuple[np.ndarray, np.ndarray]:
        s = self.scenario
        rng = s.stream(self.episode, "env")
        with _single_thread():
            x_s, x_1 = s.env.sample_initial(rng)
            self._sim = s.env.simulator(x_s, x_1, rng)
        self.t = 1
        self.static = np.asarray(x_s)
        visible = np.asarray(x_1)[self._keep]
        self.observations = [visible]
        self.actions = []
        return self.static.copy(), visible.copy()

    def step(self, action: int) -> tuple[np.ndarray, bool]:
        if self._sim is None:
            raise SessionError("call reset() before step()")
        if self.done:
            raise SessionError(f"episode finished at t = {self.t}; call reset()")
        if not 0 <= int(action) < self.scenario.domain.n_actions:
            raise DomainError(f"action {action} outside 0..{self.scenario.domain.n_actions - 1}")
        with _single_thread():
            x = self._sim.step(int(action))
        self.t += 1
        self.actions.append(int(action))
        visible = np.asarray(x)[self._keep]
        self.observations.append(visible)
        return visible.copy(), self.done


def live_reset(s: Scenario, episode: int = 0) -> tuple[LiveSession, np.ndarray, np.ndarray]:
    session = LiveSession(s, episode)
    x_s, x_1 = session.reset()
    return session, x_s, x_1


def live_step(session: LiveSession, action: int) -> tuple[np.ndarray, bool]:
    return session.step(action)


# --------------------------------------------------------------------- config


def scenario_from_config(cfg: dict, base_dir: Path | None = None, seed: int | None = None) -> Scenario:
    """Scenario JSON ``{domain, environment, policy, confounding, horizon, min_len, seed}``."""
    if not isinstance(cfg, dict):
        raise ScenarioError("scenario config must be an object", "scenario")
    for key in ("domain", "environment", "policy"):
        if key not in cfg:
            raise ScenarioError(f"scenario config needs '{key}'", key)
    domain = schema_from_config(cfg["domain"])
    env_cfg = dict(cfg["environment"]) if isinstance(cfg["environment"], dict) else cfg["environment"]
    if isinstance(env_cfg, dict) and "schema" not in env_cfg and "checkpoint" not in env_cfg:
        env_cfg["schema"] = domain.to_dict()
    env = env_from_config(env_cfg, base_dir)
    policy = policy_from_config(cfg["policy"], domain)
    try:
        horizon = int(cfg.get("horizon", domain.max_length))
        return Scenario(
            domain, env, policy,
            tuple(cfg.get("confounding", ())),
            horizon,
            int(cfg.get("min_len", min(5, horizon))),
            int(cfg.get("seed", 0) if seed is None else seed),
        )
    except (TypeError, ValueError) as exc:
        raise ScenarioError(f"malformed scenario config: {exc}", "scenario") from None


def load_scenario(path, seed: int | None = None) -> Scenario:
    path = Path(path)
    return scenario_from_config(read_json(path), path.parent, seed)
