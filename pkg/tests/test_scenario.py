import json
import math
from dataclasses import dataclass

import numpy as np
import pytest

from conftest import small_schema
from dmkit.diff import ParamStore
from dmkit.environments import Environment, InitModel, Simulator, create_env, ground_truth_css
from dmkit.errors import ConfigError, DomainError, ScenarioError, SessionError
from dmkit.policies import PolicyRollout, random_policy, sticky_policy
from dmkit.scenario import (
    LiveSession,
    Scenario,
    generate_batch,
    hide_confounders,
    live_reset,
    live_step,
    load_scenario,
    sample_trajectory,
    scenario_from_config,
)
from dmkit.schema import builtin_domain, deserialize_dataset, serialize_dataset


@dataclass(frozen=True, eq=False)
class FrozenEnv(Environment):
    """Every observation is zero; used to isolate policy behaviour."""

    schema: object
    params: ParamStore
    init: InitModel

    kind = "frozen"

    def hyperparameters(self):
        return {}

    def with_params(self, params, init=None):
        return self

    def loss(self, params, batch):
        raise NotImplementedError

    def step_distribution(self, static, observations, actions):
        raise NotImplementedError

    def sample_initial(self, rng):
        return np.zeros(self.schema.static_space.dim), np.zeros(self.schema.temporal_space.dim)

    def simulator(self, x_s, x_1, rng):
        dim = self.schema.temporal_space.dim

        class _Sim(Simulator):
            def step(self, action):
                return np.zeros(dim)

        return _Sim()


def ward_scenario(kind="css", policy=None, confounding=(), horizon=12, min_len=3, seed=0, n_actions=2):
    domain = builtin_domain("ward_synth", n_actions, max_length=20)
    if kind == "css":
        env = ground_truth_css(domain)
    elif kind == "svae":
        env = create_env("svae", domain, seed=1, hidden=8, dense_sizes=(8,), n_particles=32)
    else:
        env = create_env(kind, domain, seed=1, hidden=8, dense_sizes=(8,))
    policy = policy or random_policy(domain, np.random.default_rng(0), n_components=2)
    return Scenario(domain, env, policy, tuple(confounding), horizon, min_len, seed)


# -------------------------------------------------------------- batch generation


def test_zero_trajectories():
    d = generate_batch(ward_scenario(), 0)
    assert len(d) == 0 and d.violations() == {}


def test_generation_is_deterministic(tmp_path):
    s = ward_scenario(confounding=("spo2",), seed=5)
    a = serialize_dataset(generate_batch(s, 15), tmp_path / "a.jsonl")
    b = serialize_dataset(generate_batch(s, 15), tmp_path / "b.jsonl")
    assert a.read_bytes() == b.read_bytes()
    assert deserialize_dataset(a) == generate_batch(s, 15)


def test_worker_count_does_not_change_output():
    s = ward_scenario(seed=2)
    assert generate_batch(s, 9, jobs=2).digest() == generate_batch(s, 9).digest()


def test_seed_changes_output():
    assert generate_batch(ward_scenario(seed=1), 3).digest() != generate_batch(ward_scenario(seed=2), 3).digest()


def test_dataset_carries_provenance():
    s = ward_scenario(confounding=("spo2", "pulse"), seed=4)
    d = generate_batch(s, 4)
    assert d.provenance == s.digest()
    assert d.seed == 4
    assert d.hidden_columns == ("pulse", "spo2")
    assert s.config()["length_distribution"] == "uniform"
    assert d.violations() == {}


def test_lengths_within_bounds():
    s = ward_scenario(horizon=9, min_len=4)
    lengths = [t.length for t in generate_batch(s, 200)]
    assert min(lengths) >= 4 and max(lengths) <= 9
    assert set(lengths) == set(range(4, 10))


def test_random_policy_with_frozen_env_is_uniform():
    schema = small_schema(4, max_length=50)
    env = FrozenEnv(schema, ParamStore({}), InitModel.standard(schema))
    policy = random_policy(schema, np.random.default_rng(0), n_components=1, kind="linear", beta=0.0)
    s = Scenario(schema, env, policy, (), horizon=50, min_len=50, seed=0)
    d = generate_batch(s, 2000)
    actions = np.concatenate([t.actions for t in d.trajectories])
    n = len(actions)
    assert n == 100_000
    counts = np.bincount(actions, minlength=4)
    assert np.all(np.abs(counts - n / 4) <= 4 * math.sqrt(n * 0.25 * 0.75))


def test_hidden_columns_never_serialized(tmp_path):
    s = ward_scenario(confounding=("spo2",))
    path = serialize_dataset(generate_batch(s, 5), tmp_path / "d.jsonl")
    back = deserialize_dataset(path)
    assert "spo2" not in back.visible_space.names
    assert all(t.observations.shape[1] == 34 for t in back.trajectories)


# --------------------------------------------------------------- confounding


def test_hide_nothing():
    d = generate_batch(ward_scenario(), 4)
    out, measure = hide_confounders(d, [])
    assert out == d and measure == 1.0


def test_hide_five_ward_features():
    d = generate_batch(ward_scenario(), 4)
    names = d.visible_space.names[:5]
    out, measure = hide_confounders(d, names)
    assert measure == pytest.approx(30 / 35)
    assert out.visible_space.dim == 30
    assert set(out.hidden_columns) == set(names)


def test_hide_unknown_feature():
    d = generate_batch(ward_scenario(confounding=("spo2",)), 2)
    with pytest.raises(ConfigError):
        hide_confounders(d, ["spo2"])
    with pytest.raises(ConfigError):
        hide_confounders(d, ["no_such_feature"])


def test_hiding_during_or_after_generation_agree():
    hidden = ("spo2", "pulse", "resp_rate")
    during = generate_batch(ward_scenario(confounding=hidden, seed=3), 20)
    after, measure = hide_confounders(generate_batch(ward_scenario(seed=3), 20), hidden)
    assert measure == pytest.approx(32 / 35)
    assert during.hidden_columns == after.hidden_columns
    for a, b in zip(during.trajectories, after.trajectories):
        assert np.array_equal(a.actions, b.actions)
        assert np.array_equal(a.observations, b.observations)


def test_scenario_validation():
    domain = builtin_domain("ward_synth", 2, max_length=20)
    env, policy = ground_truth_css(domain), sticky_policy(domain)
    with pytest.raises(ScenarioError):
        Scenario(domain, env, policy, ("not_a_feature",))
    with pytest.raises(ScenarioError):
        Scenario(domain, env, policy, domain.temporal_space.names)
    with pytest.raises(ScenarioError):
        Scenario(domain, env, policy, horizon=21)
    with pytest.raises(ScenarioError):
        Scenario(domain, env, policy, horizon=10, min_len=11)
    other = builtin_domain("ward_synth", 4, max_length=20)
    with pytest.raises(ScenarioError):
        Scenario(domain, ground_truth_css(other), policy)
    with pytest.raises(ScenarioError):
        Scenario(domain, env, sticky_policy(other))
    with pytest.raises(ConfigError):
        generate_batch(Scenario(domain, env, policy), -1)


# ------------------------------------------------------------ disentanglement


def test_policy_swap_leaves_environment_draws_alone():
    # two different policy objects that take the same actions
    domain = builtin_domain("ward_synth", 2, max_length=20)
    a = ward_scenario(policy=sticky_policy(domain, beta=50.0, first_action=1), seed=6)
    b = ward_scenario(policy=sticky_policy(domain, beta=60.0, first_action=1), seed=6)
    assert a.policy.digest() != b.policy.digest()
    da, db = generate_batch(a, 10), generate_batch(b, 10)
    for ta, tb in zip(da.trajectories, db.trajectories):
        assert np.array_equal(ta.actions, tb.actions)
        assert np.array_equal(ta.observations, tb.observations)


def test_step_distribution_ignores_policy():
    domain = builtin_domain("ward_synth", 2, max_length=20)
    a = ward_scenario(policy=sticky_policy(domain), seed=1)
    b = ward_scenario(policy=random_policy(domain, np.random.default_rng(4)), seed=1)
    for i in range(3):
        ta, tb = sample_trajectory(a, i), sample_trajectory(b, i)
        np.testing.assert_array_equal(ta.static, tb.static)
        np.testing.assert_array_equal(ta.observations[0], tb.observations[0])
        h = (ta.static, ta.observations[:3], ta.actions[:3])
        assert np.array_equal(a.env.step_distribution(*h).weights, b.env.step_distribution(*h).weights)


# ---------------------------------------------------------------------- live


def test_reset_is_repeatable():
    s = ward_scenario(confounding=("spo2",))
    _, xs1, x11 = live_reset(s, 3)
    _, xs2, x12 = live_reset(s, 3)
    assert np.array_equal(xs1, xs2) and np.array_equal(x11, x12)
    assert x11.shape == (34,)


def test_done_exactly_at_horizon():
    s = ward_scenario(horizon=6)
    session, _, _ = live_reset(s)
    flags = [live_step(session, 0)[1] for _ in range(5)]
    assert flags == [False, False, False, False, True]
    assert session.t == 6
    with pytest.raises(SessionError):
        live_step(session, 0)


def test_live_rejects_bad_use():
    s = ward_scenario()
    with pytest.raises(SessionError):
        LiveSession(s).step(0)
    session, _, _ = live_reset(s)
    with pytest.raises(DomainError):
        session.step(2)


def test_live_returns_no_reward():
    session, _, _ = live_reset(ward_scenario())
    out = live_step(session, 1)
    assert len(out) == 2 and isinstance(out[1], bool)


@pytest.mark.parametrize("kind", ["tforce", "balanced", "css", "svae"])
def test_live_rollout_reproduces_batch(kind):
    s = ward_scenario(kind, seed=11, horizon=8)
    batch = generate_batch(s, 3)
    for i, traj in enumerate(batch.trajectories):
        session, x_s, x_1 = live_reset(s, i)
        policy = PolicyRollout(s.policy, s.stream(i, "policy"))
        obs, acts = [x_1], []
        for _ in range(traj.length - 1):
            acts.append(policy.sample(x_s, np.array(obs), np.array(acts, dtype=np.int64)))
            obs.append(live_step(session, acts[-1])[0])
        acts.append(policy.sample(x_s, np.array(obs), np.array(acts, dtype=np.int64)))
        assert np.array_equal(x_s, traj.static)
        assert np.array_equal(np.array(obs), traj.observations)
        assert np.array_equal(np.array(acts), traj.actions)


# -------------------------------------------------------------------- config


def test_scenario_from_config(tmp_path):
    cfg = {
        "domain": {"name": "ward_synth", "n_actions": 2, "max_length": 20},
        "environment": {"kind": "css", "builtin": "ground_truth"},
        "policy": {"sticky": 20},
        "confounding": ["spo2"],
        "horizon": 10,
        "seed": 3,
    }
    s = scenario_from_config(cfg)
    assert s.horizon == 10 and s.min_len == 5 and s.seed == 3 and s.confounding == ("spo2",)
    assert scenario_from_config(cfg, seed=9).seed == 9
    for key in ("domain", "environment", "policy"):
        with pytest.raises(ScenarioError):
            scenario_from_config({k: v for k, v in cfg.items() if k != key})
    with pytest.raises(ScenarioError):
        scenario_from_config({**cfg, "horizon": "long"})
    (tmp_path / "s.json").write_text(json.dumps(cfg))
    assert load_scenario(tmp_path / "s.json").digest() == s.digest()
