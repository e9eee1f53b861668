import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.special import expit, logsumexp

from conftest import random_trajectory, small_schema
from oracles import emission_table, enumerate_loglik, enumerate_next_state, io_hmm_loglik, np_mlp
from dmkit.diff import ParamStore, TrainConfig, finite_difference_grads, gradient_check, value_and_grad
from dmkit.environments import (
    Attention,
    BalancedModel,
    CssInferenceNet,
    CssModel,
    CssVariationalObjective,
    InitModel,
    MarkovPosterior,
    SvaeModel,
    TForceModel,
    balanced_repr_loss,
    collate,
    create_env,
    css_attention,
    css_elbo,
    env_from_config,
    exact_posterior,
    ground_truth_css,
    ground_truth_transitions,
    load_env,
    save_env,
    svae_elbo,
    train_env,
)
from dmkit.environments.css import all_paths, exact_elbo, markov_log_q
from dmkit.errors import ConfigError, DimensionError, SizeError
from dmkit.schema import BatchDataset, Trajectory, builtin_domain


def numpy_params(model):
    return {k: v.detach().numpy() for k, v in model.params.items()}


def oracle_inputs(model, traj):
    p = numpy_params(model)
    log_pi = p["init_logits"] - logsumexp(p["init_logits"])
    P = np.exp(p["trans_logits"] - logsumexp(p["trans_logits"], axis=-1, keepdims=True))
    E = emission_table(p, model.n_states, model.schema.temporal_space.continuous_dims, traj)
    return log_pi, P, E, p.get("attn_logits", np.zeros(0))


def css_loglik(model, traj):
    with torch.no_grad():
        return float(model.log_likelihood(model.params, collate([traj], model.schema.n_actions))[0])


# ------------------------------------------------------------- attention


def test_attention_examples():
    assert css_attention(Attention(), 5).tolist() == [1, 0, 0, 0]
    assert css_attention(Attention("fixed", (0.5, 0.5)), 3).tolist() == [0.5, 0.5]
    assert css_attention(Attention("window", window=2, learned=True), 4, [0.0, 0.0]).tolist() == [0.5, 0.5, 0.0]


def test_fixed_attention_folds_unavailable_lags_onto_oldest():
    assert css_attention(Attention("fixed", (0.5, 0.3, 0.2)), 2).tolist() == [1.0]
    np.testing.assert_allclose(css_attention(Attention("fixed", (0.5, 0.3, 0.2)), 3), [0.5, 0.5])


@pytest.mark.parametrize("bad", [
    dict(mode="fixed", weights=(-0.1, 1.1)),
    dict(mode="fixed", weights=(0.0, 0.0)),
    dict(mode="fixed", weights=()),
    dict(mode="window", window=0),
    dict(mode="markov", weights=(1.0,)),
    dict(mode="sideways"),
])
def test_attention_rejects_bad_specs(bad):
    with pytest.raises(ConfigError):
        Attention(**bad)


def test_attention_needs_two_steps():
    with pytest.raises(ConfigError):
        css_attention(Attention(), 1)


@given(st.lists(st.floats(0.0, 10.0), min_size=1, max_size=6).filter(lambda w: sum(w) > 0), st.integers(2, 12))
def test_attention_is_a_distribution(weights, t):
    a = css_attention(Attention("fixed", tuple(weights)), t)
    assert a.shape == (t - 1,)
    assert np.all(a >= 0)
    assert abs(a.sum() - 1.0) <= 1e-9


@given(st.lists(st.floats(-20, 20), min_size=1, max_size=5), st.integers(2, 10))
def test_window_attention_is_a_distribution(logits, t):
    a = css_attention(Attention("window", window=len(logits), learned=True), t, logits)
    assert abs(a.sum() - 1.0) <= 1e-9
    assert np.all(a[min(len(logits), t - 1):] == 0)


# ------------------------------------------------------ exact likelihood


@settings(max_examples=40)
@given(st.integers(0, 10**6), st.integers(2, 4), st.integers(1, 8), st.integers(2, 4))
def test_markov_css_matches_forward_algorithm(seed, Z, T, Y):
    schema = small_schema(Y)
    model = CssModel.create(schema, seed=seed, n_states=Z, emission_hidden=(3,))
    traj = random_trajectory(schema, T, np.random.default_rng(seed))
    log_pi, P, E, _ = oracle_inputs(model, traj)
    assert css_loglik(model, traj) == pytest.approx(io_hmm_loglik(log_pi, P, E, traj.actions), abs=1e-10)


@pytest.mark.parametrize("attention", [
    Attention("fixed", (0.6, 0.3, 0.1)),
    Attention("fixed", (0.2, 0.8)),
    Attention("window", window=2, learned=True),
    Attention("window", window=3),
])
@pytest.mark.parametrize("seed", range(4))
def test_attentive_css_matches_path_enumeration(attention, seed):
    schema = small_schema(3)
    model = CssModel.create(schema, seed=seed, n_states=2, attention=attention, emission_hidden=())
    if attention.learned:
        logits = np.random.default_rng(seed).normal(size=attention.window)
        model = model.with_params(model.params.updated({"attn_logits": torch.tensor(logits)}))
    rng = np.random.default_rng(100 + seed)
    for T in (1, 2, 3, 5):
        traj = random_trajectory(schema, T, rng)
        log_pi, P, E, logits = oracle_inputs(model, traj)
        logits = logits if attention.learned else np.zeros(attention.window)
        expected = enumerate_loglik(log_pi, P, E, traj.actions, attention.mode, attention.weights, logits)
        assert css_loglik(model, traj) == pytest.approx(expected, abs=1e-10)


def test_handcrafted_three_step_instance_matches_eight_paths():
    schema = small_schema(2, nc=1, nb=0, sc=1, sb=0)
    P = np.array([[[0.9, 0.1], [0.3, 0.7]], [[0.5, 0.5], [0.2, 0.8]]])
    weight = np.array([[-1.0, 1.0, 0.5], [0.0, 0.0, 0.0]])
    model = CssModel.from_probabilities(
        schema, np.array([0.4, 0.6]), P, {"emit.0.weight": weight, "emit.0.bias": np.zeros(2)},
    )
    traj = Trajectory(np.array([0.2]), np.array([[-0.5], [0.7], [1.1]]), np.array([1, 0, 1]))
    total = []
    for z in np.ndindex(2, 2, 2):
        lp = math.log([0.4, 0.6][z[0]])
        lp += math.log(P[traj.actions[0], z[0], z[1]]) + math.log(P[traj.actions[1], z[1], z[2]])
        for t in range(3):
            mean = weight[0, z[t]] + 0.5 * 0.2
            lp += -0.5 * (math.log(2 * math.pi) + (traj.observations[t, 0] - mean) ** 2)
        total.append(lp)
    assert css_loglik(model, traj) == pytest.approx(float(logsumexp(total)), abs=1e-12)


def test_single_step_is_a_state_mixture():
    schema = small_schema(2)
    model = CssModel.create(schema, seed=5, n_states=3, emission_hidden=(4,))
    traj = random_trajectory(schema, 1, np.random.default_rng(3))
    p = numpy_params(model)
    pi = np.exp(p["init_logits"] - logsumexp(p["init_logits"]))
    E = emission_table(p, 3, 2, traj)[0]
    assert css_loglik(model, traj) == pytest.approx(math.log(np.sum(pi * np.exp(E))), abs=1e-12)


def test_padded_batch_matches_single_rows():
    schema = small_schema(3)
    model = CssModel.create(schema, seed=1, n_states=3, attention=Attention("fixed", (0.7, 0.3)), emission_hidden=(4,))
    rng = np.random.default_rng(2)
    trajs = [random_trajectory(schema, T, rng) for T in (1, 4, 2, 6)]
    with torch.no_grad():
        batched = model.log_likelihood(model.params, collate(trajs, 3)).numpy()
    np.testing.assert_allclose(batched, [css_loglik(model, t) for t in trajs], atol=1e-12)


def test_enumeration_guard():
    schema = small_schema(2, max_length=20)
    model = CssModel.create(schema, n_states=3, attention=Attention("window", window=13), emission_hidden=())
    traj = random_trajectory(schema, 15, np.random.default_rng(0))
    with pytest.raises(SizeError, match="ELBO"):
        css_loglik(model, traj)
    with pytest.raises(SizeError):
        all_paths(4, 11)


def test_transition_rows_normalised():
    model = CssModel.create(small_schema(4), seed=9, n_states=4)
    rows = model.transition_probs().detach().numpy().sum(-1)
    assert np.max(np.abs(rows - 1.0)) <= 1e-12


# ---------------------------------------------------- step distributions


@pytest.mark.parametrize("attention", [Attention(), Attention("fixed", (0.5, 0.3, 0.2)), Attention("window", window=2)])
@pytest.mark.parametrize("seed", range(3))
def test_css_next_state_matches_enumeration(attention, seed):
    schema = small_schema(2)
    model = CssModel.create(schema, seed=seed, n_states=2, attention=attention, emission_hidden=(3,))
    traj = random_trajectory(schema, 3, np.random.default_rng(seed))
    log_pi, P, E, logits = oracle_inputs(model, traj)
    logits = logits if attention.learned else np.zeros(attention.width)
    expected = enumerate_next_state(log_pi, P, E, traj.actions, attention.mode, attention.weights, logits)
    sd = model.step_distribution(traj.static, traj.observations, traj.actions)
    np.testing.assert_allclose(sd.weights, expected, atol=1e-12)


def test_css_predictive_density_is_likelihood_ratio():
    schema = small_schema(3)
    model = CssModel.create(schema, seed=4, n_states=3, attention=Attention("fixed", (0.6, 0.4)), emission_hidden=(4,))
    traj = random_trajectory(schema, 5, np.random.default_rng(8))
    head = Trajectory(traj.static, traj.observations[:4], traj.actions[:4])
    sd = model.step_distribution(head.static, head.observations, head.actions)
    ratio = css_loglik(model, Trajectory(traj.static, traj.observations, np.r_[head.actions, 0])) - css_loglik(model, head)
    assert sd.log_prob(traj.observations[4]) == pytest.approx(ratio, abs=1e-10)


def test_identity_transitions_freeze_the_latent():
    schema = small_schema(2)
    base = CssModel.create(schema, seed=0, n_states=3, emission_hidden=(4,))
    model = CssModel.from_probabilities(
        schema, np.array([1.0, 0.0, 0.0]), np.stack([np.eye(3)] * 2),
        {k: v.numpy() for k, v in base.params.items() if k.startswith("emit.")}, emission_hidden=(4,),
    )
    traj = random_trajectory(schema, 6, np.random.default_rng(0))
    first = model.step_distribution(traj.static, traj.observations[:1], traj.actions[:1])
    for t in range(2, 7):
        sd = model.step_distribution(traj.static, traj.observations[:t], traj.actions[:t])
        # off-diagonal zeros sit at the 1e-12 probability floor
        assert sd.weights[0] == pytest.approx(1.0, abs=1e-10)
        np.testing.assert_array_equal(sd.params, first.params)


def test_zero_tforce_is_uniform_and_unit_gaussian():
    schema = small_schema(2)
    model = TForceModel.create(schema, hidden=4, dense_sizes=(3,))
    zero = model.with_params(ParamStore({k: torch.zeros_like(v) for k, v in model.params.items()}))
    traj = random_trajectory(schema, 4, np.random.default_rng(0))
    sd = zero.step_distribution(traj.static, traj.observations, traj.actions)
    np.testing.assert_array_equal(sd.params, np.zeros((1, 5)))
    mean = sd.mean()
    assert mean[:2].tolist() == [0.0, 0.0] and mean[2] == 0.5


@pytest.mark.parametrize("kind", ["tforce", "balanced", "css", "svae"])
def test_step_distribution_rejects_bad_history(kind):
    schema = small_schema(2)
    env = create_env(kind, schema, seed=0)
    traj = random_trajectory(schema, 3, np.random.default_rng(0))
    with pytest.raises(DimensionError):
        env.step_distribution(traj.static, traj.observations[:, :2], traj.actions)
    with pytest.raises(DimensionError):
        env.step_distribution(traj.static, traj.observations, traj.actions[:2])
    with pytest.raises(DimensionError):
        env.step_distribution(traj.static, traj.observations[:0], traj.actions[:0])


def test_css_emission_depends_on_static_features():
    schema = small_schema(2)
    model = CssModel.create(schema, seed=2, n_states=2, emission_hidden=(8,))
    obs, acts = np.zeros((2, 3)), np.array([0, 1])
    a = model.step_distribution(np.array([0.0, 0.0]), obs, acts).params
    b = model.step_distribution(np.array([1.5, 1.0]), obs, acts).params
    assert np.all(np.abs(a - b).sum(1) > 1e-6)


def test_tforce_sampling_matches_entropy():
    schema = small_schema(2)
    model = TForceModel.create(schema, seed=3, hidden=4, dense_sizes=(4,))
    traj = random_trajectory(schema, 3, np.random.default_rng(1))
    sd = model.step_distribution(traj.static, traj.observations, traj.actions)
    raw = sd.params[0]
    logvar = np.clip(raw[2:4], -10, 10)
    p = expit(raw[4])
    entropy = 0.5 * np.sum(np.log(2 * math.pi * math.e) + logvar) - (p * math.log(p) + (1 - p) * math.log(1 - p))
    rng = np.random.default_rng(0)
    nll = np.array([-sd.log_prob(sd.sample(rng)) for _ in range(10_000)])
    assert abs(nll.mean() - entropy) <= 3 * nll.std(ddof=1) / math.sqrt(len(nll))


def test_simulators_are_reproducible():
    schema = small_schema(2)
    for kind in ("tforce", "balanced", "css", "svae"):
        env = create_env(kind, schema, seed=1)
        runs = []
        for _ in range(2):
            rng = np.random.default_rng(7)
            x_s, x_1 = env.sample_initial(rng)
            sim = env.simulator(x_s, x_1, rng)
            runs.append(np.array([sim.step(a) for a in (0, 1, 1, 0)]))
        np.testing.assert_array_equal(runs[0], runs[1])
        assert np.all(np.isin(runs[0][:, 2], (0.0, 1.0)))


# ------------------------------------------------------------------ ELBO


def _enumerable_instance(seed):
    schema = small_schema(2)
    model = CssModel.create(schema, seed=seed, n_states=2, attention=Attention("fixed", (0.7, 0.3)), emission_hidden=(3,))
    return model, random_trajectory(schema, 4, np.random.default_rng(seed))


def test_elbo_with_exact_posterior_equals_loglik():
    model, traj = _enumerable_instance(0)
    est = css_elbo(model, traj, exact_posterior(model, traj), 10_000, np.random.default_rng(0))
    assert abs(est.value - css_loglik(model, traj)) <= 3 * est.stderr + 1e-9


@pytest.mark.parametrize("seed", range(10))
def test_elbo_never_exceeds_loglik(seed):
    model, traj = _enumerable_instance(seed)
    rng = np.random.default_rng(seed)
    ll = css_loglik(model, traj)
    net = CssInferenceNet(model, hidden=4, seed=seed)
    random_q = MarkovPosterior(rng.dirichlet(np.ones(2)), rng.dirichlet(np.ones(2), size=(3, 2)))
    for q in (net.posterior(traj), random_q):
        est = css_elbo(model, traj, q, 2000, rng)
        assert est.value <= ll + 3 * est.stderr


def test_elbo_rejects_zero_samples():
    model, traj = _enumerable_instance(0)
    with pytest.raises(ConfigError):
        css_elbo(model, traj, exact_posterior(model, traj), 0, np.random.default_rng(0))


def test_svae_prior_posterior_has_zero_kl():
    schema = small_schema(2)
    model = SvaeModel.create(schema, seed=0, latent_dim=2, hidden=4, dense_sizes=(4,))
    traj = random_trajectory(schema, 5, np.random.default_rng(0))
    est = svae_elbo(model, traj, 200, np.random.default_rng(1), posterior="prior")
    assert est.kl == 0.0
    assert est.value == pytest.approx(est.reconstruction, abs=1e-12)
    enc = svae_elbo(model, traj, 200, np.random.default_rng(1))
    assert enc.kl > 0


# --------------------------------------------------------------- gradients


def _grad_batch(schema, seed, noise_shape=None):
    rng = np.random.default_rng(seed)
    trajs = [random_trajectory(schema, T, rng) for T in (3, 2)]
    noise = None if noise_shape is None else noise_shape(rng, len(trajs), 3)
    return collate(trajs, schema.n_actions, noise)


def _split_grad_error(loss_fn, params, targets):
    """Worst relative error of autograd(loss_fn) against central differences of a per-group target."""
    _, analytic = value_and_grad(loss_fn, params)
    worst = 0.0
    for names, target in targets:
        numeric = finite_difference_grads(target, params)
        for k in names:
            a, n = analytic[k].numpy(), numeric[k]
            worst = max(worst, float(np.max(np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), 1e-6))))
    return worst


@pytest.mark.parametrize("seed", range(3))
def test_tforce_gradients(seed):
    schema = small_schema(2)
    batch = _grad_batch(schema, seed)
    m = create_env("tforce", schema, seed=seed, hidden=3, dense_sizes=(3,))
    assert gradient_check(lambda p: m.loss(p, batch).sum(), m.params) <= 1e-4


@pytest.mark.parametrize("seed", range(3))
def test_balanced_gradients_reverse_the_adversary(seed):
    schema = small_schema(2)
    batch = _grad_batch(schema, seed)
    m = create_env("balanced", schema, seed=seed, hidden=3, dense_sizes=(3,), balance=2.5)
    adv = [k for k in m.params if k.startswith("adv.")]
    rest = [k for k in m.params if k not in adv]

    def representation_target(p):
        nll, act = balanced_repr_loss(m, batch, p)
        return (nll - m.balance * act).sum()

    def adversary_target(p):
        return balanced_repr_loss(m, batch, p)[1].sum()

    err = _split_grad_error(lambda p: m.loss(p, batch).sum(), m.params,
                            [(rest, representation_target), (adv, adversary_target)])
    assert err <= 1e-4


@pytest.mark.parametrize("seed", range(3))
def test_css_variational_model_gradients(seed):
    """The exact enumerated ELBO is differentiated correctly."""
    schema = small_schema(2)
    m = CssModel.create(schema, seed=seed, n_states=2, emission_hidden=())
    net = CssInferenceNet(m, hidden=3, seed=seed)
    joint = ParamStore({**dict(m.params.items()), **dict(net.params.items())})
    traj = random_trajectory(schema, 3, np.random.default_rng(seed))
    assert gradient_check(lambda p: _exact_negative_elbo(m, net, traj, p), joint) <= 1e-4


def _exact_negative_elbo(model, net, traj, p):
    paths = all_paths(model.n_states, traj.length)
    first, trans = net.tables(p, collate([traj], model.schema.n_actions))
    log_q = markov_log_q(first[0], trans[0], torch.as_tensor(paths))
    return -exact_elbo(model, p, traj, log_q, paths) / traj.length


@pytest.mark.parametrize("seed", range(3))
def test_css_score_function_gradient_is_unbiased(seed):
    schema = small_schema(2)
    m = CssModel.create(schema, seed=seed, n_states=2, emission_hidden=())
    net = CssInferenceNet(m, hidden=3, seed=seed)
    objective = CssVariationalObjective(m, net)
    joint = ParamStore({**dict(m.params.items()), **dict(net.params.items())})
    traj = random_trajectory(schema, 3, np.random.default_rng(seed))
    batch = collate([traj], 2, np.random.default_rng(seed).random((1, 200_000, 3)))
    _, estimate = value_and_grad(lambda p: objective(p, batch).sum(), joint)
    _, exact = value_and_grad(lambda p: _exact_negative_elbo(m, net, traj, p), joint)
    scale = max(float(exact[k].abs().max()) for k in joint)
    for k in joint:
        assert float((estimate[k] - exact[k]).abs().max()) <= 0.02 * scale


@pytest.mark.parametrize("seed", range(3))
def test_svae_gradients(seed):
    schema = small_schema(2)
    m = SvaeModel.create(schema, seed=seed, latent_dim=2, hidden=3, dense_sizes=(3,))
    batch = _grad_batch(schema, seed, lambda rng, B, T: rng.standard_normal((B, 2, T, 2)))
    assert gradient_check(lambda p: m.loss(p, batch).sum(), m.params) <= 1e-4


# ---------------------------------------------------------------- balanced


def test_balanced_zero_weight_is_tforce():
    schema = small_schema(3)
    bal = BalancedModel.create(schema, seed=4, hidden=5, dense_sizes=(4,), balance=0.0)
    tf = TForceModel.create(schema, seed=4, hidden=5, dense_sizes=(4,))
    assert all(torch.equal(tf.params[k], bal.params[k]) for k in tf.params)
    batch = _grad_batch(schema, 0)
    nll, _ = balanced_repr_loss(bal, batch)
    assert torch.equal(nll, tf.loss(tf.params, batch))
    _, g_bal = value_and_grad(lambda p: bal.loss(p, batch).sum(), bal.params)
    _, g_tf = value_and_grad(lambda p: tf.loss(p, batch).sum(), tf.params)
    for k in tf.params:
        torch.testing.assert_close(g_bal[k], g_tf[k], rtol=0, atol=1e-15)


def test_balanced_rejects_negative_weight():
    with pytest.raises(ConfigError):
        BalancedModel.create(small_schema(2), balance=-1.0)


def _shuffled_action_data(schema, n, seed):
    rng = np.random.default_rng(seed)
    return [random_trajectory(schema, 6, rng) for _ in range(n)]


def test_adversary_is_at_chance_when_actions_are_independent():
    schema = small_schema(3)
    train = _shuffled_action_data(schema, 60, 0)
    dataset = BatchDataset(schema, train)
    cfg = TrainConfig(learning_rate=0.05, epochs=10, batch_size=16, seed=0)
    model, _ = train_env("balanced", dataset, cfg, hidden=6, dense_sizes=(6,), balance=1.0)
    test = collate(_shuffled_action_data(schema, 400, 1), 3)
    acc = model.action_accuracy(test)
    n = float(test.mask.sum())
    assert abs(acc - 1 / 3) <= 3 * math.sqrt((1 / 3) * (2 / 3) / n)


def _action_follows_first_feature(n, seed):
    rng = np.random.default_rng(seed)
    schema = small_schema(2)
    out = []
    for _ in range(n):
        x = np.c_[rng.normal(size=(6, 2)), rng.integers(0, 2, (6, 1))].astype(float)
        out.append(Trajectory(np.r_[rng.normal(), 1.0], x, (x[:, 0] > 0).astype(np.int64)))
    return schema, out


def test_strong_balancing_lowers_adversary_accuracy():
    schema, train = _action_follows_first_feature(100, 0)
    test = collate(_action_follows_first_feature(300, 1)[1], 2)
    hyper = dict(hidden=6, dense_sizes=(6,))
    before, strong, none = [], [], []
    for seed in range(5):
        cfg = TrainConfig(learning_rate=0.01, epochs=15, batch_size=16, grad_clip=1.0, seed=seed)
        before.append(create_env("balanced", schema, seed=seed, balance=1e3, **hyper).action_accuracy(test))
        strong.append(train_env("balanced", BatchDataset(schema, train), cfg, balance=1e3, **hyper)[0].action_accuracy(test))
        none.append(train_env("balanced", BatchDataset(schema, train), cfg, balance=0.0, **hyper)[0].action_accuracy(test))
    assert np.mean(strong) <= np.mean(before)
    assert np.mean(strong) < np.mean(none)


# ----------------------------------------------------------------- training


@pytest.mark.parametrize("kind", ["tforce", "balanced", "css", "svae"])
def test_zero_epochs_returns_initial_model(kind):
    schema = small_schema(2)
    dataset = BatchDataset(schema, _shuffled_action_data(schema, 5, 0))
    model, curve = train_env(kind, dataset, TrainConfig(epochs=0, seed=3))
    assert curve == []
    fresh = create_env(kind, schema, seed=3, init=InitModel.fit(schema, dataset.trajectories))
    assert model.params.bit_equal(fresh.params)


@pytest.mark.parametrize("seed", range(5))
def test_tforce_improves_on_constant_data(seed):
    schema = small_schema(2)
    traj = Trajectory(np.array([0.5, 1.0]), np.tile([1.0, -1.0, 1.0], (6, 1)), np.zeros(6, dtype=np.int64))
    dataset = BatchDataset(schema, [traj] * 8)
    cfg = TrainConfig(learning_rate=0.01, epochs=50, batch_size=8, grad_clip=1.0, seed=seed)
    model, curve = train_env("tforce", dataset, cfg, hidden=4, dense_sizes=(4,))
    batch = collate([traj], 2)
    init = create_env("tforce", schema, seed=seed, hidden=4, dense_sizes=(4,))
    with torch.no_grad():
        assert float(model.loss(model.params, batch)[0]) <= float(init.loss(init.params, batch)[0])
    assert len(curve) == 50


def test_training_is_bit_reproducible():
    schema = small_schema(2)
    dataset = BatchDataset(schema, _shuffled_action_data(schema, 12, 0))
    cfg = TrainConfig(learning_rate=0.05, epochs=2, batch_size=4, seed=1)
    runs = [train_env("svae", dataset, cfg, latent_dim=2, hidden=3, dense_sizes=(3,)) for _ in range(2)]
    assert runs[0][0].params.bit_equal(runs[1][0].params)
    assert runs[0][1] == runs[1][1]


def test_css_variational_training_runs():
    schema = small_schema(2)
    dataset = BatchDataset(schema, _shuffled_action_data(schema, 8, 0))
    cfg = TrainConfig(learning_rate=0.05, epochs=2, batch_size=4, seed=1)
    model, curve = train_env("css", dataset, cfg, css_objective="variational", n_states=2, emission_hidden=())
    assert len(curve) == 2 and all(math.isfinite(c) for c in curve)
    with pytest.raises(ConfigError):
        train_env("css", dataset, cfg, css_objective="bogus", n_states=2)


# ---------------------------------------------------------------- InitModel


def test_init_zero_covariance_and_certain_flags():
    schema = small_schema(2, sc=2, sb=2)
    m = InitModel.standard(schema)
    m = InitModel(np.zeros(2), np.zeros((2, 2)), np.ones(2), m.first_weight, m.first_bias, m.first_chol,
                  m.first_logit_weight, m.first_logit_bias)
    rng = np.random.default_rng(0)
    for _ in range(50):
        x_s, x_1 = m.sample(rng)
        assert x_s.tolist() == [0.0, 0.0, 1.0, 1.0]
        assert x_1.shape == (3,) and x_1[2] in (0.0, 1.0)


def test_init_empirical_mean_within_clt_bound():
    schema = small_schema(2, sc=2, sb=1)
    m = InitModel(np.array([1.0, -2.0]), np.array([[1.0, 0.0], [0.5, 0.8]]), np.array([0.3]),
                  np.zeros((2, 3)), np.zeros(2), np.eye(2), np.zeros((1, 3)), np.zeros(1))
    rng = np.random.default_rng(0)
    n = 100_000
    xs = np.array([m.sample(rng)[0] for _ in range(n)])
    mean, var = m.static_moments()
    assert np.all(np.abs(xs.mean(0) - mean) <= 4 * np.sqrt(var / n))


def test_init_fit_recovers_linear_first_step():
    schema = small_schema(2, nc=1, nb=1, sc=1, sb=0)
    rng = np.random.default_rng(0)
    trajs = []
    for _ in range(4000):
        s = rng.normal(1.0, 2.0, 1)
        x = np.array([0.5 * s[0] - 1.0 + 0.3 * rng.standard_normal(), float(rng.random() < expit(s[0]))])
        trajs.append(Trajectory(s, x[None], np.zeros(1, dtype=np.int64)))
    m = InitModel.fit(schema, trajs)
    assert m.static_mean[0] == pytest.approx(1.0, abs=0.1)
    assert m.static_chol[0, 0] == pytest.approx(2.0, abs=0.1)
    assert m.first_weight[0, 0] == pytest.approx(0.5, abs=0.05)
    assert m.first_bias[0] == pytest.approx(-1.0, abs=0.05)
    assert m.first_chol[0, 0] == pytest.approx(0.3, abs=0.03)
    assert m.first_logit_weight[0, 0] == pytest.approx(1.0, abs=0.2)


# -------------------------------------------------------------- persistence


@pytest.mark.parametrize("kind", ["tforce", "balanced", "css", "svae"])
def test_save_load_round_trip(kind, tmp_path):
    env = create_env(kind, small_schema(2), seed=2)
    path = save_env(env, tmp_path / f"{kind}.json")
    back = load_env(path)
    assert type(back) is type(env)
    assert back.digest() == env.digest()


def test_env_config_errors(tmp_path):
    with pytest.raises(ConfigError):
        env_from_config({"schema": "ward_synth"})
    with pytest.raises(ConfigError):
        env_from_config({"kind": "lstm", "schema": "ward_synth"})
    with pytest.raises(ConfigError):
        env_from_config({"kind": "css", "checkpoint": str(tmp_path / "missing.json")})
    with pytest.raises(ConfigError):
        env_from_config({"kind": "css"})


def test_env_config_checkpoint_kind_must_match(tmp_path):
    save_env(create_env("tforce", small_schema(2)), tmp_path / "m.json")
    assert env_from_config({"kind": "tforce", "checkpoint": "m.json"}, tmp_path).kind == "tforce"
    with pytest.raises(ConfigError):
        env_from_config({"kind": "svae", "checkpoint": "m.json"}, tmp_path)


@pytest.mark.parametrize("n_actions", [2, 4, 8])
def test_ground_truth_transitions_are_stochastic(n_actions):
    schema = builtin_domain("ward_synth", n_actions)
    P = ground_truth_transitions(schema)
    assert P.shape == (n_actions, 3, 3)
    assert np.max(np.abs(P.sum(-1) - 1.0)) <= 1e-12
    model = ground_truth_css(schema)
    assert np.max(np.abs(model.transition_probs().numpy().sum(-1) - 1.0)) <= 1e-12
    assert env_from_config({"kind": "css", "schema": schema.to_dict(), "builtin": "ground_truth"}).digest() == model.digest()


def test_emission_oracle_agrees_with_model_mlp():
    model = CssModel.create(small_schema(2), seed=0, n_states=2, emission_hidden=(4, 3))
    p = numpy_params(model)
    static = np.array([[0.3, 1.0]])
    with torch.no_grad():
        raw = model.emission_raw(model.params, torch.tensor(static))[0].numpy()
    expected = np_mlp(p, "emit", np.hstack([np.eye(2), np.repeat(static, 2, 0)]))
    np.testing.assert_allclose(raw, expected, atol=1e-13)
