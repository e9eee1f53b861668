"""Environment models: initialisation plus autoregressive step models."""
from .base import Environment, InitModel, SequenceBatch, Simulator, StepDistribution, collate, history_batch
from .builtin import ground_truth_css, ground_truth_transitions
from .css import (
    Attention,
    CssInferenceNet,
    CssModel,
    CssVariationalObjective,
    ElboEstimate,
    MarkovPosterior,
    PathPosterior,
    align_transitions,
    all_paths,
    css_attention,
    css_elbo,
    exact_elbo,
    exact_posterior,
)
from .recurrent import BalancedModel, TForceModel, balanced_repr_loss
from .svae import SvaeElbo, SvaeModel, svae_elbo
from .training import (
    ENV_KINDS,
    create_env,
    elbo,
    env_config,
    env_from_config,
    load_env,
    read_json,
    save_env,
    schema_from_config,
    train_env,
)
