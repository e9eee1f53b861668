"""Scenario-based simulation of sequential decision-making data.

A scenario binds a domain schema, an environment model and a behaviour
policy; datasets generated from it carry the digest of that configuration.
"""
from .errors import ConfigError, DmkitError
from .policies import PolicySpec, policy_distribution
from .scenario import LiveSession, Scenario, generate_batch, hide_confounders, load_scenario
from .schema import BatchDataset, DomainSchema, Trajectory, builtin_domain, deserialize_dataset, serialize_dataset

__version__ = "0.1.0"

__all__ = [
    "BatchDataset",
    "ConfigError",
    "DmkitError",
    "DomainSchema",
    "LiveSession",
    "PolicySpec",
    "Scenario",
    "Trajectory",
    "builtin_domain",
    "deserialize_dataset",
    "generate_batch",
    "hide_confounders",
    "load_scenario",
    "policy_distribution",
    "serialize_dataset",
]
