"""Hand-specified ground-truth generators standing in for real clinical data.

Each built-in domain gets a three-stage CSS model (stable, deteriorating,
critical).  Treatment intensity s in [0, 1] (fraction of active binary
actions) blends an untreated and a treated transition matrix, so actions
change the drift of the latent stage.  Emissions are linear in the stage.
"""
from __future__ import annotations

import numpy as np

from ..rng import keyed_rng
from ..schema import DomainSchema
from .base import InitModel
from .css import Attention, CssModel

UNTREATED = np.array([[0.85, 0.15, 0.00], [0.05, 0.80, 0.15], [0.00, 0.10, 0.90]])
TREATED = np.array([[0.95, 0.05, 0.00], [0.30, 0.65, 0.05], [0.00, 0.35, 0.65]])
INITIAL = np.array([0.6, 0.3, 0.1])
ATTENTION = Attention("fixed", (0.75, 0.25))
OBS_LOGVAR = float(np.log(0.25))


def treatment_intensity(schema: DomainSchema, action: int) -> float:
    space = schema.action_space
    if space.is_factored:
        return bin(action).count("1") / space.n_bits
    return action / (space.cardinality - 1)


def ground_truth_transitions(schema: DomainSchema) -> np.ndarray:
    return np.stack(
        [(1 - s) * UNTREATED + s * TREATED for s in (treatment_intensity(schema, y) for y in range(schema.n_actions))]
    )


def ground_truth_css(schema: DomainSchema) -> CssModel:
    """Deterministic ground-truth CSS for ``schema`` (values keyed by the domain name)."""
    rng = keyed_rng("ground-truth", schema.name)
    xs, ss = schema.temporal_space, schema.static_space
    xc, xb, ds, Z = xs.continuous_dims, xs.binary_dims, ss.dim, 3

    base_c = rng.normal(0.0, 1.0, xc)
    drift_c = rng.normal(0.0, 1.0, xc)
    static_c = rng.normal(0.0, 0.1, (xc, ds))
    base_b = rng.normal(-0.5, 0.5, xb)
    drift_b = rng.normal(0.0, 1.0, xb)

    stages = np.arange(Z, dtype=np.float64)
    weight = np.zeros((2 * xc + xb, Z + ds))
    weight[:xc, :Z] = base_c[:, None] + drift_c[:, None] * stages[None, :]
    weight[:xc, Z:] = static_c
    weight[xc : 2 * xc, :Z] = OBS_LOGVAR
    weight[2 * xc :, :Z] = base_b[:, None] + drift_b[:, None] * stages[None, :]
    bias = np.zeros(2 * xc + xb)

    init = InitModel(
        static_mean=np.zeros(ss.continuous_dims),
        static_chol=np.eye(ss.continuous_dims),
        static_prob=np.full(ss.binary_dims, 0.3),
        first_weight=static_c,
        first_bias=base_c + drift_c * float(INITIAL @ stages),
        first_chol=np.diag(np.full(xc, 0.75)),
        first_logit_weight=np.zeros((xb, ds)),
        first_logit_bias=base_b + drift_b * float(INITIAL @ stages),
    )
    return CssModel.from_probabilities(
        schema, INITIAL, ground_truth_transitions(schema),
        {"emit.0.weight": weight, "emit.0.bias": bias},
        init=init, attention=ATTENTION, emission_hidden=(),
    )
