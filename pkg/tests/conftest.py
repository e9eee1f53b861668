import os
import sys

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from dmkit.schema import ActionSpace, DomainSchema, FeatureSpace, Trajectory

sys.path.insert(0, os.path.dirname(__file__))

settings.register_profile(
    "dmkit", deadline=None, suppress_health_check=[HealthCheck.too_slow], derandomize=True,
)
settings.load_profile("dmkit")


def small_schema(n_actions: int = 2, max_length: int = 10, nc: int = 2, nb: int = 1, sc: int = 1, sb: int = 1):
    temporal = FeatureSpace(nc, nb, tuple(f"x{i}" for i in range(nc)) + tuple(f"flag{i}" for i in range(nb)))
    static = FeatureSpace(sc, sb, tuple(f"s{i}" for i in range(sc)) + tuple(f"sflag{i}" for i in range(sb)))
    return DomainSchema("small", static, temporal, ActionSpace(n_actions), max_length)


def random_trajectory(schema: DomainSchema, T: int, rng: np.random.Generator) -> Trajectory:
    ss, xs = schema.static_space, schema.temporal_space
    static = np.concatenate([rng.standard_normal(ss.continuous_dims), rng.integers(0, 2, ss.binary_dims)])
    obs = np.hstack([rng.standard_normal((T, xs.continuous_dims)), rng.integers(0, 2, (T, xs.binary_dims))])
    return Trajectory(static.astype(float), obs.astype(float), rng.integers(0, schema.n_actions, T))


@pytest.fixture
def schema2():
    return small_schema(2)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
