"""Sequential latent-gaussian environment.

z_1 ~ N(0, I), z_t | z_{t-1}, y_{t-1} ~ N(trans(z_{t-1}, y_{t-1})), and
x_t | z_t ~ emit(z_t, x_s).  The encoder q(z_t | z_{t-1}, x_{t:T}, y, x_s)
combines z_{t-1} with a backward recurrent summary of the remaining
sequence.  Training maximises a reparameterised ELBO with analytic per-step
KL terms.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
from scipy.special import logsumexp

from ..diff import DTYPE, LOGVAR_MAX, LOGVAR_MIN, ParamStore, gaussian_kl, gru_shapes, mlp, mlp_shapes, run_gru, tensor
from ..errors import ConfigError
from ..rng import keyed_rng
from ..schema import DomainSchema, Trajectory
from .base import Environment, InitModel, SequenceBatch, Simulator, StepDistribution, collate, history_batch

POSTERIORS = ("encoder", "prior")


@dataclass(frozen=True, eq=False)
class SvaeModel(Environment):
    schema: DomainSchema
    params: ParamStore
    init: InitModel
    latent_dim: int = 4
    hidden: int = 32
    dense_sizes: tuple[int, ...] = (32,)
    n_particles: int = 256

    kind = "svae"

    def __post_init__(self):
        if self.latent_dim < 1:
            raise ConfigError("latent_dim must be >= 1", "latent_dim")
        if self.n_particles < 1:
            raise ConfigError("n_particles must be >= 1", "n_particles")

    @classmethod
    def param_shapes(cls, schema, latent_dim=4, hidden=32, dense_sizes=(32,), **_):
        d, ny, ds, dx = latent_dim, schema.n_actions, schema.static_space.dim, schema.temporal_space.dim
        n_out = 2 * schema.temporal_space.continuous_dims + schema.temporal_space.binary_dims
        shapes = mlp_shapes("trans", (d + ny, *dense_sizes, 2 * d))
        shapes.update(mlp_shapes("emit", (d + ds, *dense_sizes, n_out)))
        shapes.update(gru_shapes("enc.cell", dx + ny + ds, hidden))
        shapes.update(mlp_shapes("enc.comb", (d + hidden, *dense_sizes, 2 * d)))
        return shapes

    @classmethod
    def create(cls, schema, seed=0, init=None, latent_dim=4, hidden=32, dense_sizes=(32,), n_particles=256):
        dense_sizes = tuple(dense_sizes)
        params = ParamStore.initialize(cls.param_shapes(schema, latent_dim, hidden, dense_sizes), seed)
        return cls(schema, params, init or InitModel.standard(schema), latent_dim, hidden, dense_sizes, n_particles)

    def hyperparameters(self):
        return {
            "latent_dim": self.latent_dim,
            "hidden": self.hidden,
            "dense_sizes": list(self.dense_sizes),
            "n_particles": self.n_particles,
        }

    def with_params(self, params, init=None):
        return SvaeModel(
            self.schema, params, init or self.init, self.latent_dim, self.hidden, self.dense_sizes, self.n_particles
        )

    # ------------------------------------------------------------ pieces

    def _gaussian(self, raw):
        d = self.latent_dim
        return raw[..., :d], raw[..., d:].clamp(LOGVAR_MIN, LOGVAR_MAX)

    def transition(self, p, z_prev, act_onehot):
        return self._gaussian(mlp(p, "trans", torch.cat([z_prev, act_onehot], -1)))

    def emission(self, p, z, static):
        return mlp(p, "emit", torch.cat([z, static], -1))

    def summaries(self, p, batch: SequenceBatch) -> torch.Tensor:
        T = batch.obs.shape[1]
        static = batch.static.unsqueeze(1).expand(-1, T, -1)
        u = torch.cat([batch.obs, batch.prev_onehot(), static], -1)
        return run_gru(p, "enc.cell", u, reverse=True, mask=batch.mask)

    def encoder(self, p, z_prev, summary):
        return self._gaussian(mlp(p, "enc.comb", torch.cat([z_prev, summary], -1)))

    # --------------------------------------------------------------- ELBO

    def elbo_terms(self, p, batch: SequenceBatch, posterior: str = "encoder"):
        """Per-example (reconstruction, kl) estimates from the noise in ``batch``.

        ``batch.noise`` holds standard normals [B, S, T, d].  With
        ``posterior="prior"`` q equals the generative chain, so each KL term
        is exactly zero.
        """
        if posterior not in POSTERIORS:
            raise ConfigError(f"posterior must be one of {POSTERIORS}", "posterior")
        eps = batch.noise
        B, S, T, d = eps.shape
        mask = batch.mask
        static = batch.static.unsqueeze(1).expand(B, S, -1)
        h = self.summaries(p, batch) if posterior == "encoder" else None
        z_prev = torch.zeros((B, S, d), dtype=DTYPE)
        recon = torch.zeros((B, S), dtype=DTYPE)
        kl = torch.zeros((B, S), dtype=DTYPE)
        zeros = torch.zeros((B, S, d), dtype=DTYPE)
        for t in range(T):
            if t == 0:
                pm, plv = zeros, zeros
            else:
                act = batch.act_onehot[:, t - 1].unsqueeze(1).expand(B, S, -1)
                pm, plv = self.transition(p, z_prev, act)
            if posterior == "prior":
                qm, qlv = pm, plv
            else:
                summ = h[:, t].unsqueeze(1).expand(B, S, -1)
                qm, qlv = self.encoder(p, z_prev, summ)
            z = qm + torch.exp(0.5 * qlv) * eps[:, :, t]
            raw = self.emission(p, z, static)
            obs = batch.obs[:, t].unsqueeze(1).expand(B, S, -1)
            m = mask[:, t : t + 1]
            recon = recon + self.head.log_prob(raw, obs) * m
            if posterior == "encoder":
                kl = kl + gaussian_kl(qm, qlv, pm, plv) * m
            z_prev = z
        return recon.mean(1), kl.mean(1), recon - kl

    def elbo(self, p, batch: SequenceBatch, posterior: str = "encoder") -> torch.Tensor:
        recon, kl, _ = self.elbo_terms(p, batch, posterior)
        return recon - kl

    def loss(self, p, batch):
        return -self.elbo(p, batch) / batch.lengths

    def training_noise(self, n_samples: int, T: int, rng: np.random.Generator, batch_size: int) -> np.ndarray:
        return rng.standard_normal((batch_size, n_samples, T, self.latent_dim))

    # ---------------------------------------------------------- sampling

    def step_distribution(self, static, observations, actions) -> StepDistribution:
        """Bootstrap particle filter over z_1..z_t, propagated one step with y_t.

        Particles come from a stream keyed by the history, so repeated calls
        on the same history agree exactly.
        """
        batch = history_batch(self.schema, static, observations, actions)
        T = batch.obs.shape[1]
        N, d = self.n_particles, self.latent_dim
        key = (np.asarray(static).tobytes(), np.asarray(observations, dtype=np.float64).tobytes(),
               np.asarray(actions, dtype=np.int64).tobytes())
        rng = keyed_rng("svae-filter", *key)
        p = self.params
        s = batch.static.expand(N, -1)
        with torch.no_grad():
            z = tensor(rng.standard_normal((N, d)))
            logw = np.zeros(N)
            for t in range(T):
                if t > 0:
                    idx = _systematic_resample(logw, rng)
                    z = z[idx]
                    act = batch.act_onehot[:, t - 1].expand(N, -1)
                    m, lv = self.transition(p, z, act)
                    z = m + torch.exp(0.5 * lv) * tensor(rng.standard_normal((N, d)))
                raw = self.emission(p, z, s)
                logw = self.head.log_prob(raw, batch.obs[:, t].expand(N, -1)).numpy().copy()
            idx = _systematic_resample(logw, rng)
            z = z[idx]
            m, lv = self.transition(p, z, batch.act_onehot[:, T - 1].expand(N, -1))
            z = m + torch.exp(0.5 * lv) * tensor(rng.standard_normal((N, d)))
            raw = self.emission(p, z, s).numpy().copy()
        return StepDistribution(self.head, np.full(N, 1.0 / N), raw)

    def simulator(self, x_s, x_1, rng):
        return _SvaeSimulator(self, x_s, x_1, rng)


def _systematic_resample(logw: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    w = np.exp(logw - logsumexp(logw))
    n = len(w)
    positions = (rng.random() + np.arange(n)) / n
    return np.minimum(np.searchsorted(np.cumsum(w), positions), n - 1)


class _SvaeSimulator(Simulator):
    """z_1 drawn from the encoder applied to the one-step prefix, then the prior chain."""

    def __init__(self, model: SvaeModel, x_s, x_1, rng):
        self.model = model
        self.rng = rng
        p = model.params
        d = model.latent_dim
        self.static = tensor(x_s).reshape(1, -1)
        prefix = collate([Trajectory(np.asarray(x_s), np.asarray(x_1).reshape(1, -1), np.zeros(1, dtype=np.int64))],
                         model.schema.n_actions)
        with torch.no_grad():
            h = model.summaries(p, prefix)[:, 0]
            m, lv = model.encoder(p, torch.zeros((1, d), dtype=DTYPE), h)
            self.z = m + torch.exp(0.5 * lv) * tensor(rng.standard_normal((1, d)))

    def step(self, action: int) -> np.ndarray:
        onehot = torch.zeros((1, self.model.schema.n_actions), dtype=DTYPE)
        onehot[0, int(action)] = 1.0
        with torch.no_grad():
            m, lv = self.model.transition(self.model.params, self.z, onehot)
            self.z = m + torch.exp(0.5 * lv) * tensor(self.rng.standard_normal((1, self.model.latent_dim)))
            raw = self.model.emission(self.model.params, self.z, self.static)
        return self.model.head.sample(raw[0], self.rng)


@dataclass(frozen=True)
class SvaeElbo:
    value: float
    stderr: float
    reconstruction: float
    kl: float
    n_mc: int


def svae_elbo(model: SvaeModel, trajectory: Trajectory, n_mc: int, rng: np.random.Generator,
              posterior: str = "encoder") -> SvaeElbo:
    if n_mc < 1:
        raise ConfigError("n_mc must be >= 1", "n_mc")
    noise = rng.standard_normal((1, n_mc, trajectory.length, model.latent_dim))
    batch = collate([trajectory], model.schema.n_actions, noise)
    with torch.no_grad():
        recon, kl, per_sample = model.elbo_terms(model.params, batch, posterior)
    f = per_sample[0].numpy()
    se = float(f.std(ddof=1) / math.sqrt(n_mc)) if n_mc > 1 else float("inf")
    return SvaeElbo(float(f.mean()), se, float(recon[0]), float(kl[0]), n_mc)
