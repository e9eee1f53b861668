"""Benchmark metrics: predictive and discriminative scores, action matching,
ground-truth comparison and a 2-D projection for visual checks."""
from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np
import torch
import torch.nn.functional as F
from scipy.stats import rankdata

from .diff import ParamStore, RecurrentNet, TrainConfig, fit, tensor
from .errors import ConfigError, DegenerateLabelError
from .policies import FULL, GroundTruth, PolicySpec, policy_distribution, total_variation
from .rng import keyed_rng
from .schema import BatchDataset, canonical_json, sha256_hex

MIN_DISCRIMINATIVE = 100


@dataclass(frozen=True)
class EvalConfig:
    epochs: int = 50
    hidden: int = 16
    dense_sizes: tuple[int, ...] = (16, 16)
    learning_rate: float = 0.05
    momentum: float = 0.9
    batch_size: int = 32
    seeds: tuple[int, ...] = (0,)

    def __post_init__(self):
        object.__setattr__(self, "dense_sizes", tuple(self.dense_sizes))
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))
        if not self.seeds:
            raise ConfigError("at least one seed is required", "seeds")
        if len(self.dense_sizes) != 2:
            raise ConfigError("the classifier uses exactly two dense layers", "dense_sizes")

    def to_dict(self) -> dict:
        return asdict(self)

    def digest(self) -> str:
        return sha256_hex(canonical_json(self.to_dict()))


@dataclass
class MetricReport:
    metric: str
    value: float
    ci: list[float] | None
    seeds: list[int]
    config_digest: str
    per_seed: list[float] = field(default_factory=list)
    details: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "metric": self.metric,
            "value": self.value,
            "ci": self.ci,
            "seeds": self.seeds,
            "config_digest": self.config_digest,
            "per_seed": self.per_seed,
            "details": self.details,
        }


def _report(metric: str, values: list[float], cfg: EvalConfig, extra: dict, details: dict | None = None) -> MetricReport:
    mean = float(np.mean(values))
    ci = None
    if len(values) > 1:
        half = 1.96 * float(np.std(values, ddof=1)) / math.sqrt(len(values))
        ci = [mean - half, mean + half]
    digest = sha256_hex(canonical_json({"eval": cfg.to_dict(), **extra}))
    return MetricReport(metric, mean, ci, list(cfg.seeds), digest, [float(v) for v in values], details or {})


# --------------------------------------------------------------- classifier


class ClassifierBatch(NamedTuple):
    inputs: torch.Tensor  # [B, T, D]
    labels: torch.Tensor  # [B, T]
    weight: torch.Tensor  # [B, T]; which steps carry a label


def classifier_net(n_in: int, cfg: EvalConfig) -> RecurrentNet:
    """One recurrent layer followed by two dense layers and a single logit."""
    return RecurrentNet(n_in, cfg.hidden, cfg.dense_sizes, 1, prefix="clf")


def classifier_loss(net: RecurrentNet, p, batch: ClassifierBatch) -> torch.Tensor:
    logits = net(p, batch.inputs)[..., 0]
    bce = F.binary_cross_entropy_with_logits(logits, batch.labels, reduction="none")
    return (bce * batch.weight).sum(1) / batch.weight.sum(1).clamp_min(1.0)


def _features(d: BatchDataset) -> list[np.ndarray]:
    """Per-trajectory step inputs [visible x_t, onehot(y_t), x_s]."""
    ny = d.schema.n_actions
    out = []
    for t in d.trajectories:
        T = t.length
        onehot = np.eye(ny)[t.actions]
        out.append(np.hstack([t.observations, onehot, np.broadcast_to(t.static, (T, len(t.static)))]))
    return out


class _Standardiser:
    def __init__(self, rows: list[np.ndarray]):
        stacked = np.vstack(rows)
        self.mean = stacked.mean(0)
        std = stacked.std(0)
        self.std = np.where(std > 1e-8, std, 1.0)

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return (x - self.mean) / self.std


def _pad(seqs: list[np.ndarray], labels: list[np.ndarray], weights: list[np.ndarray]) -> ClassifierBatch:
    B, T, D = len(seqs), max(len(s) for s in seqs), seqs[0].shape[1]
    x = np.zeros((B, T, D))
    y = np.zeros((B, T))
    w = np.zeros((B, T))
    for i, (s, l, v) in enumerate(zip(seqs, labels, weights)):
        x[i, : len(s)] = s
        y[i, : len(l)] = l
        w[i, : len(v)] = v
    return ClassifierBatch(tensor(x), tensor(y), tensor(w))


def train_classifier(examples: list[tuple[np.ndarray, np.ndarray, np.ndarray]], cfg: EvalConfig, seed: int):
    """Fit the recurrent classifier; examples are (inputs [T, D], labels [T], weight [T])."""
    net = classifier_net(examples[0][0].shape[1], cfg)
    params = ParamStore.initialize(net.shapes(), seed)
    tc = TrainConfig(cfg.learning_rate, cfg.epochs, cfg.batch_size, grad_clip=5.0, momentum=cfg.momentum, seed=seed)

    def collate(exs):
        return _pad(*zip(*exs))

    params, _ = fit(lambda p, b: classifier_loss(net, p, b), params, examples, collate, tc)
    return net, params


def predict_logits(net: RecurrentNet, params, examples) -> list[np.ndarray]:
    batch = _pad(*zip(*examples))
    with torch.no_grad():
        logits = net(params, batch.inputs)[..., 0].numpy()
    return [logits[i, : len(ex[0])] for i, ex in enumerate(examples)]


def auroc(scores: Sequence[float], labels: Sequence[float]) -> float:
    """Area under the ROC curve via the rank-sum statistic (ties count one half)."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    pos = labels == 1
    n_pos, n_neg = int(pos.sum()), int((~pos).sum())
    if n_pos == 0 or n_neg == 0:
        raise DegenerateLabelError("AUROC needs both classes among the labels")
    ranks = rankdata(scores)
    return float((ranks[pos].sum() - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg))


# ---------------------------------------------------------------- predictive


def _targets(d: BatchDataset, target: str, positive: int | None) -> list[np.ndarray]:
    if target == "action":
        ny = d.schema.n_actions
        if ny != 2 and positive is None:
            raise ConfigError("action targets need |Y| = 2 or a one-vs-rest positive class", "target")
        cls = 1 if positive is None else positive
        if not 0 <= cls < ny:
            raise ConfigError(f"positive class {cls} outside the action space", "positive")
        return [(t.actions == cls).astype(np.float64) for t in d.trajectories]
    space = d.visible_space
    if target not in space.names:
        raise ConfigError(f"target {target!r} is not a visible temporal feature", "target")
    if not space.is_binary(space.index(target)):
        raise ConfigError(f"target {target!r} is not binary; AUROC needs a binary target", "target")
    j = space.index(target)
    return [t.observations[:, j].astype(np.float64) for t in d.trajectories]


def _next_step_examples(d: BatchDataset, target: str, positive: int | None, scale: _Standardiser):
    """Output at step t predicts the target at t+1; the last step carries no label."""
    feats = _features(d)
    tgts = _targets(d, target, positive)
    out = []
    for x, y in zip(feats, tgts):
        labels = np.zeros(len(y))
        labels[:-1] = y[1:]
        weight = np.zeros(len(y))
        weight[:-1] = 1.0
        out.append((scale(x), labels, weight))
    return out


def _check_same_schema(a: BatchDataset, b: BatchDataset) -> None:
    if a.visible_schema() != b.visible_schema():
        raise ConfigError("datasets must share one visible schema", "data")


def predictive_score(
    synthetic: BatchDataset, real: BatchDataset, target: str = "action", cfg: EvalConfig = EvalConfig(),
    positive: int | None = None,
) -> MetricReport:
    """Train on synthetic, test on real: AUROC of next-step prediction of a binary target.

    ``target`` is ``"action"`` or the name of a visible binary feature;
    ``positive`` selects one action class for one-vs-rest scoring.
    """
    _check_same_schema(synthetic, real)
    if len(synthetic) == 0 or len(real) == 0:
        raise ConfigError("both datasets need trajectories", "data")
    scale = _Standardiser(_features(synthetic))
    train = _next_step_examples(synthetic, target, positive, scale)
    test = _next_step_examples(real, target, positive, scale)
    labels = np.concatenate([y[w > 0] for _, y, w in test])
    if labels.size == 0 or np.all(labels == labels[0]):
        raise DegenerateLabelError("real test labels are constant; AUROC is undefined")
    values = []
    for seed in cfg.seeds:
        net, params = train_classifier(train, cfg, seed)
        logits = predict_logits(net, params, test)
        scores = np.concatenate([s[w > 0] for s, (_, _, w) in zip(logits, test)])
        values.append(auroc(scores, labels))
    extra = {"target": target, "positive": positive, "synthetic": synthetic.digest(), "real": real.digest()}
    return _report("predictive", values, cfg, extra, {"n_test_labels": int(labels.size)})


# ------------------------------------------------------------ discriminative


def discriminative_score(
    synthetic: BatchDataset, real: BatchDataset, cfg: EvalConfig = EvalConfig(), shuffle_labels: bool = False,
) -> MetricReport:
    """|test accuracy - 0.5| of a real-vs-synthetic sequence classifier.

    Each dataset is split 50/50 into train and test halves.  With
    ``shuffle_labels`` the labels of both halves are permuted, so they carry
    no information about the sequences: this calibrates the score under the
    null.  Permuting only the training labels is not enough, because a
    classifier that separates the two clusters still hits near 0 or 1 test
    accuracy when it guesses the cluster labels.
    """
    _check_same_schema(synthetic, real)
    if len(synthetic) < MIN_DISCRIMINATIVE or len(real) < MIN_DISCRIMINATIVE:
        raise ConfigError(f"discriminative score needs >= {MIN_DISCRIMINATIVE} trajectories per dataset", "data")
    feats_s, feats_r = _features(synthetic), _features(real)
    values = []
    for seed in cfg.seeds:
        rng = keyed_rng("discriminative-split", seed)
        perm_s, perm_r = rng.permutation(len(feats_s)), rng.permutation(len(feats_r))
        half_s, half_r = len(feats_s) // 2, len(feats_r) // 2
        train_raw = [(feats_s[i], 0.0) for i in perm_s[:half_s]] + [(feats_r[i], 1.0) for i in perm_r[:half_r]]
        test_raw = [(feats_s[i], 0.0) for i in perm_s[half_s:]] + [(feats_r[i], 1.0) for i in perm_r[half_r:]]
        scale = _Standardiser([x for x, _ in train_raw])
        train_labels = np.array([y for _, y in train_raw])
        truth = np.array([y for _, y in test_raw])
        if shuffle_labels:
            train_labels, truth = rng.permutation(train_labels), rng.permutation(truth)
        train = [_sequence_example(scale(x), y) for (x, _), y in zip(train_raw, train_labels)]
        test = [_sequence_example(scale(x), y) for (x, _), y in zip(test_raw, truth)]
        net, params = train_classifier(train, cfg, seed)
        logits = predict_logits(net, params, test)
        pred = np.array([s[-1] > 0 for s in logits], dtype=np.float64)
        values.append(abs(float((pred == truth).mean()) - 0.5))
    extra = {"shuffle_labels": shuffle_labels, "synthetic": synthetic.digest(), "real": real.digest()}
    return _report("discriminative", values, cfg, extra)


def _sequence_example(x: np.ndarray, label: float):
    """Whole-sequence label read from the output at the final step."""
    weight = np.zeros(len(x))
    weight[-1] = 1.0
    return x, np.full(len(x), label), weight


# -------------------------------------------------------------- action match


def action_match(policy_a: PolicySpec, policy_b: PolicySpec, probes: BatchDataset) -> dict:
    """Argmax agreement and mean total variation over every history prefix of the probes."""
    if policy_a.schema.n_actions != policy_b.schema.n_actions:
        raise ConfigError("policies must share one action space", "policy")
    if probes.hidden_columns:
        raise ConfigError("action matching needs fully observed probes", "probes")
    agree, tv, n = 0, 0.0, 0
    for t in probes.trajectories:
        for k in range(1, t.length + 1):
            h = (t.static, t.observations[:k], t.actions[: k - 1])
            pa = policy_distribution(policy_a, *h)
            pb = policy_distribution(policy_b, *h)
            agree += int(np.argmax(pa) == np.argmax(pb))
            tv += total_variation(pa, pb)
            n += 1
    if n == 0:
        raise ConfigError("probe set holds no histories", "probes")
    return {"metric": "action-match", "agreement": agree / n, "mean_tv": tv / n, "n_histories": n}


# -------------------------------------------------------------- ground truth


def _jaccard(a: set, b: set) -> float:
    union = a | b
    return 1.0 if not union else len(a & b) / len(union)


def compare_ground_truth(theta_hat: GroundTruth, theta: GroundTruth) -> dict:
    """Per-knob errors between a recovered and a true policy parameterisation."""
    theta_hat.verify()
    theta.verify()
    a, b = theta_hat.theta, theta.theta
    kinds_a = [c["decider"]["kind"] for c in a["components"]]
    kinds_b = [c["decider"]["kind"] for c in b["components"]]
    if kinds_a != kinds_b:
        return {"comparable": False, "reason": f"skeletons differ: {kinds_a} vs {kinds_b}"}
    names = b["schema"]["temporal_space"]["names"]
    components = []
    for ca, cb in zip(a["components"], b["components"]):
        mask_a = set(names if ca["mask"] is None else ca["mask"])
        mask_b = set(names if cb["mask"] is None else cb["mask"])
        if ca["lag"] == FULL or cb["lag"] == FULL:
            lag_delta = 0 if ca["lag"] == cb["lag"] else None
        else:
            lag_delta = int(ca["lag"]) - int(cb["lag"])
        components.append({
            "beta_abs_error": abs(float(ca["beta"]) - float(cb["beta"])),
            "mask_jaccard": _jaccard(mask_a, mask_b),
            "lag_delta": lag_delta,
            "decider_param_l2": _param_distance(ca["decider"], cb["decider"]),
        })
    weight_l1 = math.fsum(abs(x - y) for x, y in zip(a["weights"], b["weights"]))
    return {"comparable": True, "weight_l1": weight_l1, "components": components,
            "mixing_match": a.get("mixing") == b.get("mixing")}


def _param_distance(da: dict, db: dict) -> float | None:
    keys = sorted(k for k in da if k not in ("kind",) and isinstance(da[k], list))
    total = 0.0
    for k in keys:
        x, y = np.asarray(da[k], dtype=np.float64), np.asarray(db.get(k), dtype=np.float64)
        if x.shape != y.shape:
            return None
        total += float(((x - y) ** 2).sum())
    if "params" in da:
        pa, pb = da["params"]["values"], db["params"]["values"]
        if set(pa) != set(pb):
            return None
        for k in pa:
            x, y = np.asarray(pa[k]), np.asarray(pb[k])
            if x.shape != y.shape:
                return None
            total += float(((x - y) ** 2).sum())
    return math.sqrt(total)


# ---------------------------------------------------------------- projection


def project2d(real: BatchDataset, synthetic: BatchDataset, path=None) -> list[tuple[float, float, str]]:
    """PCA of all per-timestep observations from both datasets onto two axes.

    Returns rows ``(x, y, source)`` in input order (real first) and writes
    them as CSV when ``path`` is given.
    """
    _check_same_schema(real, synthetic)
    blocks, sources = [], []
    for label, d in (("real", real), ("synthetic", synthetic)):
        for t in d.trajectories:
            blocks.append(t.observations)
            sources.extend([label] * t.length)
    if len(sources) < 3:
        raise ConfigError("projection needs at least 3 points", "data")
    X = np.vstack(blocks)
    centred = X - X.mean(0)
    _, _, vt = np.linalg.svd(centred, full_matrices=False)
    axes = vt[:2]
    if axes.shape[0] < 2:
        axes = np.vstack([axes, np.zeros((2 - axes.shape[0], X.shape[1]))])
    coords = centred @ axes.T
    rows = [(float(x), float(y), s) for (x, y), s in zip(coords, sources)]
    if path is not None:
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["x", "y", "source"])
            for x, y, s in rows:
                w.writerow([repr(x), repr(y), s])
    return rows

