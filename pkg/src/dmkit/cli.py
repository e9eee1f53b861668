"""Command-line entry point: generate, train, evaluate, inspect, project.

Exit status is 0 on success, 1 when a run fails (for example a non-finite
training loss) and 2 for usage or configuration errors.  Every command that
draws random numbers requires ``--seed``.
"""
from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from pathlib import Path

from .diff import DPConfig, TrainConfig
from .environments import ENV_KINDS, load_env, read_json, save_env, train_env
from .errors import (
    ConfigError,
    DatasetFormatError,
    DegenerateLabelError,
    DimensionError,
    DmkitError,
    DomainError,
    IntegrityError,
    SizeError,
)
from .evaluation import (
    EvalConfig,
    action_match,
    compare_ground_truth,
    discriminative_score,
    predictive_score,
    project2d,
)
from .policies import (
    GroundTruth,
    export_ground_truth,
    load_ground_truth,
    policy_from_config,
    read_ground_truth,
    write_ground_truth,
)
from .scenario import generate_batch, load_scenario
from .schema import deserialize_dataset, export_csv, length_summary, serialize_dataset

USAGE_ERRORS = (ConfigError, DatasetFormatError, DimensionError, DomainError, IntegrityError, SizeError,
                DegenerateLabelError)
CACHE_ENV = "DMKIT_CACHE"


def _emit(obj: dict, out: str | None = None) -> None:
    text = json.dumps(obj, indent=2, sort_keys=True)
    if out:
        Path(out).write_text(text + "\n", encoding="utf-8")
    print(text)


def _existing(args, path: str, flag: str) -> Path:
    p = Path(path)
    if not p.is_file():
        args.parser.error(f"{flag}: no such file: {path}")
    return p


def _dataset(args, path: str, flag: str):
    return deserialize_dataset(_existing(args, path, flag))


# ------------------------------------------------------------------ generate


def cmd_generate(args) -> int:
    scenario = load_scenario(_existing(args, args.scenario, "--scenario"), seed=args.seed)
    data = generate_batch(scenario, args.n, args.jobs)
    serialize_dataset(data, args.out)
    if args.csv:
        export_csv(data, args.csv)
    if args.ground_truth:
        write_ground_truth(export_ground_truth(scenario.policy), args.ground_truth)
    _emit({
        "out": str(args.out),
        "n": len(data),
        "lengths": length_summary(data),
        "confoundedness": scenario.confoundedness(),
        "digest": data.digest(),
        "provenance": data.provenance,
        "seed": args.seed,
    })
    return 0


# --------------------------------------------------------------------- train


def _hyperparameters(value: str | None) -> dict:
    if value is None:
        return {}
    path = Path(value)
    hyper = read_json(path) if path.is_file() else None
    if hyper is None:
        try:
            hyper = json.loads(value)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"neither a file nor JSON ({exc.msg})", "--hyper") from None
    if not isinstance(hyper, dict):
        raise ConfigError("hyperparameters must be a JSON object", "--hyper")
    return hyper


def _checkpoint_path(args, dataset_digest: str) -> Path:
    if args.out:
        return Path(args.out)
    cache = Path(os.environ.get(CACHE_ENV, "checkpoints"))
    cache.mkdir(parents=True, exist_ok=True)
    return cache / f"{args.env}-seed{args.seed}-{dataset_digest[:12]}.json"


def train_config_from_args(args) -> TrainConfig:
    if args.dp_noise is not None and args.dp_clip is None:
        raise ConfigError("--dp-noise needs --dp-clip", "--dp-clip")
    dp = None if args.dp_clip is None else DPConfig(args.dp_clip, args.dp_noise or 0.0)
    return TrainConfig(args.lr, args.epochs, args.batch_size, args.grad_clip, args.momentum, dp, args.seed)


def cmd_train(args) -> int:
    data = _dataset(args, args.data, "--data")
    cfg = train_config_from_args(args)
    hyper = _hyperparameters(args.hyper)
    env, curve = train_env(args.env, data, cfg, css_objective=args.css_objective, mc_samples=args.mc_samples, **hyper)
    ckpt = _checkpoint_path(args, data.digest())
    ckpt.parent.mkdir(parents=True, exist_ok=True)
    save_env(env, ckpt, cfg)
    curve_path = Path(args.curve) if args.curve else ckpt.with_suffix(".loss.csv")
    with curve_path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "loss"])
        for epoch, loss in enumerate(curve):
            w.writerow([epoch, repr(loss)])
    _emit({
        "checkpoint": str(ckpt),
        "curve": str(curve_path),
        "kind": env.kind,
        "epochs": len(curve),
        "final_loss": curve[-1] if curve else None,
        "train_config_digest": cfg.digest(),
        "dataset_digest": data.digest(),
    })
    return 0


# ------------------------------------------------------------------ evaluate


def _eval_config(args) -> EvalConfig:
    return EvalConfig(epochs=args.epochs, seeds=tuple(range(args.seed, args.seed + args.n_seeds)))


def _policy(args, path: str, flag: str, schema):
    body = read_json(_existing(args, path, flag))
    if isinstance(body, dict) and "digest" in body and "theta" in body:
        g = GroundTruth(body["theta"], body["digest"])
        return load_ground_truth(g)
    return policy_from_config(body, schema)


def cmd_evaluate(args) -> int:
    metric = args.metric
    if metric == "predictive":
        syn, real = _dataset(args, args.synthetic, "--synthetic"), _dataset(args, args.real, "--real")
        report = predictive_score(syn, real, args.target, _eval_config(args), args.positive).to_dict()
    elif metric == "discriminative":
        syn, real = _dataset(args, args.synthetic, "--synthetic"), _dataset(args, args.real, "--real")
        report = discriminative_score(syn, real, _eval_config(args), args.shuffle_labels).to_dict()
    elif metric == "action-match":
        probes = _dataset(args, args.probes, "--probes")
        a = _policy(args, args.policy_a, "--policy-a", probes.schema)
        b = _policy(args, args.policy_b, "--policy-b", probes.schema)
        report = action_match(a, b, probes)
    else:
        est = read_ground_truth(_existing(args, args.estimate, "--estimate"))
        truth = read_ground_truth(_existing(args, args.truth, "--truth"))
        report = {"metric": "ground-truth", **compare_ground_truth(est, truth)}
    _emit(report, args.out)
    return 0


# ------------------------------------------------------------ inspect/project


def _describe(path: Path) -> dict:
    with path.open(encoding="utf-8") as fh:
        first = fh.readline()
    try:
        head = json.loads(first)
    except json.JSONDecodeError:
        head = read_json(path)
    fmt = head.get("format", "") if isinstance(head, dict) else ""
    if fmt.startswith("dmkit.dataset"):
        d = deserialize_dataset(path)
        return {
            "type": "dataset",
            "n": len(d),
            "lengths": length_summary(d),
            "domain": d.schema.name,
            "n_actions": d.schema.n_actions,
            "visible_features": len(d.visible_space.names),
            "hidden_columns": list(d.hidden_columns),
            "digest": d.digest(),
            "provenance": d.provenance,
            "violations": len(d.violations()),
        }
    if fmt.startswith("dmkit.checkpoint"):
        env = load_env(path)
        return {
            "type": "checkpoint",
            "kind": env.kind,
            "domain": env.schema.name,
            "hyperparameters": env.hyperparameters(),
            "n_parameters": env.params.numel(),
        }
    if fmt.startswith("dmkit.ground_truth"):
        g = read_ground_truth(path)
        return {
            "type": "ground-truth",
            "digest": g.digest,
            "components": [c["decider"]["kind"] for c in g.theta["components"]],
            "weights": g.theta["weights"],
            "mixing": g.theta.get("mixing"),
        }
    if isinstance(head, dict) and {"domain", "environment", "policy"} <= set(head):
        s = load_scenario(path)
        return {
            "type": "scenario",
            "domain": s.domain.name,
            "environment": s.env.kind,
            "policy_components": len(s.policy.components),
            "confoundedness": s.confoundedness(),
            "horizon": s.horizon,
            "digest": s.digest(),
        }
    raise ConfigError("unrecognised file: expected a dataset, checkpoint, ground truth or scenario", str(path))


def cmd_inspect(args) -> int:
    _emit(_describe(_existing(args, args.path, "path")))
    return 0


def cmd_project(args) -> int:
    real, syn = _dataset(args, args.real, "--real"), _dataset(args, args.synthetic, "--synthetic")
    rows = project2d(real, syn, args.out)
    _emit({"out": str(args.out), "rows": len(rows)})
    return 0


# -------------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dmkit", description="Synthetic decision-making data toolkit.")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, help_):
        p = sub.add_parser(name, help=help_, description=help_)
        p.set_defaults(func=func, parser=p)
        return p

    g = add("generate", cmd_generate, "Sample a batch dataset from a scenario config.")
    g.add_argument("--scenario", required=True)
    g.add_argument("--n", type=int, required=True)
    g.add_argument("--seed", type=int, required=True)
    g.add_argument("--out", required=True)
    g.add_argument("--jobs", type=int, default=1, help="worker processes; output is identical for every value")
    g.add_argument("--csv", help="also write a wide CSV export")
    g.add_argument("--ground-truth", help="also write the policy's sealed ground-truth export")

    t = add("train", cmd_train, "Fit an environment model to a dataset.")
    t.add_argument("--env", required=True, choices=sorted(ENV_KINDS))
    t.add_argument("--data", required=True)
    t.add_argument("--seed", type=int, required=True)
    t.add_argument("--epochs", type=int, default=20)
    t.add_argument("--lr", type=float, default=0.01)
    t.add_argument("--batch-size", type=int, default=32)
    t.add_argument("--momentum", type=float, default=0.0)
    t.add_argument("--grad-clip", type=float)
    t.add_argument("--dp-clip", type=float, help="per-example gradient clip norm")
    t.add_argument("--dp-noise", type=float, help="noise multiplier (needs --dp-clip)")
    t.add_argument("--hyper", help="model hyperparameters: a JSON file or inline JSON object")
    t.add_argument("--css-objective", choices=("auto", "exact", "variational"), default="auto")
    t.add_argument("--mc-samples", type=int, default=4)
    t.add_argument("--out", help=f"checkpoint path (default: ${CACHE_ENV} or ./checkpoints)")
    t.add_argument("--curve", help="loss-curve CSV path (default: next to the checkpoint)")

    e = add("evaluate", cmd_evaluate, "Score synthetic data or recovered policies.")
    metrics = e.add_subparsers(dest="metric", required=True)

    def metric(name, help_, seeded=True):
        m = metrics.add_parser(name, help=help_, description=help_)
        m.set_defaults(parser=m)
        m.add_argument("--out", help="also write the JSON report here")
        if seeded:
            m.add_argument("--seed", type=int, required=True)
            m.add_argument("--n-seeds", type=int, default=1)
            m.add_argument("--epochs", type=int, default=50)
        return m

    pr = metric("predictive", "AUROC of a next-step classifier trained on synthetic, tested on real.")
    pr.add_argument("--synthetic", required=True)
    pr.add_argument("--real", required=True)
    pr.add_argument("--target", default="action")
    pr.add_argument("--positive", type=int, help="one-vs-rest action class")
    di = metric("discriminative", "|accuracy - 0.5| of a real-vs-synthetic classifier.")
    di.add_argument("--synthetic", required=True)
    di.add_argument("--real", required=True)
    di.add_argument("--shuffle-labels", action="store_true")
    am = metric("action-match", "Argmax agreement and mean TV between two policies.", seeded=False)
    am.add_argument("--policy-a", required=True)
    am.add_argument("--policy-b", required=True)
    am.add_argument("--probes", required=True)
    gt = metric("ground-truth", "Per-knob errors between two ground-truth exports.", seeded=False)
    gt.add_argument("--estimate", required=True)
    gt.add_argument("--truth", required=True)

    i = add("inspect", cmd_inspect, "Summarise a dataset, checkpoint, ground-truth export or scenario.")
    i.add_argument("path")

    pj = add("project", cmd_project, "Write a 2-D PCA projection of two datasets as CSV.")
    pj.add_argument("--real", required=True)
    pj.add_argument("--synthetic", required=True)
    pj.add_argument("--out", required=True)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except USAGE_ERRORS as exc:
        key = getattr(exc, "key", None)
        print(f"dmkit: error: {exc}" + (f" [key: {key}]" if key else ""), file=sys.stderr)
        return 2
    except DmkitError as exc:
        print(f"dmkit: failed: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
