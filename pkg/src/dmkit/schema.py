"""Domains, trajectories and the JSONL dataset format."""
from __future__ import annotations

import csv
import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import ConfigError, DatasetFormatError, IntegrityError

DATASET_FORMAT = "dmkit.dataset/1"


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


def sha256_hex(text: str | bytes) -> str:
    if isinstance(text, str):
        text = text.encode()
    return hashlib.sha256(text).hexdigest()


@dataclass(frozen=True)
class FeatureSpace:
    """Continuous block followed by a binary block, addressed by name."""

    continuous_dims: int
    binary_dims: int
    names: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "names", tuple(self.names))
        if self.continuous_dims < 0 or self.binary_dims < 0:
            raise ConfigError("dimension counts must be non-negative")
        if self.dim < 1:
            raise ConfigError("feature space needs at least one dimension")
        if len(self.names) != self.dim:
            raise ConfigError(f"expected {self.dim} names, got {len(self.names)}", "names")
        if len(set(self.names)) != len(self.names):
            raise ConfigError("feature names must be unique", "names")

    @property
    def dim(self) -> int:
        return self.continuous_dims + self.binary_dims

    @property
    def continuous_names(self) -> tuple[str, ...]:
        return self.names[: self.continuous_dims]

    @property
    def binary_names(self) -> tuple[str, ...]:
        return self.names[self.continuous_dims:]

    def is_binary(self, i: int) -> bool:
        return i >= self.continuous_dims

    def index(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise ConfigError(f"unknown feature {name!r}") from None

    def indices(self, names: Iterable[str]) -> list[int]:
        return [self.index(n) for n in names]

    def subspace(self, keep: Iterable[str]) -> "FeatureSpace":
        """Projection onto ``keep``; canonical (original) ordering is preserved."""
        keep = set(keep)
        unknown = keep - set(self.names)
        if unknown:
            raise ConfigError(f"unknown features {sorted(unknown)}")
        cont = [n for n in self.continuous_names if n in keep]
        binary = [n for n in self.binary_names if n in keep]
        return FeatureSpace(len(cont), len(binary), tuple(cont + binary))

    def to_dict(self) -> dict:
        return {
            "continuous_dims": self.continuous_dims,
            "binary_dims": self.binary_dims,
            "names": list(self.names),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FeatureSpace":
        return cls(int(d["continuous_dims"]), int(d["binary_dims"]), tuple(d["names"]))


@dataclass(frozen=True)
class ActionSpace:
    cardinality: int
    bit_names: tuple[str, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "bit_names", tuple(self.bit_names))
        if self.cardinality < 2:
            raise ConfigError("action space needs at least two actions", "cardinality")
        if self.bit_names and (not self.is_factored or len(self.bit_names) != self.n_bits):
            raise ConfigError("bit names require a power-of-two cardinality", "bit_names")

    @property
    def is_factored(self) -> bool:
        return self.cardinality & (self.cardinality - 1) == 0

    @property
    def n_bits(self) -> int:
        if not self.is_factored:
            raise ConfigError(f"cardinality {self.cardinality} has no binary factorisation")
        return self.cardinality.bit_length() - 1

    def to_bits(self, action: int) -> tuple[int, ...]:
        k = self.n_bits
        return tuple((int(action) >> i) & 1 for i in range(k))

    def from_bits(self, bits: Sequence[int]) -> int:
        if len(bits) != self.n_bits:
            raise ConfigError(f"expected {self.n_bits} bits")
        return sum(int(b) << i for i, b in enumerate(bits))

    def to_dict(self) -> dict:
        return {"cardinality": self.cardinality, "bit_names": list(self.bit_names)}

    @classmethod
    def from_dict(cls, d: dict) -> "ActionSpace":
        return cls(int(d["cardinality"]), tuple(d.get("bit_names", ())))


@dataclass(frozen=True)
class DomainSchema:
    name: str
    static_space: FeatureSpace
    temporal_space: FeatureSpace
    action_space: ActionSpace
    max_length: int

    def __post_init__(self):
        if self.max_length < 1:
            raise ConfigError("max_length must be >= 1", "max_length")

    @property
    def n_actions(self) -> int:
        return self.action_space.cardinality

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "static_space": self.static_space.to_dict(),
            "temporal_space": self.temporal_space.to_dict(),
            "action_space": self.action_space.to_dict(),
            "max_length": self.max_length,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DomainSchema":
        return cls(
            d["name"],
            FeatureSpace.from_dict(d["static_space"]),
            FeatureSpace.from_dict(d["temporal_space"]),
            ActionSpace.from_dict(d["action_space"]),
            int(d["max_length"]),
        )

    def digest(self) -> str:
        return sha256_hex(canonical_json(self.to_dict()))


# Built-in domains. Categorical statics are already one-hot expanded.

_WARD_STATIC_CONT = ("age", "height", "weight")
_WARD_STATIC_BIN = ("sex_male", "emergency_admit", "prior_icu_stay", "race_white", "race_black")
_WARD_TEMPORAL_CONT = (
    "pulse", "resp_rate", "sbp", "dbp", "temperature", "spo2", "o2_flow", "glucose",
    "sodium", "potassium", "chloride", "bicarbonate", "bun", "creatinine", "calcium",
    "magnesium", "phosphate", "wbc", "hemoglobin", "hematocrit", "platelets", "albumin",
    "bilirubin", "alt", "ast", "alk_phos", "lactate", "inr", "ptt", "pain_score",
)
_WARD_TEMPORAL_BIN = ("alert", "confused", "iv_fluids", "fall_risk", "cardiac_monitor")
_WARD_ACTIONS = ("nasal_cannula", "face_mask", "high_flow_o2")

_ICU_STATIC_CONT = ("age", "height", "initial_weight", "bmi")
_ICU_STATIC_BIN = (
    "sex_male", "urgent_admit", "chf", "arrhythmia", "valvular", "pulm_circulation",
    "pvd", "hypertension", "paralysis", "neuro_other", "chronic_pulm", "diabetes",
    "diabetes_complicated", "hypothyroid", "renal_failure", "liver_disease", "ulcer",
    "aids", "lymphoma", "metastatic", "solid_tumor", "rheumatoid", "coagulopathy",
    "obesity", "weight_loss", "electrolyte", "blood_loss_anemia", "deficiency_anemia",
    "alcohol", "drug_abuse", "psychoses", "depression",
)
_ICU_TEMPORAL_CONT = (
    "heart_rate", "sbp", "dbp", "mbp", "resp_rate", "spo2", "temperature", "fio2",
    "peep", "tidal_volume", "ph", "pao2", "paco2", "lactate", "glucose", "sodium",
    "potassium", "creatinine", "hemoglobin", "wbc", "platelets", "bicarbonate",
)
_ICU_TEMPORAL_BIN = ("sedated", "vasopressor")
_ICU_ACTIONS = ("ventilation", "antibiotics", "oxygen_therapy")


def _space(cont, binary) -> FeatureSpace:
    return FeatureSpace(len(cont), len(binary), tuple(cont) + tuple(binary))


def _action_space(n_actions: int, names: tuple[str, ...]) -> ActionSpace:
    if n_actions not in (2, 4, 8):
        raise ConfigError("built-in domains support 2, 4 or 8 actions", "n_actions")
    k = n_actions.bit_length() - 1
    return ActionSpace(n_actions, names[:k])


def ward_synth(n_actions: int = 8, max_length: int = 30) -> DomainSchema:
    """General-ward domain: 8 static and 35 temporal features."""
    return DomainSchema(
        "ward_synth",
        _space(_WARD_STATIC_CONT, _WARD_STATIC_BIN),
        _space(_WARD_TEMPORAL_CONT, _WARD_TEMPORAL_BIN),
        _action_space(n_actions, _WARD_ACTIONS),
        max_length,
    )


def icu_synth(n_actions: int = 8, max_length: int = 30) -> DomainSchema:
    """Intensive-care domain: 36 static and 24 temporal features."""
    return DomainSchema(
        "icu_synth",
        _space(_ICU_STATIC_CONT, _ICU_STATIC_BIN),
        _space(_ICU_TEMPORAL_CONT, _ICU_TEMPORAL_BIN),
        _action_space(n_actions, _ICU_ACTIONS),
        max_length,
    )


BUILTIN_DOMAINS = {"ward_synth": ward_synth, "icu_synth": icu_synth}


def builtin_domain(name: str, n_actions: int = 8, max_length: int = 30) -> DomainSchema:
    try:
        factory = BUILTIN_DOMAINS[name]
    except KeyError:
        raise ConfigError(f"unknown domain {name!r}", "domain") from None
    return factory(n_actions=n_actions, max_length=max_length)


def _frozen(a, dtype) -> np.ndarray:
    arr = np.array(a, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class Trajectory:
    static: np.ndarray
    observations: np.ndarray
    actions: np.ndarray

    def __post_init__(self):
        obs = np.asarray(self.observations, dtype=np.float64)
        if obs.ndim == 1 and obs.size == 0:
            obs = obs.reshape(0, 0)
        object.__setattr__(self, "static", _frozen(self.static, np.float64))
        object.__setattr__(self, "observations", _frozen(obs, np.float64))
        object.__setattr__(self, "actions", _frozen(self.actions, np.int64))

    @property
    def length(self) -> int:
        return int(self.observations.shape[0])

    def __eq__(self, other):
        if not isinstance(other, Trajectory):
            return NotImplemented
        return (
            _bit_equal(self.static, other.static)
            and _bit_equal(self.observations, other.observations)
            and np.array_equal(self.actions, other.actions)
        )

    def __len__(self):
        return self.length


def _bit_equal(a: np.ndarray, b: np.ndarray) -> bool:
    return a.shape == b.shape and a.tobytes() == b.tobytes()


def validate_trajectory(
    t: Trajectory, s: DomainSchema, hidden_columns: Sequence[str] = ()
) -> list[str]:
    """Every schema violation of ``t``; an empty list means the trajectory conforms."""
    problems: list[str] = []
    temporal = s.temporal_space
    if hidden_columns:
        visible = [n for n in temporal.names if n not in set(hidden_columns)]
        temporal = temporal.subspace(visible)

    static = t.static
    if static.ndim != 1 or static.shape[0] != s.static_space.dim:
        problems.append(f"static has shape {static.shape}, expected ({s.static_space.dim},)")
    else:
        problems.extend(_check_values(static[None, :], s.static_space, "static"))

    obs = t.observations
    T = obs.shape[0] if obs.ndim >= 1 else 0
    if T < 1:
        problems.append("T >= 1 required")
    if T > s.max_length:
        problems.append(f"length {T} exceeds max_length {s.max_length}")
    if T >= 1:
        if obs.ndim != 2 or obs.shape[1] != temporal.dim:
            problems.append(f"observations have shape {obs.shape}, expected (T, {temporal.dim})")
        else:
            problems.extend(_check_values(obs, temporal, "observations"))

    acts = t.actions
    if acts.ndim != 1 or acts.shape[0] != T:
        problems.append(f"actions have shape {acts.shape}, expected ({T},)")
    elif T and (acts.min() < 0 or acts.max() >= s.n_actions):
        problems.append(f"action index outside 0..{s.n_actions - 1}")
    return problems


def _check_values(block: np.ndarray, space: FeatureSpace, label: str) -> list[str]:
    out = []
    cont = block[:, : space.continuous_dims]
    if not np.all(np.isfinite(cont)):
        bad = sorted({space.names[j] for j in np.nonzero(~np.isfinite(cont))[1]})
        out.append(f"{label}: non-finite continuous values in {bad}")
    binary = block[:, space.continuous_dims:]
    off = (binary != 0.0) & (binary != 1.0)
    if np.any(off):
        for j in sorted(set(np.nonzero(off)[1])):
            name = space.names[space.continuous_dims + j]
            out.append(f"{label}: binary feature {name!r} holds non-binary value")
    return out


@dataclass(frozen=True, eq=False)
class BatchDataset:
    schema: DomainSchema
    trajectories: tuple[Trajectory, ...]
    seed: int = 0
    provenance: str = ""
    hidden_columns: tuple[str, ...] = ()
    _visible: FeatureSpace = field(init=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "trajectories", tuple(self.trajectories))
        object.__setattr__(self, "hidden_columns", tuple(self.hidden_columns))
        names = self.schema.temporal_space.names
        unknown = set(self.hidden_columns) - set(names)
        if unknown:
            raise ConfigError(f"unknown hidden columns {sorted(unknown)}", "hidden_columns")
        visible = [n for n in names if n not in set(self.hidden_columns)]
        object.__setattr__(self, "_visible", self.schema.temporal_space.subspace(visible))

    @property
    def visible_space(self) -> FeatureSpace:
        return self._visible

    def visible_schema(self) -> DomainSchema:
        """The schema as a consumer of this dataset sees it (hidden columns removed)."""
        s = self.schema
        return DomainSchema(s.name, s.static_space, self._visible, s.action_space, s.max_length)

    def __len__(self):
        return len(self.trajectories)

    def __iter__(self):
        return iter(self.trajectories)

    def __eq__(self, other):
        if not isinstance(other, BatchDataset):
            return NotImplemented
        return (
            self.schema == other.schema
            and self.seed == other.seed
            and self.provenance == other.provenance
            and self.hidden_columns == other.hidden_columns
            and self.trajectories == other.trajectories
        )

    def violations(self) -> dict[int, list[str]]:
        out = {}
        for i, t in enumerate(self.trajectories):
            v = validate_trajectory(t, self.schema, self.hidden_columns)
            if v:
                out[i] = v
        return out

    def digest(self) -> str:
        h = hashlib.sha256()
        for line in _dataset_lines(self):
            h.update(line.encode())
            h.update(b"\n")
        return h.hexdigest()

    def n_steps(self) -> int:
        return sum(t.length for t in self.trajectories)


def _header(d: BatchDataset) -> dict:
    return {
        "format": DATASET_FORMAT,
        "schema": d.schema.to_dict(),
        "schema_digest": d.schema.digest(),
        "seed": int(d.seed),
        "provenance": d.provenance,
        "hidden_columns": list(d.hidden_columns),
        "n_trajectories": len(d.trajectories),
    }


def _dataset_lines(d: BatchDataset):
    yield canonical_json(_header(d))
    for t in d.trajectories:
        yield canonical_json(
            {"static": t.static.tolist(), "obs": t.observations.tolist(), "act": t.actions.tolist()}
        )


def serialize_dataset(d: BatchDataset, path) -> Path:
    path = Path(path)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for line in _dataset_lines(d):
            fh.write(line)
            fh.write("\n")
    return path


def deserialize_dataset(path) -> BatchDataset:
    path = Path(path)
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines:
        raise DatasetFormatError("empty file, header expected", 1)
    header = _parse_line(lines[0], 1)
    try:
        if header.get("format") != DATASET_FORMAT:
            raise DatasetFormatError(f"unsupported format {header.get('format')!r}", 1)
        schema = DomainSchema.from_dict(header["schema"])
        stored = header["schema_digest"]
        seed = int(header["seed"])
        provenance = str(header["provenance"])
        hidden = tuple(header["hidden_columns"])
        expected_n = int(header["n_trajectories"])
    except (KeyError, TypeError, ConfigError) as exc:
        raise DatasetFormatError(f"malformed header ({exc})", 1) from None
    if schema.digest() != stored:
        raise IntegrityError(f"schema digest mismatch in {path}")

    trajectories = []
    for lineno, raw in enumerate(lines[1:], start=2):
        row = _parse_line(raw, lineno)
        try:
            trajectories.append(_row_to_trajectory(row))
        except (KeyError, TypeError, ValueError) as exc:
            raise DatasetFormatError(f"malformed trajectory ({exc})", lineno) from None
    if len(trajectories) != expected_n:
        raise DatasetFormatError(
            f"header announces {expected_n} trajectories, found {len(trajectories)}",
            len(lines) + 1,
        )
    return BatchDataset(schema, tuple(trajectories), seed, provenance, hidden)


def _parse_line(raw: str, lineno: int) -> dict:
    try:
        obj = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise DatasetFormatError(f"invalid JSON ({exc.msg})", lineno) from None
    if not isinstance(obj, dict):
        raise DatasetFormatError("expected a JSON object", lineno)
    return obj


def _row_to_trajectory(row: dict) -> Trajectory:
    obs = row["obs"]
    obs = np.asarray(obs, dtype=np.float64) if obs else np.zeros((0, 0))
    return Trajectory(
        np.asarray(row["static"], dtype=np.float64),
        obs,
        np.asarray(row["act"], dtype=np.int64),
    )


def export_csv(d: BatchDataset, path) -> Path:
    """Wide export: one row per timestep, keyed by trajectory id and t (1-based)."""
    path = Path(path)
    static_names = [f"static.{n}" for n in d.schema.static_space.names]
    temporal_names = list(d.visible_space.names)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["trajectory", "t", *static_names, *temporal_names, "action"])
        for i, traj in enumerate(d.trajectories):
            statics = [repr(float(v)) for v in traj.static]
            for t in range(traj.length):
                w.writerow(
                    [i, t + 1, *statics, *(repr(float(v)) for v in traj.observations[t]), int(traj.actions[t])]
                )
    return path


def confoundedness(schema: DomainSchema, hidden_columns: Sequence[str]) -> float:
    """dim X' / dim X for the visible temporal subspace X'."""
    total = schema.temporal_space.dim
    return (total - len(set(hidden_columns))) / total


def length_summary(d: BatchDataset) -> dict:
    lengths = [t.length for t in d.trajectories]
    if not lengths:
        return {"n": 0, "min": None, "max": None, "mean": None}
    return {
        "n": len(lengths),
        "min": min(lengths),
        "max": max(lengths),
        "mean": math.fsum(lengths) / len(lengths),
    }
