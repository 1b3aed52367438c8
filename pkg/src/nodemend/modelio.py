"""Persistence: model files, dataset files, the action log, the update gate.

The model file is a JSON envelope whose header carries the format name and
version (checked before anything else) and a sha256 checksum over the
canonical payload encoding. Floats are serialized via repr, so a round
trip reproduces estimates bitwise. Writes go through a temp file, fsync
and an atomic rename, so a deployed-model path never dangles.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass

import numpy as np

from .dml import DmlModel, LinearTheta, TrainConfig, psi_loss, train_dml
from .domain import FeatureSchema, LabeledEvent
from .errors import DataError, InsufficientData, ModelIntegrityError, ModelVersionError
from .forest import CausalForest, ForestParams
from .learners import LearnerConfig, learner_from_dict
from .simulate import GroundTruth

MODEL_FORMAT = "nodemend-model"
FORMAT_VERSION = "1.0"


def _canonical(payload: dict) -> str:
    return json.dumps(payload, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def _checksum(payload: dict) -> str:
    return hashlib.sha256(_canonical(payload).encode("utf-8")).hexdigest()


def _learner_config_to_dict(cfg: LearnerConfig) -> dict:
    return {k: getattr(cfg, k) for k in cfg.__dataclass_fields__}


def _train_config_to_dict(cfg: TrainConfig) -> dict:
    return {
        "learner": _learner_config_to_dict(cfg.learner),
        "folds": cfg.folds,
        "final_stage": cfg.final_stage,
        "forest": cfg.forest.to_dict(),
        "seed": cfg.seed,
    }


def train_config_from_dict(d: dict) -> TrainConfig:
    return TrainConfig(
        learner=LearnerConfig(**d["learner"]),
        folds=int(d["folds"]),
        final_stage=d["final_stage"],
        forest=ForestParams.from_dict(d["forest"]),
        seed=int(d["seed"]),
    )


def model_to_payload(model: DmlModel) -> dict:
    payload = {
        "schema": model.schema.to_dict(),
        "train_config": _train_config_to_dict(model.train_config),
        "outcome_learners": [lr.to_dict() for lr in model.outcome_learners],
        "propensity_learners": [lr.to_dict() for lr in model.propensity_learners],
        "final_stage": model.final_stage,
        "metadata": model.metadata,
    }
    if model.forest is not None:
        payload["forest"] = model.forest.to_dict()
    if model.linear is not None:
        payload["linear"] = {
            "intercept": model.linear.intercept,
            "coef": list(model.linear.coef),
            "condition_number": model.linear.condition_number,
        }
    return payload


def model_from_payload(payload: dict) -> DmlModel:
    forest = CausalForest.from_dict(payload["forest"]) if "forest" in payload else None
    linear = None
    if "linear" in payload:
        lin = payload["linear"]
        linear = LinearTheta(
            intercept=float(lin["intercept"]),
            coef=np.asarray(lin["coef"], dtype=np.float64),
            condition_number=float(lin["condition_number"]),
        )
    return DmlModel(
        schema=FeatureSchema.from_dict(payload["schema"]),
        outcome_learners=[learner_from_dict(d) for d in payload["outcome_learners"]],
        propensity_learners=[learner_from_dict(d) for d in payload["propensity_learners"]],
        final_stage=payload["final_stage"],
        forest=forest,
        linear=linear,
        train_config=train_config_from_dict(payload["train_config"]),
        metadata=payload["metadata"],
    )


def atomic_write_text(path: str, content: str) -> None:
    tmp = f"{path}.tmp.{os.getpid()}"
    with open(tmp, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(content)
        fh.flush()
        os.fsync(fh.fileno())
    os.replace(tmp, path)


def save_model(model: DmlModel, path: str) -> None:
    payload = model_to_payload(model)
    envelope = {
        "format": MODEL_FORMAT,
        "format_version": FORMAT_VERSION,
        "checksum": _checksum(payload),
        "payload": payload,
    }
    atomic_write_text(path, json.dumps(envelope, sort_keys=True, separators=(",", ":"), ensure_ascii=False))


def load_model(path: str) -> DmlModel:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            envelope = json.load(fh)
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise ModelIntegrityError(f"model file is corrupt: {exc}") from exc
    if not isinstance(envelope, dict) or envelope.get("format") != MODEL_FORMAT:
        raise ModelIntegrityError("not a model file")
    version = str(envelope.get("format_version", ""))
    if version.split(".")[0] != FORMAT_VERSION.split(".")[0]:
        raise ModelVersionError(f"model format {version!r} is incompatible with {FORMAT_VERSION!r}")
    payload = envelope.get("payload")
    if not isinstance(payload, dict) or _checksum(payload) != envelope.get("checksum"):
        raise ModelIntegrityError("model checksum mismatch")
    return model_from_payload(payload)


# ---------------------------------------------------------------------------
# dataset files: one JSON object per line, UTF-8, LF


def write_events_jsonl(events: list[LabeledEvent], path: str) -> None:
    lines = [json.dumps(e.to_dict(), separators=(",", ":"), ensure_ascii=False) for e in events]
    atomic_write_text(path, "\n".join(lines) + ("\n" if lines else ""))


def read_events_jsonl(path: str) -> list[LabeledEvent]:
    events = []
    try:
        with open(path, "r", encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                line = line.strip()
                if not line:
                    continue
                try:
                    events.append(LabeledEvent.from_dict(json.loads(line)))
                except (json.JSONDecodeError, KeyError, ValueError) as exc:
                    raise DataError(f"{path}:{lineno}: bad event record: {exc}") from exc
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    return events


def write_truth_jsonl(truths: list[GroundTruth], path: str) -> None:
    lines = [
        json.dumps(
            {"event_id": t.event_id, "y_reboot": t.y_reboot, "y_redeploy": t.y_redeploy, "cause": t.cause},
            separators=(",", ":"),
            ensure_ascii=False,
        )
        for t in truths
    ]
    atomic_write_text(path, "\n".join(lines) + ("\n" if lines else ""))


def read_truth_jsonl(path: str) -> list[GroundTruth]:
    truths = []
    try:
        with open(path, "r", encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                line = line.strip()
                if not line:
                    continue
                try:
                    d = json.loads(line)
                    truths.append(
                        GroundTruth(
                            event_id=str(d["event_id"]),
                            y_reboot=float(d["y_reboot"]),
                            y_redeploy=float(d["y_redeploy"]),
                            cause=str(d["cause"]),
                        )
                    )
                except (json.JSONDecodeError, KeyError, ValueError) as exc:
                    raise DataError(f"{path}:{lineno}: bad truth record: {exc}") from exc
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    return truths


# ---------------------------------------------------------------------------
# action log


@dataclass(frozen=True)
class ActionLogRecord:
    unhealthy_timestamp: int
    action_timestamp: int
    experiment_name: str
    model_type: str
    model_name: str
    model_version: str
    tau: float | None
    tau_lower: float | None
    tau_upper: float | None
    action: int
    source: str
    reason: str
    node_id: str
    event_id: str

    def __post_init__(self) -> None:
        if self.action_timestamp < self.unhealthy_timestamp:
            raise DataError("action_timestamp must be >= unhealthy_timestamp")

    def to_dict(self) -> dict:
        d = {k: getattr(self, k) for k in self.__dataclass_fields__}
        # actions carry no parameters; the field stays for log-format parity
        d["action_parameters"] = {}
        return d

    @staticmethod
    def from_dict(d: dict) -> "ActionLogRecord":
        fields = {k: d[k] for k in ActionLogRecord.__dataclass_fields__}
        return ActionLogRecord(**fields)


class ActionLogger:
    """Append-only JSONL sink; flushes every record so logs survive crashes."""

    def __init__(self, path: str) -> None:
        self.path = path
        self._fh = open(path, "a", encoding="utf-8", newline="\n")

    def log(self, record: ActionLogRecord) -> None:
        self._fh.write(json.dumps(record.to_dict(), separators=(",", ":"), ensure_ascii=False) + "\n")
        self._fh.flush()

    def close(self) -> None:
        self._fh.close()

    def __enter__(self) -> "ActionLogger":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def read_action_log(path: str) -> list[ActionLogRecord]:
    records = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                records.append(ActionLogRecord.from_dict(json.loads(line)))
    return records


# ---------------------------------------------------------------------------
# model update gate


@dataclass(frozen=True)
class UpdateResult:
    deployed: bool
    reason: str
    psi_current: float | None
    psi_candidate: float | None
    candidate: DmlModel | None


def update_model(
    current: DmlModel,
    recent: list[LabeledEvent],
    holdout: list[LabeledEvent],
    margin: float = 0.0,
) -> UpdateResult:
    """Retrain on the recent window and deploy only on a strict holdout win.

    The candidate reuses the current model's training recipe. With the
    default zero margin a tie keeps the current model.
    """
    if not holdout:
        return UpdateResult(False, "empty holdout", None, None, None)
    try:
        candidate = train_dml(recent, current.train_config, current.schema)
    except InsufficientData as exc:
        return UpdateResult(False, f"insufficient recent data: {exc}", None, None, None)
    except Exception as exc:  # keep serving the current model on any training failure
        return UpdateResult(False, f"training failed: {exc}", None, None, None)
    psi_cur = psi_loss(current, holdout)
    psi_cand = psi_loss(candidate, holdout)
    if psi_cand < psi_cur - margin:
        return UpdateResult(True, "candidate improved holdout score", psi_cur, psi_cand, candidate)
    return UpdateResult(False, "candidate did not improve holdout score", psi_cur, psi_cand, candidate)
