"""Two-stage effect estimation: residualize, then fit the effect model.

Stage 1 cross-fits an outcome regressor and a propensity model so every
row's nuisance prediction comes from learners that never saw it. Stage 2
regresses the outcome residual on the treatment residual, either with a
closed-form linear effect model or with the honest forest. The squared
residual-stage error doubles as the model score used for comparisons and
deployment gating.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .domain import (
    DEFAULT_SCHEMA,
    DiagnosticSignals,
    FeatureSchema,
    IteEstimate,
    LabeledEvent,
    MitigationAction,
    encode_features,
    encode_matrix,
)
from .errors import DegenerateTreatment, InsufficientData, InvalidArgument
from .forest import CausalForest, ForestParams, fit_forest, predict_tau_ci
from .learners import FoldAssignment, LearnerConfig, crossfit_predict, make_folds

FINAL_STAGE_FOREST = "forest"
FINAL_STAGE_LINEAR = "linear"

MODEL_VERSION = "1.0"
MIN_TRAIN_ROWS = 50


@dataclass(frozen=True)
class TrainConfig:
    learner: LearnerConfig = LearnerConfig()
    folds: int = 5
    final_stage: str = FINAL_STAGE_FOREST
    forest: ForestParams = ForestParams()
    seed: int = 0

    def __post_init__(self) -> None:
        if self.final_stage not in (FINAL_STAGE_FOREST, FINAL_STAGE_LINEAR):
            raise InvalidArgument(f"unknown final stage {self.final_stage!r}")
        if self.folds < 2:
            raise InvalidArgument("folds must be >= 2")


@dataclass(frozen=True)
class ResidualData:
    """Stage-1 output: residuals plus the features that produced them."""

    features: np.ndarray
    ry: np.ndarray
    ra: np.ndarray

    def __post_init__(self) -> None:
        if not (self.features.shape[0] == self.ry.shape[0] == self.ra.shape[0]):
            raise InvalidArgument("residual arrays must share their length")


@dataclass(frozen=True)
class LinearTheta:
    """Closed-form effect model theta(x) = intercept + coef . x."""

    intercept: float
    coef: np.ndarray
    condition_number: float

    def predict(self, X: np.ndarray) -> np.ndarray:
        return np.asarray(X, dtype=np.float64) @ self.coef + self.intercept


@dataclass
class DmlModel:
    """Cross-fitted nuisances plus the final-stage effect model."""

    schema: FeatureSchema
    outcome_learners: list
    propensity_learners: list
    final_stage: str
    forest: CausalForest | None
    linear: LinearTheta | None
    train_config: TrainConfig
    metadata: dict

    @property
    def schema_id(self) -> str:
        return self.schema.schema_id


def _residualize(
    X: np.ndarray,
    y: np.ndarray,
    a: np.ndarray,
    config: TrainConfig,
) -> tuple[ResidualData, list, list, FoldAssignment]:
    folds = make_folds(X.shape[0], config.folds, seed=_stream(config.seed, 0))
    y_hat, outcome_learners = crossfit_predict(
        X, y, folds, config.learner, mode="regression", seed=_stream(config.seed, 1)
    )
    a_hat, propensity_learners = crossfit_predict(
        X, a.astype(np.float64), folds, config.learner, mode="propensity", seed=_stream(config.seed, 2)
    )
    res = ResidualData(features=X, ry=y - y_hat, ra=a.astype(np.float64) - a_hat)
    return res, outcome_learners, propensity_learners, folds


def _stream(seed: int, tag: int) -> int:
    return int(np.random.SeedSequence(seed, spawn_key=(tag,)).generate_state(1)[0])


def prepare_training_arrays(
    dataset: list[LabeledEvent], schema: FeatureSchema
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    X = encode_matrix([e.signals for e in dataset], schema)
    y = np.asarray([e.avd for e in dataset], dtype=np.float64)
    a = np.asarray([int(e.action) for e in dataset], dtype=np.int64)
    return X, y, a


def train_dml(
    dataset: list[LabeledEvent],
    config: TrainConfig = TrainConfig(),
    schema: FeatureSchema = DEFAULT_SCHEMA,
) -> DmlModel:
    """Run both stages on an observational dataset and assemble the model.

    Requires at least MIN_TRAIN_ROWS rows and both actions present.
    """
    n = len(dataset)
    if n < MIN_TRAIN_ROWS:
        raise InsufficientData(f"training needs >= {MIN_TRAIN_ROWS} rows, got {n}")
    actions = {int(e.action) for e in dataset}
    if actions != {0, 1}:
        raise DegenerateTreatment(f"training needs both actions, saw codes {sorted(actions)}")

    X, y, a = prepare_training_arrays(dataset, schema)
    res, outcome_learners, propensity_learners, _ = _residualize(X, y, a, config)

    forest = None
    linear = None
    if config.final_stage == FINAL_STAGE_FOREST:
        forest = fit_forest(res.features, res.ry, res.ra, config.forest, seed=_stream(config.seed, 3))
    else:
        linear = final_stage_linear(res)

    metadata = {
        "seed": config.seed,
        "n": n,
        # data timestamp, not wall clock: artifacts must be reproducible
        "timestamp": max(e.timestamp for e in dataset),
        "version": MODEL_VERSION,
    }
    if linear is not None:
        metadata["condition_number"] = linear.condition_number
    return DmlModel(
        schema=schema,
        outcome_learners=outcome_learners,
        propensity_learners=propensity_learners,
        final_stage=config.final_stage,
        forest=forest,
        linear=linear,
        train_config=config,
        metadata=metadata,
    )


def residualize_dataset(
    dataset: list[LabeledEvent],
    config: TrainConfig = TrainConfig(),
    schema: FeatureSchema = DEFAULT_SCHEMA,
) -> tuple[ResidualData, list, list]:
    """Stage 1 only; lets callers fit several final stages on one residual set."""
    X, y, a = prepare_training_arrays(dataset, schema)
    res, outcome_learners, propensity_learners, _ = _residualize(X, y, a, config)
    return res, outcome_learners, propensity_learners


def assemble_model(
    res: ResidualData,
    outcome_learners: list,
    propensity_learners: list,
    final_stage: str,
    config: TrainConfig,
    schema: FeatureSchema,
    dataset: list[LabeledEvent],
) -> DmlModel:
    """Build a DmlModel around an existing residual set."""
    forest = None
    linear = None
    if final_stage == FINAL_STAGE_FOREST:
        forest = fit_forest(res.features, res.ry, res.ra, config.forest, seed=_stream(config.seed, 3))
    elif final_stage == FINAL_STAGE_LINEAR:
        linear = final_stage_linear(res)
    else:
        raise InvalidArgument(f"unknown final stage {final_stage!r}")
    metadata = {
        "seed": config.seed,
        "n": res.features.shape[0],
        "timestamp": max((e.timestamp for e in dataset), default=0),
        "version": MODEL_VERSION,
    }
    if linear is not None:
        metadata["condition_number"] = linear.condition_number
    return DmlModel(
        schema=schema,
        outcome_learners=outcome_learners,
        propensity_learners=propensity_learners,
        final_stage=final_stage,
        forest=forest,
        linear=linear,
        train_config=replace(config, final_stage=final_stage),
        metadata=metadata,
    )


def final_stage_linear(res: ResidualData) -> LinearTheta:
    """Least squares for theta(x) = c + beta . x against ry =~ theta(x) * ra.

    Solved on the ra-scaled design, so singular layouts fall back to the
    pseudo-inverse; the design's condition number is kept for metadata.
    """
    ra = res.ra
    if not np.any(np.abs(ra) > 0.0):
        raise DegenerateTreatment("all treatment residuals are zero")
    Z = np.hstack([np.ones((res.features.shape[0], 1)), res.features]) * ra[:, None]
    beta, _, _, sv = np.linalg.lstsq(Z, res.ry, rcond=None)
    cond = float(sv[0] / sv[-1]) if len(sv) and sv[-1] > 0 else float("inf")
    return LinearTheta(intercept=float(beta[0]), coef=beta[1:], condition_number=cond)


def nuisance_predictions(model: DmlModel, X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Average the k fold-learners; rows outside training were seen by none."""
    y_hat = np.mean([lr.predict(X) for lr in model.outcome_learners], axis=0)
    a_hat = np.mean([lr.predict(X) for lr in model.propensity_learners], axis=0)
    return y_hat, a_hat


def theta_values(model: DmlModel, X: np.ndarray) -> np.ndarray:
    """Batch effect predictions theta(x) for encoded feature rows."""
    if model.final_stage == FINAL_STAGE_FOREST:
        assert model.forest is not None
        return model.forest.predict_matrix(X).mean(axis=1)
    assert model.linear is not None
    return model.linear.predict(X)


def psi_loss(model: DmlModel, dataset: list[LabeledEvent]) -> float:
    """Mean squared residual-stage error of the model on a dataset."""
    if not dataset:
        raise InvalidArgument("psi_loss needs a non-empty dataset")
    X, y, a = prepare_training_arrays(dataset, model.schema)
    y_hat, a_hat = nuisance_predictions(model, X)
    theta = theta_values(model, X)
    resid = (y - y_hat) - theta * (a - a_hat)
    return float(np.mean(resid**2))


def estimate_ite(model: DmlModel, signals: DiagnosticSignals) -> IteEstimate:
    """Effect estimate for one event.

    Forest models carry a grouped-bag interval at the configured level;
    linear models return a point estimate with zero width.
    """
    vec = encode_features(signals, model.schema)
    x = np.asarray(vec.values, dtype=np.float64)[None, :]
    if model.final_stage == FINAL_STAGE_FOREST:
        assert model.forest is not None
        return predict_tau_ci(model.forest, x)[0]
    assert model.linear is not None
    tau = float(model.linear.predict(x)[0])
    level = model.train_config.forest.confidence_level
    return IteEstimate(tau=tau, tau_lower=tau, tau_upper=tau, confidence_level=level)


def estimate_ite_batch(model: DmlModel, signal_rows: list[DiagnosticSignals]) -> list[IteEstimate]:
    """Vectorized estimate_ite: identical point estimates; interval bounds
    agree with the single-row path to floating-point reduction accuracy."""
    X = encode_matrix(signal_rows, model.schema)
    if model.final_stage == FINAL_STAGE_FOREST:
        assert model.forest is not None
        return predict_tau_ci(model.forest, X)
    assert model.linear is not None
    taus = model.linear.predict(X)
    level = model.train_config.forest.confidence_level
    return [IteEstimate(tau=float(t), tau_lower=float(t), tau_upper=float(t), confidence_level=level) for t in taus]


def preferred_action(tau: float) -> MitigationAction:
    """Sign rule: positive effect means Redeploy costs more, pick Reboot."""
    return MitigationAction.REBOOT if tau >= 0.0 else MitigationAction.REDEPLOY
