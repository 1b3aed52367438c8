"""First-stage learners and cross-fitting.

The default learner is a small gradient-boosted ensemble of depth-2
regression trees over pre-binned features: deterministic given its seed,
no dependencies beyond numpy, and comfortable with one-hot plus count
columns. A closed-form ridge regressor is provided as the oracle-friendly
alternative. Propensity mode reuses the same regressors on 0/1 targets and
clamps predictions away from the boundaries.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgument

_MIN_GAIN = 1e-12


@dataclass(frozen=True)
class FoldAssignment:
    """Per-row fold indices in [0, k). Built by a seeded shuffle."""

    k: int
    membership: np.ndarray

    def __eq__(self, other: object) -> bool:
        return (
            isinstance(other, FoldAssignment)
            and self.k == other.k
            and np.array_equal(self.membership, other.membership)
        )


def make_folds(n: int, k: int, seed: int) -> FoldAssignment:
    """Shuffle row indices with the seed and cut into k contiguous blocks.

    Block sizes differ by at most one; requires n >= k >= 2.
    """
    if k < 2:
        raise InvalidArgument(f"fold count must be >= 2, got {k}")
    if n < k:
        raise InvalidArgument(f"need at least k={k} rows, got {n}")
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))
    perm = rng.permutation(n)
    membership = np.empty(n, dtype=np.int64)
    base, extra = divmod(n, k)
    start = 0
    for j in range(k):
        size = base + (1 if j < extra else 0)
        membership[perm[start : start + size]] = j
        start += size
    return FoldAssignment(k=k, membership=membership)


@dataclass(frozen=True)
class LearnerConfig:
    """Hyperparameters for the first-stage learners."""

    kind: str = "gbm"
    rounds: int = 200
    learning_rate: float = 0.1
    max_depth: int = 2
    subsample: float = 0.8
    max_bins: int = 32
    min_leaf: int = 5
    ridge_alpha: float = 1e-8
    p_min: float = 0.01

    def __post_init__(self) -> None:
        if self.kind not in ("gbm", "ridge"):
            raise InvalidArgument(f"unknown learner kind {self.kind!r}")
        if not (0.0 < self.subsample <= 1.0):
            raise InvalidArgument("subsample must lie in (0, 1]")
        if not (0.0 < self.p_min < 0.5):
            raise InvalidArgument("p_min must lie in (0, 0.5)")


def _derive_seed(seed: int, *key: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=key)))


# ---------------------------------------------------------------------------
# depth-limited regression trees on binned columns


def _bin_column(col: np.ndarray, max_bins: int) -> np.ndarray:
    """Candidate thresholds for one column.

    Low-cardinality columns get exact midpoints; wide ones a quantile grid.
    Codes use searchsorted(side='left'), so a value equal to a threshold
    lands left, matching the `x <= thr` apply rule.
    """
    uniq = np.unique(col)
    if len(uniq) <= 1:
        return np.empty(0, dtype=np.float64)
    if len(uniq) <= max_bins:
        return (uniq[:-1] + uniq[1:]) / 2.0
    return np.unique(np.quantile(col, np.linspace(0.0, 1.0, max_bins + 1)[1:-1]))


def _apply_tree(
    X: np.ndarray,
    feature: np.ndarray,
    threshold: np.ndarray,
    left: np.ndarray,
    right: np.ndarray,
    value: np.ndarray,
) -> np.ndarray:
    idx = np.zeros(X.shape[0], dtype=np.int64)
    while True:
        f = feature[idx]
        leaf = f < 0
        if leaf.all():
            break
        fx = np.where(leaf, 0, f)
        go_left = X[np.arange(X.shape[0]), fx] <= threshold[idx]
        nxt = np.where(go_left, left[idx], right[idx])
        idx = np.where(leaf, idx, nxt)
    return value[idx]


class _Tree:
    __slots__ = ("feature", "threshold", "left", "right", "value")

    def __init__(self) -> None:
        self.feature: list[int] = []
        self.threshold: list[float] = []
        self.left: list[int] = []
        self.right: list[int] = []
        self.value: list[float] = []

    def add_leaf(self, value: float) -> int:
        self.feature.append(-1)
        self.threshold.append(0.0)
        self.left.append(-1)
        self.right.append(-1)
        self.value.append(float(value))
        return len(self.feature) - 1

    def add_split(self, feature: int, threshold: float) -> int:
        self.feature.append(int(feature))
        self.threshold.append(float(threshold))
        self.left.append(-1)
        self.right.append(-1)
        self.value.append(0.0)
        return len(self.feature) - 1

    def arrays(self) -> tuple[np.ndarray, ...]:
        return (
            np.asarray(self.feature, dtype=np.int64),
            np.asarray(self.threshold, dtype=np.float64),
            np.asarray(self.left, dtype=np.int64),
            np.asarray(self.right, dtype=np.int64),
            np.asarray(self.value, dtype=np.float64),
        )


def _grow_sse_tree(
    codes: np.ndarray,
    nbins: np.ndarray,
    thresholds: list[np.ndarray],
    resid: np.ndarray,
    rows: np.ndarray,
    max_depth: int,
    min_leaf: int,
) -> _Tree:
    """Greedy SSE-minimizing tree over binned columns (exact within bins)."""
    tree = _Tree()

    def grow(rows: np.ndarray, depth: int) -> int:
        r = resid[rows]
        if depth >= max_depth or len(rows) < 2 * min_leaf:
            return tree.add_leaf(r.mean())
        total_sum = r.sum()
        n = len(rows)
        best_gain = _MIN_GAIN
        best = None
        parent_score = total_sum * total_sum / n
        for f in range(codes.shape[1]):
            nb = nbins[f]
            if nb < 2:
                continue
            c = codes[rows, f]
            sums = np.bincount(c, weights=r, minlength=nb)
            cnts = np.bincount(c, minlength=nb)
            csum = np.cumsum(sums)[:-1]
            ccnt = np.cumsum(cnts)[:-1]
            nl = ccnt
            nr = n - ccnt
            ok = (nl >= min_leaf) & (nr >= min_leaf)
            if not ok.any():
                continue
            with np.errstate(divide="ignore", invalid="ignore"):
                score = np.where(ok, csum * csum / nl + (total_sum - csum) ** 2 / nr, -np.inf)
            b = int(np.argmax(score))
            gain = score[b] - parent_score
            if gain > best_gain:
                best_gain = gain
                best = (f, b)
        if best is None:
            return tree.add_leaf(r.mean())
        f, b = best
        node = tree.add_split(f, thresholds[f][b])
        mask = codes[rows, f] <= b
        left_id = grow(rows[mask], depth + 1)
        right_id = grow(rows[~mask], depth + 1)
        tree.left[node] = left_id
        tree.right[node] = right_id
        return node

    grow(rows, 0)
    return tree


class GradientBoostedTrees:
    """Least-squares boosting over depth-limited trees.

    ``mode="propensity"`` clamps predictions into [p_min, 1 - p_min].
    Deterministic for a fixed seed: row subsampling per round is the only
    random element and is drawn from a private generator.
    """

    def __init__(self, config: LearnerConfig, mode: str = "regression", seed: int = 0) -> None:
        if mode not in ("regression", "propensity"):
            raise InvalidArgument(f"unknown learner mode {mode!r}")
        self.config = config
        self.mode = mode
        self.seed = int(seed)
        self.base_value = 0.0
        self.trees: list[tuple[np.ndarray, ...]] = []

    def fit(self, X: np.ndarray, y: np.ndarray) -> "GradientBoostedTrees":
        X = np.asarray(X, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        if X.shape[0] != y.shape[0]:
            raise InvalidArgument("features and targets must have equal length")
        cfg = self.config
        rng = _derive_seed(self.seed, 0)
        thresholds = [_bin_column(X[:, f], cfg.max_bins) for f in range(X.shape[1])]
        nbins = np.asarray([len(t) + 1 for t in thresholds], dtype=np.int64)
        codes = np.empty(X.shape, dtype=np.int64)
        for f in range(X.shape[1]):
            codes[:, f] = np.searchsorted(thresholds[f], X[:, f], side="left")
        self.base_value = float(y.mean())
        self.trees = []
        current = np.full(X.shape[0], self.base_value)
        n = X.shape[0]
        n_sub = max(1, int(round(cfg.subsample * n)))
        for _ in range(cfg.rounds):
            resid = y - current
            rows = rng.choice(n, size=n_sub, replace=False) if n_sub < n else np.arange(n)
            tree = _grow_sse_tree(codes, nbins, thresholds, resid, rows, cfg.max_depth, cfg.min_leaf)
            arrays = tree.arrays()
            self.trees.append(arrays)
            current = current + cfg.learning_rate * _apply_tree(X, *arrays)
        return self

    def predict(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        out = np.full(X.shape[0], self.base_value)
        for arrays in self.trees:
            out = out + self.config.learning_rate * _apply_tree(X, *arrays)
        if self.mode == "propensity":
            out = np.clip(out, self.config.p_min, 1.0 - self.config.p_min)
        return out

    def to_dict(self) -> dict:
        return {
            "kind": "gbm",
            "mode": self.mode,
            "seed": self.seed,
            "base_value": self.base_value,
            "config": {
                "rounds": self.config.rounds,
                "learning_rate": self.config.learning_rate,
                "max_depth": self.config.max_depth,
                "subsample": self.config.subsample,
                "max_bins": self.config.max_bins,
                "min_leaf": self.config.min_leaf,
                "p_min": self.config.p_min,
            },
            "trees": [
                {
                    "feature": t[0].tolist(),
                    "threshold": t[1].tolist(),
                    "left": t[2].tolist(),
                    "right": t[3].tolist(),
                    "value": t[4].tolist(),
                }
                for t in self.trees
            ],
        }

    @staticmethod
    def from_dict(d: dict) -> "GradientBoostedTrees":
        cfg = LearnerConfig(kind="gbm", ridge_alpha=1e-8, **d["config"])
        learner = GradientBoostedTrees(cfg, mode=d["mode"], seed=d["seed"])
        learner.base_value = float(d["base_value"])
        learner.trees = [
            (
                np.asarray(t["feature"], dtype=np.int64),
                np.asarray(t["threshold"], dtype=np.float64),
                np.asarray(t["left"], dtype=np.int64),
                np.asarray(t["right"], dtype=np.int64),
                np.asarray(t["value"], dtype=np.float64),
            )
            for t in d["trees"]
        ]
        return learner


class RidgeRegression:
    """Closed-form ridge with an unpenalized-in-practice tiny default alpha."""

    def __init__(self, config: LearnerConfig, mode: str = "regression", seed: int = 0) -> None:
        if mode not in ("regression", "propensity"):
            raise InvalidArgument(f"unknown learner mode {mode!r}")
        self.config = config
        self.mode = mode
        self.seed = int(seed)
        self.coef: np.ndarray | None = None
        self.intercept = 0.0

    def fit(self, X: np.ndarray, y: np.ndarray) -> "RidgeRegression":
        X = np.asarray(X, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        Z = np.hstack([np.ones((X.shape[0], 1)), X])
        a = Z.T @ Z + self.config.ridge_alpha * np.eye(Z.shape[1])
        b = Z.T @ y
        try:
            beta = np.linalg.solve(a, b)
        except np.linalg.LinAlgError:
            beta = np.linalg.lstsq(a, b, rcond=None)[0]
        self.intercept = float(beta[0])
        self.coef = beta[1:]
        return self

    def predict(self, X: np.ndarray) -> np.ndarray:
        if self.coef is None:
            raise InvalidArgument("predict called before fit")
        out = np.asarray(X, dtype=np.float64) @ self.coef + self.intercept
        if self.mode == "propensity":
            out = np.clip(out, self.config.p_min, 1.0 - self.config.p_min)
        return out

    def to_dict(self) -> dict:
        return {
            "kind": "ridge",
            "mode": self.mode,
            "seed": self.seed,
            "intercept": self.intercept,
            "coef": list(self.coef) if self.coef is not None else None,
            "config": {"ridge_alpha": self.config.ridge_alpha, "p_min": self.config.p_min},
        }

    @staticmethod
    def from_dict(d: dict) -> "RidgeRegression":
        cfg = LearnerConfig(kind="ridge", **d["config"])
        learner = RidgeRegression(cfg, mode=d["mode"], seed=d["seed"])
        learner.intercept = float(d["intercept"])
        learner.coef = np.asarray(d["coef"], dtype=np.float64) if d["coef"] is not None else None
        return learner


def make_learner(config: LearnerConfig, mode: str, seed: int):
    if config.kind == "gbm":
        return GradientBoostedTrees(config, mode=mode, seed=seed)
    return RidgeRegression(config, mode=mode, seed=seed)


def learner_from_dict(d: dict):
    if d["kind"] == "gbm":
        return GradientBoostedTrees.from_dict(d)
    if d["kind"] == "ridge":
        return RidgeRegression.from_dict(d)
    raise InvalidArgument(f"unknown learner kind {d['kind']!r}")


def crossfit_predict(
    features: np.ndarray,
    targets: np.ndarray,
    folds: FoldAssignment,
    config: LearnerConfig,
    mode: str = "regression",
    seed: int = 0,
) -> tuple[np.ndarray, list]:
    """Out-of-fold predictions: fold j's rows are predicted by a learner
    that was fit on everything except fold j."""
    features = np.asarray(features, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    if features.shape[0] != targets.shape[0]:
        raise InvalidArgument("features and targets must have equal length")
    if features.shape[0] != folds.membership.shape[0]:
        raise InvalidArgument("fold assignment does not match dataset length")
    oof = np.empty(targets.shape[0], dtype=np.float64)
    learners = []
    for j in range(folds.k):
        test = folds.membership == j
        train = ~test
        learner = make_learner(config, mode, seed=_fold_seed(seed, j))
        learner.fit(features[train], targets[train])
        oof[test] = learner.predict(features[test])
        learners.append(learner)
    return oof, learners


def _fold_seed(seed: int, fold: int) -> int:
    return int(np.random.SeedSequence(seed, spawn_key=(fold,)).generate_state(1)[0])
