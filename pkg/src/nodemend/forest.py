"""Honest causal forest over residualized data, with grouped-bag intervals.

Each tree sees a subsample split into disjoint halves: structure rows pick
the splits, estimation rows set the leaf values. A leaf's value is the
local residual-on-residual slope

    tau_leaf = sum(ry * ra) / sum(ra^2)

over its estimation rows, i.e. the per-leaf constant that best explains
the outcome residual from the treatment residual. Splits greedily maximize
n_L * tau_L^2 + n_R * tau_R^2 between the children, so the tree chases
effect heterogeneity rather than outcome variance.

Trees are grouped into bags that share a half-sample of the data. The
spread of bag-level mean predictions, corrected for the finite number of
trees inside each bag, estimates the sampling variance of the forest
prediction:

    V_between = (1/B) * sum_b (m_b - m)^2
    V_within  = (1/(B*s)) * sum_b sum_i (t_bi - m_b)^2
    V         = max(V_between - V_within / s, frac * V_between, V_floor)

where m_b is bag b's mean prediction, s trees per bag, B bags. With a few
dozen bags the correction term's own sampling noise regularly drives the
difference to zero or below, so a relative floor keeps the correction from
consuming more than (1 - frac) of the between-bag variance; the absolute
floor covers the degenerate all-identical forest.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from statistics import NormalDist

import numpy as np

from .domain import IteEstimate
from .errors import InsufficientData, InvalidArgument

_MIN_GAIN = 1e-12
_MIN_STRUCTURE_CHILD = 5


@dataclass(frozen=True)
class ForestParams:
    bags: int = 25
    trees_per_bag: int = 8
    max_depth: int = 8
    min_split: int = 20
    min_leaf_estimate: int = 10
    honest_fraction: float = 0.5
    subsample_fraction: float = 0.5
    confidence_level: float = 0.9
    max_bins: int = 32
    variance_floor: float = 1e-12
    variance_floor_frac: float = 0.20
    features_per_split: int | None = None  # None: max(sqrt(d), d/3), rounded up

    def __post_init__(self) -> None:
        if self.bags < 1 or self.trees_per_bag < 1:
            raise InvalidArgument("bags and trees_per_bag must be >= 1")
        if not (0.0 < self.honest_fraction < 1.0):
            raise InvalidArgument("honest_fraction must lie in (0, 1)")
        if not (0.0 < self.subsample_fraction <= 1.0):
            raise InvalidArgument("subsample_fraction must lie in (0, 1]")
        if not (0.0 < self.confidence_level < 1.0):
            raise InvalidArgument("confidence_level must lie in (0, 1)")

    @property
    def n_trees(self) -> int:
        return self.bags * self.trees_per_bag

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}

    @staticmethod
    def from_dict(d: dict) -> "ForestParams":
        known = set(ForestParams.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise InvalidArgument(f"unknown forest keys: {sorted(unknown)}")
        return ForestParams(**d)


@dataclass
class CausalTree:
    """Flattened binary tree; leaves carry the estimation-half slope."""

    feature: np.ndarray  # -1 marks a leaf
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    tau: np.ndarray
    n_estimate: np.ndarray
    structure_idx: np.ndarray
    estimate_idx: np.ndarray
    seed: int

    def predict(self, X: np.ndarray) -> np.ndarray:
        idx = np.zeros(X.shape[0], dtype=np.int64)
        while True:
            f = self.feature[idx]
            leaf = f < 0
            if leaf.all():
                break
            fx = np.where(leaf, 0, f)
            go_left = X[np.arange(X.shape[0]), fx] <= self.threshold[idx]
            nxt = np.where(go_left, self.left[idx], self.right[idx])
            idx = np.where(leaf, idx, nxt)
        return self.tau[idx]

    def leaf_ids(self) -> np.ndarray:
        return np.flatnonzero(self.feature < 0)

    def to_dict(self) -> dict:
        return {
            "feature": self.feature.tolist(),
            "threshold": self.threshold.tolist(),
            "left": self.left.tolist(),
            "right": self.right.tolist(),
            "tau": self.tau.tolist(),
            "n_estimate": self.n_estimate.tolist(),
            "structure_idx": self.structure_idx.tolist(),
            "estimate_idx": self.estimate_idx.tolist(),
            "seed": self.seed,
        }

    @staticmethod
    def from_dict(d: dict) -> "CausalTree":
        return CausalTree(
            feature=np.asarray(d["feature"], dtype=np.int64),
            threshold=np.asarray(d["threshold"], dtype=np.float64),
            left=np.asarray(d["left"], dtype=np.int64),
            right=np.asarray(d["right"], dtype=np.int64),
            tau=np.asarray(d["tau"], dtype=np.float64),
            n_estimate=np.asarray(d["n_estimate"], dtype=np.int64),
            structure_idx=np.asarray(d["structure_idx"], dtype=np.int64),
            estimate_idx=np.asarray(d["estimate_idx"], dtype=np.int64),
            seed=int(d["seed"]),
        )


@dataclass
class CausalForest:
    """Immutable once fitted; prediction is reentrant."""

    trees: list[CausalTree]
    bag_of_tree: np.ndarray  # bag index per tree
    params: ForestParams
    seed: int

    @property
    def n_bags(self) -> int:
        return int(self.bag_of_tree.max()) + 1 if len(self.bag_of_tree) else 0

    def predict_matrix(self, X: np.ndarray) -> np.ndarray:
        """Per-tree predictions, shape (n_points, n_trees)."""
        X = np.asarray(X, dtype=np.float64)
        out = np.empty((X.shape[0], len(self.trees)), dtype=np.float64)
        for t, tree in enumerate(self.trees):
            out[:, t] = tree.predict(X)
        return out

    def to_dict(self) -> dict:
        return {
            "params": self.params.to_dict(),
            "seed": self.seed,
            "bag_of_tree": self.bag_of_tree.tolist(),
            "trees": [t.to_dict() for t in self.trees],
        }

    @staticmethod
    def from_dict(d: dict) -> "CausalForest":
        return CausalForest(
            trees=[CausalTree.from_dict(t) for t in d["trees"]],
            bag_of_tree=np.asarray(d["bag_of_tree"], dtype=np.int64),
            params=ForestParams.from_dict(d["params"]),
            seed=int(d["seed"]),
        )


def _bin_thresholds(col: np.ndarray, max_bins: int) -> np.ndarray:
    uniq = np.unique(col)
    if len(uniq) <= 1:
        return np.empty(0, dtype=np.float64)
    if len(uniq) <= max_bins:
        return (uniq[:-1] + uniq[1:]) / 2.0
    qs = np.unique(np.quantile(col, np.linspace(0.0, 1.0, max_bins + 1)[1:-1]))
    return qs


class _TreeBuilder:
    def __init__(self) -> None:
        self.feature: list[int] = []
        self.threshold: list[float] = []
        self.left: list[int] = []
        self.right: list[int] = []
        self.tau: list[float] = []
        self.n_estimate: list[int] = []

    def add(self) -> int:
        self.feature.append(-1)
        self.threshold.append(0.0)
        self.left.append(-1)
        self.right.append(-1)
        self.tau.append(0.0)
        self.n_estimate.append(0)
        return len(self.feature) - 1


def grow_tree(
    X: np.ndarray,
    ry: np.ndarray,
    ra: np.ndarray,
    subsample: np.ndarray,
    params: ForestParams,
    seed: int,
    _codes: np.ndarray | None = None,
    _thresholds: list[np.ndarray] | None = None,
) -> CausalTree:
    """Grow one honest tree on the given subsample.

    The subsample is shuffled once (seeded) and cut into the structure half
    and the estimation half, so no row serves both purposes. A candidate
    split is valid only when both structure children stay splittable and
    both estimation children keep at least ``min_leaf_estimate`` rows with
    a nonzero treatment residual. A leaf whose estimation rows carry no
    treatment variation inherits its parent's value.
    """
    X = np.asarray(X, dtype=np.float64)
    ry = np.asarray(ry, dtype=np.float64)
    ra = np.asarray(ra, dtype=np.float64)
    subsample = np.asarray(subsample, dtype=np.int64)
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))

    perm = subsample[rng.permutation(len(subsample))]
    n_structure = max(1, int(round(params.honest_fraction * len(perm))))
    structure_idx = perm[:n_structure]
    estimate_idx = perm[n_structure:]

    if _codes is None or _thresholds is None:
        _thresholds = [_bin_thresholds(X[subsample, f], params.max_bins) for f in range(X.shape[1])]
        _codes = np.zeros(X.shape, dtype=np.int64)
        for f in range(X.shape[1]):
            _codes[subsample, f] = np.searchsorted(_thresholds[f], X[subsample, f], side="left")
    codes = _codes
    thresholds = _thresholds

    u = ry * ra
    w = ra * ra
    has_ra = w > 0.0
    d = X.shape[1]
    if params.features_per_split is not None:
        mtry = max(1, min(params.features_per_split, d))
    else:
        # sqrt(d) keeps split-time attenuation too high at the default
        # depth/size limits; the regression-forest d/3 rule fixes that
        mtry = max(1, min(max(math.ceil(math.sqrt(d)), math.ceil(d / 3)), d))
    builder = _TreeBuilder()

    def leaf_tau(est_rows: np.ndarray, parent_tau: float) -> tuple[float, int]:
        sw = w[est_rows].sum()
        n_est = int(has_ra[est_rows].sum())
        if sw <= 0.0:
            return parent_tau, n_est
        return float(u[est_rows].sum() / sw), n_est

    def grow(struct_rows: np.ndarray, est_rows: np.ndarray, depth: int, parent_tau: float) -> int:
        node = builder.add()
        tau_here, n_est_here = leaf_tau(est_rows, parent_tau)
        builder.tau[node] = tau_here
        builder.n_estimate[node] = n_est_here

        n = len(struct_rows)
        if depth >= params.max_depth or n < params.min_split:
            return node

        sw_all = w[struct_rows].sum()
        su_all = u[struct_rows].sum()
        if sw_all <= 0.0:
            return node
        parent_score = n * (su_all / sw_all) ** 2

        est_flag = has_ra[est_rows].astype(np.float64)
        feats = rng.choice(d, size=min(mtry, d), replace=False)
        best_gain = _MIN_GAIN
        best = None
        for f in feats:
            thr = thresholds[f]
            nb = len(thr) + 1
            if nb < 2:
                continue
            c = codes[struct_rows, f]
            cnt = np.bincount(c, minlength=nb)[:-1].cumsum()
            csu = np.bincount(c, weights=u[struct_rows], minlength=nb)[:-1].cumsum()
            csw = np.bincount(c, weights=w[struct_rows], minlength=nb)[:-1].cumsum()
            ce = codes[est_rows, f]
            cest = np.bincount(ce, weights=est_flag, minlength=nb)[:-1].cumsum()
            n_est_total = est_flag.sum()

            nl = cnt
            nr = n - nl
            wl = csw
            wr = sw_all - csw
            el = cest
            er = n_est_total - cest
            ok = (
                (nl >= _MIN_STRUCTURE_CHILD)
                & (nr >= _MIN_STRUCTURE_CHILD)
                & (wl > 0.0)
                & (wr > 0.0)
                & (el >= params.min_leaf_estimate)
                & (er >= params.min_leaf_estimate)
            )
            if not ok.any():
                continue
            with np.errstate(divide="ignore", invalid="ignore"):
                tl = np.where(wl > 0, csu / np.where(wl > 0, wl, 1.0), 0.0)
                tr = np.where(wr > 0, (su_all - csu) / np.where(wr > 0, wr, 1.0), 0.0)
                score = np.where(ok, nl * tl * tl + nr * tr * tr, -np.inf)
            b = int(np.argmax(score))
            gain = score[b] - parent_score
            if gain > best_gain:
                best_gain = gain
                best = (int(f), b)

        if best is None:
            return node
        f, b = best
        builder.feature[node] = f
        builder.threshold[node] = float(thresholds[f][b])
        s_mask = codes[struct_rows, f] <= b
        e_mask = codes[est_rows, f] <= b
        left_id = grow(struct_rows[s_mask], est_rows[e_mask], depth + 1, tau_here)
        right_id = grow(struct_rows[~s_mask], est_rows[~e_mask], depth + 1, tau_here)
        builder.left[node] = left_id
        builder.right[node] = right_id
        return node

    grow(structure_idx, estimate_idx, 0, 0.0)
    return CausalTree(
        feature=np.asarray(builder.feature, dtype=np.int64),
        threshold=np.asarray(builder.threshold, dtype=np.float64),
        left=np.asarray(builder.left, dtype=np.int64),
        right=np.asarray(builder.right, dtype=np.int64),
        tau=np.asarray(builder.tau, dtype=np.float64),
        n_estimate=np.asarray(builder.n_estimate, dtype=np.int64),
        structure_idx=structure_idx,
        estimate_idx=estimate_idx,
        seed=int(seed),
    )


def fit_forest(
    X: np.ndarray,
    ry: np.ndarray,
    ra: np.ndarray,
    params: ForestParams,
    seed: int,
) -> CausalForest:
    """Fit the bagged honest forest.

    Each bag draws a half-sample of the rows without replacement; each of
    its trees then subsamples that half-sample independently. All draw
    seeds derive from (seed, bag, tree), so the result is independent of
    any execution order.
    """
    X = np.asarray(X, dtype=np.float64)
    ry = np.asarray(ry, dtype=np.float64)
    ra = np.asarray(ra, dtype=np.float64)
    n = X.shape[0]
    if n < 2 * params.min_split:
        raise InsufficientData(f"forest needs at least {2 * params.min_split} rows, got {n}")

    thresholds = [_bin_thresholds(X[:, f], params.max_bins) for f in range(X.shape[1])]
    codes = np.empty(X.shape, dtype=np.int64)
    for f in range(X.shape[1]):
        codes[:, f] = np.searchsorted(thresholds[f], X[:, f], side="left")

    trees: list[CausalTree] = []
    bag_of_tree = np.empty(params.n_trees, dtype=np.int64)
    t = 0
    for b in range(params.bags):
        bag_rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(b,))))
        half = bag_rng.choice(n, size=max(1, n // 2), replace=False)
        for i in range(params.trees_per_bag):
            tree_seed = int(np.random.SeedSequence(seed, spawn_key=(b, i)).generate_state(1)[0])
            tree_rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(b, i, 1))))
            size = max(2, int(round(params.subsample_fraction * len(half))))
            sub = half[tree_rng.choice(len(half), size=min(size, len(half)), replace=False)]
            trees.append(grow_tree(X, ry, ra, sub, params, tree_seed, _codes=codes, _thresholds=thresholds))
            bag_of_tree[t] = b
            t += 1
    return CausalForest(trees=trees, bag_of_tree=bag_of_tree, params=params, seed=seed)


def predict_tau(forest: CausalForest, X: np.ndarray) -> np.ndarray:
    """Mean leaf slope over all trees for each query row."""
    return forest.predict_matrix(X).mean(axis=1)


def _interval_variance(per_tree: np.ndarray, bag_of_tree: np.ndarray, params: ForestParams) -> np.ndarray:
    """Grouped-bag variance estimate per query point.

    ``per_tree`` has shape (n_points, n_trees).
    """
    bags = int(bag_of_tree.max()) + 1
    s = params.trees_per_bag
    m_b = np.empty((per_tree.shape[0], bags), dtype=np.float64)
    v_within = np.zeros(per_tree.shape[0], dtype=np.float64)
    for b in range(bags):
        cols = per_tree[:, bag_of_tree == b]
        m_b[:, b] = cols.mean(axis=1)
        v_within += ((cols - m_b[:, [b]]) ** 2).sum(axis=1)
    m = per_tree.mean(axis=1)
    v_between = ((m_b - m[:, None]) ** 2).mean(axis=1)
    v_within /= bags * s
    rel_floor = params.variance_floor_frac * v_between
    return np.maximum(v_between - v_within / s, np.maximum(rel_floor, params.variance_floor))


def predict_tau_ci(forest: CausalForest, X: np.ndarray, level: float | None = None) -> list[IteEstimate]:
    """Point estimates with grouped-bag confidence intervals."""
    if forest.n_bags < 2:
        raise InsufficientData("confidence intervals need at least 2 bags")
    level = forest.params.confidence_level if level is None else level
    if not (0.0 < level < 1.0):
        raise InvalidArgument("confidence level must lie in (0, 1)")
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    per_tree = forest.predict_matrix(X)
    m = per_tree.mean(axis=1)
    v = _interval_variance(per_tree, forest.bag_of_tree, forest.params)
    z = NormalDist().inv_cdf(0.5 + level / 2.0)
    half = z * np.sqrt(v)
    return [
        IteEstimate(tau=float(m[i]), tau_lower=float(m[i] - half[i]), tau_upper=float(m[i] + half[i]), confidence_level=level)
        for i in range(X.shape[0])
    ]


def audit_honesty(forest: CausalForest) -> bool:
    """True when no tree shares a row between structure and estimation."""
    for tree in forest.trees:
        if np.intersect1d(tree.structure_idx, tree.estimate_idx).size:
            return False
    return True
