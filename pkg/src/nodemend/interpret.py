"""Shallow if-else policy extraction and per-feature effect curves.

The policy tree is a plain regression tree over predicted effects whose
split objective is the between-child effect difference,

    n_L * n_R / (n_L + n_R) * (mean_L - mean_R)^2,

so the first splits surface the signals that flip the recommendation. Leaf
recommendations follow the same sign rule as the decision layer.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dml import DmlModel, estimate_ite_batch
from .domain import DiagnosticSignals, LabeledEvent, MitigationAction
from .errors import InsufficientData, InvalidArgument

_MIN_LEAF = 10
_MIN_ROWS = 20


@dataclass
class PolicyTree:
    feature: np.ndarray  # -1 marks a leaf
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    mean_tau: np.ndarray
    n: np.ndarray

    def leaf_action(self, node: int) -> MitigationAction:
        return MitigationAction.REBOOT if self.mean_tau[node] >= 0.0 else MitigationAction.REDEPLOY

    def predict_action(self, x: np.ndarray) -> MitigationAction:
        node = 0
        while self.feature[node] >= 0:
            node = self.left[node] if x[self.feature[node]] <= self.threshold[node] else self.right[node]
        return self.leaf_action(node)

    @property
    def depth(self) -> int:
        def walk(node: int) -> int:
            if self.feature[node] < 0:
                return 0
            return 1 + max(walk(self.left[node]), walk(self.right[node]))

        return walk(0)


def fit_policy_tree(features: np.ndarray, tau_hat: np.ndarray, max_depth: int = 3) -> PolicyTree:
    """Greedy effect-difference tree over per-row effect predictions."""
    X = np.asarray(features, dtype=np.float64)
    tau = np.asarray(tau_hat, dtype=np.float64)
    if X.shape[0] != tau.shape[0]:
        raise InvalidArgument("features and tau_hat must align")
    if X.shape[0] < _MIN_ROWS:
        raise InsufficientData(f"policy tree needs >= {_MIN_ROWS} rows, got {X.shape[0]}")
    if max_depth < 0:
        raise InvalidArgument("max_depth must be >= 0")

    feature: list[int] = []
    threshold: list[float] = []
    left: list[int] = []
    right: list[int] = []
    mean_tau: list[float] = []
    counts: list[int] = []

    def add_node() -> int:
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        mean_tau.append(0.0)
        counts.append(0)
        return len(feature) - 1

    def grow(rows: np.ndarray, depth: int) -> int:
        node = add_node()
        t = tau[rows]
        mean_tau[node] = float(t.mean())
        counts[node] = len(rows)
        if depth >= max_depth or len(rows) < 2 * _MIN_LEAF:
            return node
        n = len(rows)
        total = t.sum()
        best_gain = 1e-12
        best = None
        for f in range(X.shape[1]):
            v = X[rows, f]
            order = np.argsort(v, kind="stable")
            sv = v[order]
            st = t[order]
            csum = np.cumsum(st)[:-1]
            nl = np.arange(1, n)
            boundary = sv[:-1] < sv[1:]
            ok = boundary & (nl >= _MIN_LEAF) & ((n - nl) >= _MIN_LEAF)
            if not ok.any():
                continue
            nr = n - nl
            diff = csum / nl - (total - csum) / nr
            gain = np.where(ok, nl * nr / n * diff * diff, -np.inf)
            b = int(np.argmax(gain))
            if gain[b] > best_gain:
                best_gain = float(gain[b])
                best = (f, (sv[b] + sv[b + 1]) / 2.0)
        if best is None:
            return node
        f, thr = best
        feature[node] = f
        threshold[node] = float(thr)
        mask = X[rows, f] <= thr
        left_id = grow(rows[mask], depth + 1)
        right_id = grow(rows[~mask], depth + 1)
        left[node] = left_id
        right[node] = right_id
        return node

    grow(np.arange(X.shape[0]), 0)
    return PolicyTree(
        feature=np.asarray(feature, dtype=np.int64),
        threshold=np.asarray(threshold, dtype=np.float64),
        left=np.asarray(left, dtype=np.int64),
        right=np.asarray(right, dtype=np.int64),
        mean_tau=np.asarray(mean_tau, dtype=np.float64),
        n=np.asarray(counts, dtype=np.int64),
    )


def render_policy(tree: PolicyTree, feature_names: list[str]) -> str:
    """Deterministic indented if/else text; thresholds at 4 significant digits."""
    lines: list[str] = []

    def walk(node: int, indent: str) -> None:
        if tree.feature[node] < 0:
            action = "Reboot" if tree.leaf_action(node) == MitigationAction.REBOOT else "Redeploy"
            lines.append(f"{indent}→ {action} (mean tau_hat={tree.mean_tau[node]:.4g}, n={tree.n[node]})")
            return
        name = feature_names[tree.feature[node]]
        lines.append(f"{indent}if {name} <= {tree.threshold[node]:.4g}:")
        walk(tree.left[node], indent + "    ")
        lines.append(f"{indent}else:")
        walk(tree.right[node], indent + "    ")

    walk(0, "")
    return "\n".join(lines)


SIGNAL_FEATURES = (
    "vm_count",
    "has_important_workload",
    "network_ok",
    "repeat_count",
    "uncorrectable_tag",
    "error_code",
    "hardware_type",
    "session_type",
)


def _signal_value(signals: DiagnosticSignals, name: str):
    if name not in SIGNAL_FEATURES:
        raise InvalidArgument(f"unknown feature {name!r}; choose from {SIGNAL_FEATURES}")
    return getattr(signals, name)


def cate_by_feature(
    model: DmlModel,
    dataset: list[LabeledEvent],
    feature: str,
    bins: int,
) -> list[tuple[float, float, int]]:
    """Mean predicted effect per bucket of a raw signal value.

    Numeric signals are cut into equal-width bins over their observed
    range; boolean and categorical signals get one bucket per value. Empty
    buckets are omitted. Returns (bin center, mean effect, count) rows.
    """
    if bins < 1:
        raise InvalidArgument("bins must be >= 1")
    if not dataset:
        raise InvalidArgument("cate_by_feature needs a non-empty dataset")
    values = [_signal_value(e.signals, feature) for e in dataset]
    estimates = estimate_ite_batch(model, [e.signals for e in dataset])
    taus = np.asarray([e.tau for e in estimates])

    if feature in ("vm_count", "repeat_count"):
        arr = np.asarray(values, dtype=np.float64)
        lo, hi = arr.min(), arr.max()
        if lo == hi or bins == 1:
            return [(float(arr.mean()), float(taus.mean()), len(arr))]
        edges = np.linspace(lo, hi, bins + 1)
        idx = np.clip(np.digitize(arr, edges[1:-1], right=True), 0, bins - 1)
        out = []
        for b in range(bins):
            mask = idx == b
            if not mask.any():
                continue
            center = float((edges[b] + edges[b + 1]) / 2.0)
            out.append((center, float(taus[mask].mean()), int(mask.sum())))
        return out

    # boolean / categorical: one bucket per observed value
    out = []
    for i, v in enumerate(sorted({str(v) for v in values})):
        mask = np.asarray([str(x) == v for x in values])
        out.append((float(i), float(taus[mask].mean()), int(mask.sum())))
    return out


def interpret_model(
    model: DmlModel,
    dataset: list[LabeledEvent],
    max_depth: int = 3,
) -> tuple[PolicyTree, str]:
    """Fit and render the policy tree for a dataset under a model."""
    from .domain import encode_matrix

    X = encode_matrix([e.signals for e in dataset], model.schema)
    estimates = estimate_ite_batch(model, [e.signals for e in dataset])
    taus = np.asarray([e.tau for e in estimates])
    tree = fit_policy_tree(X, taus, max_depth=max_depth)
    return tree, render_policy(tree, list(model.schema.column_names))
