"""Weighted regression trees with pre-prune trimming.

Training follows CART: each split maximizes weighted variance
reduction, with growth stopped by depth, leaf weight, and relative-gain
thresholds. Nodes carry explicit child predicates and a default child,
mirroring the portable document format one-to-one, so a codec round
trip cannot change routing semantics.

Weighted rows aggregated from cube output train exactly the same tree
as the equivalent row-expanded data: split statistics are accumulated
per distinct feature value, so both forms feed identical sums to the
gain computation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

MAX_CATEGORICAL_SPLIT = 32


class TreeError(Exception):
    pass


class SchemaMismatchError(TreeError):
    pass


@dataclass(frozen=True, slots=True)
class Predicate:
    """One routing test: true / lessOrEqual / greaterThan / equal / isIn."""

    kind: str
    feature: Optional[str] = None
    value: object = None
    categories: tuple[str, ...] = ()

    def evaluate(self, vector: dict) -> Optional[bool]:
        """True/False, or None when the feature value is missing."""
        if self.kind == "true":
            return True
        raw = vector.get(self.feature)
        if raw is None or (isinstance(raw, float) and math.isnan(raw)):
            return None
        try:
            if self.kind == "le":
                return raw <= self.value
            if self.kind == "gt":
                return raw > self.value
            if self.kind == "eq":
                return raw == self.value
            if self.kind == "isin":
                return raw in self.categories
        except TypeError as exc:
            raise SchemaMismatchError(
                f"feature {self.feature!r} has incomparable value {raw!r}"
            ) from exc
        raise TreeError(f"unknown predicate kind {self.kind!r}")


TRUE_PREDICATE = Predicate("true")


@dataclass(slots=True)
class Node:
    prediction: float
    weight: float
    children: tuple = ()  # ((Predicate, Node), (Predicate, Node)) or empty
    default_child: int = 0

    @property
    def is_leaf(self) -> bool:
        return not self.children


@dataclass
class RegressionTree:
    root: Node
    target_name: str = "target"
    feature_schema: tuple[tuple[str, str], ...] = ()

    def predict(self, vector: dict) -> float:
        """Route a vector to its leaf prediction.

        Missing values (None/NaN) follow each node's default child; if
        no child predicate matches, the current node's own prediction is
        returned (the last-prediction fallback).
        """
        for name, _ in self.feature_schema:
            if name not in vector:
                raise SchemaMismatchError(f"vector missing feature {name!r}")
        node = self.root
        while node.children:
            chosen = None
            for pred, child in node.children:
                result = pred.evaluate(vector)
                if result is None:
                    chosen = node.children[node.default_child][1]
                    break
                if result:
                    chosen = child
                    break
            if chosen is None:
                return node.prediction
            node = chosen
        return node.prediction

    def node_count(self) -> int:
        count = 0
        stack = [self.root]
        while stack:
            node = stack.pop()
            count += 1
            stack.extend(child for _, child in node.children)
        return count

    def depth(self) -> int:
        def walk(node):
            if node.is_leaf:
                return 0
            return 1 + max(walk(c) for _, c in node.children)

        return walk(self.root)

    def leaves(self) -> list[Node]:
        out = []
        stack = [self.root]
        while stack:
            node = stack.pop()
            if node.is_leaf:
                out.append(node)
            stack.extend(child for _, child in node.children)
        return out


@dataclass(slots=True)
class TrainingRow:
    features: dict
    target: float
    weight: float = 1.0


@dataclass
class TreeParams:
    """Trimming knobs: growth stops at depth, light leaves, or flat gain."""

    max_depth: int = 6
    min_leaf_weight: float = 1000.0
    min_gain: float = 1e-6  # relative to the node's weighted SSE

    def validate(self) -> None:
        if self.max_depth < 1:
            raise TreeError("max_depth must be >= 1")
        if self.min_leaf_weight <= 0:
            raise TreeError("min_leaf_weight must be positive")
        if self.min_gain < 0:
            raise TreeError("min_gain must be non-negative")


def infer_schema(rows: Sequence[TrainingRow]) -> tuple[tuple[str, str], ...]:
    first = rows[0].features
    schema = []
    for name in first:
        kind = "categorical" if isinstance(first[name], str) else "continuous"
        schema.append((name, kind))
    return tuple(schema)


def train_tree(rows: Sequence[TrainingRow],
               params: Optional[TreeParams] = None,
               feature_schema: Optional[Iterable[tuple[str, str]]] = None,
               target_name: str = "target") -> RegressionTree:
    """Fit a weighted CART regression tree.

    Deterministic for a given row order: gain ties resolve to the
    earlier schema feature, then the lower threshold (for categorical
    splits, the shorter category prefix).
    """
    params = params or TreeParams()
    params.validate()
    rows = list(rows)
    if not rows:
        raise TreeError("empty training set")
    for row in rows:
        if row.weight <= 0:
            raise TreeError(f"non-positive weight {row.weight}")
        if not math.isfinite(row.target):
            raise TreeError(f"non-finite target {row.target}")
    schema = tuple(feature_schema) if feature_schema else infer_schema(rows)
    for name, kind in schema:
        if kind not in ("continuous", "categorical"):
            raise TreeError(f"unknown feature kind {kind!r} for {name!r}")

    root = _grow(rows, schema, params, depth=0)
    return RegressionTree(root=root, target_name=target_name,
                          feature_schema=schema)


def _stats(rows) -> tuple[float, float, float]:
    w = sum(r.weight for r in rows)
    swy = sum(r.weight * r.target for r in rows)
    swy2 = sum(r.weight * r.target * r.target for r in rows)
    return w, swy, swy2


def _sse(w, swy, swy2) -> float:
    return max(swy2 - swy * swy / w, 0.0) if w > 0 else 0.0


def _grow(rows, schema, params, depth) -> Node:
    w, swy, swy2 = _stats(rows)
    node = Node(prediction=swy / w, weight=w)
    if depth >= params.max_depth or w < 2 * params.min_leaf_weight:
        return node
    node_sse = _sse(w, swy, swy2)
    best = _best_split(rows, schema, params, w, swy, swy2)
    if best is None or best[0] <= params.min_gain * node_sse:
        return node
    _, pred_left, pred_right, go_left = best
    left_rows = [r for i, r in enumerate(rows) if go_left[i]]
    right_rows = [r for i, r in enumerate(rows) if not go_left[i]]
    left = _grow(left_rows, schema, params, depth + 1)
    right = _grow(right_rows, schema, params, depth + 1)
    node.children = ((pred_left, left), (pred_right, right))
    node.default_child = 0 if left.weight >= right.weight else 1
    return node


def _best_split(rows, schema, params, w_total, swy_total, swy2_total):
    parent_sse = _sse(w_total, swy_total, swy2_total)
    best = None  # (gain, pred_left, pred_right, go_left mask)
    for feature, kind in schema:
        groups: dict = {}
        for row in rows:
            value = row.features[feature]
            if value is None:
                raise TreeError(
                    f"missing value for feature {feature!r} in training data")
            agg = groups.get(value)
            if agg is None:
                agg = groups[value] = [0.0, 0.0, 0.0]
            agg[0] += row.weight
            agg[1] += row.weight * row.target
            agg[2] += row.weight * row.target * row.target

        if len(groups) < 2:
            continue
        if kind == "continuous":
            ordered = sorted(groups)
        else:
            if len(groups) > MAX_CATEGORICAL_SPLIT:
                continue
            # classic CART device: order categories by weighted mean so
            # prefix subsets cover the optimal binary partition
            ordered = sorted(groups, key=lambda c: (groups[c][1] / groups[c][0], c))

        w = swy = swy2 = 0.0
        for idx in range(len(ordered) - 1):
            g = groups[ordered[idx]]
            w += g[0]
            swy += g[1]
            swy2 += g[2]
            w_r = w_total - w
            if w < params.min_leaf_weight or w_r < params.min_leaf_weight:
                continue
            sse_l = _sse(w, swy, swy2)
            sse_r = _sse(w_r, swy_total - swy, swy2_total - swy2)
            gain = parent_sse - sse_l - sse_r
            if best is not None and gain <= best[0]:
                continue
            if kind == "continuous":
                threshold = ordered[idx]
                pred_left = Predicate("le", feature, threshold)
                pred_right = Predicate("gt", feature, threshold)
                left_set = None
            else:
                left_set = frozenset(ordered[: idx + 1])
                pred_left = Predicate("isin", feature,
                                      categories=tuple(sorted(left_set)))
                pred_right = TRUE_PREDICATE
            if left_set is None:
                go_left = [row.features[feature] <= threshold for row in rows]
            else:
                go_left = [row.features[feature] in left_set for row in rows]
            best = (gain, pred_left, pred_right, go_left)
    return best


@dataclass
class DecileBias:
    decile: int
    count: int
    weight: float
    mean_prediction: float
    mean_target: float
    bias: float


@dataclass
class HoldoutReport:
    count: int
    weight: float
    weighted_mae: float
    weighted_mean_bias: float
    deciles: list[DecileBias] = field(default_factory=list)


def evaluate_holdout(tree: RegressionTree,
                     holdout: Sequence[TrainingRow]) -> HoldoutReport:
    """Residual report: weighted MAE, mean bias, and bias by decile.

    Deciles are cut on the weighted quantiles of the predictions, so
    each bucket holds roughly a tenth of the holdout weight.
    """
    if not holdout:
        raise TreeError("empty holdout set")
    scored = []
    for row in holdout:
        pred = tree.predict(row.features)
        scored.append((pred, row.target, row.weight))
    scored.sort(key=lambda item: item[0])
    total_w = sum(w for _, _, w in scored)

    mae = sum(w * abs(p - t) for p, t, w in scored) / total_w
    bias = sum(w * (p - t) for p, t, w in scored) / total_w

    buckets: dict[int, list] = {}
    cum = 0.0
    for pred, target, weight in scored:
        decile = min(9, int(10.0 * (cum + 0.5 * weight) / total_w))
        cum += weight
        agg = buckets.setdefault(decile, [0, 0.0, 0.0, 0.0])
        agg[0] += 1
        agg[1] += weight
        agg[2] += weight * pred
        agg[3] += weight * target

    deciles = []
    for decile in sorted(buckets):
        count, w, swp, swt = buckets[decile]
        deciles.append(DecileBias(
            decile=decile, count=count, weight=w,
            mean_prediction=swp / w, mean_target=swt / w,
            bias=(swp - swt) / w,
        ))
    return HoldoutReport(count=len(scored), weight=total_w,
                         weighted_mae=mae, weighted_mean_bias=bias,
                         deciles=deciles)
