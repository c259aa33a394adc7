"""Information-loss measures and attribute weighting.

Two loss families quantify how much generalization blurs a record:

* NCP for relational values — a generalized value covering ``c`` of the
  hierarchy's ``|R|`` leaves costs ``c / |R|`` (0 when it covers a single
  leaf), and a record costs the weighted sum over its QID attributes.
* UL for item sets — a generalized item covering the leaf set ``u`` costs
  ``(2^|u| - 1) * w(u)``; a record divides the summed item costs by
  ``2^sigma - 1`` where ``sigma`` counts all leaves covered by its items.

Dataset-level figures are plain means over records.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .dataset import KIND_NUMERIC, RTDataset
from .errors import ContractViolation, ItemSetTooLargeError, SingleClassError
from .hierarchy import HNode

_MAX_ITEM_LEAVES = 62  # 2^n arithmetic guard
_WEIGHT_TOL = 1e-9


@dataclass(frozen=True)
class WeightVector:
    """Per-attribute weights for relational NCP plus optional per-item weights.

    Relational weights must lie in [0, 1] and sum to 1 over the QID
    attributes; item weights default to 1 for any item not listed.
    """

    relational: dict = field(default_factory=dict)  # attr name -> weight
    items: dict = field(default_factory=dict)       # item node label -> weight

    def __post_init__(self) -> None:
        for name, w in self.relational.items():
            if not (0.0 <= w <= 1.0):
                raise ContractViolation(f"relational weight {name}={w} outside [0, 1]")
        for lbl, w in self.items.items():
            if not (0.0 <= w <= 1.0):
                raise ContractViolation(f"item weight {lbl}={w} outside [0, 1]")
        if self.relational:
            total = sum(self.relational.values())
            if abs(total - 1.0) > _WEIGHT_TOL:
                raise ContractViolation(f"relational weights sum to {total}, expected 1")

    @staticmethod
    def uniform(qid_names: list[str]) -> "WeightVector":
        if not qid_names:
            return WeightVector()
        w = 1.0 / len(qid_names)
        return WeightVector(relational={name: w for name in qid_names})

    def item_weight(self, label: str) -> float:
        return self.items.get(label, 1.0)


# ----------------------------------------------------------------------
# NCP (relational loss)
# ----------------------------------------------------------------------


def ncp_value(value: HNode, hierarchy_size: int) -> float:
    """Loss of one generalized relational value; 0 for any single-leaf node."""
    c = value.leaf_count()
    if c <= 1:
        return 0.0
    return c / hierarchy_size


def ncp_record(values: dict, weights: WeightVector, schema) -> float:
    """Weighted NCP over the record's generalized QID values.

    ``values`` maps attribute name to HNode; attributes without a weight
    contribute nothing.
    """
    total = 0.0
    for name, w in weights.relational.items():
        node = values.get(name)
        if node is None:
            raise ContractViolation(f"record lacks generalized value for {name!r}")
        total += w * ncp_value(node, schema.hierarchy(name).n_leaves)
    return total


def ncp_dataset(records: list, weights: WeightVector, schema) -> float:
    """Mean record NCP; 0 for an empty dataset."""
    if not records:
        return 0.0
    return sum(ncp_record(r.values, weights, schema) for r in records) / len(records)


# ----------------------------------------------------------------------
# UL (transactional loss)
# ----------------------------------------------------------------------


def ul_item(item: HNode, weights: WeightVector) -> float:
    """Loss of one generalized item: (2^|leaves| - 1) * weight."""
    c = item.leaf_count()
    if c > _MAX_ITEM_LEAVES:
        raise ItemSetTooLargeError(
            f"generalized item {item.label!r} covers {c} leaves (max {_MAX_ITEM_LEAVES})"
        )
    return float((1 << c) - 1) * weights.item_weight(item.label)


def sigma(items: tuple) -> int:
    """Total leaves covered by a record's generalized items."""
    return sum(n.leaf_count() for n in items)


def ul_record(items: tuple, weights: WeightVector) -> float:
    """Summed item losses normalized by 2^sigma - 1; empty item set costs 0."""
    if not items:
        return 0.0
    s = sigma(items)
    if s > 900:  # keeps the float conversion of 2^s finite; unreachable in practice
        raise ItemSetTooLargeError(f"record covers {s} item leaves")
    num = sum(ul_item(n, weights) for n in items)
    return num / float((1 << s) - 1)


def ul_dataset(records: list, weights: WeightVector) -> float:
    if not records:
        raise ContractViolation("ul_dataset: empty dataset")
    return sum(ul_record(r.items, weights) for r in records) / len(records)


# ----------------------------------------------------------------------
# combined mapping loss
# ----------------------------------------------------------------------


def combined_mapping_loss(sample, eq_class, weights: WeightVector, schema) -> float:
    """Cost of pushing a raw sample into an equivalence class.

    Relational part: the class tuple's weighted NCP.  Transactional part: the
    *excess* utility loss of the class signature over the sample's own items —
    the summed signature-node losses minus the summed singleton losses of the
    sample's items, normalized by the signature's ``2^sigma - 1``.  The total
    is 0 iff every class value is exactly the sample's leaf and the signature
    is exactly the sample's items.

    Precondition: the class must cover the sample (checked; ContractViolation).
    """
    rel = 0.0
    for name, w in weights.relational.items():
        node = eq_class.relational.get(name)
        if node is None:
            raise ContractViolation(f"equivalence class lacks attribute {name!r}")
        h = schema.hierarchy(name)
        if not h.covers_value(node, sample.values[name]):
            raise ContractViolation(
                f"class {eq_class.class_id} does not cover {name}={sample.values[name]!r}"
            )
        rel += w * ncp_value(node, h.n_leaves)

    sig = eq_class.item_signature
    item_h = schema.item_hierarchy
    for it in sample.items:
        if not item_h.has_leaf(it) or not any(
            s.leaf_mask >> item_h.leaf_position(it) & 1 for s in sig
        ):
            raise ContractViolation(f"class {eq_class.class_id} does not cover item {it!r}")

    if not sig:
        if sample.items:
            raise ContractViolation("empty signature cannot cover items")
        return rel
    s = sigma(sig)
    if s > 900:
        raise ItemSetTooLargeError(f"signature covers {s} item leaves")
    sig_cost = sum(ul_item(n, weights) for n in sig)
    own_cost = sum(weights.item_weight(it) for it in sample.items)  # (2^1 - 1) = 1 each
    num = sig_cost - own_cost
    if num <= 0.0:
        return rel  # exact singleton signature; guard against -0.0 from float noise
    return rel + num / float((1 << s) - 1)


# ----------------------------------------------------------------------
# feature importance and QID selection
# ----------------------------------------------------------------------


@dataclass
class ImportanceResult:
    weights: WeightVector
    ranking: list  # attribute names, most important first
    raw_scores: dict  # attr -> mean F1 drop (pre-normalization)


def _encode_for_importance(d: RTDataset):
    """One-hot QID leaves + multi-hot items; returns X, y, per-attr column slices."""
    schema = d.schema
    cols: list[tuple] = []  # (attr, leaf label)
    col_of: dict = {}
    spans: dict = {}
    for name in schema.qid_names:
        h = schema.hierarchy(name)
        start = len(cols)
        for leaf in h.leaves:
            col_of[(name, leaf.label)] = len(cols)
            cols.append((name, leaf.label))
        spans[name] = (start, len(cols))
    item_h = schema.item_hierarchy
    item_start = len(cols)
    for leaf in item_h.leaves:
        col_of[(schema.item_attribute, leaf.label)] = len(cols)
        cols.append((schema.item_attribute, leaf.label))

    X = np.zeros((len(d.records), len(cols)), dtype=np.float64)
    y = np.empty(len(d.records), dtype=np.int64)
    from .dataset import format_value

    for i, rec in enumerate(d.records):
        for name in schema.qid_names:
            lbl = format_value(schema, name, rec.values[name])
            j = col_of.get((name, lbl))
            if j is not None:
                X[i, j] = 1.0
        for it in rec.items:
            j = col_of.get((schema.item_attribute, it))
            if j is not None:
                X[i, j] = 1.0
        y[i] = rec.label
    return X, y, spans, item_start


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _fit_logreg(X: np.ndarray, y01: np.ndarray, *, lr: float = 0.5, epochs: int = 300,
                l2: float = 1e-3) -> tuple:
    """Plain full-batch logistic regression from zero init (module-internal)."""
    n, dim = X.shape
    w = np.zeros(dim)
    b = 0.0
    ys = 2.0 * y01 - 1.0
    for _ in range(epochs):
        z = X @ w + b
        s = _sigmoid(-ys * z)
        gw = -(X * (ys * s)[:, None]).mean(axis=0) + l2 * w
        gb = -(ys * s).mean()
        w -= lr * gw
        b -= lr * gb
    return w, b


def f1_binary(y_true: np.ndarray, y_pred: np.ndarray) -> float:
    """F1 of the positive class; 0 when no true or predicted positives."""
    tp = int(np.sum((y_true == 1) & (y_pred == 1)))
    fp = int(np.sum((y_true == 0) & (y_pred == 1)))
    fn = int(np.sum((y_true == 1) & (y_pred == 0)))
    if 2 * tp + fp + fn == 0:
        return 0.0
    return 2.0 * tp / (2.0 * tp + fp + fn)


def feature_importance(d: RTDataset, *, seed: int = 0, n_shuffles: int = 5,
                       test_fraction: float = 0.3) -> ImportanceResult:
    """Permutation importance of each QID attribute for label prediction.

    Trains an internal logistic model on a seeded split, then measures the
    mean F1 drop when one attribute's columns are permuted on the held-out
    part.  The same permutations are reused across attributes so identical
    columns earn identical scores.  Drops are clipped at 0 and normalized to
    sum 1; if every drop is 0 the weights are uniform.
    """
    schema = d.schema
    if not schema.qid_names:
        raise ContractViolation("no QID attributes to weight")
    labels = {r.label for r in d.records}
    if labels <= {0} or labels <= {1}:
        raise SingleClassError("feature importance needs both classes present")

    X, y, spans, _ = _encode_for_importance(d)
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(y))
    n_test = max(1, int(round(test_fraction * len(y))))
    test_idx, train_idx = order[:n_test], order[n_test:]
    if len({int(v) for v in y[train_idx]}) < 2:
        raise SingleClassError("training split is single-class; use a different seed")

    w, b = _fit_logreg(X[train_idx], y[train_idx])
    Xt, yt = X[test_idx], y[test_idx]
    base = f1_binary(yt, (Xt @ w + b > 0).astype(np.int64))

    perms = [rng.permutation(len(test_idx)) for _ in range(n_shuffles)]
    drops: dict = {}
    for name in schema.qid_names:
        lo, hi = spans[name]
        drop = 0.0
        for perm in perms:
            Xp = Xt.copy()
            Xp[:, lo:hi] = Xt[perm, lo:hi]
            score = f1_binary(yt, (Xp @ w + b > 0).astype(np.int64))
            drop += max(0.0, base - score)
        drops[name] = drop / n_shuffles

    total = sum(drops.values())
    if total <= 0.0:
        rel = {name: 1.0 / len(drops) for name in drops}
    else:
        rel = {name: v / total for name, v in drops.items()}
    ranking = sorted(rel, key=lambda nm: (-rel[nm], nm))
    return ImportanceResult(WeightVector(relational=rel), ranking, drops)


def select_qids(d: RTDataset, weights: WeightVector, top_n: int) -> list:
    """The ``top_n`` highest-weighted QID attributes (ties: name order)."""
    if top_n < 1:
        raise ContractViolation(f"top_n must be >= 1, got {top_n}")
    names = d.schema.qid_names
    ranked = sorted(names, key=lambda nm: (-weights.relational.get(nm, 0.0), nm))
    return ranked[: min(top_n, len(ranked))]
