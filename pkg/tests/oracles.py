"""Independent reference implementations used to cross-check the library.

Everything here is deliberately written against the *public* data model only
(node children, leaf labels, record values) using naive algorithms, so that a
bug in the optimized production code path cannot hide in its own oracle.
"""

from __future__ import annotations

import itertools

import numpy as np

# ---------------------------------------------------------------------------
# hierarchy walking
# ---------------------------------------------------------------------------


def leaves_under(node) -> list[str]:
    """Collect leaf labels below ``node`` by plain recursion."""
    if not node.children:
        return [node.label]
    out: list[str] = []
    for child in node.children:
        out.extend(leaves_under(child))
    return out


def covered_leaf_set(items) -> frozenset:
    """Union of leaf labels under each generalized item of a record."""
    acc: set[str] = set()
    for node in items:
        acc.update(leaves_under(node))
    return frozenset(acc)


# ---------------------------------------------------------------------------
# information-loss oracles (brute-force leaf counting)
# ---------------------------------------------------------------------------


def ncp_value_oracle(node, hierarchy) -> float:
    n = len(leaves_under(node))
    if n <= 1:
        return 0.0
    return n / len(leaves_under(hierarchy.root))


def ncp_record_oracle(values: dict, weights, schema) -> float:
    total = 0.0
    for name, w in weights.relational.items():
        if name in values and w != 0.0:
            total += w * ncp_value_oracle(values[name], schema.hierarchy(name))
    return total


def ncp_dataset_oracle(records, weights, schema) -> float:
    if not records:
        return 0.0
    return sum(ncp_record_oracle(r.values, weights, schema) for r in records) / len(records)


def ul_item_oracle(node, weight: float = 1.0) -> float:
    return (2 ** len(leaves_under(node)) - 1) * weight


def ul_record_oracle(items, weights) -> float:
    if not items:
        return 0.0
    sigma = sum(len(leaves_under(u)) for u in items)
    num = sum(ul_item_oracle(u, weights.item_weight(u.label)) for u in items)
    return num / (2**sigma - 1)


def ul_dataset_oracle(records, weights) -> float:
    if not records:
        return 0.0
    return sum(ul_record_oracle(r.items, weights) for r in records) / len(records)


def mapping_loss_oracle(sample, eq_class, weights, schema) -> float:
    """Relational NCP plus the *excess* transactional loss of the signature."""
    rel = 0.0
    for name, w in weights.relational.items():
        if name in eq_class.relational and w != 0.0:
            rel += w * ncp_value_oracle(eq_class.relational[name], schema.hierarchy(name))
    sig = eq_class.item_signature
    if not sig:
        return rel
    sigma = sum(len(leaves_under(u)) for u in sig)
    num = sum(ul_item_oracle(u, weights.item_weight(u.label)) for u in sig)
    num -= sum(weights.item_weight(label) for label in sample.items)
    if num <= 0.0:
        return rel
    return rel + num / (2**sigma - 1)


# ---------------------------------------------------------------------------
# naive (k, k^m) verification — double loop, no bitmasks
# ---------------------------------------------------------------------------


def naive_tuple_groups(records, qid_names) -> dict:
    groups: dict[tuple, list] = {}
    for rec in records:
        key = tuple(rec.values[name].label for name in qid_names)
        groups.setdefault(key, []).append(rec)
    return groups


def naive_verify_k(records, qid_names, k: int) -> list[tuple]:
    """Return (tuple, count) for every QID group smaller than k."""
    bad = []
    for key, members in naive_tuple_groups(records, qid_names).items():
        if len(members) < k:
            bad.append((key, len(members)))
    return sorted(bad)


def naive_verify_km(records, k: int, m: int) -> list[tuple]:
    """Return (combo, support) for every item combo with support in (0, k)."""
    covered = [covered_leaf_set(rec.items) for rec in records]
    universe = sorted(set().union(*covered)) if covered else []
    bad = []
    for size in range(1, m + 1):
        for combo in itertools.combinations(universe, size):
            want = set(combo)
            support = sum(1 for cov in covered if want <= cov)
            if 0 < support < k:
                bad.append((combo, support))
    return sorted(bad)


def naive_verify_k_km(records, qid_names, k: int, m: int) -> list:
    bad: list = list(naive_verify_k(records, qid_names, k))
    for _, members in sorted(naive_tuple_groups(records, qid_names).items()):
        bad.extend(naive_verify_km(members, k, m))
    return bad


# ---------------------------------------------------------------------------
# finite-difference gradients
# ---------------------------------------------------------------------------


def finite_diff_grad(f, w: np.ndarray, b: float, eps: float = 1e-6):
    """Central differences of a scalar loss f(w, b)."""
    gw = np.zeros_like(w)
    for i in range(w.size):
        up = w.copy()
        dn = w.copy()
        up[i] += eps
        dn[i] -= eps
        gw[i] = (f(up, b) - f(dn, b)) / (2 * eps)
    gb = (f(w, b + eps) - f(w, b - eps)) / (2 * eps)
    return gw, gb


# ---------------------------------------------------------------------------
# small random RT-datasets for fuzzing (independent of synfed.synth)
# ---------------------------------------------------------------------------


def random_rt_dataset(seed: int, n_records: int | None = None, n_items: int | None = None):
    """Build a random schema + dataset directly from hierarchy text lines."""
    from synfed.dataset import AttributeSchema, DatasetSchema, RTDataset, RTRecord
    from synfed.hierarchy import parse_hierarchy

    rng = np.random.default_rng(seed)
    if n_records is None:
        n_records = int(rng.integers(50, 501))
    if n_items is None:
        n_items = int(rng.integers(5, 31))

    # categorical QID: two-level tree with random fan-out
    n_cat = int(rng.integers(4, 9))
    n_grp = int(rng.integers(2, min(4, n_cat) + 1))
    grp_of = rng.integers(0, n_grp, size=n_cat)
    cat_lines = [f"c{i}|g{grp_of[i]}|any" for i in range(n_cat)]
    cat_h = parse_hierarchy(cat_lines, numeric=False, name="cat")

    # second QID: flat two-level tree
    n_num = int(rng.integers(3, 7))
    num_lines = [f"v{i}|top" for i in range(n_num)]
    num_h = parse_hierarchy(num_lines, numeric=False, name="grade")

    # transactional hierarchy: items in chunks of 2-4 under a root
    labels = [f"i{j:02d}" for j in range(n_items)]
    item_lines = []
    pos = 0
    g = 0
    while pos < n_items:
        width = int(rng.integers(2, 5))
        chunk = labels[pos : pos + width]
        for lab in chunk:
            item_lines.append(f"{lab}|grp{g}|all" if len(chunk) > 1 else f"{lab}|all")
        pos += width
        g += 1
    item_h = parse_hierarchy(item_lines, numeric=False, name="basket")

    schema = DatasetSchema(
        attributes=[
            AttributeSchema("cat", "relational-categorical", is_qid=True, hierarchy_file="cat.txt"),
            AttributeSchema("grade", "relational-categorical", is_qid=True, hierarchy_file="grade.txt"),
            AttributeSchema("basket", "transactional", hierarchy_file="basket.txt"),
        ],
        hierarchies={"cat": cat_h, "grade": num_h, "basket": item_h},
    )
    records = []
    for rid in range(n_records):
        size = int(rng.integers(1, min(6, n_items) + 1))
        chosen = rng.choice(n_items, size=size, replace=False)
        records.append(
            RTRecord(
                rid=rid,
                values={
                    "cat": f"c{int(rng.integers(0, n_cat))}",
                    "grade": f"v{int(rng.integers(0, n_num))}",
                },
                items=frozenset(labels[int(c)] for c in chosen),
                label=int(rng.integers(0, 2)),
            )
        )
    return RTDataset(schema=schema, records=records)
