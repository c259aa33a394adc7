"""Independent verification of published generalized datasets.

This module re-derives everything from the published table and the
hierarchies alone — it shares no matching logic with the anonymizer.  Each
record's covered leaf set comes from a recursive walk of its generalized
items; combination support is counted through per-leaf posting bitmasks over
records (one AND + popcount per combination).

Checks:

* ``verify_k`` — every distinct generalized QID tuple is shared by >= k records.
* ``verify_km`` — within each tuple group, every combination of at most m
  original items that at least one record covers is covered by >= k records.
* ``verify_k_km`` — both, one report.
* ``check_generalization_sound`` — a published table is a sound generalization
  of the raw table it came from (every published value/item covers the raw one).

Work is budgeted: combinations x records examined must stay below ``budget``
(default 10^7) or BudgetExceededError is raised.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations

from .dataset import AnonymizedDataset, RTDataset
from .errors import BudgetExceededError, ContractViolation
from .hierarchy import HNode

DEFAULT_BUDGET = 10_000_000


@dataclass(frozen=True)
class Violation:
    """One witnessed failure of the anonymity predicate."""

    kind: str          # "tuple-size" | "item-combo" | "soundness"
    witness: tuple     # tuple labels, item combination, or (rid, detail)
    count: int         # matching records (or offending record id for soundness)

    def describe(self) -> str:
        if self.kind == "tuple-size":
            return f"QID tuple {self.witness} shared by only {self.count} record(s)"
        if self.kind == "item-combo":
            return f"item combination {self.witness} matched by only {self.count} record(s)"
        return f"record {self.count}: {self.witness[0]}"


def _collect_leaves(node: HNode, out: set) -> None:
    if not node.children:
        out.add(node.label)
        return
    for ch in node.children:
        _collect_leaves(ch, out)


def _covered_leaf_labels(items: tuple) -> set:
    out: set = set()
    for node in items:
        _collect_leaves(node, out)
    return out


def _tuple_key(rec, qid_names: list) -> tuple:
    return tuple(rec.values[a].label for a in qid_names)


def verify_k(a: AnonymizedDataset, k: int) -> list:
    """All QID-tuple groups smaller than k."""
    if k < 1:
        raise ContractViolation(f"k must be >= 1, got {k}")
    qids = a.schema.qid_names
    groups: dict[tuple, int] = {}
    for rec in a.records:
        key = _tuple_key(rec, qids)
        groups[key] = groups.get(key, 0) + 1
    return [
        Violation("tuple-size", key, cnt)
        for key, cnt in sorted(groups.items())
        if cnt < k
    ]


def verify_km(a: AnonymizedDataset, k: int, m: int, *, budget: int = DEFAULT_BUDGET,
              group_by_tuple: bool = True) -> list:
    """All item combinations of size <= m with support in (0, k).

    With ``group_by_tuple`` the support is counted inside each QID-tuple group
    (the combined guarantee); without it, over the whole table (the plain
    transactional guarantee).
    """
    if k < 1:
        raise ContractViolation(f"k must be >= 1, got {k}")
    if m < 0:
        raise ContractViolation(f"m must be >= 0, got {m}")
    if m == 0 or not a.records:
        return []
    item_h = a.schema.item_hierarchy
    leaf_labels = [leaf.label for leaf in item_h.leaves]

    # posting bitmask over record positions, one per original item
    posting: dict[str, int] = {lbl: 0 for lbl in leaf_labels}
    for pos, rec in enumerate(a.records):
        for lbl in _covered_leaf_labels(rec.items):
            posting[lbl] |= 1 << pos

    if group_by_tuple:
        qids = a.schema.qid_names
        group_masks: dict[tuple, int] = {}
        for pos, rec in enumerate(a.records):
            key = _tuple_key(rec, qids)
            group_masks[key] = group_masks.get(key, 0) | (1 << pos)
        groups = sorted(group_masks.items())
    else:
        groups = [((), (1 << len(a.records)) - 1)]

    violations: list[Violation] = []
    spent = 0
    for _key, gmask in groups:
        n_group = gmask.bit_count()
        present = sorted(lbl for lbl in leaf_labels if posting[lbl] & gmask)
        max_size = min(m, len(present))
        n_combos = 0
        for size in range(1, max_size + 1):
            c = 1
            for i in range(size):
                c = c * (len(present) - i) // (i + 1)
            n_combos += c
        spent += n_combos * n_group
        if spent > budget:
            raise BudgetExceededError(
                f"verification needs more than {budget} combination-record checks"
            )
        for size in range(1, max_size + 1):
            for combo in combinations(present, size):
                mask = gmask
                for lbl in combo:
                    mask &= posting[lbl]
                    if not mask:
                        break
                support = mask.bit_count()
                if 0 < support < k:
                    violations.append(Violation("item-combo", combo, support))
    return violations


def verify_k_km(a: AnonymizedDataset, k: int, m: int, *, budget: int = DEFAULT_BUDGET) -> list:
    """The combined guarantee: k on tuples, k^m on items within tuple groups."""
    return verify_k(a, k) + verify_km(a, k, m, budget=budget, group_by_tuple=True)


def check_generalization_sound(a: AnonymizedDataset, raw: RTDataset) -> list:
    """Every published record must cover its raw counterpart (matched by id)."""
    schema = a.schema
    raw_by_id = {rec.rid: rec for rec in raw.records}
    violations: list[Violation] = []
    for rec in a.records:
        orig = raw_by_id.get(rec.rid)
        if orig is None:
            violations.append(
                Violation("soundness", (f"no raw record with id {rec.rid}",), rec.rid)
            )
            continue
        for name, node in rec.values.items():
            h = schema.hierarchy(name)
            if not h.covers_value(node, orig.values[name]):
                violations.append(
                    Violation(
                        "soundness",
                        (f"{name}={node.label!r} does not cover raw {orig.values[name]!r}",),
                        rec.rid,
                    )
                )
        covered = _covered_leaf_labels(rec.items)
        for it in sorted(orig.items):
            if it not in covered:
                violations.append(
                    Violation("soundness", (f"item {it!r} not covered by published items",), rec.rid)
                )
        if orig.label != rec.label:
            violations.append(
                Violation("soundness", (f"label changed {orig.label} -> {rec.label}",), rec.rid)
            )
    return violations
