"""Shared equivalence classes: extraction, exchange, sample mapping, encoding.

Each site publishes the distinct (generalized QID tuple, item signature)
pairs of its anonymized shard.  Sites pool those classes into one mapping
set, which fixes a common one-hot feature space.  At prediction time a raw
sample is pushed into the legitimate class of minimal combined loss, rewritten
at that class's generalization level, and encoded.

Wire format (one class per line, pipe-separated)::

    class=0|count=2|age=[21:40]|gender=All|place=Europe|items=A;B;(C,D,E,F)

A header comments block carries the schema fingerprint so sites cannot
accidentally mix hierarchies.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from .dataset import AnonymizedDataset, DatasetSchema, GeneralizedRecord, RTRecord
from .errors import (
    ContractViolation,
    NoLegitimateMappingError,
    ParseError,
    SchemaMismatchError,
)
from .hierarchy import HNode
from .metrics import WeightVector, combined_mapping_loss


@dataclass(frozen=True)
class EquivalenceClass:
    """One shared generalization pattern: a QID tuple plus an item signature."""

    class_id: int
    relational: dict   # attr name -> HNode
    item_signature: tuple  # HNode, sorted by node index; pairwise disjoint leaf sets
    provenance_count: int = 0  # records that produced this class (across sites)

    def key(self) -> tuple:
        rel = tuple(sorted((a, n.label) for a, n in self.relational.items()))
        sig = tuple(n.label for n in self.item_signature)
        return (rel, sig)


@dataclass
class MappingSet:
    """Pooled classes from all sites plus the feature space they induce."""

    classes: list
    schema_fingerprint: str

    def __len__(self) -> int:
        return len(self.classes)


def _check_signature(sig: tuple, where: str) -> None:
    mask = 0
    for node in sig:
        if mask & node.leaf_mask:
            raise ContractViolation(
                f"{where}: item signature nodes overlap (not a subtree cut)"
            )
        mask |= node.leaf_mask


# ----------------------------------------------------------------------
# extraction and pooling
# ----------------------------------------------------------------------


def extract_mappings(a: AnonymizedDataset) -> MappingSet:
    """The distinct (tuple, signature) patterns of one anonymized shard.

    When cluster provenance is present each cluster contributes its tuple and
    item cut; a table loaded from disk falls back to grouping records by tuple
    with the union of their items as the signature.  Classes are numbered in
    sorted key order.
    """
    schema = a.schema
    patterns: dict[tuple, tuple] = {}
    counts: dict[tuple, int] = {}
    if a.clusters:
        for c in a.clusters:
            sig = tuple(sorted(c.item_cut, key=lambda n: n.index))
            rel = dict(c.generalized_tuple)
            key = (
                tuple(sorted((nm, nd.label) for nm, nd in rel.items())),
                tuple(n.label for n in sig),
            )
            patterns[key] = (rel, sig)
            counts[key] = counts.get(key, 0) + len(c.record_ids)
    else:
        grouped: dict[tuple, list] = {}
        for rec in a.records:
            tkey = tuple(sorted((nm, nd.label) for nm, nd in rec.values.items()))
            grouped.setdefault(tkey, []).append(rec)
        for tkey, recs in grouped.items():
            nodes = {n.index: n for rec in recs for n in rec.items}
            sig = tuple(nodes[i] for i in sorted(nodes))
            key = (tkey, tuple(n.label for n in sig))
            patterns[key] = (dict(recs[0].values), sig)
            counts[key] = len(recs)

    classes = []
    for cid, key in enumerate(sorted(patterns)):
        rel, sig = patterns[key]
        _check_signature(sig, f"class {cid}")
        classes.append(
            EquivalenceClass(
                class_id=cid, relational=rel, item_signature=sig,
                provenance_count=counts[key],
            )
        )
    return MappingSet(classes=classes, schema_fingerprint=schema.fingerprint())


def merge_mappings(sets: list) -> MappingSet:
    """Pool class sets from several sites, deduplicating identical patterns."""
    if not sets:
        raise ContractViolation("nothing to merge")
    fp = sets[0].schema_fingerprint
    for s in sets[1:]:
        if s.schema_fingerprint != fp:
            raise SchemaMismatchError(
                "sites disagree on schema/hierarchies; refusing to merge mappings"
            )
    seen: dict[tuple, EquivalenceClass] = {}
    counts: dict[tuple, int] = {}
    for s in sets:
        for ec in s.classes:
            key = ec.key()
            counts[key] = counts.get(key, 0) + ec.provenance_count
            seen.setdefault(key, ec)
    classes = []
    for cid, key in enumerate(sorted(seen)):
        ec = seen[key]
        classes.append(
            EquivalenceClass(
                class_id=cid,
                relational=ec.relational,
                item_signature=ec.item_signature,
                provenance_count=counts[key],
            )
        )
    return MappingSet(classes=classes, schema_fingerprint=fp)


# ----------------------------------------------------------------------
# sample mapping
# ----------------------------------------------------------------------


def is_legitimate(sample: RTRecord, ec: EquivalenceClass, schema: DatasetSchema) -> bool:
    """Whether the class covers the raw sample (attribute ranges and items)."""
    for name in schema.qid_names:
        node = ec.relational.get(name)
        if node is None:
            return False
        if not schema.hierarchy(name).covers_value(node, sample.values[name]):
            return False
    item_h = schema.item_hierarchy
    for it in sample.items:
        if not item_h.has_leaf(it):
            return False
        pos = item_h.leaf_position(it)
        if not any(node.leaf_mask >> pos & 1 for node in ec.item_signature):
            return False
    return True


def select_mapping(sample: RTRecord, mappings: MappingSet, weights: WeightVector,
                   schema: DatasetSchema) -> EquivalenceClass:
    """The legitimate class with minimal combined loss (ties: lower class id)."""
    best = None
    for ec in mappings.classes:
        if not is_legitimate(sample, ec, schema):
            continue
        loss = combined_mapping_loss(sample, ec, weights, schema)
        key = (loss, ec.class_id)
        if best is None or key < best[0]:
            best = (key, ec)
    if best is None:
        raise NoLegitimateMappingError(
            f"no equivalence class covers sample {sample.rid}"
        )
    return best[1]


def transform(sample: RTRecord, ec: EquivalenceClass, schema: DatasetSchema) -> GeneralizedRecord:
    """Rewrite the sample at the class's generalization level.

    Relational values become the class nodes; each item becomes the signature
    node covering it.  The class must be legitimate for the sample.
    """
    if not is_legitimate(sample, ec, schema):
        raise ContractViolation(
            f"class {ec.class_id} is not legitimate for sample {sample.rid}"
        )
    item_h = schema.item_hierarchy
    gen_items: dict[int, HNode] = {}
    for it in sample.items:
        pos = item_h.leaf_position(it)
        for node in ec.item_signature:
            if node.leaf_mask >> pos & 1:
                gen_items[node.index] = node
                break
    return GeneralizedRecord(
        rid=sample.rid,
        values=dict(ec.relational),
        items=tuple(gen_items[i] for i in sorted(gen_items)),
        label=sample.label,
    )


# ----------------------------------------------------------------------
# one-hot encoding
# ----------------------------------------------------------------------


@dataclass(frozen=True)
class EncodingSchema:
    """Ordered (attribute, node label) feature axes; hashable for artifact checks."""

    columns: tuple  # of (attr name, node label)

    @property
    def dim(self) -> int:
        return len(self.columns)

    def column_index(self) -> dict:
        return {col: i for i, col in enumerate(self.columns)}

    def digest(self) -> str:
        joined = "\x1e".join(f"{a}\x1f{lbl}" for a, lbl in self.columns)
        return hashlib.sha256(joined.encode("utf-8")).hexdigest()


def mapping_encoding(mappings: MappingSet, schema: DatasetSchema, qids: list | None = None) -> EncodingSchema:
    """Feature axes induced by the pooled classes (one per node that occurs)."""
    qids = list(schema.qid_names) if qids is None else list(qids)
    cols: list[tuple] = []
    for name in qids:
        labels = {ec.relational[name].index: ec.relational[name].label for ec in mappings.classes}
        cols.extend((name, labels[i]) for i in sorted(labels))
    item_attr = schema.item_attribute
    labels = {n.index: n.label for ec in mappings.classes for n in ec.item_signature}
    cols.extend((item_attr, labels[i]) for i in sorted(labels))
    return EncodingSchema(columns=tuple(cols))


def leaf_encoding(schema: DatasetSchema, qids: list | None = None) -> EncodingSchema:
    """Feature axes over every hierarchy leaf (for non-anonymized training)."""
    qids = list(schema.qid_names) if qids is None else list(qids)
    cols: list[tuple] = []
    for name in qids:
        cols.extend((name, leaf.label) for leaf in schema.hierarchy(name).leaves)
    item_attr = schema.item_attribute
    cols.extend((item_attr, leaf.label) for leaf in schema.item_hierarchy.leaves)
    return EncodingSchema(columns=tuple(cols))


def encode_generalized(rec: GeneralizedRecord, enc: EncodingSchema, schema: DatasetSchema,
                       index: dict | None = None) -> np.ndarray:
    """One-hot vector of a generalized record; unknown nodes are an error."""
    idx = enc.column_index() if index is None else index
    x = np.zeros(enc.dim, dtype=np.float64)
    for name, node in rec.values.items():
        j = idx.get((name, node.label))
        if j is None:
            raise SchemaMismatchError(
                f"value {node.label!r} of {name!r} is not in the encoding schema"
            )
        x[j] = 1.0
    item_attr = schema.item_attribute
    for node in rec.items:
        j = idx.get((item_attr, node.label))
        if j is None:
            raise SchemaMismatchError(
                f"item node {node.label!r} is not in the encoding schema"
            )
        x[j] = 1.0
    return x


def encode_raw(rec: RTRecord, enc: EncodingSchema, schema: DatasetSchema,
               index: dict | None = None) -> np.ndarray:
    """One-hot vector of a raw record over a leaf encoding."""
    from .dataset import format_value

    idx = enc.column_index() if index is None else index
    x = np.zeros(enc.dim, dtype=np.float64)
    for name in schema.qid_names:
        lbl = format_value(schema, name, rec.values[name])
        j = idx.get((name, lbl))
        if j is None:
            raise SchemaMismatchError(f"value {lbl!r} of {name!r} is not in the encoding schema")
        x[j] = 1.0
    item_attr = schema.item_attribute
    for it in sorted(rec.items):
        j = idx.get((item_attr, it))
        if j is None:
            raise SchemaMismatchError(f"item {it!r} is not in the encoding schema")
        x[j] = 1.0
    return x


# ----------------------------------------------------------------------
# wire format
# ----------------------------------------------------------------------


def save_mappings(m: MappingSet, schema: DatasetSchema, path: str) -> None:
    qids = schema.qid_names
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"# schema={m.schema_fingerprint}\n")
        fh.write(f"# attributes={';'.join(qids)}\n")
        for ec in m.classes:
            fields = [f"class={ec.class_id}", f"count={ec.provenance_count}"]
            for name in qids:
                fields.append(f"{name}={ec.relational[name].label}")
            fields.append("items=" + ";".join(n.label for n in ec.item_signature))
            fh.write("|".join(fields) + "\n")


def load_mappings(path: str, schema: DatasetSchema) -> MappingSet:
    fingerprint = None
    classes: list[EquivalenceClass] = []
    item_h = schema.item_hierarchy
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line:
                continue
            if line.startswith("#"):
                body = line[1:].strip()
                if body.startswith("schema="):
                    fingerprint = body[len("schema="):]
                continue
            fields = {}
            for part in line.split("|"):
                if "=" not in part:
                    raise ParseError(f"bad field {part!r}", path=path, line=lineno)
                key, _, val = part.partition("=")
                fields[key] = val
            try:
                cid = int(fields.pop("class"))
                count = int(fields.pop("count", "0"))
                item_part = fields.pop("items")
            except KeyError as exc:
                raise ParseError(f"missing field {exc}", path=path, line=lineno) from None
            rel: dict = {}
            for name, lbl in fields.items():
                h = schema.hierarchy(name)
                rel[name] = h.node(lbl)
            for name in schema.qid_names:
                if name not in rel:
                    raise ParseError(f"class lacks attribute {name!r}", path=path, line=lineno)
            sig = tuple(
                sorted(
                    (item_h.node(lbl) for lbl in item_part.split(";") if lbl),
                    key=lambda n: n.index,
                )
            )
            _check_signature(sig, f"{path}:{lineno}")
            classes.append(
                EquivalenceClass(class_id=cid, relational=rel, item_signature=sig,
                                 provenance_count=count)
            )
    if fingerprint is None:
        raise ParseError("missing '# schema=' header", path=path)
    if fingerprint != schema.fingerprint():
        raise SchemaMismatchError(
            f"{path}: mapping file was produced under a different schema"
        )
    ids = [ec.class_id for ec in classes]
    if len(set(ids)) != len(ids):
        raise ParseError("duplicate class ids", path=path)
    return MappingSet(classes=classes, schema_fingerprint=fingerprint)
