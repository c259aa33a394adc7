"""Relational-transactional datasets and their on-disk formats.

A dataset couples per-record relational attributes (numeric or categorical)
with exactly one transactional attribute holding a set of items.  Attribute
semantics, QID flags and generalization hierarchies live in a YAML schema::

    attributes:
      - {name: age,       kind: relational-numeric,     qid: true,  hierarchy: age.txt}
      - {name: gender,    kind: relational-categorical, qid: true,  hierarchy: gender.txt}
      - {name: diagnoses, kind: transactional,                      hierarchy: diagnoses.txt}

Data files are plain CSV with a header; the transactional cell is a
semicolon-separated item list; the class column is named ``label``.
Generalized datasets reuse the same CSV shape with node labels as values.
"""

from __future__ import annotations

import csv
import hashlib
import io
import os
from dataclasses import dataclass, field

import yaml

from .errors import ParseError, SchemaError
from .hierarchy import Hierarchy, HNode, load_hierarchy

KIND_NUMERIC = "relational-numeric"
KIND_CATEGORICAL = "relational-categorical"
KIND_TRANSACTIONAL = "transactional"
_KINDS = (KIND_NUMERIC, KIND_CATEGORICAL, KIND_TRANSACTIONAL)

LABEL_COLUMN = "label"
ID_COLUMN = "id"


@dataclass(frozen=True)
class AttributeSchema:
    """Declared semantics of one dataset column."""

    name: str
    kind: str
    is_qid: bool = False
    hierarchy_file: str | None = None

    def __post_init__(self) -> None:
        if self.kind not in _KINDS:
            raise SchemaError(f"attribute {self.name!r}: unknown kind {self.kind!r}")
        if self.name in (LABEL_COLUMN, ID_COLUMN):
            raise SchemaError(f"attribute name {self.name!r} is reserved")
        if self.is_qid and self.hierarchy_file is None:
            raise SchemaError(f"QID attribute {self.name!r} needs a hierarchy")
        if self.kind == KIND_TRANSACTIONAL and self.hierarchy_file is None:
            raise SchemaError(f"transactional attribute {self.name!r} needs a hierarchy")


class DatasetSchema:
    """All attributes of a dataset plus their loaded hierarchies."""

    def __init__(self, attributes: list[AttributeSchema], hierarchies: dict[str, Hierarchy]):
        trans = [a for a in attributes if a.kind == KIND_TRANSACTIONAL]
        if len(trans) != 1:
            raise SchemaError(f"need exactly one transactional attribute, got {len(trans)}")
        names = [a.name for a in attributes]
        if len(set(names)) != len(names):
            raise SchemaError("duplicate attribute names")
        for a in attributes:
            if a.hierarchy_file is not None and a.name not in hierarchies:
                raise SchemaError(f"no hierarchy loaded for attribute {a.name!r}")
        self.attributes = list(attributes)
        self.hierarchies = dict(hierarchies)
        self.item_attribute = trans[0].name
        self.qid_names = [a.name for a in attributes if a.is_qid]
        self._by_name = {a.name: a for a in attributes}

    def attribute(self, name: str) -> AttributeSchema:
        try:
            return self._by_name[name]
        except KeyError:
            raise SchemaError(f"unknown attribute {name!r}") from None

    def hierarchy(self, name: str) -> Hierarchy:
        try:
            return self.hierarchies[name]
        except KeyError:
            raise SchemaError(f"attribute {name!r} has no hierarchy") from None

    @property
    def item_hierarchy(self) -> Hierarchy:
        return self.hierarchies[self.item_attribute]

    def fingerprint(self) -> str:
        parts = []
        for a in self.attributes:
            h = self.hierarchies.get(a.name)
            parts.append(f"{a.name}\x1f{a.kind}\x1f{int(a.is_qid)}\x1f{h.fingerprint if h else '-'}")
        return hashlib.sha256("\x1e".join(parts).encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class RTRecord:
    """One raw record: relational values, an item set, a binary label."""

    rid: int
    values: dict  # attribute name -> str (categorical) or float (numeric)
    items: frozenset  # of item leaf labels
    label: int


@dataclass
class RTDataset:
    schema: DatasetSchema
    records: list[RTRecord]

    def __len__(self) -> int:
        return len(self.records)

    def subset(self, indices) -> "RTDataset":
        return RTDataset(self.schema, [self.records[i] for i in indices])


@dataclass(frozen=True)
class GeneralizedRecord:
    """One anonymized record: hierarchy nodes instead of raw values."""

    rid: int
    values: dict  # attribute name -> HNode
    items: tuple  # of HNode, sorted by node index, deduplicated
    label: int
    cluster_id: int = -1


@dataclass
class AnonymizedDataset:
    schema: DatasetSchema
    records: list[GeneralizedRecord]
    clusters: list = field(default_factory=list)  # list[Cluster]; empty when loaded from file

    def __len__(self) -> int:
        return len(self.records)


# ----------------------------------------------------------------------
# schema I/O
# ----------------------------------------------------------------------


def load_schema(path: str) -> DatasetSchema:
    """Read a schema YAML and load every referenced hierarchy (paths relative to it)."""
    with open(path, "r", encoding="utf-8") as fh:
        doc = yaml.safe_load(fh)
    if not isinstance(doc, dict) or "attributes" not in doc:
        raise ParseError("schema must be a mapping with an 'attributes' list", path=path)
    base = os.path.dirname(os.path.abspath(path))
    attrs: list[AttributeSchema] = []
    hierarchies: dict[str, Hierarchy] = {}
    for entry in doc["attributes"]:
        if not isinstance(entry, dict) or "name" not in entry or "kind" not in entry:
            raise ParseError(f"bad attribute entry: {entry!r}", path=path)
        a = AttributeSchema(
            name=str(entry["name"]),
            kind=str(entry["kind"]),
            is_qid=bool(entry.get("qid", False)),
            hierarchy_file=entry.get("hierarchy"),
        )
        attrs.append(a)
        if a.hierarchy_file:
            hpath = os.path.join(base, a.hierarchy_file)
            numeric = a.kind == KIND_NUMERIC
            hierarchies[a.name] = load_hierarchy(hpath, numeric=numeric, name=a.name)
    return DatasetSchema(attrs, hierarchies)


def save_schema(schema: DatasetSchema, path: str) -> None:
    doc = {
        "attributes": [
            {
                "name": a.name,
                "kind": a.kind,
                **({"qid": True} if a.is_qid else {}),
                **({"hierarchy": a.hierarchy_file} if a.hierarchy_file else {}),
            }
            for a in schema.attributes
        ]
    }
    with open(path, "w", encoding="utf-8") as fh:
        yaml.safe_dump(doc, fh, sort_keys=False)


# ----------------------------------------------------------------------
# raw dataset I/O
# ----------------------------------------------------------------------


def _parse_items(cell: str) -> list[str]:
    return [part.strip() for part in cell.split(";") if part.strip()]


def _check_columns(header: list[str], schema: DatasetSchema, path: str) -> None:
    expected = {a.name for a in schema.attributes} | {LABEL_COLUMN}
    got = set(header)
    missing = expected - got
    extra = got - expected - {ID_COLUMN}
    if missing:
        raise SchemaError(f"{path}: missing columns {sorted(missing)}")
    if extra:
        raise SchemaError(f"{path}: unexpected columns {sorted(extra)}")


def load_dataset(path: str, schema: DatasetSchema) -> RTDataset:
    """Strict loader: every value must be a known hierarchy leaf, labels in {0,1}."""
    records = _load_rows(path, schema, strict=True)
    return RTDataset(schema, records)


def load_samples(path: str, schema: DatasetSchema) -> RTDataset:
    """Lenient loader for prediction inputs.

    Unknown categorical values or item labels are kept verbatim; they simply
    won't be covered by any equivalence class downstream.  A missing ``label``
    column yields label -1 for every row.
    """
    records = _load_rows(path, schema, strict=False)
    return RTDataset(schema, records)


def _load_rows(path: str, schema: DatasetSchema, *, strict: bool) -> list[RTRecord]:
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError("empty CSV file", path=path) from None
        if strict:
            _check_columns(header, schema, path)
        col = {name: i for i, name in enumerate(header)}
        for a in schema.attributes:
            if a.name not in col:
                raise SchemaError(f"{path}: missing column {a.name!r}")
        has_label = LABEL_COLUMN in col
        if strict and not has_label:
            raise SchemaError(f"{path}: missing column {LABEL_COLUMN!r}")

        records: list[RTRecord] = []
        seen_ids: set[int] = set()
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise ParseError(
                    f"expected {len(header)} cells, got {len(row)}", path=path, line=lineno
                )
            rid = len(records)
            if ID_COLUMN in col:
                try:
                    rid = int(row[col[ID_COLUMN]])
                except ValueError:
                    raise ParseError("non-integer id", path=path, line=lineno) from None
            if rid in seen_ids:
                raise ParseError(f"duplicate record id {rid}", path=path, line=lineno)
            seen_ids.add(rid)

            values: dict = {}
            items: frozenset = frozenset()
            for a in schema.attributes:
                cell = row[col[a.name]].strip()
                if a.kind == KIND_TRANSACTIONAL:
                    parts = _parse_items(cell)
                    if strict:
                        h = schema.hierarchy(a.name)
                        for it in parts:
                            if not h.has_leaf(it):
                                raise ParseError(
                                    f"unknown item {it!r}", path=path, line=lineno
                                )
                    items = frozenset(parts)
                elif a.kind == KIND_NUMERIC:
                    try:
                        values[a.name] = float(cell)
                    except ValueError:
                        raise ParseError(
                            f"non-numeric value {cell!r} for {a.name!r}", path=path, line=lineno
                        ) from None
                    if strict:
                        h = schema.hierarchy(a.name) if a.hierarchy_file else None
                        if h is not None and not h.has_leaf(_num_label(values[a.name])):
                            raise ParseError(
                                f"value {cell!r} is not a leaf of {a.name!r}",
                                path=path,
                                line=lineno,
                            )
                else:
                    if strict and a.hierarchy_file:
                        if not schema.hierarchy(a.name).has_leaf(cell):
                            raise ParseError(
                                f"unknown value {cell!r} for {a.name!r}", path=path, line=lineno
                            )
                    values[a.name] = cell

            label = -1
            if has_label:
                cell = row[col[LABEL_COLUMN]].strip()
                if cell not in ("0", "1"):
                    if strict or cell != "":
                        raise ParseError(
                            f"label must be 0 or 1, got {cell!r}", path=path, line=lineno
                        )
                else:
                    label = int(cell)
            records.append(RTRecord(rid=rid, values=values, items=items, label=label))
    return records


def _num_label(v: float) -> str:
    """Canonical leaf label for a numeric value (ints print without decimals)."""
    return str(int(v)) if float(v).is_integer() else repr(v)


def format_value(schema: DatasetSchema, attr: str, value) -> str:
    if schema.attribute(attr).kind == KIND_NUMERIC:
        return _num_label(float(value))
    return str(value)


def save_dataset(d: RTDataset, path: str) -> None:
    """Write CSV with a canonical column order: id, attributes in schema order, label."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        names = [a.name for a in d.schema.attributes]
        w.writerow([ID_COLUMN] + names + [LABEL_COLUMN])
        for rec in d.records:
            row: list[str] = [str(rec.rid)]
            for a in d.schema.attributes:
                if a.kind == KIND_TRANSACTIONAL:
                    row.append(";".join(sorted(rec.items)))
                else:
                    row.append(format_value(d.schema, a.name, rec.values[a.name]))
            row.append(str(rec.label))
            w.writerow(row)


# ----------------------------------------------------------------------
# generalized dataset I/O
# ----------------------------------------------------------------------


def save_generalized(d: AnonymizedDataset, path: str) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        names = [a.name for a in d.schema.attributes]
        w.writerow([ID_COLUMN] + names + [LABEL_COLUMN])
        for rec in d.records:
            row = [str(rec.rid)]
            for a in d.schema.attributes:
                if a.kind == KIND_TRANSACTIONAL:
                    row.append(";".join(n.label for n in rec.items))
                else:
                    row.append(rec.values[a.name].label)
            row.append(str(rec.label))
            w.writerow(row)


def load_generalized(path: str, schema: DatasetSchema) -> AnonymizedDataset:
    """Read a generalized CSV back; every cell must name a hierarchy node."""
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError("empty CSV file", path=path) from None
        _check_columns(header, schema, path)
        col = {name: i for i, name in enumerate(header)}

        records: list[GeneralizedRecord] = []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise ParseError(
                    f"expected {len(header)} cells, got {len(row)}", path=path, line=lineno
                )
            rid = len(records)
            if ID_COLUMN in col:
                try:
                    rid = int(row[col[ID_COLUMN]])
                except ValueError:
                    raise ParseError("non-integer id", path=path, line=lineno) from None
            values: dict = {}
            items: tuple = ()
            for a in schema.attributes:
                cell = row[col[a.name]].strip()
                if a.kind == KIND_TRANSACTIONAL:
                    h = schema.hierarchy(a.name)
                    try:
                        nodes = [h.node(lbl) for lbl in _parse_items(cell)]
                    except Exception as exc:
                        raise ParseError(str(exc), path=path, line=lineno) from None
                    items = tuple(sorted(set(nodes), key=lambda n: n.index))
                else:
                    if a.hierarchy_file is None:
                        raise SchemaError(
                            f"{path}: generalized data for {a.name!r} without a hierarchy"
                        )
                    h = schema.hierarchy(a.name)
                    try:
                        values[a.name] = h.node(cell)
                    except Exception as exc:
                        raise ParseError(str(exc), path=path, line=lineno) from None
            cell = row[col[LABEL_COLUMN]].strip()
            if cell not in ("0", "1"):
                raise ParseError(f"label must be 0 or 1, got {cell!r}", path=path, line=lineno)
            records.append(
                GeneralizedRecord(rid=rid, values=values, items=items, label=int(cell))
            )
    return AnonymizedDataset(schema, records)


def dataset_to_csv_bytes(d: RTDataset) -> bytes:
    """In-memory CSV rendering, used for content hashing in manifests."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    names = [a.name for a in d.schema.attributes]
    w.writerow([ID_COLUMN] + names + [LABEL_COLUMN])
    for rec in d.records:
        row = [str(rec.rid)]
        for a in d.schema.attributes:
            if a.kind == KIND_TRANSACTIONAL:
                row.append(";".join(sorted(rec.items)))
            else:
                row.append(format_value(d.schema, a.name, rec.values[a.name]))
        row.append(str(rec.label))
        w.writerow(row)
    return buf.getvalue().encode("utf-8")
