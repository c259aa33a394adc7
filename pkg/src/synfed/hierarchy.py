"""Generalization hierarchies.

A hierarchy is a rooted tree over the domain of one attribute.  Leaves are
original values; internal nodes are generalized values.  The on-disk format is
one pipe-separated root path per leaf::

    France|Europe|All
    24|[21:40]|[21:80]

Numeric hierarchies use interval labels ``[lo:hi]`` for internal nodes and
plain numbers for leaves; sibling intervals must be disjoint and internal
children must tile their parent interval exactly.
"""

from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass, field

from .errors import ContractViolation, HierarchyError, ParseError

_RANGE_RE = re.compile(r"^\[(-?\d+(?:\.\d+)?):(-?\d+(?:\.\d+)?)\]$")

# Characters reserved by the file formats that embed node labels.
_FORBIDDEN_IN_LABEL = ("|", ";", "\n", "\t")


@dataclass(eq=False)
class HNode:
    """One node of a hierarchy tree."""

    label: str
    index: int                       # stable preorder index within the hierarchy
    depth: int
    parent: "HNode | None" = None
    children: list["HNode"] = field(default_factory=list)
    leaf_mask: int = 0               # bitmask over leaf positions covered by this subtree
    # numeric hierarchies only:
    value: float | None = None       # leaves
    lo: float | None = None          # internal [lo:hi]
    hi: float | None = None

    @property
    def is_leaf(self) -> bool:
        return not self.children

    @property
    def is_root(self) -> bool:
        return self.parent is None

    def leaf_count(self) -> int:
        return self.leaf_mask.bit_count()

    def __repr__(self) -> str:  # pragma: no cover - debugging aid
        return f"HNode({self.label!r})"


class Hierarchy:
    """Immutable tree over one attribute domain, with LCA and coverage queries."""

    def __init__(self, root: HNode, *, numeric: bool, name: str = ""):
        self.name = name
        self.numeric = numeric
        self.root = root
        self.nodes: list[HNode] = []
        self.leaves: list[HNode] = []
        self._by_label: dict[str, HNode] = {}
        self._leaf_pos: dict[str, int] = {}

        stack = [root]
        while stack:
            node = stack.pop()
            node.index = len(self.nodes)
            self.nodes.append(node)
            if node.label in self._by_label:
                raise HierarchyError(f"duplicate node label {node.label!r}")
            self._by_label[node.label] = node
            if node.is_leaf:
                self._leaf_pos[node.label] = len(self.leaves)
                self.leaves.append(node)
            stack.extend(reversed(node.children))

        for pos, leaf in enumerate(self.leaves):
            bit = 1 << pos
            cur: HNode | None = leaf
            while cur is not None:
                cur.leaf_mask |= bit
                cur = cur.parent

        self.n_leaves = len(self.leaves)
        self.fingerprint = self._fingerprint()

    # ------------------------------------------------------------------
    # lookups
    # ------------------------------------------------------------------

    def node(self, label: str) -> HNode:
        try:
            return self._by_label[label]
        except KeyError:
            raise HierarchyError(f"unknown node {label!r} in hierarchy {self.name!r}") from None

    def leaf(self, label: str) -> HNode:
        node = self.node(label)
        if not node.is_leaf:
            raise HierarchyError(f"{label!r} is not a leaf of hierarchy {self.name!r}")
        return node

    def has_leaf(self, label: str) -> bool:
        return label in self._leaf_pos

    def leaf_position(self, label: str) -> int:
        return self._leaf_pos[label]

    # ------------------------------------------------------------------
    # structure queries
    # ------------------------------------------------------------------

    def lca(self, nodes: list[HNode]) -> HNode:
        """Lowest common ancestor of a non-empty set of nodes."""
        if not nodes:
            raise ContractViolation("lca of empty node set")
        cur = nodes[0]
        for other in nodes[1:]:
            cur = self._lca2(cur, other)
            if cur.is_root:
                break
        return cur

    @staticmethod
    def _lca2(a: HNode, b: HNode) -> HNode:
        while a.depth > b.depth:
            a = a.parent  # type: ignore[assignment]
        while b.depth > a.depth:
            b = b.parent  # type: ignore[assignment]
        while a is not b:
            a = a.parent  # type: ignore[assignment]
            b = b.parent  # type: ignore[assignment]
        return a

    @staticmethod
    def is_ancestor_or_self(anc: HNode, node: HNode) -> bool:
        while node is not None:
            if node is anc:
                return True
            node = node.parent  # type: ignore[assignment]
        return False

    def covers_value(self, node: HNode, raw: object) -> bool:
        """Whether ``raw`` (an original, un-generalized value) falls under ``node``.

        Numeric hierarchies accept any number inside an internal node's range,
        not only enumerated leaves; categorical values must be known leaves that
        descend from ``node``.
        """
        if self.numeric:
            try:
                v = float(raw)  # type: ignore[arg-type]
            except (TypeError, ValueError):
                return False
            if node.is_leaf:
                return node.value == v
            return node.lo <= v <= node.hi  # type: ignore[operator]
        label = str(raw)
        if label not in self._leaf_pos:
            return False
        return bool(node.leaf_mask & (1 << self._leaf_pos[label]))

    def _fingerprint(self) -> str:
        # order-sensitive: equal fingerprints imply identical node indexing
        lines = []
        for leaf in self.leaves:
            path = []
            cur: HNode | None = leaf
            while cur is not None:
                path.append(cur.label)
                cur = cur.parent
            lines.append("|".join(path))
        digest = hashlib.sha256("\n".join(lines).encode("utf-8"))
        return digest.hexdigest()

    def __repr__(self) -> str:  # pragma: no cover - debugging aid
        return f"Hierarchy({self.name!r}, leaves={self.n_leaves}, nodes={len(self.nodes)})"


# ----------------------------------------------------------------------
# parsing / validation
# ----------------------------------------------------------------------


def parse_hierarchy(lines: list[str], *, numeric: bool, name: str = "", path: str | None = None) -> Hierarchy:
    """Build a hierarchy from ``leaf|level1|...|root`` lines.

    Consecutive duplicate labels in a path are collapsed, so the degenerate
    single-value domain can be written ``X|X`` (or just ``X``).
    """
    root: HNode | None = None
    by_label: dict[str, HNode] = {}
    leaf_labels: set[str] = set()
    order = 0

    for lineno, rawline in enumerate(lines, start=1):
        line = rawline.strip()
        if not line or line.startswith("#"):
            continue
        fields = [f.strip() for f in line.split("|")]
        if any(not f for f in fields):
            raise ParseError("empty field in hierarchy line", path=path, line=lineno)
        # root-first order for construction; collapse consecutive repeats
        p: list[str] = []
        for f in reversed(fields):
            if not p or p[-1] != f:
                p.append(f)
        if root is None:
            root = HNode(label=p[0], index=0, depth=0)
            by_label[p[0]] = root
        elif p[0] != root.label:
            raise ParseError(
                f"multiple roots: {root.label!r} vs {p[0]!r}", path=path, line=lineno
            )
        cur = root
        for child_label in p[1:]:
            existing = by_label.get(child_label)
            if existing is not None:
                if existing.parent is not cur:
                    raise ParseError(
                        f"node {child_label!r} appears under two different parents",
                        path=path,
                        line=lineno,
                    )
                if existing.label in leaf_labels:
                    raise ParseError(
                        f"leaf {child_label!r} also used as an internal node",
                        path=path,
                        line=lineno,
                    )
                cur = existing
            else:
                node = HNode(label=child_label, index=0, depth=cur.depth + 1, parent=cur)
                cur.children.append(node)
                by_label[child_label] = node
                cur = node
        if cur.label in leaf_labels:
            raise ParseError(f"duplicate leaf {cur.label!r}", path=path, line=lineno)
        if cur.children:
            raise ParseError(
                f"leaf {cur.label!r} also used as an internal node", path=path, line=lineno
            )
        leaf_labels.add(cur.label)
        order += 1

    if root is None:
        raise ParseError("hierarchy file has no content", path=path)
    for label in by_label:
        for ch in _FORBIDDEN_IN_LABEL:
            if ch in label:
                raise ParseError(f"label {label!r} contains reserved character {ch!r}", path=path)

    h = Hierarchy(root, numeric=numeric, name=name)
    if numeric:
        _validate_numeric(h)
    return h


def load_hierarchy(path: str, *, numeric: bool, name: str = "") -> Hierarchy:
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.readlines()
    return parse_hierarchy(lines, numeric=numeric, name=name or path, path=path)


def hierarchy_lines(h: Hierarchy) -> list[str]:
    """Round-trippable ``leaf|...|root`` lines in leaf order."""
    lines = []
    for leaf in h.leaves:
        path = []
        cur: HNode | None = leaf
        while cur is not None:
            path.append(cur.label)
            cur = cur.parent
        lines.append("|".join(path))
    return lines


def save_hierarchy(h: Hierarchy, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for line in hierarchy_lines(h):
            fh.write(line + "\n")


def _parse_number(label: str) -> float | None:
    try:
        return float(label)
    except ValueError:
        return None


def _validate_numeric(h: Hierarchy) -> None:
    for node in h.nodes:
        if node.is_leaf:
            v = _parse_number(node.label)
            if v is None:
                raise HierarchyError(
                    f"numeric hierarchy {h.name!r}: leaf {node.label!r} is not a number"
                )
            node.value = v
        else:
            m = _RANGE_RE.match(node.label)
            if not m:
                raise HierarchyError(
                    f"numeric hierarchy {h.name!r}: internal node {node.label!r} "
                    "is not a [lo:hi] range"
                )
            node.lo, node.hi = float(m.group(1)), float(m.group(2))
            if node.lo > node.hi:
                raise HierarchyError(f"empty range {node.label!r} in hierarchy {h.name!r}")

    for node in h.nodes:
        if node.is_leaf:
            continue
        # every child must sit inside the parent's range
        for ch in node.children:
            c_lo = ch.value if ch.is_leaf else ch.lo
            c_hi = ch.value if ch.is_leaf else ch.hi
            if c_lo < node.lo or c_hi > node.hi:  # type: ignore[operator]
                raise HierarchyError(
                    f"hierarchy {h.name!r}: {ch.label!r} escapes parent range {node.label!r}"
                )
        internal = sorted(
            (ch for ch in node.children if not ch.is_leaf), key=lambda n: n.lo  # type: ignore[arg-type,return-value]
        )
        for a, b in zip(internal, internal[1:]):
            if b.lo <= a.hi:  # type: ignore[operator]
                raise HierarchyError(
                    f"hierarchy {h.name!r}: sibling ranges {a.label!r} and {b.label!r} overlap"
                )
        if internal and len(internal) == len(node.children):
            # internal children must tile the parent exactly (integer adjacency)
            if internal[0].lo != node.lo or internal[-1].hi != node.hi:
                raise HierarchyError(
                    f"hierarchy {h.name!r}: children of {node.label!r} do not cover its range"
                )
            for a, b in zip(internal, internal[1:]):
                if float(a.hi) + 1.0 != float(b.lo):  # type: ignore[arg-type]
                    raise HierarchyError(
                        f"hierarchy {h.name!r}: gap between {a.label!r} and {b.label!r}"
                    )
