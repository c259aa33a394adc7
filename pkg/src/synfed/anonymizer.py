"""Three-step anonymization of a relational-transactional dataset.

1. ``form_clusters`` — greedy seeded clustering into groups of exactly ``k``
   (leftovers join the cheapest cluster), optimizing relational NCP.
2. ``merge_clusters`` — iterative merging, cheapest-cluster seeded, candidates
   ranked by post-merge relational loss and item-spread rank sum, bounded by
   the dataset-NCP budget ``delta``.
3. ``enforce_km`` — per cluster, coarsen a full-subtree cut of the item
   hierarchy until every combination of at most ``m`` original items is
   matched by 0 or >= k member records.

``anonymize`` chains the three and returns generalized records that carry
their cluster provenance.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations

import numpy as np

from .dataset import (
    AnonymizedDataset,
    GeneralizedRecord,
    RTDataset,
    format_value,
)
from .errors import AnonymizationError, ContractViolation
from .hierarchy import Hierarchy, HNode
from .metrics import WeightVector, ncp_value

_DELTA_SLACK = 1e-12  # float guard when comparing dataset NCP against delta


@dataclass(frozen=True)
class AnonymizationParams:
    k: int
    m: int
    delta: float
    weights: WeightVector
    seed: int = 0

    def __post_init__(self) -> None:
        if not isinstance(self.k, int) or self.k < 2:
            raise ContractViolation(f"k must be an integer >= 2, got {self.k!r}")
        if not isinstance(self.m, int) or self.m < 0:
            raise ContractViolation(f"m must be an integer >= 0, got {self.m!r}")
        if not (0.0 <= self.delta <= 1.0):
            raise ContractViolation(f"delta must lie in [0, 1], got {self.delta!r}")


@dataclass
class Cluster:
    """One anonymization group: members share a generalized QID tuple and item cut."""

    cluster_id: int
    record_ids: tuple
    generalized_tuple: dict = field(default_factory=dict)  # attr -> HNode
    item_cut: tuple = ()  # HNode cut nodes actually used by members

    # internal working state (positions into the dataset's record list)
    _members: list = field(default_factory=list, repr=False)
    _u_rel: float = 0.0
    _item_mask: int = 0


# ----------------------------------------------------------------------
# shared precomputation
# ----------------------------------------------------------------------


class _Workspace:
    """Per-attribute leaf positions and lazily cached NCP distance rows."""

    def __init__(self, d: RTDataset, p: AnonymizationParams):
        self.d = d
        self.p = p
        schema = d.schema
        for attr in schema.attributes:
            if attr.kind != "transactional" and not attr.is_qid:
                raise ContractViolation(
                    f"relational attribute {attr.name!r} is not a QID; anonymization "
                    "would republish it verbatim"
                )
        self.qids = [a for a in schema.qid_names if p.weights.relational.get(a, 0.0) != 0.0]
        for a in p.weights.relational:
            if a not in schema.qid_names:
                raise ContractViolation(f"weight given for non-QID attribute {a!r}")
        self.hier: dict[str, Hierarchy] = {a: schema.hierarchy(a) for a in schema.qid_names}
        n = len(d.records)
        self.rids = np.array([r.rid for r in d.records], dtype=np.int64)
        self.leaf_pos: dict[str, np.ndarray] = {}
        self.leaf_nodes: dict[str, list[HNode]] = {}
        for a in schema.qid_names:
            h = self.hier[a]
            pos = np.empty(n, dtype=np.int64)
            for i, rec in enumerate(d.records):
                pos[i] = h.leaf_position(format_value(schema, a, rec.values[a]))
            self.leaf_pos[a] = pos
            self.leaf_nodes[a] = h.leaves
        self._row_cache: dict[tuple, np.ndarray] = {}
        self._lca_cache: dict[tuple, HNode] = {}

    def lca2(self, a: str, x: HNode, y: HNode) -> HNode:
        if x is y:
            return x
        key = (a, min(x.index, y.index), max(x.index, y.index))
        node = self._lca_cache.get(key)
        if node is None:
            node = Hierarchy._lca2(x, y)
            self._lca_cache[key] = node
        return node

    def ncp_row(self, a: str, leaf_position: int) -> np.ndarray:
        """Weighted NCP of lca(leaf, every leaf of attribute ``a``)."""
        key = (a, leaf_position)
        row = self._row_cache.get(key)
        if row is None:
            h = self.hier[a]
            w = self.p.weights.relational.get(a, 0.0)
            src = h.leaves[leaf_position]
            row = np.empty(h.n_leaves, dtype=np.float64)
            for j, leaf in enumerate(h.leaves):
                row[j] = w * ncp_value(self.lca2(a, src, leaf), h.n_leaves)
            self._row_cache[key] = row
        return row

    def distances_from(self, pos: int, cands: np.ndarray) -> np.ndarray:
        dist = np.zeros(len(cands), dtype=np.float64)
        for a in self.qids:
            lp = self.leaf_pos[a]
            dist += self.ncp_row(a, int(lp[pos]))[lp[cands]]
        return dist

    def tuple_of(self, members: list) -> dict:
        out: dict = {}
        for a in self.hier:
            h = self.hier[a]
            lp = self.leaf_pos[a]
            node: HNode = h.leaves[int(lp[members[0]])]
            for pos in members[1:]:
                node = self.lca2(a, node, h.leaves[int(lp[pos])])
                if node.is_root:
                    break
            out[a] = node
        return out

    def u_rel(self, nodes: dict) -> float:
        total = 0.0
        for a, w in self.p.weights.relational.items():
            total += w * ncp_value(nodes[a], self.hier[a].n_leaves)
        return total


def _new_cluster(ws: _Workspace, cid: int, members: list) -> Cluster:
    nodes = ws.tuple_of(members)
    c = Cluster(
        cluster_id=cid,
        record_ids=tuple(int(ws.rids[p]) for p in members),
        generalized_tuple=nodes,
    )
    c._members = list(members)
    c._u_rel = ws.u_rel(nodes)
    item_h = ws.d.schema.item_hierarchy
    mask = 0
    for pos in members:
        for it in ws.d.records[pos].items:
            mask |= 1 << item_h.leaf_position(it)
    c._item_mask = mask
    return c


# ----------------------------------------------------------------------
# step 1: greedy cluster formation
# ----------------------------------------------------------------------


def form_clusters(d: RTDataset, p: AnonymizationParams, ws: _Workspace | None = None) -> list:
    """Partition records into clusters of >= k members each.

    Seeds start from the params RNG; each next seed is the unassigned record
    farthest from the previous one.  A cluster takes the seed plus its k-1
    nearest records (record-pair NCP distance; ties by record id).  Fewer than
    k leftovers join whichever cluster inflates its tuple NCP least.
    """
    n = len(d.records)
    if n < p.k:
        raise ContractViolation(f"dataset has {n} records, fewer than k={p.k}")
    if ws is None:
        ws = _Workspace(d, p)

    rng = np.random.default_rng(p.seed)
    alive = np.ones(n, dtype=bool)
    seed_pos = int(rng.integers(0, n))
    clusters: list[Cluster] = []

    while int(alive.sum()) >= p.k:
        cands = np.flatnonzero(alive)
        cands = cands[cands != seed_pos]
        dist = ws.distances_from(seed_pos, cands)
        order = np.lexsort((ws.rids[cands], dist))
        members = [seed_pos] + [int(c) for c in cands[order[: p.k - 1]]]
        alive[members] = False
        clusters.append(_new_cluster(ws, len(clusters), members))
        rest = np.flatnonzero(alive)
        if len(rest) == 0:
            break
        dist = ws.distances_from(seed_pos, rest)
        order = np.lexsort((ws.rids[rest], -dist))
        seed_pos = int(rest[order[0]])

    leftovers = sorted((int(i) for i in np.flatnonzero(alive)), key=lambda i: int(ws.rids[i]))
    for pos in leftovers:
        best = None
        for c in clusters:
            merged = {
                a: ws.lca2(a, c.generalized_tuple[a], ws.hier[a].leaves[int(ws.leaf_pos[a][pos])])
                for a in ws.hier
            }
            inflation = ws.u_rel(merged) - c._u_rel
            key = (inflation, c.cluster_id)
            if best is None or key < best[0]:
                best = (key, c, merged)
        assert best is not None
        _, c, merged = best
        c._members.append(pos)
        c.record_ids = c.record_ids + (int(ws.rids[pos]),)
        c.generalized_tuple = merged
        c._u_rel = ws.u_rel(merged)
        item_h = d.schema.item_hierarchy
        for it in d.records[pos].items:
            c._item_mask |= 1 << item_h.leaf_position(it)
    return clusters


# ----------------------------------------------------------------------
# step 2: delta-bounded merging
# ----------------------------------------------------------------------


def merge_clusters(clusters: list, d: RTDataset, p: AnonymizationParams,
                   ws: _Workspace | None = None) -> list:
    """Greedily merge clusters while the dataset NCP stays within ``delta``.

    Each pass seeds on the cluster with the lowest relational loss, ranks every
    other cluster by post-merge relational loss and by post-merge item spread
    (two orderings, combined by rank sum, ties to the lower cluster id), then
    merges the best candidate that keeps the dataset mean NCP <= delta.  Stops
    when no candidate fits or one cluster remains.
    """
    if ws is None:
        ws = _Workspace(d, p)
    if not clusters:
        return []
    n_total = sum(len(c._members) for c in clusters)
    ncp_sum = sum(len(c._members) * c._u_rel for c in clusters)
    active = {c.cluster_id: c for c in clusters}

    while len(active) > 1:
        seed = min(active.values(), key=lambda c: (c._u_rel, c.cluster_id))
        cands = []
        for c in active.values():
            if c is seed:
                continue
            merged = {
                a: ws.lca2(a, seed.generalized_tuple[a], c.generalized_tuple[a]) for a in ws.hier
            }
            cands.append((c, merged, ws.u_rel(merged), (seed._item_mask | c._item_mask).bit_count()))
        by_rel = sorted(cands, key=lambda t: (t[2], t[0].cluster_id))
        by_spread = sorted(cands, key=lambda t: (t[3], t[0].cluster_id))
        rank: dict[int, int] = {}
        for pos, t in enumerate(by_rel):
            rank[t[0].cluster_id] = pos
        for pos, t in enumerate(by_spread):
            rank[t[0].cluster_id] += pos
        cands.sort(key=lambda t: (rank[t[0].cluster_id], t[0].cluster_id))

        merged_any = False
        for c, merged, post_rel, _spread in cands:
            n_seed, n_c = len(seed._members), len(c._members)
            new_sum = ncp_sum - n_seed * seed._u_rel - n_c * c._u_rel + (n_seed + n_c) * post_rel
            if new_sum / n_total <= p.delta + _DELTA_SLACK:
                seed._members.extend(c._members)
                seed.record_ids = seed.record_ids + c.record_ids
                seed.generalized_tuple = merged
                seed._u_rel = post_rel
                seed._item_mask |= c._item_mask
                del active[c.cluster_id]
                ncp_sum = new_sum
                merged_any = True
                break
        if not merged_any:
            break

    out = sorted(active.values(), key=lambda c: c.cluster_id)
    for new_id, c in enumerate(out):
        c.cluster_id = new_id
    return out


# ----------------------------------------------------------------------
# step 3: k^m item-cut enforcement
# ----------------------------------------------------------------------


def _support_counts(combo_masks: list, rec_masks: list, counts: list, use_numpy: bool) -> list:
    if use_numpy:
        cm = np.array(combo_masks, dtype=np.uint64)
        rm = np.array(rec_masks, dtype=np.uint64)
        ct = np.array(counts, dtype=np.int64)
        sub = (cm[:, None] & rm[None, :]) == cm[:, None]
        return list(sub @ ct)
    out = []
    for combo in combo_masks:
        s = 0
        for mask, cnt in zip(rec_masks, counts):
            if mask & combo == combo:
                s += cnt
        out.append(s)
    return out


class _CutState:
    """A full-subtree cut over the item hierarchy, one covering node per leaf."""

    def __init__(self, h: Hierarchy, present_leaves: list):
        self.h = h
        self.node_of_leaf: list = [None] * h.n_leaves
        for lp in present_leaves:
            self.node_of_leaf[lp] = h.leaves[lp]

    def lift(self, leaf_position: int) -> None:
        node = self.node_of_leaf[leaf_position]
        parent = node.parent
        mask = parent.leaf_mask
        pos = 0
        while mask:
            if mask & 1:
                self.node_of_leaf[pos] = parent
            mask >>= 1
            pos += 1

    def record_mask(self, leaf_positions: list) -> int:
        mask = 0
        for lp in leaf_positions:
            mask |= self.node_of_leaf[lp].leaf_mask
        return mask

    def snapshot(self) -> list:
        return list(self.node_of_leaf)

    def restore(self, snap: list) -> None:
        self.node_of_leaf = list(snap)


def _violations(cut: _CutState, rec_leafpos: list, k: int, m: int, use_numpy: bool):
    """All (combo_mask, support) pairs with support in (0, k) under the cut."""
    masks = [cut.record_mask(lps) for lps in rec_leafpos]
    union = 0
    for msk in masks:
        union |= msk
    covered = [pos for pos in range(cut.h.n_leaves) if union >> pos & 1]
    distinct: dict[int, int] = {}
    for msk in masks:
        distinct[msk] = distinct.get(msk, 0) + 1
    rec_masks = list(distinct.keys())
    counts = list(distinct.values())

    combos: list[tuple] = []
    combo_masks: list[int] = []
    max_size = min(m, len(covered))
    for size in range(1, max_size + 1):
        for combo in combinations(covered, size):
            cm = 0
            for pos in combo:
                cm |= 1 << pos
            combos.append(combo)
            combo_masks.append(cm)
    if not combos:
        return []
    supports = _support_counts(combo_masks, rec_masks, counts, use_numpy)
    return [
        (combo, cm, int(s))
        for combo, cm, s in zip(combos, combo_masks, supports)
        if 0 < int(s) < k
    ]


def _cut_weight(cut: "_CutState", present: list) -> int:
    """Summed 2^|leaves|-1 over the nodes covering the cluster's items."""
    used = {cut.node_of_leaf[lp].index: cut.node_of_leaf[lp] for lp in present}
    return sum((1 << node.leaf_count()) - 1 for node in used.values())


def _combo_support(cut: "_CutState", rec_leafpos: list, combo_mask: int) -> int:
    return sum(1 for lps in rec_leafpos if cut.record_mask(lps) & combo_mask == combo_mask)


def enforce_km(clusters: list, d: RTDataset, p: AnonymizationParams) -> AnonymizedDataset:
    """Generalize items per cluster until k^m holds, then emit the dataset.

    The cut starts at the leaves and repeatedly targets the violating
    combination with the highest support (ties: lexicographically smallest
    leaf tuple).  Candidate moves lift one of the combination's covering nodes
    to its parent; the chosen move must fix the targeted combination if any
    candidate can, and otherwise coarsens the cut by the least total item
    weight (ties: smaller parent node index).  Preferring cheap fixing moves
    keeps the cut from collapsing to the root the moment a rare cross-branch
    pair shows up.
    """
    schema = d.schema
    item_h = schema.item_hierarchy
    use_numpy = item_h.n_leaves <= 63
    pos_of = {leaf.label: i for i, leaf in enumerate(item_h.leaves)}
    by_pos = {r.rid: i for i, r in enumerate(d.records)}

    out_values: dict[int, dict] = {}
    out_items: dict[int, tuple] = {}
    out_cluster: dict[int, int] = {}

    for c in clusters:
        if len(c._members) < p.k:
            raise ContractViolation(
                f"cluster {c.cluster_id} has {len(c._members)} members, fewer than k={p.k}"
            )
        members = c._members if c._members else [by_pos[rid] for rid in c.record_ids]
        rec_leafpos = [
            sorted(pos_of[it] for it in d.records[pos].items) for pos in members
        ]
        present = sorted({lp for lps in rec_leafpos for lp in lps})
        cut = _CutState(item_h, present)

        if p.m > 0 and present:
            while True:
                viol = _violations(cut, rec_leafpos, p.k, p.m, use_numpy)
                if not viol:
                    break
                viol.sort(key=lambda t: (-t[2], t[0]))
                target, target_mask, _ = viol[0]
                best = None
                tried: set[int] = set()
                for lp in target:
                    node = cut.node_of_leaf[lp]
                    if node.is_root or node.index in tried:
                        continue
                    tried.add(node.index)
                    snap = cut.snapshot()
                    cut.lift(lp)
                    fixed = _combo_support(cut, rec_leafpos, target_mask) >= p.k
                    key = (0 if fixed else 1, _cut_weight(cut, present), node.parent.index)
                    if best is None or key < best[0]:
                        best = (key, lp)
                    cut.restore(snap)
                if best is None:
                    raise AnonymizationError(
                        f"cluster {c.cluster_id}: k^m unattainable (a combination is "
                        f"matched by fewer than k={p.k} records even at the root; "
                        "records with empty item sets cannot be generalized)"
                    )
                cut.lift(best[1])

        used = sorted(
            {cut.node_of_leaf[lp] for lps in rec_leafpos for lp in lps},
            key=lambda nd: nd.index,
        )
        c.item_cut = tuple(used)
        for pos, lps in zip(members, rec_leafpos):
            gen_items = sorted({cut.node_of_leaf[lp] for lp in lps}, key=lambda nd: nd.index)
            out_items[pos] = tuple(gen_items)
            out_values[pos] = dict(c.generalized_tuple)
            out_cluster[pos] = c.cluster_id

    records = []
    for pos, rec in enumerate(d.records):
        if pos not in out_values:
            raise ContractViolation(f"record {rec.rid} not covered by any cluster")
        records.append(
            GeneralizedRecord(
                rid=rec.rid,
                values=out_values[pos],
                items=out_items[pos],
                label=rec.label,
                cluster_id=out_cluster[pos],
            )
        )
    return AnonymizedDataset(schema=schema, records=records, clusters=list(clusters))


# ----------------------------------------------------------------------
# full pipeline
# ----------------------------------------------------------------------


def anonymize(d: RTDataset, p: AnonymizationParams) -> AnonymizedDataset:
    """form_clusters + merge_clusters + enforce_km."""
    ws = _Workspace(d, p)
    clusters = form_clusters(d, p, ws)
    clusters = merge_clusters(clusters, d, p, ws)
    return enforce_km(clusters, d, p)
