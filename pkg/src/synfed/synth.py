"""Synthetic relational-transactional benchmark data.

Labels come from a planted linear model over the one-hot leaf encoding whose
coefficients are sampled hierarchically: each level-1 hierarchy node draws a
group effect and its leaves scatter around it.  Generalizing a value to its
group therefore keeps most of its signal, which is what makes anonymized
training degrade gracefully rather than collapse.

The positive class is assigned to the exact top ``positive_rate`` quantile of
the latent score, so class balance is deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .dataset import (
    AttributeSchema,
    DatasetSchema,
    KIND_CATEGORICAL,
    KIND_NUMERIC,
    KIND_TRANSACTIONAL,
    RTDataset,
    RTRecord,
)
from .errors import ConfigError
from .hierarchy import Hierarchy, parse_hierarchy


@dataclass(frozen=True)
class NumericAttr:
    name: str
    lo: int
    hi: int
    fine_width: int
    coarse_width: int

    def __post_init__(self) -> None:
        if self.lo > self.hi:
            raise ConfigError(f"{self.name}: empty domain [{self.lo}, {self.hi}]")
        if self.fine_width < 1 or self.coarse_width < self.fine_width:
            raise ConfigError(f"{self.name}: need 1 <= fine_width <= coarse_width")
        if self.coarse_width % self.fine_width != 0:
            raise ConfigError(f"{self.name}: coarse_width must be a multiple of fine_width")


@dataclass(frozen=True)
class CategoricalAttr:
    name: str
    leaves: int
    group_size: int

    def __post_init__(self) -> None:
        if self.leaves < 1 or self.group_size < 1:
            raise ConfigError(f"{self.name}: leaves and group_size must be >= 1")


@dataclass(frozen=True)
class ItemSpec:
    count: int = 24
    group_size: int = 6
    mean_per_record: float = 5.0
    max_per_record: int = 8

    def __post_init__(self) -> None:
        if self.count < 1 or self.group_size < 1:
            raise ConfigError("items: count and group_size must be >= 1")
        if not (1 <= self.max_per_record <= self.count):
            raise ConfigError("items: need 1 <= max_per_record <= count")
        if self.mean_per_record < 1:
            raise ConfigError("items: mean_per_record must be >= 1")


@dataclass(frozen=True)
class SynthConfig:
    n_records: int = 1000
    numeric: tuple = (NumericAttr("age", 18, 77, 5, 20),)
    categorical: tuple = (
        CategoricalAttr("gender", 2, 2),
        CategoricalAttr("place", 12, 4),
    )
    items: ItemSpec = field(default_factory=ItemSpec)
    noise: float = 0.25
    positive_rate: float = 0.35
    signal_scale: float = 1.0

    def __post_init__(self) -> None:
        if self.n_records < 1:
            raise ConfigError(f"n_records must be >= 1, got {self.n_records}")
        if not (0.0 < self.positive_rate < 1.0):
            raise ConfigError("positive_rate must lie in (0, 1)")
        if self.noise < 0:
            raise ConfigError("noise must be >= 0")
        if not self.numeric and not self.categorical:
            raise ConfigError("need at least one relational attribute")


# ----------------------------------------------------------------------
# hierarchy construction
# ----------------------------------------------------------------------


def _interval(lo: int, hi: int) -> str:
    return f"[{lo}:{hi}]"


def _numeric_lines(a: NumericAttr) -> list:
    root = _interval(a.lo, a.hi)
    lines = []
    for v in range(a.lo, a.hi + 1):
        f_lo = a.lo + ((v - a.lo) // a.fine_width) * a.fine_width
        fine = _interval(f_lo, min(f_lo + a.fine_width - 1, a.hi))
        c_lo = a.lo + ((v - a.lo) // a.coarse_width) * a.coarse_width
        coarse = _interval(c_lo, min(c_lo + a.coarse_width - 1, a.hi))
        lines.append(f"{v}|{fine}|{coarse}|{root}")
    return lines


def _categorical_lines(a: CategoricalAttr) -> list:
    n_groups = (a.leaves + a.group_size - 1) // a.group_size
    lines = []
    for i in range(a.leaves):
        leaf = f"{a.name}_v{i:02d}"
        if n_groups <= 1:
            lines.append(f"{leaf}|All")
        else:
            lines.append(f"{leaf}|{a.name}_g{i // a.group_size:02d}|All")
    return lines


def _item_lines(spec: ItemSpec) -> list:
    n_groups = (spec.count + spec.group_size - 1) // spec.group_size
    lines = []
    for i in range(spec.count):
        leaf = f"I{i:02d}"
        if n_groups <= 1:
            lines.append(f"{leaf}|ALL")
        else:
            lines.append(f"{leaf}|G{i // spec.group_size:02d}|ALL")
    return lines


def build_schema(cfg: SynthConfig, item_attr: str = "items") -> DatasetSchema:
    attrs: list[AttributeSchema] = []
    hierarchies: dict[str, Hierarchy] = {}
    for a in cfg.numeric:
        attrs.append(AttributeSchema(a.name, KIND_NUMERIC, True, f"{a.name}.txt"))
        hierarchies[a.name] = parse_hierarchy(_numeric_lines(a), numeric=True, name=a.name)
    for a in cfg.categorical:
        attrs.append(AttributeSchema(a.name, KIND_CATEGORICAL, True, f"{a.name}.txt"))
        hierarchies[a.name] = parse_hierarchy(_categorical_lines(a), numeric=False, name=a.name)
    attrs.append(AttributeSchema(item_attr, KIND_TRANSACTIONAL, False, f"{item_attr}.txt"))
    hierarchies[item_attr] = parse_hierarchy(_item_lines(cfg.items), numeric=False, name=item_attr)
    return DatasetSchema(attrs, hierarchies)


# ----------------------------------------------------------------------
# generation
# ----------------------------------------------------------------------


def _leaf_effects(h: Hierarchy, rng: np.random.Generator, scale: float) -> dict:
    """Hierarchical coefficients: group effect plus leaf-level jitter."""
    group_effect: dict[int, float] = {}
    effects: dict[str, float] = {}
    for leaf in h.leaves:
        anchor = leaf.parent if leaf.parent is not None else leaf
        if anchor.index not in group_effect:
            group_effect[anchor.index] = float(rng.normal(0.0, scale))
        effects[leaf.label] = group_effect[anchor.index] + float(rng.normal(0.0, scale / 2.0))
    return effects


def synth_generate(cfg: SynthConfig, seed: int) -> RTDataset:
    """Deterministic dataset for a (config, seed) pair."""
    schema = build_schema(cfg)
    rng = np.random.default_rng(seed)
    n = cfg.n_records

    effects = {
        name: _leaf_effects(schema.hierarchy(name), rng, cfg.signal_scale)
        for name in [a.name for a in cfg.numeric]
        + [a.name for a in cfg.categorical]
        + [schema.item_attribute]
    }

    values: dict[str, np.ndarray] = {}
    for a in cfg.numeric:
        values[a.name] = rng.integers(a.lo, a.hi + 1, size=n)
    for a in cfg.categorical:
        values[a.name] = rng.integers(0, a.leaves, size=n)

    item_labels = [leaf.label for leaf in schema.item_hierarchy.leaves]
    sizes = 1 + np.minimum(
        rng.poisson(max(cfg.items.mean_per_record - 1.0, 0.0), size=n),
        cfg.items.max_per_record - 1,
    )
    item_sets = []
    for i in range(n):
        picks = rng.choice(len(item_labels), size=int(sizes[i]), replace=False)
        item_sets.append(frozenset(item_labels[j] for j in picks))

    z = rng.normal(0.0, cfg.noise, size=n) if cfg.noise > 0 else np.zeros(n)
    for a in cfg.numeric:
        eff = effects[a.name]
        z += np.array([eff[str(int(v))] for v in values[a.name]])
    for a in cfg.categorical:
        eff = effects[a.name]
        z += np.array([eff[f"{a.name}_v{int(v):02d}"] for v in values[a.name]])
    eff = effects[schema.item_attribute]
    z += np.array([sum(eff[it] for it in items) for items in item_sets])

    n_pos = int(round(cfg.positive_rate * n))
    order = np.argsort(-z, kind="stable")
    labels = np.zeros(n, dtype=np.int64)
    labels[order[:n_pos]] = 1

    records = []
    for i in range(n):
        vals: dict = {}
        for a in cfg.numeric:
            vals[a.name] = float(int(values[a.name][i]))
        for a in cfg.categorical:
            vals[a.name] = f"{a.name}_v{int(values[a.name][i]):02d}"
        records.append(
            RTRecord(rid=i, values=vals, items=item_sets[i], label=int(labels[i]))
        )
    return RTDataset(schema, records)
