"""Experiment orchestration shared by the CLI commands.

Everything here is a pure function of an ExperimentConfig plus a seed, so
compare-grid cells can run in worker processes and still produce bit-identical
results at any parallelism level.
"""

from __future__ import annotations

import csv
import hashlib
import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields, replace

import numpy as np
import yaml

from .anonymizer import AnonymizationParams, anonymize
from .dataset import DatasetSchema, RTDataset, load_dataset, load_schema
from .errors import ConfigError, NoLegitimateMappingError, SchemaMismatchError, SynfedError
from .flsim import (
    DPConfig,
    EncodedDataset,
    FLConfig,
    ModelParams,
    evaluate_f1,
    partition_indices,
    train_federated,
)
from .mapping import (
    MappingSet,
    encode_generalized,
    encode_raw,
    extract_mappings,
    leaf_encoding,
    mapping_encoding,
    merge_mappings,
    select_mapping,
    transform,
)
from .metrics import WeightVector, f1_binary, feature_importance, ncp_dataset, select_qids, ul_dataset
from .synth import CategoricalAttr, ItemSpec, NumericAttr, SynthConfig, synth_generate
from .verifier import verify_k_km

MODES = ("central", "federated", "federated-dp", "federated-syntactic")


# ----------------------------------------------------------------------
# configuration
# ----------------------------------------------------------------------


@dataclass(frozen=True)
class AnonymizeSection:
    k: int = 10
    m: int = 2
    delta: float = 0.95
    weights: str = "uniform"           # "uniform" | "importance"
    top_qids: int = 0                  # 0 = keep all QIDs in the encoding

    def __post_init__(self) -> None:
        if self.weights not in ("uniform", "importance"):
            raise ConfigError(f"weights must be uniform or importance, got {self.weights!r}")
        if self.top_qids < 0:
            raise ConfigError("top_qids must be >= 0")


@dataclass(frozen=True)
class TrainSection:
    model: str = "logreg"
    sites: int = 10
    rounds: int = 40
    local_epochs: int = 1
    learning_rate: float = 2.0
    l2: float = 0.0
    folds: int = 5
    test_fraction: float = 0.3

    def __post_init__(self) -> None:
        if self.sites < 1:
            raise ConfigError("sites must be >= 1")
        if not (0.0 < self.test_fraction < 1.0):
            raise ConfigError("test_fraction must lie in (0, 1)")


@dataclass(frozen=True)
class DPSection:
    epsilons: tuple = (0.01, 0.1, 0.5, 0.9)
    clip_norm: float = 1.0

    def __post_init__(self) -> None:
        if not self.epsilons:
            raise ConfigError("dp.epsilons must not be empty")
        if any(e <= 0 for e in self.epsilons):
            raise ConfigError("dp epsilons must be positive")
        if self.clip_norm <= 0:
            raise ConfigError("dp.clip_norm must be positive")


@dataclass(frozen=True)
class CompareSection:
    models: tuple = ("logreg",)
    seeds: tuple = (0, 1, 2, 3, 4)
    ks: tuple = (3, 5, 10, 20, 50)
    workers: int = 1

    def __post_init__(self) -> None:
        if not self.models or not self.seeds or not self.ks:
            raise ConfigError("compare needs models, seeds and ks")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")


@dataclass(frozen=True)
class DataSection:
    dataset: str | None = None
    schema: str | None = None


@dataclass(frozen=True)
class ExperimentConfig:
    synth: SynthConfig = field(default_factory=SynthConfig)
    data: DataSection = field(default_factory=DataSection)
    anonymize: AnonymizeSection = field(default_factory=AnonymizeSection)
    train: TrainSection = field(default_factory=TrainSection)
    dp: DPSection = field(default_factory=DPSection)
    compare: CompareSection = field(default_factory=CompareSection)
    seed: int = 0


def _build(cls, doc: dict, path: str):
    known = {f.name for f in fields(cls)}
    unknown = set(doc) - known
    if unknown:
        raise ConfigError(f"{path}: unknown keys {sorted(unknown)} for {cls.__name__}")
    kwargs = {}
    for f in fields(cls):
        if f.name in doc:
            v = doc[f.name]
            kwargs[f.name] = tuple(v) if isinstance(v, list) else v
    return cls(**kwargs)


def _build_synth(doc: dict, path: str) -> SynthConfig:
    doc = dict(doc)
    numeric = tuple(NumericAttr(**d) for d in doc.pop("numeric", []))
    categorical = tuple(CategoricalAttr(**d) for d in doc.pop("categorical", []))
    items = ItemSpec(**doc.pop("items", {}))
    base = _build(SynthConfig, doc, path)
    return replace(
        base,
        numeric=numeric or SynthConfig().numeric,
        categorical=categorical or SynthConfig().categorical,
        items=items,
    )


def load_config(path: str | None) -> ExperimentConfig:
    if path is None:
        return ExperimentConfig()
    with open(path, "r", encoding="utf-8") as fh:
        doc = yaml.safe_load(fh) or {}
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: config must be a mapping")
    known = {"synth", "data", "anonymize", "train", "dp", "compare", "seed"}
    unknown = set(doc) - known
    if unknown:
        raise ConfigError(f"{path}: unknown top-level keys {sorted(unknown)}")
    return ExperimentConfig(
        synth=_build_synth(doc.get("synth", {}), path),
        data=_build(DataSection, doc.get("data", {}), path),
        anonymize=_build(AnonymizeSection, doc.get("anonymize", {}), path),
        train=_build(TrainSection, doc.get("train", {}), path),
        dp=_build(DPSection, doc.get("dp", {}), path),
        compare=_build(CompareSection, doc.get("compare", {}), path),
        seed=int(doc.get("seed", 0)),
    )


def config_echo(cfg: ExperimentConfig) -> list:
    """Sorted ``key=value`` lines echoing the effective configuration."""

    def flatten(prefix: str, obj) -> list:
        out = []
        if hasattr(obj, "__dataclass_fields__"):
            for f in fields(obj):
                out.extend(flatten(f"{prefix}{f.name}.", getattr(obj, f.name)))
        elif isinstance(obj, (list, tuple)):
            if obj and hasattr(obj[0], "__dataclass_fields__"):
                for i, el in enumerate(obj):
                    out.extend(flatten(f"{prefix[:-1]}[{i}].", el))
            else:
                out.append(f"{prefix[:-1]}={','.join(str(v) for v in obj)}")
        else:
            out.append(f"{prefix[:-1]}={obj}")
        return out

    return sorted(flatten("", cfg))


# ----------------------------------------------------------------------
# seeded sub-streams
# ----------------------------------------------------------------------


def derive_seed(base: int, *key: int) -> int:
    """Independent deterministic integer stream for a (base, purpose) pair."""
    ss = np.random.SeedSequence(entropy=base, spawn_key=tuple(key))
    return int(ss.generate_state(1, np.uint64)[0])


_SPLIT, _PARTITION, _ANON, _TRAIN, _IMPORTANCE = range(1, 6)


# ----------------------------------------------------------------------
# data preparation
# ----------------------------------------------------------------------


def load_or_generate(cfg: ExperimentConfig, seed: int) -> RTDataset:
    if cfg.data.dataset:
        if not cfg.data.schema:
            raise ConfigError("data.dataset given without data.schema")
        schema = load_schema(cfg.data.schema)
        return load_dataset(cfg.data.dataset, schema)
    return synth_generate(cfg.synth, seed)


def split_train_test(d: RTDataset, test_fraction: float, seed: int) -> tuple:
    rng = np.random.default_rng(seed)
    perm = rng.permutation(len(d))
    n_test = max(1, int(round(test_fraction * len(d))))
    test = d.subset(sorted(int(i) for i in perm[:n_test]))
    train = d.subset(sorted(int(i) for i in perm[n_test:]))
    return train, test


def encode_leafwise(d: RTDataset, enc, qids=None) -> EncodedDataset:
    idx = enc.column_index()
    X = np.zeros((len(d), enc.dim), dtype=np.float64)
    schema = d.schema
    from .dataset import format_value

    item_attr = schema.item_attribute
    use_qids = schema.qid_names if qids is None else qids
    for i, rec in enumerate(d.records):
        for name in use_qids:
            j = idx.get((name, format_value(schema, name, rec.values[name])))
            if j is None:
                raise SchemaMismatchError(f"value of {name!r} missing from encoding")
            X[i, j] = 1.0
        for it in sorted(rec.items):
            j = idx.get((item_attr, it))
            if j is None:
                raise SchemaMismatchError(f"item {it!r} missing from encoding")
            X[i, j] = 1.0
    y = np.array([rec.label for rec in d.records], dtype=np.int64)
    return EncodedDataset(X, y, enc.digest())


# ----------------------------------------------------------------------
# mode runners
# ----------------------------------------------------------------------


@dataclass
class ModeResult:
    params: ModelParams
    f1: float
    unmapped_rate: float = 0.0
    ncp: float = float("nan")
    ul: float = float("nan")
    majority_label: int = 0
    mappings: MappingSet | None = None
    encoding: object = None  # EncodingSchema used for training


def _fl_config(t: TrainSection, model: str, seed: int) -> FLConfig:
    return FLConfig(
        model=model,
        rounds=t.rounds,
        local_epochs=t.local_epochs,
        learning_rate=t.learning_rate,
        l2=t.l2,
        seed=seed,
    )


def run_raw_mode(train: RTDataset, test: RTDataset, cfg: ExperimentConfig, model: str,
                 seed: int, *, sites: int, dp_epsilon: float | None = None,
                 log: list | None = None) -> ModeResult:
    """central (sites=1), plain federated, or federated-dp on raw leaf encodings."""
    enc = leaf_encoding(train.schema)
    encoded = encode_leafwise(train, enc)
    if sites == 1:
        shards = [encoded]
    else:
        shards = [
            encoded.subset(idx)
            for idx in partition_indices(len(encoded), sites, derive_seed(seed, _PARTITION))
        ]
    dp = None
    if dp_epsilon is not None:
        dp = DPConfig(epsilon=dp_epsilon, clip_norm=cfg.dp.clip_norm)
    flcfg = _fl_config(cfg.train, model, derive_seed(seed, _TRAIN))
    params = train_federated(shards, flcfg, dp=dp, log=log)
    test_encoded = encode_leafwise(test, enc)
    counts = np.bincount(encoded.y, minlength=2)
    res = ModeResult(
        params=params,
        f1=evaluate_f1(params, test_encoded),
        majority_label=int(np.argmax(counts)),
    )
    res.encoding = enc
    return res


def run_syntactic_mode(train: RTDataset, test: RTDataset, cfg: ExperimentConfig, model: str,
                       seed: int, *, k: int | None = None, log: list | None = None) -> ModeResult:
    """Per-site anonymization, pooled equivalence classes, federated training."""
    schema = train.schema
    sites = cfg.train.sites
    a = cfg.anonymize
    k_eff = a.k if k is None else k

    if a.weights == "importance":
        imp = feature_importance(train, seed=derive_seed(seed, _IMPORTANCE))
        weights = imp.weights
    else:
        weights = WeightVector.uniform(schema.qid_names)
    qids = schema.qid_names
    if a.top_qids:
        qids = select_qids(train, weights, a.top_qids)

    shard_idx = partition_indices(len(train), sites, derive_seed(seed, _PARTITION))
    anon_shards = []
    for s, idx in enumerate(shard_idx):
        shard = train.subset(idx)
        params = AnonymizationParams(
            k=k_eff, m=a.m, delta=a.delta, weights=weights, seed=derive_seed(seed, _ANON, s)
        )
        anon = anonymize(shard, params)
        violations = verify_k_km(anon, k_eff, a.m)
        if violations:
            raise SynfedError(
                f"site {s}: anonymization failed verification: {violations[0].describe()}"
            )
        anon_shards.append(anon)

    mappings = merge_mappings([extract_mappings(anon) for anon in anon_shards])
    enc = mapping_encoding(mappings, schema, qids)
    idx_map = enc.column_index()

    encoded_shards = []
    for anon in anon_shards:
        X = np.zeros((len(anon.records), enc.dim), dtype=np.float64)
        y = np.empty(len(anon.records), dtype=np.int64)
        for i, rec in enumerate(anon.records):
            row = np.zeros(enc.dim)
            for name in qids:
                j = idx_map.get((name, rec.values[name].label))
                if j is None:
                    raise SchemaMismatchError(f"{name}: node missing from pooled encoding")
                row[j] = 1.0
            for node in rec.items:
                j = idx_map.get((schema.item_attribute, node.label))
                if j is None:
                    raise SchemaMismatchError("item node missing from pooled encoding")
                row[j] = 1.0
            X[i] = row
            y[i] = rec.label
        encoded_shards.append(EncodedDataset(X, y, enc.digest()))

    flcfg = _fl_config(cfg.train, model, derive_seed(seed, _TRAIN))
    params = train_federated(encoded_shards, flcfg, log=log)

    all_y = np.concatenate([s.y for s in encoded_shards])
    majority = int(np.argmax(np.bincount(all_y, minlength=2)))

    y_true = np.array([rec.label for rec in test.records], dtype=np.int64)
    y_pred = np.empty(len(test.records), dtype=np.int64)
    unmapped = 0
    for i, rec in enumerate(test.records):
        try:
            ec = select_mapping(rec, mappings, weights, schema)
            gen = transform(rec, ec, schema)
            x = encode_generalized(gen, enc, schema, idx_map)
        except (NoLegitimateMappingError, SchemaMismatchError):
            unmapped += 1
            y_pred[i] = majority
            continue
        y_pred[i] = int(x @ params.weights + params.bias > 0.0)

    pooled_records = [rec for anon in anon_shards for rec in anon.records]
    res = ModeResult(
        params=params,
        f1=f1_binary(y_true, y_pred),
        unmapped_rate=unmapped / max(1, len(test.records)),
        ncp=ncp_dataset(pooled_records, weights, schema),
        ul=ul_dataset(pooled_records, weights),
        majority_label=majority,
        mappings=mappings,
    )
    res.encoding = enc
    return res


def run_mode(mode: str, train: RTDataset, test: RTDataset, cfg: ExperimentConfig, model: str,
             seed: int, *, k: int | None = None, epsilon: float | None = None,
             log: list | None = None) -> ModeResult:
    if mode == "central":
        return run_raw_mode(train, test, cfg, model, seed, sites=1, log=log)
    if mode == "federated":
        return run_raw_mode(train, test, cfg, model, seed, sites=cfg.train.sites, log=log)
    if mode == "federated-dp":
        eps = epsilon if epsilon is not None else cfg.dp.epsilons[0]
        return run_raw_mode(
            train, test, cfg, model, seed, sites=cfg.train.sites, dp_epsilon=eps, log=log
        )
    if mode == "federated-syntactic":
        return run_syntactic_mode(train, test, cfg, model, seed, k=k, log=log)
    raise ConfigError(f"unknown mode {mode!r}; pick one of {MODES}")


# ----------------------------------------------------------------------
# compare grid
# ----------------------------------------------------------------------


@dataclass(frozen=True)
class CellSpec:
    mode: str
    model: str
    k: int | None
    epsilon: float | None
    seed: int


def compare_cells(cfg: ExperimentConfig) -> list:
    cells = []
    for model in cfg.compare.models:
        for seed in cfg.compare.seeds:
            cells.append(CellSpec("central", model, None, None, seed))
            cells.append(CellSpec("federated", model, None, None, seed))
            for k in cfg.compare.ks:
                cells.append(CellSpec("federated-syntactic", model, k, None, seed))
            for eps in cfg.dp.epsilons:
                cells.append(CellSpec("federated-dp", model, None, eps, seed))
    return cells


def run_cell(cfg: ExperimentConfig, spec: CellSpec) -> dict:
    """One grid cell, self-contained and deterministic: returns a result row."""
    row = {
        "mode": spec.mode,
        "model": spec.model,
        "k": "" if spec.k is None else spec.k,
        "epsilon": "" if spec.epsilon is None else repr(spec.epsilon),
        "seed": spec.seed,
        "f1": "",
        "unmapped_rate": "",
        "ncp": "",
        "ul": "",
        "error": "",
    }
    try:
        data = load_or_generate(cfg, spec.seed)
        train, test = split_train_test(
            data, cfg.train.test_fraction, derive_seed(spec.seed, _SPLIT)
        )
        res = run_mode(
            spec.mode, train, test, cfg, spec.model, spec.seed, k=spec.k, epsilon=spec.epsilon
        )
        row["f1"] = repr(round(res.f1, 10))
        row["unmapped_rate"] = repr(round(res.unmapped_rate, 10))
        if spec.mode == "federated-syntactic":
            row["ncp"] = repr(round(res.ncp, 10))
            row["ul"] = repr(round(res.ul, 10))
    except SynfedError as exc:
        row["error"] = f"{type(exc).__name__}: {exc}"
    return row


def _row_sort_key(row: dict) -> tuple:
    return (
        row["mode"],
        row["model"],
        float(row["k"]) if row["k"] != "" else -1.0,
        float(row["epsilon"]) if row["epsilon"] != "" else -1.0,
        int(row["seed"]),
    )


def run_compare(cfg: ExperimentConfig, out_dir: str) -> dict:
    """Run the full grid, write summary/aggregate CSVs and charts; returns stats."""
    os.makedirs(out_dir, exist_ok=True)
    cells = compare_cells(cfg)
    if cfg.compare.workers > 1:
        with ProcessPoolExecutor(max_workers=cfg.compare.workers) as pool:
            rows = list(pool.map(run_cell, [cfg] * len(cells), cells, chunksize=1))
    else:
        rows = [run_cell(cfg, spec) for spec in cells]
    rows.sort(key=_row_sort_key)

    echo = config_echo(cfg)
    columns = ["mode", "model", "k", "epsilon", "seed", "f1", "unmapped_rate", "ncp", "ul", "error"]
    summary_path = os.path.join(out_dir, "summary.csv")
    _write_csv(summary_path, columns, rows, echo)

    # aggregate over seeds
    groups: dict[tuple, list] = {}
    for row in rows:
        if row["error"]:
            continue
        key = (row["mode"], row["model"], row["k"], row["epsilon"])
        groups.setdefault(key, []).append(float(row["f1"]))
    agg_rows = []
    for key in sorted(groups, key=lambda t: (t[0], t[1], float(t[2]) if t[2] != "" else -1.0,
                                             float(t[3]) if t[3] != "" else -1.0)):
        vals = groups[key]
        agg_rows.append(
            {
                "mode": key[0],
                "model": key[1],
                "k": key[2],
                "epsilon": key[3],
                "n_seeds": len(vals),
                "f1_mean": repr(round(float(np.mean(vals)), 10)),
                "f1_std": repr(round(float(np.std(vals)), 10)),
            }
        )
    agg_path = os.path.join(out_dir, "aggregate.csv")
    _write_csv(agg_path, ["mode", "model", "k", "epsilon", "n_seeds", "f1_mean", "f1_std"],
               agg_rows, echo)

    _write_charts(cfg, agg_rows, out_dir)
    failed = sum(1 for r in rows if r["error"])
    write_manifest(out_dir, cfg, ["summary.csv", "aggregate.csv", "f1_vs_k.svg", "f1_vs_epsilon.svg"])
    return {"rows": len(rows), "failed": failed, "summary": summary_path, "aggregate": agg_path}


def _write_csv(path: str, columns: list, rows: list, echo: list) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        for line in echo:
            fh.write(f"# {line}\n")
        w = csv.DictWriter(fh, fieldnames=columns, lineterminator="\n")
        w.writeheader()
        for row in rows:
            w.writerow({c: row.get(c, "") for c in columns})


def read_result_csv(path: str) -> list:
    rows = []
    with open(path, "r", encoding="utf-8", newline="") as fh:
        body = [line for line in fh if not line.startswith("#")]
    reader = csv.DictReader(body)
    for row in reader:
        rows.append(row)
    return rows


def _write_charts(cfg: ExperimentConfig, agg_rows: list, out_dir: str) -> None:
    from .svgchart import line_chart

    k_series = []
    eps_series = []
    for model in cfg.compare.models:
        pts = [
            (float(r["k"]), float(r["f1_mean"]))
            for r in agg_rows
            if r["mode"] == "federated-syntactic" and r["model"] == model
        ]
        if pts:
            k_series.append((model, sorted(pts)))
        pts = [
            (float(r["epsilon"]), float(r["f1_mean"]))
            for r in agg_rows
            if r["mode"] == "federated-dp" and r["model"] == model
        ]
        if pts:
            eps_series.append((model, sorted(pts)))
        for mode, name in (("central", "central"), ("federated", "federated")):
            ref = [r for r in agg_rows if r["mode"] == mode and r["model"] == model]
            if ref and k_series:
                xs = [x for x, _ in k_series[-1][1]]
                if xs:
                    level = float(ref[0]["f1_mean"])
                    k_series.append((f"{name} ({model})", [(min(xs), level), (max(xs), level)]))
    line_chart(
        os.path.join(out_dir, "f1_vs_k.svg"),
        title="F1 vs k (anonymized federated training)",
        xlabel="k",
        ylabel="F1",
        series=k_series,
        y_range=(0.0, 1.0),
    )
    line_chart(
        os.path.join(out_dir, "f1_vs_epsilon.svg"),
        title="F1 vs epsilon (differentially private federated training)",
        xlabel="epsilon",
        ylabel="F1",
        series=eps_series,
        y_range=(0.0, 1.0),
    )


def write_manifest(out_dir: str, cfg: ExperimentConfig, names: list) -> None:
    entries = []
    for name in sorted(names):
        p = os.path.join(out_dir, name)
        if not os.path.exists(p):
            continue
        with open(p, "rb") as fh:
            data = fh.read()
        entries.append({"file": name, "sha256": hashlib.sha256(data).hexdigest(),
                        "bytes": len(data)})
    doc = {"config": config_echo(cfg), "outputs": entries}
    with open(os.path.join(out_dir, "manifest.json"), "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")
