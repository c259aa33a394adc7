"""Command-line front end.

Subcommands cover the full workflow: generate benchmark data, anonymize a
dataset per site, verify a published table, train under one of four modes,
predict on raw samples via the shared mappings, and run the comparison grid.

Every command takes ``--config`` (YAML, see pipeline.ExperimentConfig) plus a
few overriding flags, and writes its artifacts into ``--out``.
"""

from __future__ import annotations

import argparse
import csv
import os
import sys
from dataclasses import replace

import numpy as np

from . import __version__
from .anonymizer import AnonymizationParams, anonymize
from .dataset import (
    load_dataset,
    load_generalized,
    load_samples,
    load_schema,
    save_dataset,
    save_generalized,
    save_schema,
)
from .errors import BudgetExceededError, NoLegitimateMappingError, SchemaMismatchError, SynfedError
from .flsim import load_model, save_model
from .hierarchy import save_hierarchy
from .mapping import (
    encode_generalized,
    extract_mappings,
    load_mappings,
    mapping_encoding,
    merge_mappings,
    save_mappings,
    select_mapping,
    transform,
)
from .metrics import WeightVector, f1_binary, feature_importance, ncp_dataset, ul_dataset
from .pipeline import (
    MODES,
    _ANON,
    _PARTITION,
    _SPLIT,
    ExperimentConfig,
    config_echo,
    derive_seed,
    load_config,
    load_or_generate,
    run_compare,
    run_mode,
    split_train_test,
    write_manifest,
)
from .synth import synth_generate
from .verifier import verify_k_km
from .flsim import partition_indices


def _write_rows(path: str, columns: list, rows: list, echo: list) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        for line in echo:
            fh.write(f"# {line}\n")
        w = csv.DictWriter(fh, fieldnames=columns, lineterminator="\n")
        w.writeheader()
        for row in rows:
            w.writerow(row)


# ----------------------------------------------------------------------
# subcommands
# ----------------------------------------------------------------------


def cmd_synth(args: argparse.Namespace) -> int:
    cfg = load_config(args.config)
    seed = cfg.seed if args.seed is None else args.seed
    os.makedirs(args.out, exist_ok=True)
    d = synth_generate(cfg.synth, seed)
    schema = d.schema
    for attr in schema.attributes:
        if attr.hierarchy_file:
            save_hierarchy(schema.hierarchy(attr.name), os.path.join(args.out, attr.hierarchy_file))
    save_schema(schema, os.path.join(args.out, "schema.yaml"))
    save_dataset(d, os.path.join(args.out, "dataset.csv"))
    names = ["schema.yaml", "dataset.csv"] + [
        a.hierarchy_file for a in schema.attributes if a.hierarchy_file
    ]
    write_manifest(args.out, cfg, names)
    print(f"[synth] wrote {len(d)} records to {args.out}/dataset.csv (seed {seed})")
    return 0


def cmd_anonymize(args: argparse.Namespace) -> int:
    cfg = load_config(args.config)
    a = cfg.anonymize
    k = args.k if args.k is not None else a.k
    m = args.m if args.m is not None else a.m
    delta = args.delta if args.delta is not None else a.delta
    seed = cfg.seed if args.seed is None else args.seed
    sites = args.sites

    schema = load_schema(args.schema)
    d = load_dataset(args.data, schema)
    if a.weights == "importance":
        weights = feature_importance(d, seed=derive_seed(seed, 5)).weights
    else:
        weights = WeightVector.uniform(schema.qid_names)

    os.makedirs(args.out, exist_ok=True)
    echo = config_echo(cfg) + [f"cli.k={k}", f"cli.m={m}", f"cli.delta={delta}",
                               f"cli.sites={sites}", f"cli.seed={seed}"]

    if sites > 1:
        parts = partition_indices(len(d), sites, derive_seed(seed, _PARTITION))
        shards = [d.subset(idx) for idx in parts]
    else:
        shards = [d]

    loss_rows = []
    mapping_sets = []
    failed = False
    outputs = []
    for s, shard in enumerate(shards):
        params = AnonymizationParams(k=k, m=m, delta=delta, weights=weights,
                                     seed=derive_seed(seed, _ANON, s))
        anon = anonymize(shard, params)
        violations = verify_k_km(anon, k, m)
        if violations:
            qdir = os.path.join(args.out, "quarantine")
            os.makedirs(qdir, exist_ok=True)
            qpath = os.path.join(qdir, f"site{s}.csv")
            save_generalized(anon, qpath)
            report = [
                {"kind": v.kind, "witness": "/".join(str(w) for w in v.witness),
                 "count": v.count}
                for v in violations
            ]
            _write_rows(os.path.join(qdir, f"site{s}_violations.csv"),
                        ["kind", "witness", "count"], report, echo)
            print(f"[anonymize] site {s}: VERIFICATION FAILED "
                  f"({len(violations)} violations) -> quarantined", file=sys.stderr)
            failed = True
            continue
        name = f"site{s}_anonymized.csv"
        save_generalized(anon, os.path.join(args.out, name))
        outputs.append(name)
        mapping_sets.append(extract_mappings(anon))
        loss_rows.append({
            "site": s,
            "records": len(shard),
            "clusters": len(anon.clusters),
            "ncp": repr(round(ncp_dataset(anon.records, weights, schema), 10)),
            "ul": repr(round(ul_dataset(anon.records, weights), 10)),
            "k": k, "m": m, "delta": delta,
        })
        print(f"[anonymize] site {s}: {len(shard)} records -> "
              f"{len(anon.clusters)} clusters, ncp={loss_rows[-1]['ncp']}")

    if loss_rows:
        _write_rows(os.path.join(args.out, "loss.csv"),
                    ["site", "records", "clusters", "ncp", "ul", "k", "m", "delta"],
                    loss_rows, echo)
        outputs.append("loss.csv")
    if mapping_sets and not failed:
        merged = merge_mappings(mapping_sets)
        save_mappings(merged, schema, os.path.join(args.out, "mappings.txt"))
        outputs.append("mappings.txt")
        print(f"[anonymize] pooled {len(merged)} equivalence classes -> mappings.txt")
    write_manifest(args.out, cfg, outputs)
    return 1 if failed else 0


def cmd_verify(args: argparse.Namespace) -> int:
    schema = load_schema(args.schema)
    published = load_generalized(args.data, schema)
    try:
        violations = verify_k_km(published, args.k, args.m, budget=args.budget)
    except BudgetExceededError as exc:
        print(f"[verify] ABORTED: {exc}", file=sys.stderr)
        return 2
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        rows = [
            {"kind": v.kind, "witness": "/".join(str(w) for w in v.witness), "count": v.count}
            for v in violations
        ]
        _write_rows(os.path.join(args.out, "verify_report.csv"),
                    ["kind", "witness", "count"], rows,
                    [f"data={args.data}", f"k={args.k}", f"m={args.m}"])
    if violations:
        print(f"[verify] FAIL: {len(violations)} violation(s); first: "
              f"{violations[0].describe()}")
        return 1
    print(f"[verify] PASS: ({args.k}, {args.k}^{args.m})-anonymity holds "
          f"for {len(published)} records")
    return 0


def cmd_train(args: argparse.Namespace) -> int:
    cfg = load_config(args.config)
    if args.rounds is not None:
        cfg = replace(cfg, train=replace(cfg.train, rounds=args.rounds))
    if args.model is not None:
        cfg = replace(cfg, train=replace(cfg.train, model=args.model))
    seed = cfg.seed if args.seed is None else args.seed
    mode = args.mode
    os.makedirs(args.out, exist_ok=True)

    data = load_or_generate(cfg, seed)
    train, test = split_train_test(data, cfg.train.test_fraction,
                                   derive_seed(seed, _SPLIT))
    print(f"[train] mode={mode} model={cfg.train.model} "
          f"train={len(train)} test={len(test)}")

    folds = cfg.train.folds
    rng = np.random.default_rng(derive_seed(seed, 7))
    perm = rng.permutation(len(train))
    chunks = np.array_split(perm, folds)
    fold_rows = []
    for i, chunk in enumerate(chunks):
        val = train.subset(sorted(int(x) for x in chunk))
        tr_idx = sorted(int(x) for c in (chunks[:i] + chunks[i + 1:]) for x in c)
        tr = train.subset(tr_idx)
        res = run_mode(mode, tr, val, cfg, cfg.train.model, derive_seed(seed, 11, i),
                       k=args.k, epsilon=args.epsilon)
        fold_rows.append({"fold": i, "f1": repr(round(res.f1, 10))})
        print(f"[train] fold {i}: F1={res.f1:.4f}")

    log: list = []
    res = run_mode(mode, train, test, cfg, cfg.train.model, seed,
                   k=args.k, epsilon=args.epsilon, log=log)
    print(f"[train] holdout F1={res.f1:.4f} unmapped={res.unmapped_rate:.4f}")

    echo = config_echo(cfg) + [f"cli.mode={mode}", f"cli.seed={seed}"]
    metrics_rows = fold_rows + [
        {"fold": "holdout", "f1": repr(round(res.f1, 10))},
    ]
    _write_rows(os.path.join(args.out, "metrics.csv"), ["fold", "f1"], metrics_rows, echo)
    log_rows = [
        {"round": st.round_index, "site": st.site, "loss": repr(round(st.loss, 10)),
         "grad_norm": repr(round(st.grad_norm, 10)), "train_f1": repr(round(st.train_f1, 10))}
        for st in log
    ]
    _write_rows(os.path.join(args.out, "training_log.csv"),
                ["round", "site", "loss", "grad_norm", "train_f1"], log_rows, echo)
    save_model(res.params, os.path.join(args.out, "model.txt"),
               model=cfg.train.model, encoding_digest=res.encoding.digest(),
               majority_label=res.majority_label)
    outputs = ["metrics.csv", "training_log.csv", "model.txt"]
    if res.mappings is not None:
        save_mappings(res.mappings, data.schema, os.path.join(args.out, "mappings.txt"))
        outputs.append("mappings.txt")
    write_manifest(args.out, cfg, outputs)
    return 0


def cmd_predict(args: argparse.Namespace) -> int:
    schema = load_schema(args.schema)
    mappings = load_mappings(args.mappings, schema)
    params, meta = load_model(args.model)
    samples = load_samples(args.samples, schema)
    weights = WeightVector.uniform(schema.qid_names)
    enc = mapping_encoding(mappings, schema)
    if enc.digest() != meta["encoding"]:
        raise SchemaMismatchError(
            "model was trained under a different encoding than these mappings produce"
        )
    idx = enc.column_index()
    majority = int(meta["majority"])

    rows = []
    unmapped = 0
    y_true, y_pred = [], []
    for rec in samples.records:
        row = {"id": rec.rid, "class": "", "prediction": majority, "mapped": 0}
        try:
            ec = select_mapping(rec, mappings, weights, schema)
            gen = transform(rec, ec, schema)
            x = encode_generalized(gen, enc, schema, idx)
            row["class"] = ec.class_id
            row["prediction"] = int(x @ params.weights + params.bias > 0.0)
            row["mapped"] = 1
        except (NoLegitimateMappingError, SchemaMismatchError):
            unmapped += 1
        rows.append(row)
        if rec.label in (0, 1):
            y_true.append(rec.label)
            y_pred.append(row["prediction"])

    os.makedirs(args.out, exist_ok=True)
    _write_rows(os.path.join(args.out, "predictions.csv"),
                ["id", "class", "prediction", "mapped"], rows,
                [f"model={meta['model']}", f"samples={args.samples}"])
    rate = unmapped / max(1, len(samples.records))
    print(f"[predict] {len(rows)} samples, unmapped rate {rate:.4f}")
    if y_true:
        f1 = f1_binary(np.array(y_true), np.array(y_pred))
        print(f"[predict] labeled subset F1={f1:.4f}")
    return 0


def cmd_compare(args: argparse.Namespace) -> int:
    cfg = load_config(args.config)
    if args.workers is not None:
        cfg = replace(cfg, compare=replace(cfg.compare, workers=args.workers))
    stats = run_compare(cfg, args.out)
    print(f"[compare] {stats['rows']} cells ({stats['failed']} failed) "
          f"-> {stats['summary']}")
    return 0 if stats["failed"] < stats["rows"] else 1


# ----------------------------------------------------------------------
# argument parsing
# ----------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="synfed",
        description="Anonymize relational-transactional data and train federated linear models",
    )
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic benchmark dataset")
    p.add_argument("--config", default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("anonymize", help="anonymize a dataset (optionally split across sites)")
    p.add_argument("--config", default=None)
    p.add_argument("--data", required=True)
    p.add_argument("--schema", required=True)
    p.add_argument("--k", type=int, default=None)
    p.add_argument("--m", type=int, default=None)
    p.add_argument("--delta", type=float, default=None)
    p.add_argument("--sites", type=int, default=1)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_anonymize)

    p = sub.add_parser("verify", help="check a published table for (k, k^m)-anonymity")
    p.add_argument("--data", required=True)
    p.add_argument("--schema", required=True)
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--m", type=int, required=True)
    p.add_argument("--budget", type=int, default=10_000_000)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("train", help="train a model under one of the four modes")
    p.add_argument("--config", default=None)
    p.add_argument("--mode", choices=MODES, required=True)
    p.add_argument("--model", choices=("perceptron", "svm", "logreg"), default=None)
    p.add_argument("--k", type=int, default=None, help="override anonymization k")
    p.add_argument("--epsilon", type=float, default=None, help="override DP epsilon")
    p.add_argument("--rounds", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="map raw samples through shared mappings and predict")
    p.add_argument("--model", required=True)
    p.add_argument("--mappings", required=True)
    p.add_argument("--schema", required=True)
    p.add_argument("--samples", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("compare", help="run the four-mode comparison grid")
    p.add_argument("--config", default=None)
    p.add_argument("--workers", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_compare)

    return ap


def main(argv: list | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except SynfedError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
