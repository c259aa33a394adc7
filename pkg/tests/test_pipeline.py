from __future__ import annotations

import hashlib
import json
import os

import numpy as np
import pytest

from synfed.errors import ConfigError
from synfed.flsim import FLConfig, train_centralized
from synfed.mapping import leaf_encoding
from synfed.pipeline import (
    CompareSection,
    DataSection,
    DPSection,
    ExperimentConfig,
    TrainSection,
    compare_cells,
    config_echo,
    derive_seed,
    encode_leafwise,
    load_config,
    load_or_generate,
    read_result_csv,
    run_compare,
    run_mode,
    split_train_test,
    write_manifest,
)
from synfed.synth import SynthConfig, synth_generate


def _small_cfg(**train_overrides):
    return ExperimentConfig(
        synth=SynthConfig(n_records=150),
        train=TrainSection(sites=3, rounds=5, **train_overrides),
        dp=DPSection(epsilons=(0.5,)),
        compare=CompareSection(models=("logreg",), seeds=(0,), ks=(3,), workers=1),
    )


@pytest.fixture(scope="module")
def small_split():
    cfg = _small_cfg()
    data = load_or_generate(cfg, 0)
    train, test = split_train_test(data, cfg.train.test_fraction, derive_seed(0, 1))
    return cfg, train, test


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------


def test_default_config_loads_without_a_file():
    cfg = load_config(None)
    assert cfg.train.sites == 10
    assert cfg.anonymize.k == 10
    assert cfg.dp.epsilons == (0.01, 0.1, 0.5, 0.9)


def test_config_file_round_trip(tmp_path):
    path = tmp_path / "exp.yaml"
    path.write_text(
        "seed: 3\n"
        "synth:\n  n_records: 99\n  items: {count: 12, group_size: 4}\n"
        "train:\n  model: svm\n  sites: 4\n"
        "compare:\n  ks: [2, 4]\n  seeds: [1]\n",
        encoding="utf-8",
    )
    cfg = load_config(str(path))
    assert cfg.seed == 3
    assert cfg.synth.n_records == 99
    assert cfg.synth.items.count == 12
    assert cfg.train.model == "svm" and cfg.train.sites == 4
    assert cfg.compare.ks == (2, 4) and cfg.compare.seeds == (1,)
    # untouched sections keep their defaults
    assert cfg.anonymize.k == 10


def test_config_rejects_unknown_keys(tmp_path):
    path = tmp_path / "bad.yaml"
    path.write_text("train:\n  epochs: 3\n", encoding="utf-8")
    with pytest.raises(ConfigError):
        load_config(str(path))
    path.write_text("training: {}\n", encoding="utf-8")
    with pytest.raises(ConfigError):
        load_config(str(path))


def test_config_echo_is_sorted_and_complete():
    lines = config_echo(ExperimentConfig())
    assert lines == sorted(lines)
    assert "train.rounds=40" in lines
    assert "dp.epsilons=0.01,0.1,0.5,0.9" in lines
    assert any(line.startswith("synth.numeric[0].") for line in lines)


def test_section_validation():
    with pytest.raises(ConfigError):
        TrainSection(sites=0)
    with pytest.raises(ConfigError):
        DPSection(epsilons=())
    with pytest.raises(ConfigError):
        CompareSection(workers=0)


def test_dataset_path_requires_schema():
    cfg = ExperimentConfig(data=DataSection(dataset="x.csv", schema=None))
    with pytest.raises(ConfigError):
        load_or_generate(cfg, 0)


def test_derive_seed_is_stable_and_keyed():
    assert derive_seed(7, 1) == derive_seed(7, 1)
    assert derive_seed(7, 1) != derive_seed(7, 2)
    assert derive_seed(7, 1, 0) != derive_seed(7, 1, 1)
    assert isinstance(derive_seed(0, 1), int)


# ---------------------------------------------------------------------------
# mode runners
# ---------------------------------------------------------------------------


def test_central_mode_is_plain_centralized_training(small_split):
    cfg, train, test = small_split
    res = run_mode("central", train, test, cfg, "logreg", 0)
    enc = leaf_encoding(train.schema)
    manual = train_centralized(
        encode_leafwise(train, enc),
        FLConfig(model="logreg", rounds=cfg.train.rounds, local_epochs=1,
                 learning_rate=cfg.train.learning_rate, l2=cfg.train.l2, seed=0),
    )
    assert np.array_equal(res.params.weights, manual.weights)
    assert res.params.bias == manual.bias
    assert 0.0 <= res.f1 <= 1.0


def test_federated_mode_logs_sites_times_rounds(small_split):
    cfg, train, test = small_split
    log: list = []
    run_mode("federated", train, test, cfg, "logreg", 0, log=log)
    assert len(log) == cfg.train.sites * cfg.train.rounds
    assert {s.site for s in log} == set(range(cfg.train.sites))


def test_dp_mode_uses_the_requested_epsilon(small_split):
    cfg, train, test = small_split
    a = run_mode("federated-dp", train, test, cfg, "logreg", 0, epsilon=0.5)
    b = run_mode("federated-dp", train, test, cfg, "logreg", 0, epsilon=0.5)
    c = run_mode("federated-dp", train, test, cfg, "logreg", 0, epsilon=0.01)
    assert np.array_equal(a.params.weights, b.params.weights)
    assert not np.array_equal(a.params.weights, c.params.weights)


def test_syntactic_mode_reports_anonymization_costs(small_split):
    cfg, train, test = small_split
    res = run_mode("federated-syntactic", train, test, cfg, "logreg", 0, k=3)
    assert res.mappings is not None and len(res.mappings) >= 1
    assert np.isfinite(res.ncp) and 0.0 < res.ncp <= 1.0
    assert np.isfinite(res.ul) and 0.0 < res.ul <= 1.0
    assert 0.0 <= res.unmapped_rate <= 1.0
    assert res.encoding.dim == len({c for c in res.encoding.columns})


def test_unknown_mode_is_rejected(small_split):
    cfg, train, test = small_split
    with pytest.raises(ConfigError):
        run_mode("quantum", train, test, cfg, "logreg", 0)


# ---------------------------------------------------------------------------
# compare grid
# ---------------------------------------------------------------------------


def test_compare_cells_enumerate_the_grid():
    cfg = _small_cfg()
    cells = compare_cells(cfg)
    # central + federated + one k + one epsilon, for one model and one seed
    assert len(cells) == 4
    assert {c.mode for c in cells} == {
        "central", "federated", "federated-syntactic", "federated-dp"
    }


def test_run_compare_writes_the_artifact_set(tmp_path):
    cfg = _small_cfg()
    out = run_compare(cfg, str(tmp_path / "results"))
    assert out["rows"] == 4
    assert out["failed"] == 0
    for name in ("summary.csv", "aggregate.csv", "f1_vs_k.svg", "f1_vs_epsilon.svg",
                 "manifest.json"):
        assert os.path.exists(tmp_path / "results" / name)

    rows = read_result_csv(out["summary"])
    assert len(rows) == 4
    assert all(row["error"] == "" for row in rows)
    syn = next(r for r in rows if r["mode"] == "federated-syntactic")
    assert syn["k"] == "3" and float(syn["ncp"]) > 0.0

    agg = read_result_csv(out["aggregate"])
    assert len(agg) == 4
    assert all(a["n_seeds"] == "1" for a in agg)


def test_run_compare_is_byte_deterministic(tmp_path):
    cfg = _small_cfg()
    a = run_compare(cfg, str(tmp_path / "a"))
    b = run_compare(cfg, str(tmp_path / "b"))
    for name in ("summary.csv", "aggregate.csv"):
        pa = (tmp_path / "a" / name).read_bytes()
        pb = (tmp_path / "b" / name).read_bytes()
        assert pa == pb, name
    assert a["rows"] == b["rows"]


def test_manifest_hashes_match_the_files(tmp_path):
    target = tmp_path / "out"
    os.makedirs(target)
    (target / "hello.csv").write_text("x\n1\n", encoding="utf-8")
    write_manifest(str(target), ExperimentConfig(), ["hello.csv", "missing.csv"])
    doc = json.loads((target / "manifest.json").read_text(encoding="utf-8"))
    assert [e["file"] for e in doc["outputs"]] == ["hello.csv"]
    entry = doc["outputs"][0]
    digest = hashlib.sha256((target / "hello.csv").read_bytes()).hexdigest()
    assert entry["sha256"] == digest and entry["bytes"] == 4
    assert "config" in doc and doc["config"] == config_echo(ExperimentConfig())


def test_read_result_csv_skips_comment_lines(tmp_path):
    path = tmp_path / "r.csv"
    path.write_text("# config=1\nmode,f1\ncentral,0.5\n", encoding="utf-8")
    rows = read_result_csv(str(path))
    assert rows == [{"mode": "central", "f1": "0.5"}]


def test_split_is_disjoint_and_seeded(small_split):
    _, train, test = small_split
    train_ids = {r.rid for r in train.records}
    test_ids = {r.rid for r in test.records}
    assert not (train_ids & test_ids)
    assert len(train_ids) + len(test_ids) == 150
    data = synth_generate(SynthConfig(n_records=150), 0)
    again_train, again_test = split_train_test(data, 0.3, derive_seed(0, 1))
    assert {r.rid for r in again_train.records} == train_ids
    assert {r.rid for r in again_test.records} == test_ids
