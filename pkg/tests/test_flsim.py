from __future__ import annotations

import numpy as np
import pytest

from synfed.errors import ConfigError, ContractViolation, DivergenceError, SchemaMismatchError
from synfed.flsim import (
    CVResult,
    DPConfig,
    EncodedDataset,
    FLConfig,
    ModelParams,
    aggregate,
    cross_validate,
    evaluate_f1,
    load_model,
    loss_and_grad,
    partition,
    partition_indices,
    predict,
    save_model,
    train_centralized,
    train_dp,
    train_federated,
)
from synfed.mapping import leaf_encoding
from synfed.pipeline import derive_seed, encode_leafwise, split_train_test
from synfed.synth import SynthConfig, synth_generate

from oracles import finite_diff_grad


def _blobs(n=60, seed=0, gap=2.0):
    """Linearly separable two-class point cloud."""
    rng = np.random.default_rng(seed)
    half = n // 2
    X = np.vstack([
        rng.normal(gap, 0.5, size=(half, 2)),
        rng.normal(-gap, 0.5, size=(n - half, 2)),
    ])
    y = np.concatenate([np.ones(half, dtype=np.int64), np.zeros(n - half, dtype=np.int64)])
    return EncodedDataset(X, y, "blobs")


def _encoded_fixture(n, seed, noise=None):
    cfg = SynthConfig(n_records=n) if noise is None else SynthConfig(n_records=n, noise=noise)
    data = synth_generate(cfg, seed)
    train, test = split_train_test(data, 0.3, derive_seed(seed, 10))
    enc = leaf_encoding(train.schema)
    return encode_leafwise(train, enc), encode_leafwise(test, enc)


# ---------------------------------------------------------------------------
# dataset container and partitioning
# ---------------------------------------------------------------------------


def test_encoded_dataset_rejects_bad_labels():
    with pytest.raises(ContractViolation):
        EncodedDataset(np.zeros((3, 2)), np.array([0, 1, 2]))
    with pytest.raises(ContractViolation):
        EncodedDataset(np.zeros((3, 2)), np.array([0, 1]))


def test_partition_single_site_is_identity():
    d = _blobs(17)
    parts = partition(d, 1, seed=5)
    assert len(parts) == 1
    assert np.array_equal(parts[0].X, d.X)
    assert np.array_equal(parts[0].y, d.y)


def test_partition_sizes_differ_by_at_most_one():
    idx = partition_indices(103, 10, seed=1)
    sizes = [len(i) for i in idx]
    assert sum(sizes) == 103
    assert max(sizes) - min(sizes) <= 1
    together = np.sort(np.concatenate(idx))
    assert np.array_equal(together, np.arange(103))


def test_partition_more_sites_than_records_fails():
    with pytest.raises(ConfigError):
        partition_indices(3, 4, seed=0)


def test_partition_is_seeded():
    a = partition_indices(50, 5, seed=7)
    b = partition_indices(50, 5, seed=7)
    c = partition_indices(50, 5, seed=8)
    assert all(np.array_equal(x, y) for x, y in zip(a, b))
    assert any(not np.array_equal(x, y) for x, y in zip(a, c))


# ---------------------------------------------------------------------------
# gradients
# ---------------------------------------------------------------------------


@pytest.mark.parametrize("model", ["logreg", "svm"])
def test_gradients_match_finite_differences(model):
    rng = np.random.default_rng(3)
    X = rng.normal(size=(5, 4))
    y = np.array([0, 1, 1, 0, 1])
    w = rng.normal(size=4) * 0.3
    b = 0.17
    l2 = 0.01

    def f(w_, b_):
        return loss_and_grad(model, X, y, w_, b_, l2)[0]

    loss, gw, gb = loss_and_grad(model, X, y, w, b, l2)
    ref_gw, ref_gb = finite_diff_grad(f, w, b)
    assert np.max(np.abs(gw - ref_gw)) < 1e-5
    assert abs(gb - ref_gb) < 1e-5
    assert np.isfinite(loss)


def test_unknown_model_has_no_gradient():
    with pytest.raises(ContractViolation):
        loss_and_grad("tree", np.zeros((2, 2)), np.array([0, 1]), np.zeros(2), 0.0, 0.0)


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------


def test_zero_local_epochs_leave_the_global_model_unchanged():
    d = _blobs(40)
    cfg = FLConfig(model="logreg", rounds=4, local_epochs=0, learning_rate=1.0, seed=0)
    params = train_federated(partition(d, 4, seed=0), cfg)
    assert np.array_equal(params.weights, np.zeros(2))
    assert params.bias == 0.0


def test_perceptron_separates_separable_data():
    d = _blobs(60, seed=1)
    cfg = FLConfig(model="perceptron", rounds=10, local_epochs=5, learning_rate=1.0, seed=0)
    params = train_federated([d], cfg)
    signed = 2.0 * d.y - 1.0
    assert np.all(signed * (d.X @ params.weights + params.bias) > 0.0)
    assert evaluate_f1(params, d) == 1.0


def test_one_site_federation_equals_centralized():
    d = _blobs(50, seed=2)
    cfg = FLConfig(model="logreg", rounds=30, learning_rate=0.5, l2=1e-3, seed=0)
    fed = train_federated([d], cfg)
    cen = train_centralized(d, cfg)
    assert np.array_equal(fed.weights, cen.weights)
    assert fed.bias == cen.bias


def test_full_batch_federation_matches_centralized_descent():
    # shard-size weighted averaging of one full-batch step per site reproduces
    # the pooled gradient step, so the trajectories agree to round-off
    etr, ete = _encoded_fixture(400, seed=1)
    cfg = FLConfig(model="logreg", rounds=40, learning_rate=2.0, l2=0.0, seed=0)
    shards = [etr.subset(i) for i in partition_indices(len(etr), 10, seed=3)]
    fed = train_federated(shards, cfg)
    cen = train_centralized(etr, cfg)
    assert np.allclose(fed.weights, cen.weights, atol=1e-9)
    assert abs(fed.bias - cen.bias) < 1e-9
    assert abs(evaluate_f1(fed, ete) - evaluate_f1(cen, ete)) <= 0.05


def test_training_is_deterministic_under_seed():
    d = _blobs(80, seed=4)
    shards = partition(d, 4, seed=1)
    cfg = FLConfig(model="svm", rounds=15, learning_rate=0.3, seed=9)
    a = train_federated(shards, cfg)
    b = train_federated(shards, cfg)
    assert np.array_equal(a.weights, b.weights) and a.bias == b.bias


def test_centralized_reaches_high_f1_on_noise_free_fixture():
    etr, ete = _encoded_fixture(5000, seed=0, noise=0.0)
    cfg = FLConfig(model="logreg", rounds=1500, learning_rate=4.0, l2=0.0, seed=0)
    f1 = evaluate_f1(train_centralized(etr, cfg), ete)
    assert f1 == pytest.approx(0.9606003752345216, abs=1e-12)
    assert f1 >= 0.95


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_is_reported_with_its_round():
    d = _blobs(20, seed=5)
    cfg = FLConfig(model="logreg", rounds=200, learning_rate=10.0, l2=100.0, seed=0)
    with pytest.raises(DivergenceError) as err:
        train_federated([d], cfg)
    assert err.value.site == 0
    assert err.value.round_index is not None


def test_shards_must_share_an_encoding():
    a = _blobs(20, seed=0)
    b = EncodedDataset(a.X.copy(), a.y.copy(), "other-digest")
    cfg = FLConfig(model="logreg", rounds=1, seed=0)
    with pytest.raises(SchemaMismatchError):
        train_federated([a, b], cfg)


def test_round_log_has_one_entry_per_site_per_round():
    d = _blobs(60, seed=6)
    shards = partition(d, 3, seed=0)
    log: list = []
    cfg = FLConfig(model="logreg", rounds=7, learning_rate=0.5, seed=0)
    train_federated(shards, cfg, log=log)
    assert len(log) == 7 * 3
    assert [(s.round_index, s.site) for s in log[:4]] == [(0, 0), (0, 1), (0, 2), (1, 0)]


# ---------------------------------------------------------------------------
# aggregation
# ---------------------------------------------------------------------------


def test_aggregate_single_site_is_identity():
    p = ModelParams(np.array([1.0, -2.0]), 0.5)
    out = aggregate([(p, 7)])
    assert np.array_equal(out.weights, p.weights) and out.bias == p.bias


def test_aggregate_identical_updates_is_that_update():
    p = ModelParams(np.array([0.25, 4.0]), -1.0)
    out = aggregate([(p.copy(), 3), (p.copy(), 5)])
    assert np.allclose(out.weights, p.weights) and out.bias == pytest.approx(p.bias)


def test_aggregate_weights_by_shard_size():
    a = ModelParams(np.array([0.0]), 0.0)
    b = ModelParams(np.array([4.0]), 4.0)
    out = aggregate([(a, 1), (b, 3)])
    assert out.weights[0] == pytest.approx(3.0)
    assert out.bias == pytest.approx(3.0)


def test_aggregate_rejects_mismatched_lengths():
    with pytest.raises(ContractViolation):
        aggregate([(ModelParams(np.zeros(2), 0.0), 1), (ModelParams(np.zeros(3), 0.0), 1)])
    with pytest.raises(ContractViolation):
        aggregate([])


# ---------------------------------------------------------------------------
# differential privacy
# ---------------------------------------------------------------------------


def test_huge_epsilon_with_loose_clip_matches_plain_training():
    etr, ete = _encoded_fixture(1000, seed=0)
    shards = [etr.subset(i) for i in partition_indices(len(etr), 10, derive_seed(0, 11))]
    cfg = FLConfig(model="logreg", rounds=40, learning_rate=2.0, l2=0.0, seed=derive_seed(0, 12))
    plain = train_federated(shards, cfg)
    private = train_dp(shards, cfg, DPConfig(epsilon=1e6, clip_norm=50.0))
    assert abs(evaluate_f1(plain, ete) - evaluate_f1(private, ete)) <= 0.02
    assert np.max(np.abs(plain.weights - private.weights)) < 0.01


def test_utility_grows_with_epsilon_on_the_benchmark_fixture():
    means = {}
    for eps in (0.01, 0.9):
        vals = []
        for seed in range(5):
            etr, ete = _encoded_fixture(5000, seed)
            shards = [
                etr.subset(i)
                for i in partition_indices(len(etr), 10, derive_seed(seed, 11))
            ]
            cfg = FLConfig(model="logreg", rounds=40, learning_rate=2.0, l2=0.0,
                           seed=derive_seed(seed, 12))
            params = train_dp(shards, cfg, DPConfig(epsilon=eps, clip_norm=1.0))
            vals.append(evaluate_f1(params, ete))
        means[eps] = float(np.mean(vals))
    assert means[0.01] == pytest.approx(0.39674234961942867, abs=1e-12)
    assert means[0.9] == pytest.approx(0.48029390868898575, abs=1e-12)
    assert means[0.9] >= means[0.01]


def test_noise_trajectory_is_reproducible():
    etr, _ = _encoded_fixture(300, seed=3)
    shards = [etr.subset(i) for i in partition_indices(len(etr), 5, seed=0)]
    cfg = FLConfig(model="logreg", rounds=10, learning_rate=1.0, seed=42)
    dp = DPConfig(epsilon=0.5, clip_norm=1.0)
    a = train_dp(shards, cfg, dp)
    b = train_dp(shards, cfg, dp)
    c = train_dp(shards, FLConfig(model="logreg", rounds=10, learning_rate=1.0, seed=43), dp)
    assert np.array_equal(a.weights, b.weights) and a.bias == b.bias
    assert not np.array_equal(a.weights, c.weights)


def test_dp_config_validation():
    with pytest.raises(ConfigError):
        DPConfig(epsilon=0.0)
    with pytest.raises(ConfigError):
        DPConfig(epsilon=0.1, clip_norm=-1.0)
    with pytest.raises(ConfigError):
        train_dp([_blobs(10)], FLConfig(model="logreg", rounds=1, seed=0), None)


# ---------------------------------------------------------------------------
# evaluation and cross-validation
# ---------------------------------------------------------------------------


def test_predict_and_f1_on_a_perfect_classifier():
    d = _blobs(30, seed=7)
    params = ModelParams(np.array([1.0, 1.0]), 0.0)
    assert np.array_equal(predict(params, d.X), d.y)
    assert evaluate_f1(params, d) == 1.0


def test_cross_validate_folds_partition_the_training_split():
    d = _blobs(101, seed=8)
    seen_val_sizes = []

    def probe(tr, cfg):
        seen_val_sizes.append(len(tr))
        return train_centralized(tr, cfg)

    cfg = FLConfig(model="logreg", rounds=5, learning_rate=0.5, seed=0)
    res = cross_validate(d, cfg, folds=5, test_fraction=0.3, trainer=probe)
    n_train = 101 - round(0.3 * 101)
    # five fold trainings plus the final fit on the whole training split
    assert len(seen_val_sizes) == 6 and seen_val_sizes[-1] == n_train
    val_sizes = [n_train - s for s in seen_val_sizes[:5]]
    assert sum(val_sizes) == n_train
    assert max(val_sizes) - min(val_sizes) <= 1
    assert len(res.fold_f1) == 5


def test_cross_validate_is_deterministic():
    d = _blobs(90, seed=9)
    cfg = FLConfig(model="logreg", rounds=10, learning_rate=0.5, seed=4)
    a = cross_validate(d, cfg, folds=4)
    b = cross_validate(d, cfg, folds=4)
    assert a.fold_f1 == b.fold_f1
    assert a.holdout_f1 == b.holdout_f1


def test_cross_validate_mean_tracks_holdout_on_the_fixture():
    data = synth_generate(SynthConfig(n_records=1000), 2)
    enc = leaf_encoding(data.schema)
    full = encode_leafwise(data, enc)
    cfg = FLConfig(model="logreg", rounds=600, learning_rate=2.0, l2=0.0, seed=2)
    res = cross_validate(full, cfg, folds=5, test_fraction=0.3)
    assert res.holdout_f1 == pytest.approx(0.8796296296296297, abs=1e-12)
    assert abs(float(np.mean(res.fold_f1)) - res.holdout_f1) <= 0.1


def test_cross_validate_warns_on_single_class_folds():
    X = np.random.default_rng(0).normal(size=(40, 3))
    d = EncodedDataset(X, np.ones(40, dtype=np.int64), "const")
    cfg = FLConfig(model="logreg", rounds=5, learning_rate=0.5, seed=0)
    res = cross_validate(d, cfg, folds=4)
    assert res.warnings
    assert res.majority_label == 1


def test_cross_validate_validates_arguments():
    d = _blobs(30)
    cfg = FLConfig(model="logreg", rounds=1, seed=0)
    with pytest.raises(ConfigError):
        cross_validate(d, cfg, folds=1)
    with pytest.raises(ConfigError):
        cross_validate(d, cfg, folds=2, test_fraction=1.5)


# ---------------------------------------------------------------------------
# model files
# ---------------------------------------------------------------------------


def test_model_file_round_trip(tmp_path):
    params = ModelParams(np.array([0.1, -2.5, 1e-17, 3.0]), -0.75)
    path = str(tmp_path / "model.txt")
    save_model(params, path, model="svm", encoding_digest="abc123", majority_label=1)
    back, meta = load_model(path)
    assert np.array_equal(back.weights, params.weights)
    assert back.bias == params.bias
    assert meta["model"] == "svm"
    assert meta["encoding"] == "abc123"
    assert meta["majority"] == 1
