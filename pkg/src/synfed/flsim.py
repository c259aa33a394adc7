"""Federated averaging over linear classifiers, with an optional DP variant.

Sites hold one-hot encoded shards and never exchange records: each round every
site refines the global parameters locally (full-batch subgradient steps for
the SVM and logistic model, classic mistake-driven sweeps for the perceptron)
and the server averages the results weighted by shard size.

The differentially private variant clips each per-sample gradient to
``clip_norm`` and adds Laplace noise to the site average before the step; the
privacy budget ``epsilon`` is split uniformly across rounds and local epochs.

Parameters always start at zero, so with one local epoch and full batches a
federated round equals one centralized gradient step exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ContractViolation, DivergenceError, SchemaMismatchError

MODEL_KINDS = ("perceptron", "svm", "logreg")


@dataclass
class EncodedDataset:
    """Feature matrix + binary labels, tagged with the encoding digest."""

    X: np.ndarray
    y: np.ndarray  # values in {0, 1}
    encoding_digest: str = ""

    def __post_init__(self) -> None:
        if self.X.ndim != 2 or self.y.ndim != 1 or len(self.X) != len(self.y):
            raise ContractViolation("X must be (n, d) and y must be (n,)")
        bad = set(np.unique(self.y)) - {0, 1}
        if bad:
            raise ContractViolation(f"labels must be 0/1, found {sorted(bad)}")

    def __len__(self) -> int:
        return len(self.y)

    def subset(self, indices) -> "EncodedDataset":
        return EncodedDataset(self.X[indices], self.y[indices], self.encoding_digest)


@dataclass(frozen=True)
class FLConfig:
    model: str = "logreg"
    rounds: int = 40
    local_epochs: int = 1
    learning_rate: float = 0.5
    l2: float = 1e-4
    seed: int = 0

    def __post_init__(self) -> None:
        if self.model not in MODEL_KINDS:
            raise ConfigError(f"unknown model {self.model!r}; pick one of {MODEL_KINDS}")
        if self.rounds < 1:
            raise ConfigError("rounds must be >= 1")
        if self.local_epochs < 0:
            raise ConfigError("local_epochs must be >= 0")
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be positive")
        if self.l2 < 0:
            raise ConfigError("l2 must be >= 0")


@dataclass(frozen=True)
class DPConfig:
    epsilon: float
    clip_norm: float = 1.0

    def __post_init__(self) -> None:
        if self.epsilon <= 0:
            raise ConfigError(f"epsilon must be positive, got {self.epsilon}")
        if self.clip_norm <= 0:
            raise ConfigError(f"clip_norm must be positive, got {self.clip_norm}")


@dataclass
class ModelParams:
    weights: np.ndarray
    bias: float

    def copy(self) -> "ModelParams":
        return ModelParams(self.weights.copy(), self.bias)

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.weights)) and np.isfinite(self.bias))


@dataclass
class RoundStats:
    round_index: int
    site: int
    loss: float
    grad_norm: float
    train_f1: float


# ----------------------------------------------------------------------
# partitioning
# ----------------------------------------------------------------------


def partition_indices(n: int, num_sites: int, seed: int) -> list:
    """Shuffled near-equal split; shard sizes differ by at most one."""
    if num_sites < 1:
        raise ConfigError(f"num_sites must be >= 1, got {num_sites}")
    if n < num_sites:
        raise ConfigError(f"cannot spread {n} records over {num_sites} sites")
    rng = np.random.default_rng(seed)
    perm = rng.permutation(n)
    return [np.sort(part) for part in np.array_split(perm, num_sites)]


def partition(d, num_sites: int, seed: int) -> list:
    """Split a dataset (RTDataset or EncodedDataset) across sites."""
    return [d.subset(idx) for idx in partition_indices(len(d), num_sites, seed)]


# ----------------------------------------------------------------------
# models
# ----------------------------------------------------------------------


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _signed(y01: np.ndarray) -> np.ndarray:
    return 2.0 * y01.astype(np.float64) - 1.0


def loss_and_grad(model: str, X: np.ndarray, y: np.ndarray, w: np.ndarray, b: float,
                  l2: float) -> tuple:
    """Full-batch loss and (sub)gradient; labels in {0, 1}.

    logreg: mean log(1 + exp(-s z)) + l2/2 ||w||^2.
    svm:    mean max(0, 1 - s z)   + l2/2 ||w||^2 (subgradient 0 at the kink).
    """
    ys = _signed(y)
    z = X @ w + b
    if model == "logreg":
        loss = float(np.mean(np.logaddexp(0.0, -ys * z)))
        coef = -ys * _sigmoid(-ys * z)
    elif model == "svm":
        margin = 1.0 - ys * z
        loss = float(np.mean(np.maximum(0.0, margin)))
        coef = -ys * (margin > 0.0)
    else:
        raise ContractViolation(f"no gradient for model {model!r}")
    gw = (X * coef[:, None]).mean(axis=0) + l2 * w
    gb = float(coef.mean())
    loss += 0.5 * l2 * float(w @ w)
    return loss, gw, gb


def _per_sample_grads(model: str, X: np.ndarray, y: np.ndarray, w: np.ndarray,
                      b: float) -> np.ndarray:
    """(n, d+1) matrix of per-sample gradients, bias last, no l2 term."""
    ys = _signed(y)
    z = X @ w + b
    if model == "logreg":
        coef = -ys * _sigmoid(-ys * z)
    elif model == "svm":
        coef = -ys * ((1.0 - ys * z) > 0.0)
    else:
        raise ContractViolation(f"no per-sample gradient for model {model!r}")
    G = np.empty((len(y), len(w) + 1), dtype=np.float64)
    G[:, :-1] = X * coef[:, None]
    G[:, -1] = coef
    return G


def laplace_noise(rng: np.random.Generator, scale: float, size: int) -> np.ndarray:
    return rng.laplace(0.0, scale, size)


def _site_rng(seed: int, site: int, round_index: int, epoch: int = 0) -> np.random.Generator:
    return np.random.default_rng(
        np.random.SeedSequence(entropy=seed, spawn_key=(site, round_index, epoch))
    )


def _local_train(shard: EncodedDataset, params: ModelParams, cfg: FLConfig,
                 dp: DPConfig | None, site: int, round_index: int) -> tuple:
    """One site's refinement for one round; returns (new params, entry stats)."""
    w = params.weights.copy()
    b = params.bias
    X, y = shard.X, shard.y
    n = len(y)

    if cfg.model == "perceptron":
        ys = _signed(y)
        entry_mistakes = float(np.mean(ys * (X @ w + b) <= 0.0))
        gnorm = entry_mistakes  # no gradient; report the mistake rate
        entry_loss = entry_mistakes
        for epoch in range(cfg.local_epochs):
            rng = _site_rng(cfg.seed, site, round_index, epoch)
            for i in rng.permutation(n):
                if ys[i] * (X[i] @ w + b) <= 0.0:
                    w += cfg.learning_rate * ys[i] * X[i]
                    b += cfg.learning_rate * ys[i]
    else:
        entry_loss, gw0, gb0 = loss_and_grad(cfg.model, X, y, w, b, cfg.l2)
        gnorm = float(np.sqrt(gw0 @ gw0 + gb0 * gb0))
        for epoch in range(cfg.local_epochs):
            if dp is None:
                _, gw, gb = loss_and_grad(cfg.model, X, y, w, b, cfg.l2)
            else:
                G = _per_sample_grads(cfg.model, X, y, w, b)
                norms = np.sqrt((G * G).sum(axis=1))
                scale = np.minimum(1.0, dp.clip_norm / np.maximum(norms, 1e-12))
                avg = (G * scale[:, None]).mean(axis=0)
                eps_step = dp.epsilon / (cfg.rounds * cfg.local_epochs)
                noise_scale = 2.0 * dp.clip_norm / (n * eps_step)
                rng = _site_rng(cfg.seed, site, round_index, epoch)
                noisy = avg + laplace_noise(rng, noise_scale, len(avg))
                gw = noisy[:-1] + cfg.l2 * w
                gb = float(noisy[-1])
            w -= cfg.learning_rate * gw
            b -= cfg.learning_rate * gb

    out = ModelParams(w, b)
    if not out.is_finite():
        raise DivergenceError(
            f"non-finite parameters at site {site}, round {round_index}",
            site=site, round_index=round_index,
        )
    pred = predict(params, X)
    from .metrics import f1_binary

    return out, RoundStats(round_index, site, float(entry_loss), gnorm, f1_binary(y, pred))


def aggregate(updates: list) -> ModelParams:
    """Shard-size weighted average of (ModelParams, n_records) pairs."""
    if not updates:
        raise ContractViolation("nothing to aggregate")
    dim = len(updates[0][0].weights)
    total = sum(n for _, n in updates)
    if total <= 0:
        raise ContractViolation("aggregate weights sum to zero")
    w = np.zeros(dim)
    b = 0.0
    for params, n in updates:
        if len(params.weights) != dim:
            raise ContractViolation("parameter dimension mismatch across sites")
        w += (n / total) * params.weights
        b += (n / total) * params.bias
    return ModelParams(w, b)


def train_federated(shards: list, cfg: FLConfig, dp: DPConfig | None = None,
                    log: list | None = None) -> ModelParams:
    """FedAvg from zero-initialized parameters over the given shards."""
    if not shards:
        raise ContractViolation("no shards to train on")
    dim = shards[0].X.shape[1]
    digest = shards[0].encoding_digest
    for s in shards:
        if s.X.shape[1] != dim:
            raise ContractViolation("shards disagree on feature dimension")
        if s.encoding_digest != digest:
            raise SchemaMismatchError("shards were encoded under different schemas")
        if len(s) == 0:
            raise ContractViolation("empty shard")

    params = ModelParams(np.zeros(dim), 0.0)
    for r in range(cfg.rounds):
        updates = []
        for site, shard in enumerate(shards):
            new_params, stats = _local_train(shard, params, cfg, dp, site, r)
            updates.append((new_params, len(shard)))
            if log is not None:
                log.append(stats)
        params = aggregate(updates)
    return params


def train_centralized(d: EncodedDataset, cfg: FLConfig) -> ModelParams:
    """Pooled-data training; identical to a one-site federation by construction."""
    return train_federated([d], cfg)


def train_dp(shards: list, cfg: FLConfig, dp: DPConfig, log: list | None = None) -> ModelParams:
    if dp is None:
        raise ConfigError("train_dp needs a DPConfig")
    return train_federated(shards, cfg, dp=dp, log=log)


# ----------------------------------------------------------------------
# evaluation
# ----------------------------------------------------------------------


def predict(params: ModelParams, X: np.ndarray) -> np.ndarray:
    return (X @ params.weights + params.bias > 0.0).astype(np.int64)


def evaluate_f1(params: ModelParams, d: EncodedDataset) -> float:
    from .metrics import f1_binary

    return f1_binary(d.y, predict(params, d.X))


@dataclass
class CVResult:
    fold_f1: list
    holdout_f1: float
    params: ModelParams
    majority_label: int = 0
    warnings: list = field(default_factory=list)


def cross_validate(d: EncodedDataset, cfg: FLConfig, folds: int = 5,
                   test_fraction: float = 0.3, trainer=None) -> CVResult:
    """Seeded holdout split plus k-fold CV on the training part.

    ``trainer(sub_dataset, cfg) -> ModelParams`` defaults to centralized
    training; pass a closure to evaluate a federated or DP protocol instead.
    """
    if folds < 2:
        raise ConfigError(f"folds must be >= 2, got {folds}")
    if not (0.0 < test_fraction < 1.0):
        raise ConfigError("test_fraction must lie in (0, 1)")
    if trainer is None:
        trainer = train_centralized

    rng = np.random.default_rng(cfg.seed)
    perm = rng.permutation(len(d))
    n_test = max(1, int(round(test_fraction * len(d))))
    test_idx, train_idx = perm[:n_test], perm[n_test:]
    if len(train_idx) < folds:
        raise ConfigError("not enough records for the requested folds")

    warnings: list = []
    chunks = np.array_split(train_idx, folds)
    fold_f1 = []
    for i, chunk in enumerate(chunks):
        val = d.subset(np.sort(chunk))
        tr_idx = np.sort(np.concatenate([c for j, c in enumerate(chunks) if j != i]))
        tr = d.subset(tr_idx)
        if len(set(tr.y.tolist())) < 2:
            warnings.append(f"fold {i}: training part is single-class")
        model = trainer(tr, cfg)
        fold_f1.append(evaluate_f1(model, val))

    train = d.subset(np.sort(train_idx))
    final = trainer(train, cfg)
    holdout = evaluate_f1(final, d.subset(np.sort(test_idx)))
    counts = np.bincount(train.y, minlength=2)
    majority = int(np.argmax(counts))
    return CVResult(fold_f1=fold_f1, holdout_f1=holdout, params=final,
                    majority_label=majority, warnings=warnings)


# ----------------------------------------------------------------------
# model files
# ----------------------------------------------------------------------


def save_model(params: ModelParams, path: str, *, model: str, encoding_digest: str,
               majority_label: int) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"# model={model} encoding={encoding_digest} majority={majority_label}\n")
        fh.write(f"{params.bias!r}\n")
        for v in params.weights:
            fh.write(f"{float(v)!r}\n")


def load_model(path: str) -> tuple:
    """Returns (ModelParams, meta dict with model/encoding/majority keys)."""
    from .errors import ParseError

    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().strip()
        if not header.startswith("# "):
            raise ParseError("missing model header", path=path)
        meta: dict = {}
        for part in header[2:].split():
            key, _, val = part.partition("=")
            meta[key] = val
        if "model" not in meta or "encoding" not in meta:
            raise ParseError("model header lacks model=/encoding=", path=path)
        meta["majority"] = int(meta.get("majority", "0"))
        try:
            bias = float(fh.readline().strip())
            weights = np.array([float(line.strip()) for line in fh if line.strip()])
        except ValueError:
            raise ParseError("malformed numeric line", path=path) from None
    return ModelParams(weights, bias), meta
