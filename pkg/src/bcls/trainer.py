"""Minimal trainable encoder and a deterministic desk-scale pipeline.

The encoder is a pair of linear projections onto the unit sphere, so the
similarity matrix is a cosine matrix and the losses chain into parameter
gradients through the normalization Jacobian (I - e e^T) / ||z||. Data is
synthetic: clustered unit latents whose pairwise cosines serve as the
continuous relevance labels, observed through noisy random linear maps.
Everything is a pure function of the seed; two runs with the same config
produce bit-identical parameters and logs.
"""

from dataclasses import dataclass, field

import numpy as np

from .core import BclsError, DimMismatch, as_matrix, l2_normalize_rows
from .losses import Hyperparams, make_loss_fn
from .metrics import (
    RankingOutcome,
    kendall_tau,
    map_at_r,
    r_precision,
    rank_candidates,
    recall_at_k,
)


class BadDims(BclsError):
    pass


@dataclass
class LinearEncoder:
    w_v: np.ndarray  # image projection, (d_v, d)
    w_t: np.ndarray  # text projection, (d_t, d)


@dataclass
class EncoderGrads:
    w_v: np.ndarray
    w_t: np.ndarray
    # per-row loss gradients through the normalization, tangent to the sphere
    tangent_v: np.ndarray
    tangent_t: np.ndarray


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 128
    epochs: int = 20
    lr: float = 0.0005
    lr_decay_epoch: int = 10
    lr_decay_factor: float = 0.1
    seed: int = 0
    dim: int = 16
    loss: str = "bcls"
    optimizer: str = "sgd"
    hyperparams: Hyperparams = field(default_factory=Hyperparams)

    def __post_init__(self):
        if self.batch_size < 2:
            raise BclsError(f"batch_size must be >= 2, got {self.batch_size}")
        if self.lr < 0:
            raise BclsError(f"lr must be >= 0, got {self.lr}")
        if self.epochs < 0 or self.lr_decay_epoch < 1 or self.dim < 1:
            raise BclsError("epochs >= 0, lr_decay_epoch >= 1, dim >= 1 required")
        if self.optimizer not in ("sgd", "adam"):
            raise BclsError(f"optimizer must be 'sgd' or 'adam', got {self.optimizer!r}")


@dataclass(frozen=True)
class EpochStats:
    epoch: int
    loss: float
    tau_i2t: float
    tau_t2i: float
    r1_i2t: float
    r1_t2i: float


@dataclass
class SyntheticDataset:
    image_features: np.ndarray  # (n, d_v)
    text_features: np.ndarray  # (n, d_t)
    latent: np.ndarray  # (n, d_z) hidden unit-norm ground truth
    relevance: np.ndarray  # (n, n) = clamped latent cosine, diag 1

    def __len__(self):
        return self.image_features.shape[0]


_NUM_CLUSTERS = 8
_CLUSTER_SPREAD = 0.6  # jitter norm relative to the unit cluster center


def make_synthetic(n, d_z, d_v, d_t, noise_sigma=0.1, seed=0):
    """Clustered unit latents observed through noisy random linear maps.

    Relevance is the clamped latent cosine with a unit diagonal, so with
    noise_sigma=0 a least-squares inverse of either map recovers the latent
    space exactly and ranks candidates perfectly.
    """
    if min(d_z, d_v, d_t) < 2 or n < 2:
        raise BadDims(f"need n, d_z, d_v, d_t >= 2, got {(n, d_z, d_v, d_t)}")
    if noise_sigma < 0:
        raise BadDims(f"noise_sigma must be >= 0, got {noise_sigma}")
    rng = np.random.default_rng(seed)
    centers = l2_normalize_rows(rng.standard_normal((_NUM_CLUSTERS, d_z)))
    assign = rng.integers(0, _NUM_CLUSTERS, size=n)
    jitter = rng.standard_normal((n, d_z)) * (_CLUSTER_SPREAD / np.sqrt(d_z))
    latent = l2_normalize_rows(centers[assign] + jitter)
    relevance = np.clip(latent @ latent.T, -1.0, 1.0)
    np.fill_diagonal(relevance, 1.0)
    map_v = rng.standard_normal((d_z, d_v))
    map_t = rng.standard_normal((d_z, d_t))
    image = latent @ map_v + noise_sigma * rng.standard_normal((n, d_v))
    text = latent @ map_t + noise_sigma * rng.standard_normal((n, d_t))
    return SyntheticDataset(image, text, latent, relevance)


def oracle_encoder(dataset):
    """Least-squares inverse of the observation maps; on noiseless data this
    recovers the latent space and achieves perfect retrieval."""
    w_v, *_ = np.linalg.lstsq(dataset.image_features, dataset.latent, rcond=None)
    w_t, *_ = np.linalg.lstsq(dataset.text_features, dataset.latent, rcond=None)
    return LinearEncoder(w_v, w_t)


def forward(enc, xv, xt):
    """Embed both sides on the unit sphere and return the cosine matrix."""
    xv = as_matrix(xv, "image features")
    xt = as_matrix(xt, "text features")
    if xv.shape[1] != enc.w_v.shape[0] or xt.shape[1] != enc.w_t.shape[0]:
        raise DimMismatch("feature width does not match encoder input width")
    if enc.w_v.shape[1] != enc.w_t.shape[1]:
        raise DimMismatch("encoder output widths differ")
    e_v = l2_normalize_rows(xv @ enc.w_v)
    e_t = l2_normalize_rows(xt @ enc.w_t)
    return e_v, e_t, e_v @ e_t.T


def backward(enc, xv, xt, dl_ds):
    """Chain dL/dS into projection-parameter gradients.

    Each row's gradient passes through the normalization Jacobian
    (I - e e^T) / ||z||, so the tangent gradients are orthogonal to their
    embeddings.
    """
    xv = as_matrix(xv, "image features")
    xt = as_matrix(xt, "text features")
    dl_ds = np.asarray(dl_ds, dtype=np.float64)
    if dl_ds.shape != (xv.shape[0], xt.shape[0]):
        raise DimMismatch(
            f"dL/dS shape {dl_ds.shape} does not match batch ({xv.shape[0]}, {xt.shape[0]})"
        )
    z_v = xv @ enc.w_v
    z_t = xt @ enc.w_t
    norm_v = np.linalg.norm(z_v, axis=1)
    norm_t = np.linalg.norm(z_t, axis=1)
    e_v = z_v / norm_v[:, None]
    e_t = z_t / norm_t[:, None]
    g_ev = dl_ds @ e_t
    g_et = dl_ds.T @ e_v
    tangent_v = (g_ev - np.sum(g_ev * e_v, axis=1, keepdims=True) * e_v) / norm_v[:, None]
    tangent_t = (g_et - np.sum(g_et * e_t, axis=1, keepdims=True) * e_t) / norm_t[:, None]
    return EncoderGrads(xv.T @ tangent_v, xt.T @ tangent_t, tangent_v, tangent_t)


def held_out_indices(n):
    """Last 20% of the dataset indices."""
    return np.arange(n - n // 5, n)


def _subset(dataset, idx):
    return (
        dataset.image_features[idx],
        dataset.text_features[idx],
        dataset.relevance[np.ix_(idx, idx)],
    )


def evaluate(enc, dataset, indices=None, relevance_threshold=0.8):
    """Retrieval report over the given indices (default: whole dataset).

    Instance metrics take the paired index as the single relevant item;
    the truncated-AP metrics take every candidate whose relevance clears
    the threshold. All values are fractions (tau in [-1, 1]).
    """
    idx = np.arange(len(dataset)) if indices is None else np.asarray(indices)
    if idx.size == 0:
        raise BclsError("cannot evaluate on an empty split")
    xv, xt, rel = _subset(dataset, idx)
    _, _, s = forward(enc, xv, xt)
    report = {}
    for tag, scores, labels in (("i2t", s, rel), ("t2i", s.T, rel.T)):
        n = scores.shape[0]
        paired = [
            RankingOutcome(q, rank_candidates(scores[q]), frozenset([q]))
            for q in range(n)
        ]
        semantic = [
            RankingOutcome(
                q,
                paired[q].order,
                frozenset(np.flatnonzero(labels[q] >= relevance_threshold).tolist()),
            )
            for q in range(n)
        ]
        for k in (1, 5, 10):
            report[f"r{k}_{tag}"] = recall_at_k(paired, k)
        report[f"tau_{tag}"] = float(
            np.mean([kendall_tau(scores[q], labels[q]).tau for q in range(n)])
        )
        report[f"map_r_{tag}"] = map_at_r(semantic)
        report[f"rprec_{tag}"] = r_precision(semantic)
    report["rsum"] = sum(
        report[f"r{k}_{tag}"] for tag in ("i2t", "t2i") for k in (1, 5, 10)
    )
    return report


def _sgd_step(enc, grads, lr):
    enc.w_v -= lr * grads.w_v
    enc.w_t -= lr * grads.w_t


class _AdamState:
    """Standard first/second-moment optimizer state for both projections."""

    def __init__(self, enc, beta1=0.9, beta2=0.999, eps=1e-8):
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.step = 0
        self.m = [np.zeros_like(enc.w_v), np.zeros_like(enc.w_t)]
        self.v = [np.zeros_like(enc.w_v), np.zeros_like(enc.w_t)]

    def update(self, enc, grads, lr):
        self.step += 1
        for slot, (w, g) in enumerate(((enc.w_v, grads.w_v), (enc.w_t, grads.w_t))):
            self.m[slot] = self.beta1 * self.m[slot] + (1 - self.beta1) * g
            self.v[slot] = self.beta2 * self.v[slot] + (1 - self.beta2) * g * g
            m_hat = self.m[slot] / (1 - self.beta1**self.step)
            v_hat = self.v[slot] / (1 - self.beta2**self.step)
            w -= lr * m_hat / (np.sqrt(v_hat) + self.eps)


def train(config, dataset):
    """Deterministic optimizer loop; returns the encoder and per-epoch stats.

    The first 80% of indices are the training pool (shuffled per epoch from
    the seeded generator, trailing partial batch dropped); the last 20% is
    the held-out split evaluated after every epoch.
    """
    n = len(dataset)
    if n < config.batch_size:
        raise BclsError(f"dataset size {n} smaller than batch size {config.batch_size}")
    held = held_out_indices(n)
    if held.size == 0:
        raise BclsError("dataset too small to carve a held-out split")
    n_train = n - held.size
    rng = np.random.default_rng(config.seed)
    d_v = dataset.image_features.shape[1]
    d_t = dataset.text_features.shape[1]
    enc = LinearEncoder(
        rng.uniform(-1.0, 1.0, (d_v, config.dim)) / np.sqrt(d_v),
        rng.uniform(-1.0, 1.0, (d_t, config.dim)) / np.sqrt(d_t),
    )
    loss_fn = make_loss_fn(config.loss, config.hyperparams)
    adam = _AdamState(enc) if config.optimizer == "adam" else None
    log = []
    batch = min(config.batch_size, n_train)
    for epoch in range(config.epochs):
        lr = config.lr * config.lr_decay_factor ** (epoch // config.lr_decay_epoch)
        perm = rng.permutation(n_train)
        batch_losses = []
        for start in range(0, n_train - batch + 1, batch):
            idx = perm[start : start + batch]
            xv = dataset.image_features[idx]
            xt = dataset.text_features[idx]
            rel = dataset.relevance[np.ix_(idx, idx)]
            _, _, s = forward(enc, xv, xt)
            result = loss_fn(s, rel)
            grads = backward(enc, xv, xt, result.grad)
            if adam is None:
                _sgd_step(enc, grads, lr)
            else:
                adam.update(enc, grads, lr)
            batch_losses.append(result.value)
        report = evaluate(enc, dataset, held)
        log.append(
            EpochStats(
                epoch,
                float(np.mean(batch_losses)),
                report["tau_i2t"],
                report["tau_t2i"],
                report["r1_i2t"],
                report["r1_t2i"],
            )
        )
    return enc, log
