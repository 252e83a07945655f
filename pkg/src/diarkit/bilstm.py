"""Bi-LSTM similarity scorer.

Row ``a`` of the similarity matrix is predicted from the sequence of pair
vectors ``[x_a; x_1], ..., [x_a; x_n]``. Long rows are cut into column
spans of at most ``max_seq_len``; recurrent state starts from zero in every
span.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.special import expit

from .errors import ContractError, DivergenceError, ParameterError, ValidationError
from .nnet import Network, sgd_step
from .similarity import SimilarityMatrix

log = logging.getLogger(__name__)

BCE_CLIP = 1e-7
LOGIT_LAYER = "output.affine"


@dataclass
class BilstmConfig:
    embedding_dim: int = 128
    hidden: int = 256  # per direction
    layers: int = 2
    dense: int = 64
    epochs: int = 10
    lr: float = 0.01
    max_seq_len: int = 200
    folds: int = 5
    rows_per_batch: int = 16
    seed: int = 0

    def __post_init__(self):
        if self.max_seq_len < 2:
            raise ValidationError("max_seq_len must be >= 2")
        if min(self.embedding_dim, self.hidden, self.dense, self.layers, self.rows_per_batch) < 1:
            raise ValidationError("BilstmConfig sizes must be positive")


def build_scorer(config: BilstmConfig) -> list[dict]:
    spec = []
    width = 2 * config.embedding_dim
    for i in range(config.layers):
        spec.append(
            {"kind": "lstm", "name": f"blstm{i + 1}", "in_dim": width, "hidden": config.hidden, "direction": "bidirectional"}
        )
        width = 2 * config.hidden
    spec.append({"kind": "dense", "name": "dense.affine", "in_dim": width, "out_dim": config.dense})
    spec.append({"kind": "relu", "name": "dense.relu"})
    spec.append({"kind": "dense", "name": LOGIT_LAYER, "in_dim": config.dense, "out_dim": 1})
    spec.append({"kind": "sigmoid", "name": "output.sigmoid"})
    return spec


def build_targets(labels: Sequence) -> np.ndarray:
    """S_ab = 1 iff segments a and b carry the same speaker label."""
    lab = np.asarray(list(labels), dtype=object)
    return (lab[:, None] == lab[None, :]).astype(np.float64)


def pair_sequences(X: np.ndarray, rows, cols) -> np.ndarray:
    """(len(rows), len(cols), 2d) tensor of concatenated [x_a; x_b] pairs."""
    X = np.asarray(X, dtype=np.float64)
    rows, cols = np.asarray(rows), np.asarray(cols)
    R, C, d = len(rows), len(cols), X.shape[1]
    out = np.empty((R, C, 2 * d))
    out[:, :, :d] = X[rows][:, None, :]
    out[:, :, d:] = X[cols][None, :, :]
    return out


def bce_loss(pred, target) -> float:
    """Mean element-wise binary cross-entropy with predictions clipped to [1e-7, 1-1e-7]."""
    p = np.clip(np.asarray(pred, dtype=np.float64), BCE_CLIP, 1.0 - BCE_CLIP)
    y = np.asarray(target, dtype=np.float64)
    return float(-np.mean(y * np.log(p) + (1.0 - y) * np.log(1.0 - p)))


def bce_logit_grad(pred, target) -> np.ndarray:
    """d(mean BCE)/d(logit) for sigmoid outputs, evaluated at the clipped prediction."""
    p = np.clip(np.asarray(pred, dtype=np.float64), BCE_CLIP, 1.0 - BCE_CLIP)
    y = np.asarray(target, dtype=np.float64)
    return (p - y) / y.size


def _spans(n: int, max_len: int) -> list[tuple[int, int]]:
    k = -(-n // max_len)
    base, extra = divmod(n, k)
    out, start = [], 0
    for i in range(k):
        size = base + (1 if i < extra else 0)
        out.append((start, start + size))
        start += size
    return out


def partition_batches(n: int, d: int, max_seq_len: int) -> list[tuple[tuple[int, int], tuple[int, int]]]:
    """Split an n x n similarity matrix into (row span, column span) blocks.

    Both axes are cut into ceil(n / max_seq_len) contiguous spans whose sizes
    differ by at most one. `d` does not affect the cut; it is accepted so
    callers can size the pair tensor with the same arguments.
    """
    if n < 1:
        raise ContractError("partition_batches needs n >= 1")
    if max_seq_len < 1:
        raise ContractError("max_seq_len must be >= 1")
    spans = _spans(n, max_seq_len)
    return [(r, c) for r in spans for c in spans]


def estimate_memory(n: int, d: int, bytes_per_value: int = 4, pair_duplication: bool = True) -> int:
    """Bytes needed to hold the full n x n pair-input tensor at once.

    Each pair input is 2d wide; ``pair_duplication=False`` gives the n*n*d
    count instead.
    """
    if n < 0 or d < 0 or bytes_per_value < 0:
        raise ParameterError("estimate_memory arguments must be non-negative")
    width = 2 * d if pair_duplication else d
    return n * n * width * bytes_per_value


def kfold_split(recording_ids: Sequence[str], k: int = 5, seed: int = 0) -> list[tuple[list[str], list[str]]]:
    """Shuffle with `seed`, deal round-robin into k test folds."""
    ids = list(recording_ids)
    if k < 2:
        raise ParameterError("k must be >= 2")
    if len(ids) < k:
        raise ParameterError(f"need at least k={k} recordings for a {k}-fold split, got {len(ids)}")
    rng = np.random.default_rng(seed)
    order = [ids[i] for i in rng.permutation(len(ids))]
    tests = [order[i::k] for i in range(k)]
    return [([r for r in order if r not in set(t)], t) for t in tests]


@dataclass
class ScorerData:
    """One recording's embeddings and per-segment speaker labels."""

    recording_id: str
    embeddings: np.ndarray
    labels: list


def _batches_for_epoch(data: Sequence[ScorerData], config: BilstmConfig, rng):
    batches = []
    for ri, rec in enumerate(data):
        n = len(rec.embeddings)
        if n < 2:
            continue
        spans = _spans(n, config.max_seq_len)
        rows = rng.permutation(n)
        for c in spans:
            for s in range(0, n, config.rows_per_batch):
                batches.append((ri, rows[s : s + config.rows_per_batch], c))
    order = rng.permutation(len(batches))
    return [batches[i] for i in order]


def train_bilstm(data: Sequence[ScorerData], config: BilstmConfig, network: Network | None = None):
    """SGD on per-row BCE; returns (network, per-epoch mean row loss).

    Row losses are averaged over their elements and summed over the rows of
    a minibatch before the update.
    """
    prepared = []
    for rec in data:
        keep = [i for i, l in enumerate(rec.labels) if l is not None]
        X = np.asarray(rec.embeddings, dtype=np.float64)[keep]
        if X.shape[1] != config.embedding_dim:
            raise ContractError(f"{rec.recording_id}: embedding dim {X.shape[1]} != {config.embedding_dim}")
        labels = [rec.labels[i] for i in keep]
        prepared.append(ScorerData(rec.recording_id, X, labels))
    targets = [build_targets(r.labels) for r in prepared]
    if network is None:
        network = Network.from_spec(build_scorer(config), seed=config.seed)
    rng = np.random.default_rng(config.seed)
    history = []
    for epoch in range(1, config.epochs + 1):
        tot, count = 0.0, 0
        for ri, rows, (c0, c1) in _batches_for_epoch(prepared, config, rng):
            X = prepared[ri].embeddings
            inp = pair_sequences(X, rows, np.arange(c0, c1))
            tgt = targets[ri][rows][:, c0:c1]
            logits, caches = network.forward(inp, training=True, stop=LOGIT_LAYER)
            p = expit(logits[..., 0])
            row_losses = [bce_loss(p[i], tgt[i]) for i in range(len(rows))]
            loss = sum(row_losses)
            if not math.isfinite(loss):
                raise DivergenceError(f"Bi-LSTM training diverged at epoch {epoch}")
            dlogit = np.stack([bce_logit_grad(p[i], tgt[i]) for i in range(len(rows))])
            _, grads = network.backward(caches, dlogit[..., None])
            sgd_step(network, grads, config.lr)
            tot += loss
            count += len(rows)
        mean = tot / max(count, 1)
        log.info("bilstm epoch %d mean row loss %.4f", epoch, mean)
        history.append(mean)
    return network, history


def predict_similarity(network: Network, X, config: BilstmConfig, ids=None, batched: bool = True) -> SimilarityMatrix:
    """Stack predicted rows into S and symmetrize with (S + S^T) / 2.

    With ``batched=False`` the whole matrix is one block regardless of
    `max_seq_len`.
    """
    X = np.asarray(X, dtype=np.float64)
    n = len(X)
    if X.ndim != 2 or X.shape[1] != config.embedding_dim:
        raise ContractError(f"expected (n, {config.embedding_dim}) embeddings, got {X.shape}")
    if n == 0:
        return SimilarityMatrix(np.zeros((0, 0)), [])
    blocks = partition_batches(n, X.shape[1], config.max_seq_len) if batched else [((0, n), (0, n))]
    S = np.empty((n, n))
    for (r0, r1), (c0, c1) in blocks:
        out = network(pair_sequences(X, np.arange(r0, r1), np.arange(c0, c1)))
        S[r0:r1, c0:c1] = out[..., 0]
    S = 0.5 * (S + S.T)
    return SimilarityMatrix(S, list(ids) if ids is not None else [])
