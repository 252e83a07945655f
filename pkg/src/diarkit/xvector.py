"""TDNN x-vector extractor: architecture, training examples, training and extraction."""

from __future__ import annotations

import logging
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from .errors import DataError, DivergenceError, FormatError, ValidationError
from .nnet import Network, sgd_step
from .vad import SegmentTable, segment_frames

log = logging.getLogger(__name__)

EMBEDDING_LAYER = "tdnn6.affine"
LOGITS_LAYER = "output.affine"


@dataclass
class XvecConfig:
    num_speakers: int
    embedding_dim: int = 512
    feat_dim: int = 13
    shrink: float = 1.0
    min_frames_per_chunk: int = 16
    max_frames_per_chunk: int = 50
    epochs: int = 10
    lr: float = 0.01
    minibatch_size: int = 32
    chunks_per_epoch: int = 2048
    seed: int = 0

    def __post_init__(self):
        if self.num_speakers < 2:
            raise DataError(f"x-vector training needs >= 2 speakers, got {self.num_speakers}")
        if self.embedding_dim not in (512, 128):
            raise ValidationError(f"embedding_dim must be 512 or 128, got {self.embedding_dim}")
        if not 0 < self.shrink <= 1:
            raise ValidationError("shrink must be in (0, 1]")
        if not 1 <= self.min_frames_per_chunk <= self.max_frames_per_chunk:
            raise ValidationError("need 1 <= min_frames_per_chunk <= max_frames_per_chunk")

    def width(self, full: int) -> int:
        return max(1, math.ceil(full * self.shrink - 1e-9))

    @property
    def xvector_dim(self) -> int:
        """Actual embedding width after shrinking."""
        return self.width(self.embedding_dim)


def build_extractor(config: XvecConfig) -> list[dict]:
    """Layer spec for the frame-level TDNN, stats pooling and segment-level layers.

    Every tdnn block is affine -> ReLU -> batchnorm.
    """
    w = config.width
    h, big, emb = w(512), w(1500), config.xvector_dim
    spec: list[dict] = []

    def block(name, affine):
        spec.append({**affine, "name": f"{name}.affine"})
        spec.append({"kind": "relu", "name": f"{name}.relu"})
        spec.append({"kind": "batchnorm", "name": f"{name}.batchnorm", "dim": affine["out_dim"]})

    block("tdnn1", {"kind": "tdnn", "in_dim": config.feat_dim, "out_dim": h, "offsets": [0]})
    block("tdnn2", {"kind": "tdnn", "in_dim": h, "out_dim": h, "offsets": [-2, 0, 2]})
    block("tdnn3", {"kind": "tdnn", "in_dim": h, "out_dim": h, "offsets": [-3, 0, 3]})
    block("tdnn4", {"kind": "tdnn", "in_dim": h, "out_dim": h, "offsets": [0]})
    block("tdnn5", {"kind": "tdnn", "in_dim": h, "out_dim": big, "offsets": [0]})
    spec.append({"kind": "stats_pool", "name": "stats", "in_dim": big})
    block("tdnn6", {"kind": "dense", "in_dim": 2 * big, "out_dim": emb})
    block("tdnn7", {"kind": "dense", "in_dim": emb, "out_dim": h})
    spec.append({"kind": "dense", "name": LOGITS_LAYER, "in_dim": h, "out_dim": config.num_speakers})
    spec.append({"kind": "softmax", "name": "output.softmax"})
    return spec


def architecture_table(network: Network) -> list[tuple[str, str, int, int]]:
    """(layer, type, input size, output size) in the layout of the usual x-vector table.

    The stats row reports the per-frame input width; its total input is that times T.
    """
    rows = []
    for name, kind, i, o in network.shape_audit(0):
        block = name.split(".")[0]
        if kind in ("tdnn", "dense"):
            label = "output-layer" if block == "output" else "relu-batchnorm-layer"
            rows.append((block, label, i, o))
        elif kind == "stats_pool":
            rows.append((block, "stats-layer (pooling)", i, o))
    return rows


# ---------------------------------------------------------------------------
# training examples


@dataclass
class Utterance:
    features: np.ndarray
    speaker: str


def make_training_examples(
    utterances: Sequence[Utterance],
    config: XvecConfig,
    seed: int = 0,
    num_chunks: int | None = None,
) -> Iterator[tuple[np.ndarray, int]]:
    """Yield (chunk, speaker index) pairs for one epoch.

    Chunk lengths are drawn uniformly from [min, max] frames once per
    minibatch, so consecutive runs of `config.minibatch_size` examples share a
    length and stack into one array. Speakers are dealt round-robin before
    shuffling, which keeps per-speaker counts within one of each other.
    """
    speakers = sorted({u.speaker for u in utterances})
    index = {s: i for i, s in enumerate(speakers)}
    by_spk: dict[int, list[np.ndarray]] = {i: [] for i in range(len(speakers))}
    for u in utterances:
        if len(u.features) >= config.min_frames_per_chunk:
            by_spk[index[u.speaker]].append(np.asarray(u.features))
        else:
            log.warning("dropping %d-frame utterance of %s (< %d frames)", len(u.features), u.speaker, config.min_frames_per_chunk)
    for i, utts in by_spk.items():
        if not utts:
            raise DataError(f"speaker {speakers[i]} has no utterance with >= {config.min_frames_per_chunk} frames")
    if len(speakers) < 2:
        raise DataError("need at least 2 speakers")

    rng = np.random.default_rng(seed)
    total = config.chunks_per_epoch if num_chunks is None else num_chunks
    order = np.resize(np.arange(len(speakers)), total)
    rng.shuffle(order)
    longest = {i: max(len(u) for u in utts) for i, utts in by_spk.items()}
    lengths = {i: np.array([len(u) for u in utts]) for i, utts in by_spk.items()}
    mb = config.minibatch_size
    for start in range(0, total, mb):
        group = order[start : start + mb]
        L = int(rng.integers(config.min_frames_per_chunk, config.max_frames_per_chunk + 1))
        L = min(L, min(longest[int(s)] for s in group))
        for s in group:
            s = int(s)
            room = np.maximum(lengths[s] - L + 1, 0)
            u = int(rng.choice(len(room), p=room / room.sum()))
            off = int(rng.integers(0, room[u]))
            yield by_spk[s][u][off : off + L], s


def minibatches(examples, size: int) -> Iterator[tuple[np.ndarray, np.ndarray]]:
    """Stack consecutive equal-length examples into (B, T, D) arrays."""
    chunk, labels = [], []
    for x, y in examples:
        if chunk and (len(chunk) == size or len(x) != len(chunk[0])):
            yield np.stack(chunk), np.array(labels)
            chunk, labels = [], []
        chunk.append(x)
        labels.append(y)
    if chunk:
        yield np.stack(chunk), np.array(labels)


def softmax_cross_entropy(logits: np.ndarray, labels: np.ndarray) -> tuple[float, np.ndarray, np.ndarray]:
    """Mean cross-entropy, its gradient w.r.t. the logits, and the class posteriors."""
    z = logits - logits.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    n = len(labels)
    loss = -logp[np.arange(n), labels].mean()
    p = np.exp(logp)
    grad = p.copy()
    grad[np.arange(n), labels] -= 1.0
    return float(loss), grad / n, p


@dataclass
class EpochStats:
    epoch: int
    loss: float
    accuracy: float


def train_extractor(
    utterances: Sequence[Utterance], config: XvecConfig, network: Network | None = None
) -> tuple[Network, list[EpochStats]]:
    speakers = sorted({u.speaker for u in utterances})
    if len(speakers) < 2:
        raise DataError(f"x-vector training needs >= 2 speakers, found {len(speakers)}")
    if len(speakers) != config.num_speakers:
        raise ValidationError(f"config says {config.num_speakers} speakers, data has {len(speakers)}")
    if network is None:
        network = Network.from_spec(build_extractor(config), seed=config.seed)
    history = []
    for epoch in range(1, config.epochs + 1):
        examples = make_training_examples(utterances, config, seed=config.seed * 1000 + epoch)
        tot_loss = tot_correct = tot_n = 0.0
        for xb, yb in minibatches(examples, config.minibatch_size):
            logits, caches = network.forward(xb, training=True, stop=LOGITS_LAYER)
            loss, dlogits, p = softmax_cross_entropy(logits, yb)
            if not math.isfinite(loss):
                raise DivergenceError(f"x-vector training diverged at epoch {epoch} (loss={loss})")
            _, grads = network.backward(caches, dlogits)
            sgd_step(network, grads, config.lr)
            tot_loss += loss * len(yb)
            tot_correct += float((p.argmax(axis=1) == yb).sum())
            tot_n += len(yb)
        stats = EpochStats(epoch, tot_loss / tot_n, tot_correct / tot_n)
        log.info("xvector epoch %d loss %.4f acc %.3f", epoch, stats.loss, stats.accuracy)
        history.append(stats)
    return network, history


# ---------------------------------------------------------------------------
# extraction


@dataclass
class EmbeddingSequence:
    recording_id: str
    ids: list[str]
    vectors: np.ndarray
    window: float = 0.0
    period: float = 0.0
    excluded: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.vectors = np.asarray(self.vectors, dtype=np.float64)
        if self.vectors.ndim != 2 or len(self.ids) != len(self.vectors):
            raise ValidationError("ids and vectors disagree in count")

    def __len__(self):
        return len(self.ids)

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]


def extract_embeddings(
    network: Network,
    segments: SegmentTable,
    features: np.ndarray,
    frame_shift: float = 10.0,
    recording_id: str | None = None,
) -> EmbeddingSequence:
    """One x-vector per segment: the pre-activation tdnn6 affine output in inference mode."""
    features = np.asarray(features, dtype=np.float64)
    ids, vecs, excluded = [], [], []
    for seg in segments:
        sl = segment_frames(seg, frame_shift, len(features))
        chunk = features[sl]
        if len(chunk) == 0:
            log.warning("segment %s covers no feature frames; skipped", seg.utterance_id)
            excluded.append(seg.utterance_id)
            continue
        emb = network(chunk[None], stop=EMBEDDING_LAYER)
        ids.append(seg.utterance_id)
        vecs.append(emb[0])
    rec = recording_id if recording_id is not None else (segments.segments[0].recording_id if len(segments) else "")
    dim = network.layers[network.index(EMBEDDING_LAYER)].out_dim
    vectors = np.array(vecs) if vecs else np.zeros((0, dim))
    return EmbeddingSequence(rec, ids, vectors, segments.window, segments.period, excluded)


def length_normalize(x: np.ndarray) -> np.ndarray:
    """Scale rows to unit Euclidean length."""
    x = np.asarray(x, dtype=np.float64)
    norms = np.linalg.norm(x, axis=-1, keepdims=True)
    return x / np.maximum(norms, 1e-12)


# ---------------------------------------------------------------------------
# DKXV container: magic | u32 count | u32 dim | ids (u32 len + utf-8) | f32 payload


def write_embeddings(path, emb: EmbeddingSequence) -> None:
    parts = [b"DKXV", struct.pack("<II", len(emb), emb.vectors.shape[1] if emb.vectors.ndim == 2 else 0)]
    for u in emb.ids:
        b = u.encode()
        parts.append(struct.pack("<I", len(b)) + b)
    parts.append(np.ascontiguousarray(emb.vectors, dtype="<f4").tobytes())
    Path(path).write_bytes(b"".join(parts))


def read_embeddings(path, recording_id: str | None = None) -> EmbeddingSequence:
    data = Path(path).read_bytes()
    if data[:4] != b"DKXV":
        raise FormatError(f"{path}: not a DKXV embedding archive")
    try:
        count, dim = struct.unpack_from("<II", data, 4)
        pos = 12
        ids = []
        for _ in range(count):
            (n,) = struct.unpack_from("<I", data, pos)
            ids.append(data[pos + 4 : pos + 4 + n].decode())
            pos += 4 + n
    except struct.error:
        raise FormatError(f"{path}: truncated id table") from None
    if len(data) - pos != 4 * count * dim:
        raise FormatError(f"{path}: payload size mismatch")
    vecs = np.frombuffer(data, dtype="<f4", offset=pos).reshape(count, dim).astype(np.float64)
    rec = recording_id if recording_id is not None else Path(path).stem
    return EmbeddingSequence(rec, ids, vecs)
