"""Energy VAD, uniform segmentation of speech regions, and 30 s chunking."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .audio_io import DiarizationAnnotation, Segment, Turn
from .errors import ValidationError
from .features import FeatureMatrix

CHUNK_TAG = "#c"


def energy_vad(
    features: FeatureMatrix | np.ndarray,
    threshold_offset: float = 5.5,
    mean_scale: float = 0.5,
    context: int = 5,
    proportion: float = 0.6,
) -> np.ndarray:
    """Per-frame speech flags from the log-energy column (column 0).

    A frame is speech when at least `proportion` of the frames within
    +/- `context` (window truncated at the edges) have log-energy above
    ``threshold_offset + mean_scale * mean(log-energy)``.
    """
    x = features.values if isinstance(features, FeatureMatrix) else np.asarray(features)
    if x.ndim == 1:
        energy = x
    else:
        if x.shape[0] == 0:
            return np.zeros(0, dtype=bool)
        energy = x[:, 0]
    T = len(energy)
    if T == 0:
        return np.zeros(0, dtype=bool)
    threshold = threshold_offset + mean_scale * energy.mean()
    above = np.concatenate([[0], np.cumsum(energy > threshold)])
    t = np.arange(T)
    lo = np.maximum(t - context, 0)
    hi = np.minimum(t + context + 1, T)
    count = above[hi] - above[lo]
    return count >= proportion * (hi - lo)


def speech_regions(vad: np.ndarray, frame_shift: float = 10.0, min_duration: float = 0.0) -> list[tuple[float, float]]:
    """Maximal runs of speech frames as (start, end) seconds."""
    flags = np.asarray(vad, dtype=bool)
    if flags.size == 0:
        return []
    padded = np.concatenate([[False], flags, [False]])
    edges = np.flatnonzero(padded[1:] != padded[:-1])
    out = []
    for s, e in zip(edges[::2], edges[1::2]):
        start, end = s * frame_shift / 1000.0, e * frame_shift / 1000.0
        if end - start + 1e-9 >= min_duration:
            out.append((start, end))
    return out


@dataclass
class SegmentTable:
    segments: list[Segment] = field(default_factory=list)
    window: float = 3.0
    period: float = 1.0

    def __post_init__(self):
        ids = set()
        for s in self.segments:
            if not s.end > s.start:
                raise ValidationError(f"segment {s.utterance_id} has end <= start")
            if s.utterance_id in ids:
                raise ValidationError(f"duplicate utterance id {s.utterance_id}")
            ids.add(s.utterance_id)

    def __len__(self):
        return len(self.segments)

    def __iter__(self):
        return iter(self.segments)

    @property
    def ids(self) -> list[str]:
        return [s.utterance_id for s in self.segments]


def _ms(x: float) -> int:
    return int(round(x * 1000))


def uniform_segments(
    regions,
    window: float = 3.0,
    period: float = 1.0,
    min_tail: float = 0.5,
    recording_id: str = "rec",
) -> SegmentTable:
    """Split each speech region into overlapping fixed-length windows.

    Arithmetic runs on an integer millisecond grid so that window starts
    never drift.
    """
    if not window >= period > 0:
        raise ValidationError(f"need window >= period > 0, got window={window}, period={period}")
    W, P, tail = _ms(window), _ms(period), _ms(min_tail)
    spans = []
    for r_start, r_end in regions:
        a, b = _ms(r_start), _ms(r_end)
        last_end = None
        s = a
        while s + W <= b:
            spans.append((s, s + W))
            last_end = s + W
            s += P
        leftover = b - (last_end if last_end is not None else a)
        if last_end != b and leftover >= tail and leftover > 0:
            spans.append((max(b - W, a), b))
    width = max([4] + [len(str(e // 10)) for _, e in spans])
    segs = [
        Segment(f"{recording_id}-{s // 10:0{width}d}-{e // 10:0{width}d}", recording_id, s / 1000.0, e / 1000.0)
        for s, e in spans
    ]
    return SegmentTable(segs, window, period)


def chunk_speakers(annotation: DiarizationAnnotation, chunk: float = 30.0) -> DiarizationAnnotation:
    """Split every turn longer than `chunk` seconds into consecutive sub-turns.

    Split sub-turns carry ``<speaker>#c<k>`` ids; turns that fit are left as is.
    """
    if not chunk > 0:
        raise ValidationError("chunk must be positive")
    turns = []
    for t in annotation.turns:
        if t.duration <= chunk:
            turns.append(t)
            continue
        n_full = int(t.duration // chunk)
        k = 0
        for k in range(n_full):
            turns.append(Turn(f"{t.speaker}{CHUNK_TAG}{k}", t.onset + k * chunk, chunk))
        rest = t.duration - n_full * chunk
        if rest > 1e-9:
            turns.append(Turn(f"{t.speaker}{CHUNK_TAG}{n_full}", t.onset + n_full * chunk, rest))
    return DiarizationAnnotation(annotation.recording_id, turns)


def base_speaker(speaker_id: str) -> str:
    return speaker_id.split(CHUNK_TAG, 1)[0]


def segment_frames(segment: Segment, frame_shift: float = 10.0, num_frames: int | None = None) -> slice:
    """Feature-frame slice covered by a segment (frame t starts at t * shift)."""
    start = int(round(segment.start * 1000 / frame_shift))
    end = int(round(segment.end * 1000 / frame_shift))
    if num_frames is not None:
        start, end = min(start, num_frames), min(end, num_frames)
    return slice(start, end)


def label_segments(segments, reference: DiarizationAnnotation) -> list[str | None]:
    """Majority reference speaker of each segment (None where no reference speech)."""
    labels = []
    for seg in segments:
        best, best_ov = None, 0.0
        overlap: dict[str, float] = {}
        for t in reference.turns:
            ov = min(seg.end, t.end) - max(seg.start, t.onset)
            if ov > 0:
                overlap[t.speaker] = overlap.get(t.speaker, 0.0) + ov
        for spk, ov in overlap.items():
            if ov > best_ov:
                best, best_ov = spk, ov
        labels.append(best)
    return labels


def segments_to_annotation(segments, labels, recording_id: str) -> DiarizationAnnotation:
    """Turn clustered, possibly overlapping windows into a non-overlapping hypothesis.

    Where consecutive windows overlap, the boundary is placed at the midpoint
    of the overlap. Adjacent pieces with the same label are merged.
    """
    items = sorted(zip(segments, labels), key=lambda p: (p[0].start, p[0].end))
    pieces = []
    for i, (seg, lab) in enumerate(items):
        start, end = seg.start, seg.end
        if i > 0:
            prev = items[i - 1][0]
            if prev.end > start:
                start = 0.5 * (start + prev.end)
        if i + 1 < len(items):
            nxt = items[i + 1][0]
            if nxt.start < end:
                end = 0.5 * (nxt.start + end)
        if end > start:
            pieces.append([str(lab), start, end])
    merged = []
    for p in pieces:
        if merged and merged[-1][0] == p[0] and abs(merged[-1][2] - p[1]) < 1e-9:
            merged[-1][2] = p[2]
        else:
            merged.append(p)
    return DiarizationAnnotation(recording_id, [Turn(s, a, b - a) for s, a, b in merged])
