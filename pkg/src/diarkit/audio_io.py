"""Audio and annotation I/O plus the synthetic conversation generator.

File formats handled here:

* WAV: RIFF/WAVE, PCM 16-bit, mono.
* RTTM: ``SPEAKER <rec> 1 <onset> <dur> <NA> <NA> <spk> <NA>`` (9 columns).
* Kaldi-style ``segments`` (``utt-id rec-id start end``) and ``utt2spk``
  (``utt-id spk-id``) tables.
* Corpus manifest: ``recording_id<TAB>audio_path<TAB>annotation_path<TAB>split``.
"""

from __future__ import annotations

import logging
import math
import os
import struct
import wave
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, NamedTuple, Sequence

import numpy as np

from .errors import FormatError, ParameterError, ParseError, UnsupportedFormatError, ValidationError

log = logging.getLogger(__name__)

SAMPLE_RATE = 16000
SPLITS = ("train", "dev", "eval")


@dataclass
class AudioSignal:
    samples: np.ndarray
    sample_rate: int = SAMPLE_RATE
    recording_id: str = ""

    def __post_init__(self):
        if self.sample_rate <= 0:
            raise ValidationError(f"sample_rate must be positive, got {self.sample_rate}")
        self.samples = np.asarray(self.samples, dtype=np.float64)

    @property
    def duration(self) -> float:
        return len(self.samples) / self.sample_rate


class Turn(NamedTuple):
    speaker: str
    onset: float
    duration: float

    @property
    def end(self) -> float:
        return self.onset + self.duration


@dataclass
class DiarizationAnnotation:
    recording_id: str
    turns: list[Turn] = field(default_factory=list)

    def __post_init__(self):
        self.turns = [Turn(str(s), float(o), float(d)) for s, o, d in self.turns]
        for t in self.turns:
            if not t.duration > 0:
                raise ValidationError(f"{self.recording_id}: turn {t} has non-positive duration")
            if t.onset < 0:
                raise ValidationError(f"{self.recording_id}: turn {t} has negative onset")
        self.turns.sort(key=lambda t: (t.onset, t.duration, t.speaker))

    @property
    def speakers(self) -> list[str]:
        """Speaker ids in order of first appearance."""
        seen = {}
        for t in self.turns:
            seen.setdefault(t.speaker, None)
        return list(seen)

    @property
    def end(self) -> float:
        return max((t.end for t in self.turns), default=0.0)


class Segment(NamedTuple):
    utterance_id: str
    recording_id: str
    start: float
    end: float


@dataclass
class ManifestEntry:
    recording_id: str
    audio_path: Path
    annotation_path: Path
    split: str


@dataclass
class CorpusManifest:
    entries: list[ManifestEntry]

    def __post_init__(self):
        ids = [e.recording_id for e in self.entries]
        dup = {i for i in ids if ids.count(i) > 1}
        if dup:
            raise ValidationError(f"duplicate recording ids in manifest: {sorted(dup)}")
        for e in self.entries:
            if e.split not in SPLITS:
                raise ValidationError(f"{e.recording_id}: unknown split {e.split!r}")

    def split(self, name: str) -> list[ManifestEntry]:
        return [e for e in self.entries if e.split == name]

    def __iter__(self):
        return iter(self.entries)

    def __len__(self):
        return len(self.entries)


# ---------------------------------------------------------------------------
# WAV


def read_wav(path, recording_id: str | None = None) -> AudioSignal:
    """Read a 16-bit PCM mono RIFF/WAVE file into an amplitude signal in [-1, 1)."""
    path = Path(path)
    data = path.read_bytes()
    if len(data) < 12 or data[:4] != b"RIFF" or data[8:12] != b"WAVE":
        raise FormatError(f"{path}: not a RIFF/WAVE file")
    pos = 12
    fmt = None
    payload = None
    while pos + 8 <= len(data):
        cid, size = struct.unpack_from("<4sI", data, pos)
        body_start = pos + 8
        if cid == b"fmt ":
            if size < 16 or body_start + size > len(data):
                raise FormatError(f"{path}: malformed fmt chunk")
            fmt = struct.unpack_from("<HHIIHH", data, body_start)
            if fmt[0] == 0xFFFE and size >= 26:
                # WAVE_FORMAT_EXTENSIBLE: the sub-format GUID starts with the real tag
                sub = struct.unpack_from("<H", data, body_start + 24)[0]
                fmt = (sub,) + fmt[1:]
        elif cid == b"data":
            if fmt is None:
                raise FormatError(f"{path}: data chunk before fmt chunk")
            if body_start + size > len(data):
                raise FormatError(
                    f"{path}: truncated data chunk ({len(data) - body_start} of {size} bytes present)"
                )
            payload = data[body_start : body_start + size]
            break
        pos = body_start + size + (size & 1)
    if fmt is None:
        raise FormatError(f"{path}: missing fmt chunk")
    tag, channels, rate, _, _, bits = fmt
    if tag != 1:
        raise UnsupportedFormatError(f"{path}: format tag {tag} is not PCM")
    if channels != 1:
        raise UnsupportedFormatError(f"{path}: {channels} channels, only mono is supported")
    if bits != 16:
        raise UnsupportedFormatError(f"{path}: {bits}-bit samples, only 16-bit is supported")
    if payload is None:
        raise FormatError(f"{path}: missing data chunk")
    if len(payload) % 2:
        raise FormatError(f"{path}: odd data chunk size {len(payload)}")
    pcm = np.frombuffer(payload, dtype="<i2")
    return AudioSignal(pcm.astype(np.float64) / 32768.0, rate, recording_id or path.stem)


def write_wav(path, signal: AudioSignal) -> None:
    pcm = np.clip(np.round(signal.samples * 32768.0), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as w:
        w.setnchannels(1)
        w.setsampwidth(2)
        w.setframerate(signal.sample_rate)
        w.writeframes(pcm.tobytes())


# ---------------------------------------------------------------------------
# RTTM


def _fmt_time(t: float) -> str:
    return f"{t:.2f}"


def parse_rttm(path) -> list[DiarizationAnnotation]:
    by_rec: dict[str, list[Turn]] = {}
    with open(path) as f:
        for lineno, line in enumerate(f, 1):
            fields = line.split()
            if not fields or fields[0].startswith("#") or fields[0].startswith(";;"):
                continue
            if fields[0] != "SPEAKER":
                continue
            if len(fields) < 8:
                raise ParseError(f"expected at least 8 fields, got {len(fields)}", path, lineno)
            try:
                onset, dur = float(fields[3]), float(fields[4])
            except ValueError:
                raise ParseError(f"non-numeric onset/duration {fields[3]!r} {fields[4]!r}", path, lineno) from None
            if not (math.isfinite(onset) and math.isfinite(dur)):
                raise ParseError("non-finite onset/duration", path, lineno)
            by_rec.setdefault(fields[1], []).append(Turn(fields[7], onset, dur))
    return [DiarizationAnnotation(rec, turns) for rec, turns in by_rec.items()]


def format_rttm(annotations: Iterable[DiarizationAnnotation]) -> str:
    lines = []
    for ann in annotations:
        for t in ann.turns:
            if t.onset < 0 or t.duration <= 0:
                raise ValidationError(f"{ann.recording_id}: invalid turn {t}")
            lines.append(
                f"SPEAKER {ann.recording_id} 1 {_fmt_time(t.onset)} {_fmt_time(t.duration)} <NA> <NA> {t.speaker} <NA>"
            )
    return "".join(line + "\n" for line in lines)


def write_rttm(annotations: Iterable[DiarizationAnnotation], path=None) -> str:
    text = format_rttm(annotations)
    if path is not None:
        Path(path).write_text(text)
    return text


# ---------------------------------------------------------------------------
# Kaldi-style tables


def parse_segments(path) -> list[Segment]:
    out = []
    with open(path) as f:
        for lineno, line in enumerate(f, 1):
            fields = line.split()
            if not fields:
                continue
            if len(fields) != 4:
                raise ParseError(f"expected 4 fields, got {len(fields)}", path, lineno)
            try:
                start, end = float(fields[2]), float(fields[3])
            except ValueError:
                raise ParseError("non-numeric segment time", path, lineno) from None
            out.append(Segment(fields[0], fields[1], start, end))
    return out


def format_segments(segments: Iterable[Segment]) -> str:
    lines = []
    for s in segments:
        if s.start < 0 or s.end <= s.start:
            raise ValidationError(f"invalid segment {s}")
        lines.append(f"{s.utterance_id} {s.recording_id} {_fmt_time(s.start)} {_fmt_time(s.end)}\n")
    return "".join(lines)


def write_segments(segments: Iterable[Segment], path=None) -> str:
    text = format_segments(segments)
    if path is not None:
        Path(path).write_text(text)
    return text


def parse_utt2spk(path) -> dict[str, str]:
    out = {}
    with open(path) as f:
        for lineno, line in enumerate(f, 1):
            fields = line.split()
            if not fields:
                continue
            if len(fields) != 2:
                raise ParseError(f"expected 2 fields, got {len(fields)}", path, lineno)
            out[fields[0]] = fields[1]
    return out


def write_utt2spk(mapping: dict[str, str], path=None) -> str:
    text = "".join(f"{u} {s}\n" for u, s in mapping.items())
    if path is not None:
        Path(path).write_text(text)
    return text


# ---------------------------------------------------------------------------
# manifest


def read_manifest(path) -> CorpusManifest:
    path = Path(path)
    base = path.parent
    entries = []
    with open(path) as f:
        for lineno, line in enumerate(f, 1):
            line = line.rstrip("\n")
            if not line.strip() or line.startswith("#"):
                continue
            fields = line.split("\t")
            if len(fields) != 4:
                raise ParseError(f"expected 4 tab-separated fields, got {len(fields)}", path, lineno)
            rec, audio, ann, split = fields
            audio_p, ann_p = base / audio, base / ann
            for p in (audio_p, ann_p):
                if not p.exists():
                    raise ValidationError(f"{path}:{lineno}: {p} does not exist")
            entries.append(ManifestEntry(rec, audio_p, ann_p, split))
    return CorpusManifest(entries)


def write_manifest(manifest: CorpusManifest, path) -> None:
    path = Path(path)
    base = path.parent.resolve()
    lines = []
    for e in manifest.entries:
        audio = os.path.relpath(Path(e.audio_path).resolve(), base)
        ann = os.path.relpath(Path(e.annotation_path).resolve(), base)
        lines.append(f"{e.recording_id}\t{audio}\t{ann}\t{e.split}\n")
    path.write_text("".join(lines))


# ---------------------------------------------------------------------------
# synthetic corpus


@dataclass(frozen=True)
class SyntheticVoice:
    """Harmonic-source speaker model: fundamental plus a fixed formant envelope."""

    speaker_id: str
    f0: float
    formants: tuple[float, ...]
    bandwidths: tuple[float, ...]
    gains: tuple[float, ...]
    tilt_db_per_khz: float

    def envelope(self, freqs: np.ndarray) -> np.ndarray:
        env = np.zeros_like(freqs, dtype=np.float64)
        for fc, bw, g in zip(self.formants, self.bandwidths, self.gains):
            env += g / (1.0 + ((freqs - fc) / (0.5 * bw)) ** 2)
        return env * 10.0 ** (self.tilt_db_per_khz * freqs / 1000.0 / 20.0)


# neutral vowel formants, scaled per speaker by a vocal-tract length factor
_BASE_FORMANTS = (500.0, 1500.0, 2500.0, 3500.0)
_BASE_BANDWIDTHS = (80.0, 120.0, 160.0, 200.0)


def make_voices(num_speakers: int, seed: int) -> list[SyntheticVoice]:
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xF0]))
    f0s = np.linspace(90.0, 280.0, num_speakers)
    f0s = np.clip(f0s + rng.uniform(-5, 5, num_speakers), 90.0, 280.0)
    # tract factors decorrelated from f0 so the envelope carries independent identity
    factors = rng.permutation(np.linspace(0.8, 1.25, num_speakers))
    voices = []
    for i in range(num_speakers):
        jitter = rng.uniform(0.95, 1.05, len(_BASE_FORMANTS))
        formants = tuple(float(f * factors[i] * j) for f, j in zip(_BASE_FORMANTS, jitter))
        gains = tuple(float(g) for g in rng.uniform(0.3, 1.0, len(_BASE_FORMANTS)) * (1.0, 0.7, 0.4, 0.25))
        voices.append(
            SyntheticVoice(
                speaker_id=f"spk{i + 1:02d}",
                f0=float(f0s[i]),
                formants=formants,
                bandwidths=tuple(b * float(factors[i]) for b in _BASE_BANDWIDTHS),
                gains=gains,
                tilt_db_per_khz=float(rng.uniform(-4.0, -1.0)),
            )
        )
    return voices


def _tileable(remaining: int, lo: int, hi: int) -> bool:
    """True iff `remaining` centiseconds split into parts each within [lo, hi]."""
    if remaining == 0:
        return True
    k = -(-remaining // hi)
    return k * lo <= remaining


def _draw_turn_lengths(total: int, lo: int, hi: int, rng: np.random.Generator) -> list[int]:
    lengths = []
    remaining = total
    while remaining > 0:
        top = min(hi, remaining)
        candidates = np.arange(lo, top + 1)
        ok = np.array([_tileable(remaining - c, lo, hi) for c in candidates], dtype=bool)
        if not ok.any():
            raise ParameterError(f"cannot tile {total / 100:.2f} s with turns in [{lo / 100}, {hi / 100}] s")
        # uniform over the admissible lengths; rejection keeps the last turn in range too
        while True:
            c = int(rng.integers(lo, top + 1))
            if ok[c - lo]:
                break
        lengths.append(c)
        remaining -= c
    return lengths


def _render_turn(voice: SyntheticVoice, n: int, sr: int, rng: np.random.Generator) -> np.ndarray:
    t = np.arange(n) / sr
    f0_turn = voice.f0 * rng.uniform(0.96, 1.04)
    vib_rate, vib_phase = rng.uniform(0.5, 1.5), rng.uniform(0, 2 * np.pi)
    f0 = f0_turn * (1.0 + 0.03 * np.sin(2 * np.pi * vib_rate * t + vib_phase))
    phase = 2 * np.pi * np.cumsum(f0) / sr
    nharm = int(min(4000.0, 0.45 * sr) // (f0_turn * 1.04))
    harm = np.arange(1, nharm + 1)
    amps = voice.envelope(harm * f0_turn)
    offsets = rng.uniform(0, 2 * np.pi, nharm)
    out = np.zeros(n)
    for k, a, off in zip(harm, amps, offsets):
        out += a * np.sin(k * phase + off)
    syl_rate, syl_phase = rng.uniform(3.0, 5.0), rng.uniform(0, 2 * np.pi)
    out *= 1.0 - 0.5 * (0.5 + 0.5 * np.sin(2 * np.pi * syl_rate * t + syl_phase))
    fade = min(n // 2, int(0.005 * sr))
    if fade:
        ramp = 0.5 - 0.5 * np.cos(np.pi * np.arange(fade) / fade)
        out[:fade] *= ramp
        out[n - fade :] *= ramp[::-1]
    return out / (np.sqrt(np.mean(out**2)) + 1e-12)


def generate_synthetic_corpus(
    num_speakers: int,
    num_recordings: int,
    duration: float,
    turn_len_range: Sequence[float] = (2.0, 6.0),
    seed: int = 0,
    sample_rate: int = SAMPLE_RATE,
    level: float = 0.15,
    noise_level: float = 1e-3,
) -> tuple[list[AudioSignal], list[DiarizationAnnotation]]:
    """Generate alternating-speaker conversations with exact reference annotations.

    Speaker voices are shared across recordings, so the same ``spkNN`` ids
    denote the same synthetic source everywhere in the corpus. Turn boundaries
    fall on the 10 ms grid, so 2-decimal RTTM output is exact.
    """
    if num_speakers < 2:
        raise ParameterError(f"num_speakers must be >= 2, got {num_speakers}")
    if num_recordings < 1:
        raise ParameterError("num_recordings must be >= 1")
    if not duration > 0:
        raise ParameterError("duration must be positive")
    lo_s, hi_s = turn_len_range
    if not 0 < lo_s <= hi_s:
        raise ParameterError(f"bad turn_len_range {turn_len_range}")
    if lo_s > duration:
        raise ParameterError(f"turn_len_range {turn_len_range} longer than duration {duration}")
    total, lo, hi = round(duration * 100), math.ceil(lo_s * 100 - 1e-9), math.floor(hi_s * 100 + 1e-9)
    if not _tileable(total, lo, hi):
        raise ParameterError(f"duration {duration} cannot be tiled by turns in {turn_len_range}")
    per_cs = sample_rate / 100
    if per_cs != int(per_cs):
        raise ParameterError("sample_rate must be a multiple of 100 Hz")
    per_cs = int(per_cs)

    voices = make_voices(num_speakers, seed)
    signals, annotations = [], []
    for r in range(num_recordings):
        rng = np.random.default_rng(np.random.SeedSequence([seed, r]))
        rec_id = f"rec{r + 1:03d}"
        lengths = _draw_turn_lengths(total, lo, hi, rng)
        audio = np.zeros(total * per_cs)
        turns = []
        pos, prev = 0, -1
        for length in lengths:
            choices = [s for s in range(num_speakers) if s != prev]
            spk = int(choices[rng.integers(len(choices))])
            n = length * per_cs
            audio[pos * per_cs : pos * per_cs + n] = _render_turn(voices[spk], n, sample_rate, rng)
            turns.append(Turn(voices[spk].speaker_id, pos / 100, length / 100))
            pos += length
            prev = spk
        audio = level * audio + noise_level * rng.standard_normal(len(audio))
        signals.append(AudioSignal(np.clip(audio, -1.0, 32767 / 32768), sample_rate, rec_id))
        annotations.append(DiarizationAnnotation(rec_id, turns))
    return signals, annotations


def write_corpus(out_dir, signals, annotations, splits: Sequence[str]) -> CorpusManifest:
    """Write wav + per-recording rttm files and a manifest under `out_dir`."""
    out_dir = Path(out_dir)
    (out_dir / "wav").mkdir(parents=True, exist_ok=True)
    (out_dir / "rttm").mkdir(parents=True, exist_ok=True)
    entries = []
    for sig, ann, split in zip(signals, annotations, splits):
        wav_p = out_dir / "wav" / f"{sig.recording_id}.wav"
        rttm_p = out_dir / "rttm" / f"{ann.recording_id}.rttm"
        write_wav(wav_p, sig)
        write_rttm([ann], rttm_p)
        entries.append(ManifestEntry(sig.recording_id, wav_p, rttm_p, split))
    manifest = CorpusManifest(entries)
    write_manifest(manifest, out_dir / "manifest.tsv")
    return manifest
