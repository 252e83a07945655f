"""Diarization error rate with a forgiveness collar and optimal speaker mapping.

All times are handled on an integer millisecond grid, so results do not
depend on float summation order.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

from .audio_io import DiarizationAnnotation
from .errors import ParameterError, UndefinedDERError, ValidationError


def to_ms(t: float) -> int:
    return int(round(float(t) * 1000.0))


def _merge(intervals: list[tuple[int, int]]) -> list[tuple[int, int]]:
    out: list[list[int]] = []
    for s, e in sorted(intervals):
        if e <= s:
            continue
        if out and s <= out[-1][1]:
            out[-1][1] = max(out[-1][1], e)
        else:
            out.append([s, e])
    return [(s, e) for s, e in out]


def collar_regions_ms(reference: DiarizationAnnotation, collar: float) -> list[tuple[int, int]]:
    c = to_ms(collar)
    if c < 0:
        raise ParameterError("collar must be >= 0")
    if c == 0:
        return []
    bounds = set()
    for t in reference.turns:
        bounds.add(to_ms(t.onset))
        bounds.add(to_ms(t.end))
    return _merge([(b - c, b + c) for b in bounds])


def apply_collar(reference: DiarizationAnnotation, collar: float) -> list[tuple[float, float]]:
    """Merged no-score regions of +/- `collar` seconds around every reference boundary."""
    return [(s / 1000.0, e / 1000.0) for s, e in collar_regions_ms(reference, collar)]


@dataclass
class DERReport:
    recording_id: str
    err_spk: float  # seconds
    err_fas: float
    err_miss: float
    scored_time: float
    mapping: dict = field(default_factory=dict)

    @property
    def der_percent(self) -> float:
        if self.scored_time <= 0:
            raise UndefinedDERError(f"{self.recording_id}: no scored reference speech")
        return 100.0 * (self.err_spk + self.err_fas + self.err_miss) / self.scored_time


def _turns_ms(ann: DiarizationAnnotation):
    out: dict[str, list[tuple[int, int]]] = {}
    for t in ann.turns:
        out.setdefault(t.speaker, []).append((to_ms(t.onset), to_ms(t.end)))
    return {k: _merge(v) for k, v in out.items()}


def _activity(turns: list[tuple[int, int]], starts: np.ndarray) -> np.ndarray:
    """Whether the speaker is active on each atomic interval starting at `starts`."""
    act = np.zeros(len(starts), dtype=bool)
    for s, e in turns:
        lo, hi = np.searchsorted(starts, [s, e])
        act[lo:hi] = True
    return act


def optimal_mapping(overlap: np.ndarray, hyp_names: Sequence[str], ref_names: Sequence[str]) -> dict[str, str]:
    """One-to-one hypothesis -> reference mapping maximizing total overlap.

    Among equally good mappings the earlier reference speaker wins. Pairs
    with zero overlap are left unmapped.
    """
    H, R = overlap.shape
    if H == 0 or R == 0:
        return {}
    ov = np.asarray(overlap, dtype=np.int64)
    big = min(H, R) * R + 1
    weight = ov * big + (R - 1 - np.arange(R))[None, :]
    rows, cols = linear_sum_assignment(weight.astype(np.float64), maximize=True)
    return {hyp_names[h]: ref_names[r] for h, r in zip(rows, cols) if ov[h, r] > 0}


def compute_der(reference: DiarizationAnnotation, hypothesis: DiarizationAnnotation, collar: float = 0.25) -> DERReport:
    """Speaker error, false alarm and missed speech over the scored time.

    On each stretch with N_ref reference and N_hyp hypothesis speakers, of
    which N_corr are matched under the mapping, miss is max(0, N_ref-N_hyp),
    false alarm is max(0, N_hyp-N_ref) and speaker error is
    min(N_ref, N_hyp) - N_corr, all weighted by the stretch length.
    """
    if reference.recording_id and hypothesis.recording_id and reference.recording_id != hypothesis.recording_id:
        raise ValidationError(
            f"recording mismatch: reference {reference.recording_id!r}, hypothesis {hypothesis.recording_id!r}"
        )
    ref = _turns_ms(reference)
    hyp = _turns_ms(hypothesis)
    ref_names = reference.speakers
    hyp_names = hypothesis.speakers
    excl = collar_regions_ms(reference, collar)
    points = {0}
    for group in (ref, hyp):
        for turns in group.values():
            for s, e in turns:
                points.update((s, e))
    for s, e in excl:
        points.update((s, e))
    pts = np.array(sorted(points), dtype=np.int64)
    starts, lengths = pts[:-1], np.diff(pts)
    scored = ~_activity(excl, starts)
    w = np.where(scored, lengths, 0)

    ref_act = np.array([_activity(ref[s], starts) for s in ref_names]).reshape(len(ref_names), len(starts))
    hyp_act = np.array([_activity(hyp[s], starts) for s in hyp_names]).reshape(len(hyp_names), len(starts))
    overlap = (hyp_act.astype(np.int64) * w) @ ref_act.T.astype(np.int64)
    mapping = optimal_mapping(overlap, hyp_names, ref_names)

    n_ref = ref_act.sum(axis=0)
    n_hyp = hyp_act.sum(axis=0)
    n_corr = np.zeros(len(starts), dtype=np.int64)
    for h, r in mapping.items():
        n_corr += hyp_act[hyp_names.index(h)] & ref_act[ref_names.index(r)]
    miss = int(np.sum(w * np.maximum(0, n_ref - n_hyp)))
    fa = int(np.sum(w * np.maximum(0, n_hyp - n_ref)))
    spk = int(np.sum(w * (np.minimum(n_ref, n_hyp) - n_corr)))
    total = int(np.sum(w * n_ref))
    return DERReport(reference.recording_id, spk / 1000.0, fa / 1000.0, miss / 1000.0, total / 1000.0, mapping)


def pool_reports(reports: Sequence[DERReport], recording_id: str = "ALL") -> DERReport:
    """Sum error components and scored time over recordings."""
    ms = lambda v: sum(to_ms(x) for x in v) / 1000.0  # noqa: E731
    return DERReport(
        recording_id,
        ms(r.err_spk for r in reports),
        ms(r.err_fas for r in reports),
        ms(r.err_miss for r in reports),
        ms(r.scored_time for r in reports),
    )


def evaluate(
    references: dict[str, DiarizationAnnotation],
    hypotheses: dict[str, DiarizationAnnotation],
    collar: float = 0.25,
) -> tuple[list[DERReport], DERReport]:
    """Per-recording reports plus the pooled total over the reference recordings."""
    reports = []
    for rid in sorted(references):
        hyp = hypotheses.get(rid, DiarizationAnnotation(rid, []))
        reports.append(compute_der(references[rid], hyp, collar))
    return reports, pool_reports(reports)


DER_CSV_HEADER = "recording,err_spk,err_fas,err_miss,T,der_percent"


def format_der_csv(reports: Sequence[DERReport], total: DERReport | None = None) -> str:
    buf = io.StringIO()
    buf.write(DER_CSV_HEADER + "\n")
    for r in list(reports) + ([total] if total is not None else []):
        der = f"{r.der_percent:.2f}" if r.scored_time > 0 else "nan"
        buf.write(f"{r.recording_id},{r.err_spk:.3f},{r.err_fas:.3f},{r.err_miss:.3f},{r.scored_time:.3f},{der}\n")
    return buf.getvalue()


def write_der_csv(path, reports: Sequence[DERReport], total: DERReport | None = None) -> None:
    Path(path).write_text(format_der_csv(reports, total))


def format_der_report(reports: Sequence[DERReport], total: DERReport) -> str:
    lines = [f"{'recording':<12} {'spk':>8} {'fa':>8} {'miss':>8} {'scored':>9} {'DER%':>7}"]
    for r in list(reports) + [total]:
        der = f"{r.der_percent:7.2f}" if r.scored_time > 0 else "    nan"
        lines.append(
            f"{r.recording_id:<12} {r.err_spk:8.2f} {r.err_fas:8.2f} {r.err_miss:8.2f} {r.scored_time:9.2f} {der}"
        )
    return "\n".join(lines) + "\n"
