"""Acoustic refinement of coarse word/character timestamps.

A recognizer's word boundaries are sliced out of the waveform, each slice
is analyzed with short-time energy and zero-crossing rate, and the edges of
vocal activity are located against a threshold derived from the energy
distribution of the whole utterance. The located edges are then padded
symmetrically.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .audio import RangeOutOfBounds, Waveform, read_wav
from .errors import DataError
from .jsonl import read_jsonl, resolve_path, write_jsonl


class ClipTooShort(DataError):
    pass


class NoVoicedRegion(DataError):
    pass


@dataclass(frozen=True)
class WordTiming:
    text: str
    start: float
    end: float
    fallback: bool = False


@dataclass(frozen=True)
class TimedTranscript:
    entries: tuple[WordTiming, ...] = ()
    source: str = "coarse"

    def __post_init__(self) -> None:
        object.__setattr__(self, "entries", tuple(self.entries))
        if self.source not in ("coarse", "refined"):
            raise ValueError(f"unknown transcript source {self.source!r}")
        for i, e in enumerate(self.entries):
            if not e.start < e.end:
                raise DataError(f"entry {i} ({e.text!r}) has start {e.start} >= end {e.end}")
            if i and self.entries[i - 1].end > e.start + 1e-9:
                raise DataError(f"entry {i} ({e.text!r}) overlaps the previous entry")

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def text(self) -> str:
        return "".join(e.text for e in self.entries)

    def shifted(self, offset: float) -> "TimedTranscript":
        return TimedTranscript(
            tuple(replace(e, start=e.start + offset, end=e.end + offset) for e in self.entries),
            self.source,
        )


@dataclass(frozen=True)
class RefineConfig:
    frame_ms: float = 25.0
    hop_ms: float = 10.0
    pad_ms: float = 15.0
    # how far beyond each coarse boundary the slice extends
    search_ms: float = 200.0
    low_percentile: float = 5.0
    high_percentile: float = 95.0
    threshold_fraction: float = 0.15
    zcr_threshold: float = 0.35
    # unvoiced frames are only absorbed above this fraction of the threshold
    zcr_energy_floor: float = 0.05
    zcr_max_extend_ms: float = 100.0

    def __post_init__(self) -> None:
        if not (self.frame_ms >= self.hop_ms > 0):
            raise ValueError("need frame_ms >= hop_ms > 0")
        if not 10.0 <= self.pad_ms <= 20.0:
            raise ValueError(f"pad_ms must lie in [10, 20], got {self.pad_ms}")


@dataclass(frozen=True, eq=False)
class FrameFeatures:
    frame_ms: float
    hop_ms: float
    energy: np.ndarray
    zcr: np.ndarray

    def __len__(self) -> int:
        return self.energy.shape[0]

    def centers(self) -> np.ndarray:
        """Frame centre times in seconds, relative to the clip start."""
        return (np.arange(len(self)) * self.hop_ms + self.frame_ms / 2.0) / 1000.0

    def extents(self) -> tuple[np.ndarray, np.ndarray]:
        starts = np.arange(len(self)) * self.hop_ms / 1000.0
        return starts, starts + self.frame_ms / 1000.0


def frame_features(clip: Waveform, frame_ms: float = 25.0, hop_ms: float = 10.0) -> FrameFeatures:
    """Short-time energy (mean square) and zero-crossing rate per frame.

    The last frame is zero-padded so that every sample is covered.
    """
    if not frame_ms >= hop_ms > 0:
        raise ValueError("need frame_ms >= hop_ms > 0")
    flen = int(round(frame_ms * clip.sample_rate / 1000.0))
    hlen = max(1, int(round(hop_ms * clip.sample_rate / 1000.0)))
    x = clip.samples
    if x.size < flen or flen < 2:
        raise ClipTooShort(f"clip of {x.size} samples is shorter than one {frame_ms} ms frame")
    n = 1 + math.ceil((x.size - flen) / hlen)
    total = (n - 1) * hlen + flen
    if total > x.size:
        x = np.concatenate([x, np.zeros(total - x.size)])
    frames = np.lib.stride_tricks.sliding_window_view(x, flen)[::hlen][:n]
    energy = np.mean(frames * frames, axis=1)
    crossings = np.count_nonzero(frames[:, 1:] * frames[:, :-1] < 0, axis=1)
    zcr = crossings / (flen - 1)
    return FrameFeatures(frame_ms, hop_ms, energy, zcr)


def dynamic_threshold(
    global_energy: Sequence[float] | np.ndarray,
    low_percentile: float = 5.0,
    high_percentile: float = 95.0,
    fraction: float = 0.15,
) -> float:
    """``P_low + fraction * (P_high - P_low)`` of the utterance's frame energies."""
    e = np.asarray(global_energy, dtype=np.float64)
    if e.size == 0:
        raise DataError("cannot derive a threshold from an empty energy series")
    lo, hi = np.percentile(e, [low_percentile, high_percentile])
    return float(lo + fraction * (hi - lo))


def voiced_frames(feats: FrameFeatures, threshold: float, config: RefineConfig = RefineConfig()) -> np.ndarray:
    """Energy decision plus ZCR absorption of fricative-like frames at run edges."""
    voiced = feats.energy >= threshold
    if not voiced.any():
        return voiced
    candidate = (feats.zcr > config.zcr_threshold) & (
        feats.energy >= config.zcr_energy_floor * threshold
    )
    max_steps = int(config.zcr_max_extend_ms // feats.hop_ms)
    out = voiced.copy()
    n = voiced.size
    for i in np.flatnonzero(voiced):
        # grow leftwards from run starts and rightwards from run ends
        if i == 0 or not voiced[i - 1]:
            j, steps = i - 1, 0
            while j >= 0 and candidate[j] and not out[j] and steps < max_steps:
                out[j] = True
                j -= 1
                steps += 1
        if i == n - 1 or not voiced[i + 1]:
            j, steps = i + 1, 0
            while j < n and candidate[j] and not voiced[j] and steps < max_steps:
                out[j] = True
                j += 1
                steps += 1
    return out


def _runs(mask: np.ndarray) -> list[tuple[int, int]]:
    """Inclusive index ranges of the True runs in ``mask``."""
    idx = np.flatnonzero(mask)
    if idx.size == 0:
        return []
    breaks = np.flatnonzero(np.diff(idx) > 1)
    starts = np.concatenate([[idx[0]], idx[breaks + 1]])
    ends = np.concatenate([idx[breaks], [idx[-1]]])
    return list(zip(starts.tolist(), ends.tolist()))


def refine_word(
    clip: Waveform,
    threshold: float,
    pad_ms: float = 15.0,
    anchor: tuple[float, float] | None = None,
    config: RefineConfig = RefineConfig(),
) -> tuple[float, float]:
    """Locate vocal activity inside ``clip`` and return padded (start, end).

    Edges are located to sub-frame precision from the energy ramp of the
    frames straddling them (see ``_edge``). When
    ``anchor`` is given (the coarse interval in clip time) only voiced runs
    overlapping it are kept, falling back to the nearest run.
    """
    if not 10.0 <= pad_ms <= 20.0:
        raise ValueError(f"pad_ms must lie in [10, 20], got {pad_ms}")
    feats = frame_features(clip, config.frame_ms, config.hop_ms)
    runs = _runs(voiced_frames(feats, threshold, config))
    if not runs:
        raise NoVoicedRegion("no frame reaches the voicing threshold")
    f_start, f_end = feats.extents()
    if anchor is not None:
        a0, a1 = anchor
        chosen = [r for r in runs if f_start[r[0]] < a1 and f_end[r[1]] > a0]
        if not chosen:
            def distance(r):
                return max(a0 - f_end[r[1]], f_start[r[0]] - a1, 0.0)
            chosen = [min(runs, key=distance)]
    else:
        chosen = runs
    energy_voiced = feats.energy >= threshold
    pad = pad_ms / 1000.0
    # a run touching the clip boundary has no observable edge there
    if chosen[0][0] == 0:
        start = 0.0
    else:
        start = max(0.0, _edge(feats, chosen[0], energy_voiced, onset=True) - pad)
    if chosen[-1][1] == len(feats) - 1:
        end = clip.duration
    else:
        end = min(clip.duration, _edge(feats, chosen[-1], energy_voiced, onset=False) + pad)
    return float(start), float(end)


def _edge(feats: FrameFeatures, run: tuple[int, int], energy_voiced: np.ndarray, onset: bool) -> float:
    """Sub-frame position of a run's onset (or offset).

    A frame straddling a step edge has energy ``floor + level * overlap /
    frame``, so each straddling frame yields an edge estimate; these are
    averaged around the outermost energy-voiced frame. Frames absorbed by
    the ZCR rule that sit below the ramp (fricative-like) extend the edge to
    their centre.
    """
    centers = feats.centers()
    first, last = run
    in_run = np.arange(first, last + 1)
    strong = in_run[energy_voiced[first:last + 1]]
    if strong.size == 0:
        return float(centers[first if onset else last])
    k = int(strong[0] if onset else strong[-1])
    span = int(math.ceil(feats.frame_ms / feats.hop_ms))
    inner = np.arange(first + span, last - span + 1)
    level = float(np.median(feats.energy[inner])) if inner.size else float(np.max(feats.energy[first:last + 1]))
    floor = float(np.min(feats.energy))
    if level <= floor:
        return float(centers[k])
    ratio = (feats.energy - floor) / (level - floor)
    f_start, f_end = feats.extents()
    frame_s = feats.frame_ms / 1000.0
    estimates = []
    for j in range(max(0, k - span), min(len(feats), k + span + 1)):
        if 0.05 < ratio[j] < 0.95:
            estimates.append(f_end[j] - ratio[j] * frame_s if onset else f_start[j] + ratio[j] * frame_s)
    est = float(np.mean(estimates)) if estimates else float(centers[k])
    # never move further than one frame from the frame-centre estimate
    est = float(np.clip(est, centers[k] - frame_s, centers[k] + frame_s))
    weak = in_run[(~energy_voiced[first:last + 1]) & (ratio[first:last + 1] <= 0.05)]
    weak = weak[weak < k] if onset else weak[weak > k]
    if weak.size:
        est = min(est, float(centers[weak[0]])) if onset else max(est, float(centers[weak[-1]]))
    return est


def _resolve_overlaps(entries: list[WordTiming]) -> list[WordTiming]:
    out = list(entries)
    for i in range(len(out) - 1):
        a, b = out[i], out[i + 1]
        if a.end > b.start:
            mid = (a.end + b.start) / 2.0
            out[i] = replace(a, end=mid)
            out[i + 1] = replace(b, start=mid)
    return out


def refine_transcript(
    w: Waveform, coarse: TimedTranscript, config: RefineConfig = RefineConfig()
) -> TimedTranscript:
    """Refine every entry of ``coarse`` against ``w``.

    Entries without voiced frames keep their coarse times with
    ``fallback=True``. Overlaps created by padding are split at their midpoint.
    """
    if not len(coarse):
        return TimedTranscript((), "refined")
    dur = w.duration
    for e in coarse.entries:
        if e.start < 0 or e.end > dur + 0.5 / w.sample_rate:
            raise RangeOutOfBounds(f"coarse entry {e.text!r} [{e.start}, {e.end}] outside {dur:.3f} s")
    threshold = dynamic_threshold(
        frame_features(w, config.frame_ms, config.hop_ms).energy,
        config.low_percentile,
        config.high_percentile,
        config.threshold_fraction,
    )
    search = config.search_ms / 1000.0
    hop = int(round(config.hop_ms * w.sample_rate / 1000.0))
    refined: list[WordTiming] = []
    for e in coarse.entries:
        # window starts snap to the utterance-wide hop grid so every pass
        # sees the same frames
        lo_n = max(0, int(math.floor((e.start - search) * w.sample_rate / hop)) * hop)
        lo, hi = lo_n / w.sample_rate, min(dur, e.end + search)
        try:
            s, t = refine_word(w.slice(lo, hi), threshold, config.pad_ms, (e.start - lo, e.end - lo), config)
            refined.append(WordTiming(e.text, lo + s, lo + t, False))
        except (NoVoicedRegion, ClipTooShort):
            refined.append(WordTiming(e.text, e.start, e.end, True))

    # A midpoint split can invert a word nested inside its neighbour; such
    # words revert to coarse timing until the sequence is consistent.
    for _ in range(len(refined) + 1):
        resolved = _resolve_overlaps(refined)
        bad = [i for i, r in enumerate(resolved) if not r.start < r.end]
        if not bad:
            return TimedTranscript(tuple(resolved), "refined")
        i = bad[0]
        refined[i] = WordTiming(coarse.entries[i].text, coarse.entries[i].start, coarse.entries[i].end, True)
    return TimedTranscript(
        tuple(WordTiming(e.text, e.start, e.end, True) for e in coarse.entries), "refined"
    )


# --- JSONL ingestion -----------------------------------------------------

def transcript_from_record(rec: dict, source: str = "coarse") -> TimedTranscript:
    try:
        words = rec["words"]
        entries = tuple(
            WordTiming(str(wd["w"]), float(wd["start"]), float(wd["end"]), bool(wd.get("fallback", False)))
            for wd in words
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(f"malformed word list: {exc}") from exc
    return TimedTranscript(entries, source)


def record_with_transcript(rec: dict, transcript: TimedTranscript) -> dict:
    out = dict(rec)
    out["words"] = [
        {"w": e.text, "start": round(e.start, 6), "end": round(e.end, 6),
         "source": transcript.source, "fallback": e.fallback}
        for e in transcript.entries
    ]
    return out


def refine_record(
    rec: dict, base: Path, config: RefineConfig = RefineConfig(), out_dir: Path | None = None
) -> dict:
    audio = resolve_path(base, rec["audio_path"])
    w = read_wav(audio)
    out = record_with_transcript(rec, refine_transcript(w, transcript_from_record(rec), config))
    if out_dir is not None and not Path(rec["audio_path"]).is_absolute():
        out["audio_path"] = os.path.relpath(audio, out_dir)
    return out


def refine_jsonl(in_path: str | Path, out_path: str | Path, config: RefineConfig = RefineConfig(), jobs: int = 1) -> int:
    in_path = Path(in_path)
    records = read_jsonl(in_path)
    base, out_dir = in_path.parent, Path(out_path).parent
    if jobs > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(jobs) as pool:
            out = list(pool.map(lambda r: refine_record(r, base, config, out_dir), records))
    else:
        out = [refine_record(r, base, config, out_dir) for r in records]
    write_jsonl(out_path, out)
    return len(out)
