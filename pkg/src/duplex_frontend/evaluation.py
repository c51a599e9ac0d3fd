"""Metrics over session traces versus labeled ground truth.

All metrics are chunk-level. Conventions for empty denominators:
precision with no predicted positives is 1.0 when there are also no missed
positives and 0.0 otherwise; recall with no reference positives is 1.0;
accuracy over zero chunks is 1.0. Turn classes without reference support are
omitted rather than reported as 0.
"""

from __future__ import annotations

import json
import math
import unicodedata
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np
from rapidfuzz.distance import Levenshtein
from rapidfuzz.process import cdist

from .controller import (
    Action,
    ActionKind,
    ChunkTrace,
    ControllerState,
    FrontendOutput,
    Mode,
    SessionTrace,
    simulate_oracle,
    transition_chunks,
)
from .errors import DataError
from .jsonl import read_jsonl
from .labeling import TrainingSample
from .tokens import ChunkEvent, TurnState, VadState


class UnmatchedSession(DataError):
    pass


@dataclass(frozen=True)
class VadConfusion:
    tp: int = 0
    fp: int = 0
    tn: int = 0
    fn: int = 0

    def __add__(self, other: "VadConfusion") -> "VadConfusion":
        return VadConfusion(self.tp + other.tp, self.fp + other.fp, self.tn + other.tn, self.fn + other.fn)

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    @property
    def accuracy(self) -> float:
        return (self.tp + self.tn) / self.total if self.total else 1.0

    @property
    def precision(self) -> float:
        if self.tp + self.fp == 0:
            return 1.0 if self.fn == 0 else 0.0
        return self.tp / (self.tp + self.fp)

    @property
    def recall(self) -> float:
        return self.tp / (self.tp + self.fn) if self.tp + self.fn else 1.0

    @property
    def f1(self) -> float:
        return f1_score(self.precision, self.recall)

    def as_dict(self) -> dict:
        return {"tp": self.tp, "fp": self.fp, "tn": self.tn, "fn": self.fn, "accuracy": self.accuracy,
                "precision": self.precision, "recall": self.recall, "f1": self.f1}


def f1_score(precision: float, recall: float) -> float:
    return 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0


def vad_metrics(pred: Sequence[VadState], ref: Sequence[VadState]) -> VadConfusion:
    if len(pred) != len(ref):
        raise DataError(f"VAD sequences differ in length: {len(pred)} vs {len(ref)}")
    tp = fp = tn = fn = 0
    for p, r in zip(pred, ref):
        p_talk, r_talk = VadState(p) is VadState.TALK, VadState(r) is VadState.TALK
        if p_talk and r_talk:
            tp += 1
        elif p_talk:
            fp += 1
        elif r_talk:
            fn += 1
        else:
            tn += 1
    return VadConfusion(tp, fp, tn, fn)


# --- WER ---------------------------------------------------------------------

def normalize_text(s: str) -> str:
    """NFKC, case-folded, with whitespace and punctuation removed."""
    s = unicodedata.normalize("NFKC", s).casefold()
    return "".join(c for c in s if not unicodedata.category(c).startswith(("P", "Z", "C")))


def levenshtein(a: Sequence, b: Sequence) -> int:
    """Unit-cost edit distance (substitution, insertion, deletion)."""
    return Levenshtein.distance(a, b)


def edit_distance_matrix(hyps: Sequence[Sequence], refs: Sequence[Sequence]) -> np.ndarray:
    """``levenshtein`` for every (hyp, ref) pair, as a len(hyps) x len(refs) array."""
    return cdist(hyps, refs, scorer=Levenshtein.distance, dtype=np.int32)


def edit_distance_wer(hyp: str, ref: str) -> float:
    """Character-level error rate after normalization."""
    h, r = normalize_text(hyp), normalize_text(ref)
    if not r:
        raise DataError("reference is empty after normalization")
    return levenshtein(h, r) / len(r)


# --- turn accuracy -----------------------------------------------------------

def turn_accuracy(pred: Sequence[Optional[TurnState]], ref: Sequence[TurnState]) -> dict[str, dict]:
    """Per reference class: fraction predicted correctly, with support.
    A missing prediction (``None``) counts as wrong."""
    if len(pred) != len(ref):
        raise DataError(f"turn sequences differ in length: {len(pred)} vs {len(ref)}")
    correct: dict[TurnState, int] = {}
    support: dict[TurnState, int] = {}
    for p, r in zip(pred, ref):
        try:
            r = TurnState(r)
            p = TurnState(p) if p is not None else None
        except ValueError as exc:
            raise DataError(f"unknown turn class: {exc}") from exc
        support[r] = support.get(r, 0) + 1
        correct[r] = correct.get(r, 0) + (p is r)
    return {t.value: {"accuracy": correct[t] / support[t], "support": support[t]}
            for t in TurnState if t in support}


# --- traces on disk --------------------------------------------------------------

def write_traces(path: str | Path, traces: Iterable[SessionTrace]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        for t in sorted(traces, key=lambda t: t.session_id):
            for rec in t.records():
                f.write(json.dumps(rec, ensure_ascii=False, sort_keys=True) + "\n")


def read_traces(path: str | Path) -> list[SessionTrace]:
    by_id: dict[str, SessionTrace] = {}
    closed: set[str] = set()
    for lineno, rec in enumerate(read_jsonl(path), 1):
        try:
            sid = rec["session_id"]
            trace = by_id.setdefault(sid, SessionTrace(sid))
            if rec["record"] == "chunk":
                st = rec["controller_state"]
                state = ControllerState(Mode(st["mode"]), st["pending_transcript"], st["playback_active"],
                                        float(st["playback_remaining"]))
                trace.chunks.append(ChunkTrace(int(rec["chunk_index"]), FrontendOutput.from_dict(rec["frontend_output"]),
                                               state, [Action.from_dict(a) for a in rec["actions"]]))
            elif rec["record"] == "session":
                trace.failed = rec["status"] == "failed"
                trace.error = rec.get("error")
                closed.add(sid)
            else:
                raise ValueError(f"unknown record type {rec['record']!r}")
        except (KeyError, TypeError, ValueError) as exc:
            raise DataError(f"{path}: record {lineno}: {exc}") from exc
    missing = sorted(set(by_id) - closed)
    if missing:
        raise DataError(f"{path}: traces without a closing session record: {missing[:5]}")
    return list(by_id.values())


# --- aggregation -----------------------------------------------------------------

def _asr_text(items: Iterable) -> str:
    return "".join(x.asr_text for x in items if x.asr_text is not None)


def barge_in_latencies(trace: SessionTrace, labels: Sequence[ChunkEvent]) -> list[Optional[int]]:
    """Chunks from each labeled interrupt transition (while a reference
    controller would be playing) to the trace's first HaltPlayback; ``None``
    when playback is never halted before the next transition."""
    reference = simulate_oracle(trace.session_id, labels)
    halts_ref = {c.chunk_index for c in reference.chunks
                 if any(a.kind is ActionKind.HaltPlayback for a in c.actions)}
    halts = sorted(c.chunk_index for c in trace.chunks if any(a.kind is ActionKind.HaltPlayback for a in c.actions))
    transitions = transition_chunks(labels)
    out = []
    for i, g in enumerate(transitions):
        if labels[g].turn is not TurnState.Interrupt or g not in halts_ref:
            continue
        horizon = transitions[i + 1] if i + 1 < len(transitions) else len(labels)
        hit = next((h for h in halts if g <= h < horizon), None)
        out.append(None if hit is None else hit - g)
    return out


@dataclass
class SessionMetrics:
    session_id: str
    kind: str
    vad: VadConfusion
    hyp_text: str
    ref_text: str
    turn_pairs: list[tuple[Optional[TurnState], TurnState]]
    latencies: list[Optional[int]]


def session_metrics(trace: SessionTrace, sample: TrainingSample) -> SessionMetrics:
    labels = sample.labels
    outs = trace.outputs()
    if len(outs) != len(labels):
        raise DataError(f"session {trace.session_id}: trace has {len(outs)} chunks, labels {len(labels)}")
    vad = vad_metrics([o.vad for o in outs], [e.vad for e in labels])
    pairs = [(outs[k].turn, labels[k].turn) for k in transition_chunks(labels) if labels[k].turn is not None]
    return SessionMetrics(trace.session_id, str(sample.meta.get("kind", "")), vad, _asr_text(outs),
                          _asr_text(labels), pairs, barge_in_latencies(trace, labels))


def _match(traces: Sequence[SessionTrace], samples: Sequence[TrainingSample]):
    t_ids = {t.session_id: t for t in traces}
    s_ids = {s.id: s for s in samples}
    if len(t_ids) != len(traces):
        raise DataError("duplicate session ids among traces")
    if len(s_ids) != len(samples):
        raise DataError("duplicate session ids among samples")
    only_t, only_s = sorted(set(t_ids) - set(s_ids)), sorted(set(s_ids) - set(t_ids))
    if only_t:
        raise UnmatchedSession(f"traces without a labeled sample: {only_t[:5]}")
    if only_s:
        raise UnmatchedSession(f"samples without a trace: {only_s[:5]}")
    return [(t_ids[i], s_ids[i]) for i in sorted(s_ids)]


def run_evaluation(traces: Sequence[SessionTrace], samples: Sequence[TrainingSample]) -> dict:
    """Aggregate report; failed sessions are counted and excluded."""
    if not samples and not traces:
        raise DataError("no sessions to evaluate")
    pairs = _match(traces, samples)
    failed = [t.session_id for t, _ in pairs if t.failed]
    metrics = [session_metrics(t, s) for t, s in pairs if not t.failed]

    vad = sum((m.vad for m in metrics), VadConfusion())
    edits = sum(levenshtein(normalize_text(m.hyp_text), normalize_text(m.ref_text)) for m in metrics)
    ref_chars = sum(len(normalize_text(m.ref_text)) for m in metrics)
    turn_pred = [p for m in metrics for p, _ in m.turn_pairs]
    turn_ref = [r for m in metrics for _, r in m.turn_pairs]
    lat = [x for m in metrics for x in m.latencies]
    hist: dict[str, int] = {}
    for x in lat:
        key = "missed" if x is None else str(x)
        hist[key] = hist.get(key, 0) + 1
    hit = [x for x in lat if x is not None]

    by_kind: dict[str, dict] = {}
    for kind in sorted({m.kind for m in metrics}):
        ms = [m for m in metrics if m.kind == kind]
        by_kind[kind] = {"sessions": len(ms), "vad_f1": sum((m.vad for m in ms), VadConfusion()).f1,
                         "chunks": sum(m.vad.total for m in ms)}

    return {
        "sessions": {"total": len(pairs), "evaluated": len(metrics), "failed": len(failed),
                     "failed_ids": failed},
        "vad": vad.as_dict(),
        "wer": {"value": edits / ref_chars if ref_chars else None, "edits": edits, "ref_chars": ref_chars},
        "turn_accuracy": turn_accuracy(turn_pred, turn_ref),
        "barge_in_latency": {
            "count": len(lat),
            "histogram": dict(sorted(hist.items(), key=lambda kv: (kv[0] == "missed", int(kv[0]) if kv[0] != "missed" else 0))),
            "missed": hist.get("missed", 0),
            "fraction_zero": (sum(1 for x in hit if x == 0) / len(lat)) if lat else None,
            "fraction_within_one": (sum(1 for x in hit if x <= 1) / len(lat)) if lat else None,
            "mean_chunks": (sum(hit) / len(hit)) if hit else None,
        },
        "by_kind": by_kind,
    }


def summary_rows(report: dict) -> list[tuple[str, str]]:
    def fmt(v) -> str:
        if v is None:
            return "n/a"
        if isinstance(v, float):
            return f"{v:.6f}"
        return str(v)

    rows = [("sessions_total", fmt(report["sessions"]["total"])),
            ("sessions_failed", fmt(report["sessions"]["failed"]))]
    rows += [(f"vad_{k}", fmt(report["vad"][k])) for k in ("accuracy", "precision", "recall", "f1")]
    rows.append(("wer", fmt(report["wer"]["value"])))
    for cls, v in report["turn_accuracy"].items():
        rows.append((f"turn_{cls}", f"{fmt(v['accuracy'])} (n={v['support']})"))
    b = report["barge_in_latency"]
    rows += [("barge_in_count", fmt(b["count"])), ("barge_in_fraction_zero", fmt(b["fraction_zero"])),
             ("barge_in_missed", fmt(b["missed"]))]
    return rows


def write_report(report: dict, out_dir: str | Path, config_echo: dict | None = None,
                 figures: bool = True) -> dict[str, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    doc = dict(report)
    if config_echo is not None:
        doc["config"] = config_echo
    paths = {"report": out / "report.json", "summary": out / "summary.tsv"}
    paths["report"].write_text(json.dumps(doc, ensure_ascii=False, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    with open(paths["summary"], "w", encoding="utf-8") as f:
        f.write("metric\tvalue\n")
        for k, v in summary_rows(report):
            f.write(f"{k}\t{v}\n")
    if figures:
        from .plotting import render_figures

        paths.update(render_figures(report, out))
    return paths


def binomial_sigma(p: float, n: int) -> float:
    return math.sqrt(p * (1 - p) / n)
