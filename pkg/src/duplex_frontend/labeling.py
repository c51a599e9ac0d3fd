"""Chunk-level ground truth from a session's target-speaker timeline."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import TYPE_CHECKING, Optional, Sequence

import numpy as np

from .audio import DEFAULT_SAMPLE_RATE, chunk_length
from .errors import DataError
from .jsonl import read_jsonl
from .timestamps import WordTiming
from .tokens import ChunkEvent, TurnState, VadState, parse, serialize

if TYPE_CHECKING:
    from .scenarios import SessionRender

DEFAULT_CHUNK_MS = 600
DEFAULT_OVERLAP_MIN_MS = 60
DEFAULT_SYSTEM_PROMPT = (
    "You are the listening front end of a full-duplex voice assistant. For every "
    "600 ms audio chunk, state whether the enrolled speaker is talking; when they "
    "stop, transcribe what they said, classify the turn and, if a reply is due, answer."
)


class EventOutOfBounds(DataError):
    pass


class LabelAlignmentError(DataError):
    """Target events and chunk labels disagree; never silently skipped."""


@dataclass(frozen=True)
class TargetEvent:
    """One target-speaker utterance placed on the session timeline.

    ``start``/``end`` bound the speech itself (first word onset to last word
    offset), not the surrounding file padding.
    """

    start: float
    end: float
    text: str
    turn: Optional[TurnState] = None
    answer: Optional[str] = None
    utterance_id: str = ""
    speaker_id: str = ""
    words: tuple[WordTiming, ...] = ()
    barge_in: bool = False

    def __post_init__(self) -> None:
        if not self.start < self.end:
            raise DataError(f"event {self.utterance_id!r} has start {self.start} >= end {self.end}")
        if self.turn is not None:
            object.__setattr__(self, "turn", TurnState(self.turn))
            if self.turn.takes_answer != (self.answer is not None):
                raise DataError(
                    f"event {self.utterance_id!r}: answer must be present exactly for Complete/Interrupt turns"
                )

    def to_dict(self) -> dict:
        return {
            "start": self.start,
            "end": self.end,
            "text": self.text,
            "turn": self.turn.value if self.turn is not None else None,
            "answer": self.answer,
            "utterance_id": self.utterance_id,
            "speaker_id": self.speaker_id,
            "words": [{"w": w.text, "start": w.start, "end": w.end} for w in self.words],
            "barge_in": self.barge_in,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TargetEvent":
        try:
            words = tuple(WordTiming(str(w["w"]), float(w["start"]), float(w["end"])) for w in d.get("words", ()))
            turn = d.get("turn")
            return cls(float(d["start"]), float(d["end"]), str(d["text"]),
                       TurnState(turn) if turn is not None else None, d.get("answer"),
                       str(d.get("utterance_id", "")), str(d.get("speaker_id", "")), words,
                       bool(d.get("barge_in", False)))
        except (KeyError, TypeError, ValueError) as exc:
            raise DataError(f"malformed event {d!r}: {exc}") from exc


def _sample_span(e: TargetEvent, n_session: int, sample_rate: int) -> tuple[int, int]:
    a, b = int(round(e.start * sample_rate)), int(round(e.end * sample_rate))
    if e.start < 0 or b > n_session:
        raise EventOutOfBounds(
            f"event {e.utterance_id or e.text!r} [{e.start}, {e.end}] outside session of "
            f"{n_session / sample_rate:.6f} s"
        )
    return a, b


def chunk_count(duration: float, chunk_ms: float = DEFAULT_CHUNK_MS, sample_rate: int = DEFAULT_SAMPLE_RATE) -> int:
    n = chunk_length(chunk_ms, sample_rate)
    return -(-int(round(duration * sample_rate)) // n)


def label_vad_chunks(
    events: Sequence[TargetEvent],
    session_duration: float,
    chunk_ms: float = DEFAULT_CHUNK_MS,
    overlap_min_ms: float = DEFAULT_OVERLAP_MIN_MS,
    sample_rate: int = DEFAULT_SAMPLE_RATE,
) -> list[VadState]:
    """TALK for every chunk whose overlap with target speech (union of event
    intervals) reaches ``overlap_min_ms``; SIL otherwise."""
    n = chunk_length(chunk_ms, sample_rate)
    n_session = int(round(session_duration * sample_rate))
    min_overlap = int(round(overlap_min_ms * sample_rate / 1000.0))
    count = -(-n_session // n)
    active = np.zeros(count * n, dtype=bool)
    for e in events:
        a, b = _sample_span(e, n_session, sample_rate)
        active[a:b] = True
    per_chunk = active.reshape(count, n).sum(axis=1) if count else np.zeros(0, dtype=int)
    return [VadState.TALK if int(c) >= min_overlap else VadState.SIL for c in per_chunk]


@dataclass
class LabelInfo:
    virtual_tail_chunks: int = 0
    merged_utterances: int = 0


def _talk_runs(vad: Sequence[VadState]) -> list[tuple[int, int]]:
    runs, start = [], None
    for k, v in enumerate(vad):
        if v is VadState.TALK and start is None:
            start = k
        elif v is not VadState.TALK and start is not None:
            runs.append((start, k - 1))
            start = None
    if start is not None:
        runs.append((start, len(vad) - 1))
    return runs


def attach_semantic_events(
    vad_labels: Sequence[VadState],
    events: Sequence[TargetEvent],
    chunk_ms: float = DEFAULT_CHUNK_MS,
    sample_rate: int = DEFAULT_SAMPLE_RATE,
) -> tuple[list[ChunkEvent], LabelInfo]:
    """Attach ASR text, turn and answer at each talk-to-silence transition.

    Each event is assigned to the TALK run holding its last TALK chunk. Several
    events in one run (speech that never drops to a SIL chunk) are merged:
    texts concatenated, turn and answer from the last. A run still open at the
    final chunk gets a virtual trailing SIL chunk so its transition exists.
    """
    n = chunk_length(chunk_ms, sample_rate)
    vad = list(vad_labels)
    runs = _talk_runs(vad)
    run_of_chunk = {k: i for i, (a, b) in enumerate(runs) for k in range(a, b + 1)}
    members: list[list[TargetEvent]] = [[] for _ in runs]
    for e in sorted(events, key=lambda e: (e.start, e.end)):
        a = int(round(e.start * sample_rate)) // n
        b = (int(round(e.end * sample_rate)) - 1) // n
        talk = [k for k in range(a, b + 1) if k < len(vad) and vad[k] is VadState.TALK]
        if not talk:
            raise LabelAlignmentError(
                f"event {e.utterance_id or e.text!r} [{e.start:.3f}, {e.end:.3f}] produces no TALK chunk"
            )
        members[run_of_chunk[talk[-1]]].append(e)

    info = LabelInfo()
    if runs and runs[-1][1] == len(vad) - 1:
        vad.append(VadState.SIL)
        info.virtual_tail_chunks = 1
    out = [ChunkEvent(k, v) for k, v in enumerate(vad)]
    for (a, b), group in zip(runs, members):
        if not group:
            raise LabelAlignmentError(f"TALK chunks {a}..{b} have no matching target event")
        info.merged_utterances += len(group) - 1
        last = group[-1]
        text = "".join(e.text for e in group)
        answer = last.answer if last.turn is not None and last.turn.takes_answer else None
        out[b + 1] = ChunkEvent(b + 1, VadState.SIL, text, last.turn, answer)
    return out, info


def label_events(
    events: Sequence[TargetEvent],
    session_duration: float,
    chunk_ms: float = DEFAULT_CHUNK_MS,
    overlap_min_ms: float = DEFAULT_OVERLAP_MIN_MS,
    sample_rate: int = DEFAULT_SAMPLE_RATE,
) -> tuple[list[ChunkEvent], LabelInfo]:
    vad = label_vad_chunks(events, session_duration, chunk_ms, overlap_min_ms, sample_rate)
    return attach_semantic_events(vad, events, chunk_ms, sample_rate)


def label_session(render: "SessionRender", chunk_ms: float = DEFAULT_CHUNK_MS,
                  overlap_min_ms: float = DEFAULT_OVERLAP_MIN_MS) -> tuple[list[ChunkEvent], LabelInfo]:
    duration, sr = _timing(render)
    return label_events(render.events, duration, chunk_ms, overlap_min_ms, sr)


# --- training samples ------------------------------------------------------

@dataclass
class TrainingSample:
    """A reference clip, a system prompt, then one label per audio chunk.

    Audio is referenced by path; ``tokens`` is the serialized label stream.
    """

    id: str
    ref_audio: str
    system_prompt: str
    mixture_audio: str
    chunk_ms: float
    labels: list[ChunkEvent]
    meta: dict = field(default_factory=dict)

    @property
    def n_chunks(self) -> int:
        return len(self.labels)

    @property
    def tokens(self) -> str:
        return serialize(self.labels)

    def layout(self) -> list[tuple[str, object]]:
        """Model-input order: reference audio, prompt, then (chunk, label) pairs."""
        seq: list[tuple[str, object]] = [("ref_audio", self.ref_audio), ("system_prompt", self.system_prompt)]
        for e in self.labels:
            seq += [("chunk", e.index), ("label", e)]
        return seq

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "ref_audio": self.ref_audio,
            "system_prompt": self.system_prompt,
            "mixture_audio": self.mixture_audio,
            "chunk_ms": self.chunk_ms,
            "n_chunks": self.n_chunks,
            "tokens": self.tokens,
            "events": [e.to_dict() for e in self.labels],
            "meta": self.meta,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TrainingSample":
        try:
            labels = [ChunkEvent.from_dict(x) for x in d["events"]]
            sample = cls(str(d["id"]), str(d["ref_audio"]), str(d["system_prompt"]),
                         str(d["mixture_audio"]), float(d["chunk_ms"]), labels, dict(d.get("meta", {})))
        except (KeyError, TypeError, ValueError) as exc:
            raise DataError(f"malformed training sample: {exc}") from exc
        if int(d["n_chunks"]) != sample.n_chunks:
            raise DataError(f"sample {sample.id}: n_chunks {d['n_chunks']} != {sample.n_chunks} labels")
        if parse(d["tokens"]) != labels:
            raise DataError(f"sample {sample.id}: token text disagrees with its events")
        return sample


def _timing(session) -> tuple[float, int]:
    # an in-memory render or a session loaded from disk
    if hasattr(session, "mixture"):
        return session.mixture.duration, session.mixture.sample_rate
    return session.duration, session.sample_rate


def emit_training_sample(
    render: "SessionRender",
    labels: Sequence[ChunkEvent],
    ref_audio: str | None,
    system_prompt: str,
    mixture_audio: str,
    chunk_ms: float = DEFAULT_CHUNK_MS,
    info: LabelInfo | None = None,
) -> TrainingSample:
    """Bundle a labeled render; ``labels`` must cover every chunk of the mixture
    (plus any virtual trailing chunk recorded in ``info``)."""
    if not ref_audio:
        raise DataError(f"session {render.session_id}: missing reference audio")
    duration, sr = _timing(render)
    expected = chunk_count(duration, chunk_ms, sr)
    if expected == 0:
        raise DataError(f"session {render.session_id}: zero-chunk session")
    tail = info.virtual_tail_chunks if info else 0
    if len(labels) != expected + tail:
        raise DataError(
            f"session {render.session_id}: {len(labels)} labels for {expected} chunks"
            + (f" + {tail} virtual" if tail else "")
        )
    serialize(labels)  # validates
    meta = {
        "kind": render.kind,
        "seed": render.seed,
        "duration": duration,
        "n_target_utterances": len(render.events),
        "virtual_tail_chunks": tail,
        "merged_utterances": info.merged_utterances if info else 0,
    }
    return TrainingSample(render.session_id, ref_audio, system_prompt, mixture_audio, chunk_ms,
                          list(labels), meta)


def write_samples(path: str | Path, samples: Sequence[TrainingSample]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        for s in sorted(samples, key=lambda s: s.id):
            f.write(json.dumps(s.to_dict(), ensure_ascii=False, sort_keys=True) + "\n")


def read_samples(path: str | Path) -> list[TrainingSample]:
    return [TrainingSample.from_dict(d) for d in read_jsonl(path)]
