"""Per-chunk token protocol.

A session is a sequence of chunk records. Each record is a VAD marker,
optionally followed by an ASR span, a turn marker and an answer span, in that
order. ASR spans only appear on the first SIL chunk after TALK. Chunk
boundaries are implicit: every VAD marker opens a new record.
"""

from __future__ import annotations

import enum
import re
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

from .errors import ProtocolViolation


class VadState(str, enum.Enum):
    SIL = "SIL"
    TALK = "TALK"

    @property
    def marker(self) -> str:
        return f"<{self.value}>"


class TurnState(str, enum.Enum):
    Complete = "Complete"
    InComplete = "InComplete"
    Interrupt = "Interrupt"
    Backchannel = "Backchannel"

    @property
    def marker(self) -> str:
        return f"<{self.value}>"

    @property
    def takes_answer(self) -> bool:
        return self in (TurnState.Complete, TurnState.Interrupt)


ASR_START, ASR_END = "<AsrStart>", "<AsrEnd>"
ANSWER_START, ANSWER_END = "<AnswerStart>", "<AnswerEnd>"

MARKERS = tuple(v.marker for v in VadState) + tuple(t.marker for t in TurnState) + (
    ASR_START, ASR_END, ANSWER_START, ANSWER_END,
)
_MARKER_RE = re.compile("|".join(re.escape(m) for m in sorted(MARKERS, key=len, reverse=True)))
_VAD_BY_MARKER = {v.marker: v for v in VadState}
_TURN_BY_MARKER = {t.marker: t for t in TurnState}
_FORBIDDEN_TEXT_CHARS = ("\n", "\r")


class TokenError(ProtocolViolation):
    """Protocol error; ``offset`` is a character offset into the token text
    (or ``None`` for event-level errors)."""

    def __init__(self, message: str, offset: int | None = None):
        self.offset = offset
        super().__init__(message if offset is None else f"{message} (offset {offset})")


class InvalidEvent(TokenError):
    pass


class UnterminatedSpan(TokenError):
    pass


class UnexpectedMarker(TokenError):
    pass


class UnknownToken(TokenError):
    pass


@dataclass(frozen=True)
class ChunkEvent:
    index: int
    vad: VadState
    asr_text: Optional[str] = None
    turn: Optional[TurnState] = None
    answer_text: Optional[str] = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "vad", VadState(self.vad))
        if self.turn is not None:
            object.__setattr__(self, "turn", TurnState(self.turn))

    def to_dict(self) -> dict:
        d: dict = {"index": self.index, "vad": self.vad.value}
        if self.asr_text is not None:
            d["asr"] = self.asr_text
        if self.turn is not None:
            d["turn"] = self.turn.value
        if self.answer_text is not None:
            d["answer"] = self.answer_text
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ChunkEvent":
        try:
            turn = d.get("turn")
            return cls(int(d["index"]), VadState(d["vad"]), d.get("asr"),
                       TurnState(turn) if turn is not None else None, d.get("answer"))
        except (KeyError, ValueError, TypeError) as exc:
            raise InvalidEvent(f"malformed chunk event {d!r}: {exc}") from exc


def _check_text(text: str, what: str, index: int) -> None:
    if not isinstance(text, str):
        raise InvalidEvent(f"chunk {index}: {what} must be a string")
    m = _MARKER_RE.search(text)
    if m:
        raise InvalidEvent(f"chunk {index}: {what} contains marker literal {m.group()!r}")
    if any(c in text for c in _FORBIDDEN_TEXT_CHARS):
        raise InvalidEvent(f"chunk {index}: {what} contains a line break")


def validate_events(events: Sequence[ChunkEvent]) -> None:
    """Raise ``InvalidEvent`` unless ``events`` is a well-formed session."""
    prev: VadState | None = None
    for pos, e in enumerate(events):
        if e.index != pos:
            raise InvalidEvent(f"chunk at position {pos} has index {e.index}")
        if e.asr_text is not None:
            if not (prev is VadState.TALK and e.vad is VadState.SIL):
                raise InvalidEvent(f"chunk {pos}: ASR text outside a talk-to-silence transition")
            _check_text(e.asr_text, "ASR text", pos)
        if e.turn is not None and e.asr_text is None:
            raise InvalidEvent(f"chunk {pos}: turn state without ASR text")
        if e.answer_text is not None:
            if e.turn is None or not e.turn.takes_answer:
                raise InvalidEvent(f"chunk {pos}: answer requires a Complete or Interrupt turn")
            _check_text(e.answer_text, "answer text", pos)
        prev = e.vad


def serialize_event(e: ChunkEvent) -> str:
    parts = [e.vad.marker]
    if e.asr_text is not None:
        parts += [ASR_START, e.asr_text, ASR_END]
    if e.turn is not None:
        parts.append(e.turn.marker)
    if e.answer_text is not None:
        parts += [ANSWER_START, e.answer_text, ANSWER_END]
    return "".join(parts)


def serialize(events: Sequence[ChunkEvent]) -> str:
    validate_events(events)
    return "".join(serialize_event(e) for e in events)


def _read_span(text: str, start: int, end_marker: str) -> tuple[str, int]:
    """Read span text after the opening marker at ``start``; return the text
    and the offset just past ``end_marker``."""
    open_len = len(ASR_START if end_marker == ASR_END else ANSWER_START)
    body_from = start + open_len
    m = _MARKER_RE.search(text, body_from)
    if m is None or m.group() != end_marker:
        raise UnterminatedSpan(f"span opened by {text[start:body_from]} is not closed by {end_marker}", start)
    body = text[body_from:m.start()]
    for c in _FORBIDDEN_TEXT_CHARS:
        k = body.find(c)
        if k >= 0:
            raise UnknownToken("line break inside span text", body_from + k)
    return body, m.end()


def parse(text: str) -> list[ChunkEvent]:
    """Parse token text into chunk events; the empty string is zero events."""
    events: list[ChunkEvent] = []
    pos, n = 0, len(text)
    # per-record state; None until the first VAD marker
    vad: VadState | None = None
    asr = turn = answer = None
    stage = 0  # 0 after vad, 1 after asr, 2 after turn, 3 after answer
    asr_allowed = False

    def flush():
        if vad is not None:
            events.append(ChunkEvent(len(events), vad, asr, turn, answer))

    while pos < n:
        m = _MARKER_RE.match(text, pos)
        if m is None:
            if text[pos] == "<":
                close = text.find(">", pos)
                shown = text[pos:close + 1] if close >= 0 else text[pos:pos + 12]
                raise UnknownToken(f"unknown marker {shown!r}", pos)
            raise UnknownToken(f"text {text[pos:pos + 12]!r} outside a span", pos)
        tok = m.group()
        if tok in _VAD_BY_MARKER:
            prev = vad
            flush()
            vad = _VAD_BY_MARKER[tok]
            asr = turn = answer = None
            stage = 0
            asr_allowed = prev is VadState.TALK and vad is VadState.SIL
            pos = m.end()
        elif vad is None:
            raise UnexpectedMarker(f"{tok} before the first VAD marker", pos)
        elif tok == ASR_START:
            # lexical errors (an unclosed span) are reported before grammar ones
            body, after = _read_span(text, pos, ASR_END)
            if stage != 0:
                raise UnexpectedMarker(f"{tok} after this chunk's ASR span or turn marker", pos)
            if not asr_allowed:
                raise UnexpectedMarker(f"{tok} outside a talk-to-silence transition", pos)
            asr, pos = body, after
            stage = 1
        elif tok in _TURN_BY_MARKER:
            if stage != 1:
                raise UnexpectedMarker(f"{tok} without a preceding ASR span", pos)
            turn = _TURN_BY_MARKER[tok]
            stage = 2
            pos = m.end()
        elif tok == ANSWER_START:
            body, after = _read_span(text, pos, ANSWER_END)
            if stage != 2 or not turn.takes_answer:
                raise UnexpectedMarker(f"{tok} requires a Complete or Interrupt turn marker", pos)
            answer, pos = body, after
            stage = 3
        else:  # stray closing marker
            raise UnexpectedMarker(f"{tok} without a matching opening marker", pos)
    flush()
    return events


def debug_format(events: Iterable[ChunkEvent]) -> str:
    """One line per chunk with its index; for logs, not for parsing."""
    return "\n".join(f"{e.index:05d} {serialize_event(e)}" for e in events)


def compact_items(events: Sequence[ChunkEvent]) -> list[str]:
    """Run-collapsed rendering: repeated VAD markers merge, and the SIL
    marker carrying an ASR span is left implicit; a turn marker is grouped
    with its answer span."""
    items: list[str] = []
    last_vad = None
    for e in events:
        if e.asr_text is None and e.vad is not last_vad:
            items.append(e.vad.marker)
        last_vad = e.vad if e.asr_text is None else None
        if e.asr_text is not None:
            items.append(f"{ASR_START}{e.asr_text}{ASR_END}")
            if e.turn is not None:
                tail = e.turn.marker
                if e.answer_text is not None:
                    tail += f"{ANSWER_START}{e.answer_text}{ANSWER_END}"
                items.append(tail)
    return items


def vad_sequence(events: Sequence[ChunkEvent]) -> list[VadState]:
    return [e.vad for e in events]
