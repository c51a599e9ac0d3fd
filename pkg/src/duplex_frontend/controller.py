"""Full-duplex interaction controller and reference frontends.

``controller_step`` is a pure transition function over per-chunk frontend
outputs. It acts on ASR text and turn states only at talk-to-silence
transitions; anything the frontend emits elsewhere is ignored and reported
as a ``NoOp`` with a note.
"""

from __future__ import annotations

import enum
import zlib
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .errors import ConfigError, ProtocolViolation
from .tokens import ChunkEvent, TurnState, VadState


class Mode(str, enum.Enum):
    Idle = "Idle"
    UserSpeaking = "UserSpeaking"
    Responding = "Responding"


class ActionKind(str, enum.Enum):
    KeepListening = "KeepListening"
    TriggerAsrDecode = "TriggerAsrDecode"
    Respond = "Respond"
    HaltPlayback = "HaltPlayback"
    ContinuePlayback = "ContinuePlayback"
    NoOp = "NoOp"


@dataclass(frozen=True)
class Action:
    kind: ActionKind
    text: Optional[str] = None
    latency_chunks: Optional[int] = None
    note: Optional[str] = None

    def to_dict(self) -> dict:
        d: dict = {"kind": self.kind.value}
        for k in ("text", "latency_chunks", "note"):
            v = getattr(self, k)
            if v is not None:
                d[k] = v
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Action":
        return cls(ActionKind(d["kind"]), d.get("text"), d.get("latency_chunks"), d.get("note"))


@dataclass(frozen=True)
class FrontendOutput:
    vad: VadState
    turn: Optional[TurnState] = None
    asr_text: Optional[str] = None
    answer_text: Optional[str] = None

    @classmethod
    def from_event(cls, e: ChunkEvent) -> "FrontendOutput":
        return cls(e.vad, e.turn, e.asr_text, e.answer_text)

    def to_dict(self) -> dict:
        d: dict = {"vad": self.vad.value}
        if self.asr_text is not None:
            d["asr"] = self.asr_text
        if self.turn is not None:
            d["turn"] = self.turn.value
        if self.answer_text is not None:
            d["answer"] = self.answer_text
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "FrontendOutput":
        turn = d.get("turn")
        return cls(VadState(d["vad"]), TurnState(turn) if turn else None, d.get("asr"), d.get("answer"))


@dataclass(frozen=True)
class ControllerConfig:
    chunk_ms: float = 600.0
    chars_per_second: float = 4.0
    # cap L on tokens generated in one step (ASR plus answer characters)
    max_decode_len: int = 512

    def __post_init__(self) -> None:
        if self.chunk_ms <= 0 or self.chars_per_second <= 0 or self.max_decode_len < 1:
            raise ConfigError("controller config values must be positive")


@dataclass(frozen=True)
class ControllerState:
    mode: Mode = Mode.Idle
    pending_transcript: str = ""
    playback_active: bool = False
    playback_remaining: float = 0.0
    prev_vad: Optional[VadState] = None

    def to_dict(self) -> dict:
        return {"mode": self.mode.value, "pending_transcript": self.pending_transcript,
                "playback_active": self.playback_active,
                "playback_remaining": round(self.playback_remaining, 6)}


class ControllerProtocolError(ProtocolViolation):
    pass


def check_output(out: FrontendOutput, config: ControllerConfig = ControllerConfig()) -> None:
    if out.turn is not None and out.asr_text is None:
        raise ControllerProtocolError(f"turn {out.turn.value} without ASR text")
    if out.answer_text is not None and (out.turn is None or not out.turn.takes_answer):
        raise ControllerProtocolError("answer without a Complete or Interrupt turn")
    decoded = len(out.asr_text or "") + len(out.answer_text or "")
    if decoded > config.max_decode_len:
        raise ControllerProtocolError(f"{decoded} decoded tokens exceed the cap of {config.max_decode_len}")


def controller_step(state: ControllerState, out: FrontendOutput,
                    config: ControllerConfig = ControllerConfig()) -> tuple[ControllerState, list[Action]]:
    check_output(out, config)
    chunk_s = config.chunk_ms / 1000.0
    playing, remaining = state.playback_active, state.playback_remaining
    if playing:
        remaining -= chunk_s
        if remaining <= 1e-9:
            playing, remaining = False, 0.0
    pending = state.pending_transcript
    actions: list[Action] = []
    transition = state.prev_vad is VadState.TALK and out.vad is VadState.SIL
    semantic = out.asr_text is not None or out.turn is not None

    def respond(text: str) -> None:
        nonlocal playing, remaining
        actions.append(Action(ActionKind.Respond, text))
        remaining = len(text) / config.chars_per_second
        playing = remaining > 0

    if not transition:
        if semantic:
            actions.append(Action(ActionKind.NoOp, note="semantic output outside a talk-to-silence transition"))
        elif out.vad is VadState.TALK:
            actions.append(Action(ActionKind.KeepListening))
        else:
            actions.append(Action(ActionKind.NoOp))
    else:
        actions.append(Action(ActionKind.TriggerAsrDecode))
        if out.asr_text is not None:
            pending += out.asr_text
            turn = out.turn
            if turn is TurnState.Complete:
                if playing:
                    actions.append(Action(ActionKind.HaltPlayback))
                    playing, remaining = False, 0.0
                respond(out.answer_text or "")
                pending = ""
            elif turn is TurnState.Interrupt:
                if playing:
                    actions.append(Action(ActionKind.HaltPlayback))
                    playing, remaining = False, 0.0
                if out.answer_text is not None:
                    respond(out.answer_text)
                else:
                    actions.append(Action(ActionKind.KeepListening))
                pending = ""
            elif turn is TurnState.Backchannel:
                actions.append(Action(ActionKind.ContinuePlayback if playing else ActionKind.KeepListening))
                pending = ""
            elif turn is TurnState.InComplete:
                actions.append(Action(ActionKind.KeepListening))
                if playing:
                    actions.append(Action(ActionKind.ContinuePlayback))
            else:  # transcript without a turn decision
                actions.append(Action(ActionKind.KeepListening))
                pending = ""

    if playing:
        mode = Mode.Responding
    elif out.vad is VadState.TALK or pending:
        mode = Mode.UserSpeaking
    else:
        mode = Mode.Idle
    return ControllerState(mode, pending, playing, remaining if playing else 0.0, out.vad), actions


# --- reference frontends ------------------------------------------------------

def oracle_step(ground_truth: Sequence[ChunkEvent], k: int) -> FrontendOutput:
    if not 0 <= k < len(ground_truth):
        raise IndexError(f"chunk {k} outside 0..{len(ground_truth) - 1}")
    return FrontendOutput.from_event(ground_truth[k])


# substitution alphabet for perturbed ASR text
_SUB_CHARS = "我们你他她它是的了在有和不这那要去来说看想做好天人大小多少上下前后"


@dataclass(frozen=True)
class FlipProbs:
    vad: float = 0.0
    turn: float = 0.0
    char_sub: float = 0.0

    def __post_init__(self) -> None:
        for name in ("vad", "turn", "char_sub"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ConfigError(f"flip probability {name}={p} outside [0, 1]")


def _chunk_rng(seed: int, session_id: str, k: int) -> np.random.Generator:
    return np.random.default_rng([int(seed), zlib.crc32(session_id.encode("utf-8")), int(k)])


def perturbed_oracle_step(ground_truth: Sequence[ChunkEvent], k: int, flip: FlipProbs, seed: int,
                          session_id: str = "") -> FrontendOutput:
    """Ground truth with independent, seeded corruption of each head.

    The draw for chunk ``k`` depends only on (seed, session id, k), so streams
    are reproducible and independent of evaluation order.
    """
    out = oracle_step(ground_truth, k)
    rng = _chunk_rng(seed, session_id, k)
    u_vad, u_turn = rng.random(), rng.random()
    vad = out.vad
    if u_vad < flip.vad:
        vad = VadState.SIL if vad is VadState.TALK else VadState.TALK
    turn, answer = out.turn, out.answer_text
    if turn is not None and u_turn < flip.turn:
        others = [t for t in TurnState if t is not turn]
        turn = others[int(rng.integers(len(others)))]
        if not turn.takes_answer:
            answer = None
    asr = out.asr_text
    if asr is not None and flip.char_sub > 0:
        chars = list(asr)
        for i, c in enumerate(chars):
            if rng.random() < flip.char_sub:
                pool = [x for x in _SUB_CHARS if x != c]
                chars[i] = pool[int(rng.integers(len(pool)))]
        asr = "".join(chars)
    return FrontendOutput(vad, turn, asr, answer)


# --- session simulation ----------------------------------------------------------

@dataclass
class ChunkTrace:
    chunk_index: int
    frontend_output: FrontendOutput
    controller_state: ControllerState
    actions: list[Action]

    def to_dict(self, session_id: str) -> dict:
        return {
            "record": "chunk",
            "session_id": session_id,
            "chunk_index": self.chunk_index,
            "frontend_output": self.frontend_output.to_dict(),
            "controller_state": self.controller_state.to_dict(),
            "actions": [a.to_dict() for a in self.actions],
            "latency_chunks": max((a.latency_chunks for a in self.actions if a.latency_chunks is not None),
                                  default=None),
        }


@dataclass
class SessionTrace:
    session_id: str
    chunks: list[ChunkTrace] = field(default_factory=list)
    failed: bool = False
    error: Optional[str] = None

    def outputs(self) -> list[FrontendOutput]:
        return [c.frontend_output for c in self.chunks]

    def records(self) -> list[dict]:
        out = [c.to_dict(self.session_id) for c in self.chunks]
        out.append({"record": "session", "session_id": self.session_id,
                    "status": "failed" if self.failed else "ok", "error": self.error,
                    "n_chunks": len(self.chunks)})
        return out


_DECISIONS = (ActionKind.TriggerAsrDecode, ActionKind.Respond, ActionKind.HaltPlayback, ActionKind.ContinuePlayback)


def transition_chunks(ground_truth: Sequence[ChunkEvent]) -> list[int]:
    return [e.index for i, e in enumerate(ground_truth)
            if i and e.vad is VadState.SIL and ground_truth[i - 1].vad is VadState.TALK]


def simulate_session(session_id: str, outputs: Sequence[FrontendOutput], ground_truth: Sequence[ChunkEvent],
                     config: ControllerConfig = ControllerConfig()) -> SessionTrace:
    """Drive the controller over ``outputs``; decision actions are annotated
    with their latency from the latest ground-truth transition."""
    trace = SessionTrace(session_id)
    transitions = transition_chunks(ground_truth)
    state = ControllerState()
    ti = -1
    for k, out in enumerate(outputs):
        while ti + 1 < len(transitions) and transitions[ti + 1] <= k:
            ti += 1
        try:
            state, actions = controller_step(state, out, config)
        except ProtocolViolation as exc:
            trace.failed, trace.error = True, f"chunk {k}: {exc}"
            break
        if ti >= 0:
            actions = [replace(a, latency_chunks=k - transitions[ti]) if a.kind in _DECISIONS else a
                       for a in actions]
        trace.chunks.append(ChunkTrace(k, out, state, actions))
    return trace


def simulate_oracle(session_id: str, ground_truth: Sequence[ChunkEvent],
                    config: ControllerConfig = ControllerConfig()) -> SessionTrace:
    return simulate_session(session_id, [oracle_step(ground_truth, k) for k in range(len(ground_truth))],
                            ground_truth, config)


def simulate_perturbed(session_id: str, ground_truth: Sequence[ChunkEvent], flip: FlipProbs, seed: int,
                       config: ControllerConfig = ControllerConfig()) -> SessionTrace:
    outs = [perturbed_oracle_step(ground_truth, k, flip, seed, session_id) for k in range(len(ground_truth))]
    return simulate_session(session_id, outs, ground_truth, config)
