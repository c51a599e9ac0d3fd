"""Dialogue-like session synthesis.

A session is first planned as a ``SessionScript`` (pure data: which assets go
where, at which levels) and then rendered to audio. All placement arithmetic
is done in samples on the 600 ms chunk grid, so the planned timeline and the
chunk labels derived from it agree exactly.
"""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from .audio import (
    DEFAULT_SAMPLE_RATE,
    NoiseSilent,
    TargetSilent,
    Waveform,
    chunk_length,
    convolve_ir,
    exponential_decay_ir,
    fit_length,
    noise_gain_for_snr,
    read_wav,
    rms,
    soft_clip,
    write_wav,
)
from .errors import ConfigError, DataError
from .jsonl import read_jsonl, resolve_path
from .labeling import TargetEvent
from .timestamps import WordTiming
from .tokens import TurnState

KINDS = ("PureNoise", "InterferenceSpeaker", "NormalInteraction", "BargeIn")
# level that stands in for the target when a session has none
NOMINAL_REFERENCE_RMS = 0.05
RESCALE_PEAK = 0.99


class MissingAssetPool(DataError):
    pass


class AssetLoadError(DataError):
    pass


# --- asset pools -------------------------------------------------------------

@dataclass(frozen=True)
class SpeechAsset:
    id: str
    audio_path: Path
    speaker_id: str
    text: str
    words: tuple[WordTiming, ...]
    turn: Optional[TurnState]
    answer: Optional[str]


@dataclass(frozen=True)
class InterferenceAsset:
    id: str
    audio_path: Path
    speaker_id: str
    text: str = ""


@dataclass(frozen=True)
class NoiseAsset:
    id: str
    audio_path: Path


@dataclass(frozen=True)
class IrAsset:
    """Impulse response from a WAV file or from the exponential-decay generator."""

    id: str
    audio_path: Optional[Path] = None
    params: dict = field(default_factory=dict)


@dataclass(frozen=True)
class AgentAsset:
    id: str
    audio_path: Path
    text: str


def _words(rec: dict) -> tuple[WordTiming, ...]:
    return tuple(WordTiming(str(w["w"]), float(w["start"]), float(w["end"])) for w in rec.get("words", ()))


class AssetPools:
    def __init__(self, speech=(), interference=(), noise=(), ir=(), agent=(),
                 sample_rate: int = DEFAULT_SAMPLE_RATE):
        self.speech: list[SpeechAsset] = list(speech)
        self.interference: list[InterferenceAsset] = list(interference)
        self.noise: list[NoiseAsset] = list(noise)
        self.ir: list[IrAsset] = list(ir)
        self.agent: list[AgentAsset] = list(agent)
        self.sample_rate = sample_rate
        self._by_id = {a.id: a for pool in (self.speech, self.interference, self.noise, self.ir, self.agent)
                       for a in pool}
        self._audio: dict[Path, Waveform] = {}

    @classmethod
    def load(cls, index_path: str | Path) -> "AssetPools":
        """Load pools from a JSON index mapping pool names to JSONL manifests."""
        index_path = Path(index_path)
        try:
            index = json.loads(index_path.read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise AssetLoadError(f"cannot read pool index {index_path}: {exc}") from exc
        base = index_path.parent
        pools: dict[str, list] = {}
        for name in ("speech", "interference", "noise", "ir", "agent"):
            if name not in index:
                pools[name] = []
                continue
            path = resolve_path(base, index[name])
            if not path.exists():
                raise MissingAssetPool(f"pool {name!r}: {path} does not exist")
            rbase = path.parent
            recs = read_jsonl(path)
            try:
                if name == "speech":
                    pools[name] = [SpeechAsset(
                        r["id"], resolve_path(rbase, r["audio_path"]), r["speaker_id"], r["text"], _words(r),
                        TurnState(r["turn_label"]) if r.get("turn_label") else None, r.get("answer_text"))
                        for r in recs]
                elif name == "interference":
                    pools[name] = [InterferenceAsset(r["id"], resolve_path(rbase, r["audio_path"]),
                                                     r.get("speaker_id", r["id"]), r.get("text", ""))
                                   for r in recs]
                elif name == "noise":
                    pools[name] = [NoiseAsset(r["id"], resolve_path(rbase, r["audio_path"])) for r in recs]
                elif name == "ir":
                    pools[name] = [IrAsset(r["id"], resolve_path(rbase, r["audio_path"]) if r.get("audio_path") else None,
                                           dict(r.get("params", {}))) for r in recs]
                else:
                    pools[name] = [AgentAsset(r["id"], resolve_path(rbase, r["audio_path"]), r["text"])
                                   for r in recs]
            except (KeyError, TypeError, ValueError) as exc:
                raise AssetLoadError(f"pool {name!r} in {path}: malformed record ({exc})") from exc
        return cls(**pools)

    def get(self, asset_id: str):
        try:
            return self._by_id[asset_id]
        except KeyError:
            raise AssetLoadError(f"unknown asset id {asset_id!r}") from None

    def audio(self, path: Path) -> Waveform:
        w = self._audio.get(path)
        if w is None:
            if not Path(path).exists():
                raise AssetLoadError(f"asset audio {path} does not exist")
            w = read_wav(path, self.sample_rate)
            self._audio[path] = w
        return w

    def ir_taps(self, asset: IrAsset) -> np.ndarray:
        if asset.audio_path is not None:
            return self.audio(asset.audio_path).samples
        p = asset.params
        return exponential_decay_ir(np.random.default_rng(int(p.get("seed", 0))), self.sample_rate,
                                    float(p.get("length_ms", 120.0)), float(p.get("rt60_s", 0.25)),
                                    float(p.get("delay_ms", 2.0)), float(p.get("direct_gain", 1.0)))

    def target_speakers(self) -> list[str]:
        return sorted({a.speaker_id for a in self.speech})

    def speech_of(self, speaker: str, turn: TurnState | None = None) -> list[SpeechAsset]:
        return [a for a in self.speech if a.speaker_id == speaker and (turn is None or a.turn is turn)]

    def require(self, kind: str) -> None:
        needed = {"PureNoise": ("speech", "noise"),
                  "InterferenceSpeaker": ("speech", "noise", "interference"),
                  "NormalInteraction": ("speech", "noise"),
                  "BargeIn": ("speech", "noise", "agent", "ir")}[kind]
        for name in needed:
            if not getattr(self, name):
                raise MissingAssetPool(f"scenario {kind} needs a non-empty {name!r} pool")


# --- scripts -------------------------------------------------------------------

@dataclass
class ScenarioConfig:
    sample_rate: int = DEFAULT_SAMPLE_RATE
    chunk_ms: float = 600.0
    overlap_min_ms: float = 60.0
    duration_range: tuple[float, float] = (40.0, 60.0)
    gap_range: tuple[float, float] = (0.5, 3.0)
    snr_range: tuple[float, float] = (0.0, 20.0)
    interferer_snr_range: tuple[float, float] = (0.0, 15.0)
    # interfering speakers per InterferenceSpeaker session / per target session
    interferers_range: tuple[int, int] = (1, 2)
    target_session_interferers_range: tuple[int, int] = (0, 0)
    echo_ser_range: tuple[float, float] = (-5.0, 5.0)
    echo_drive_range: tuple[float, float] = (0.5, 3.0)
    reference_range: tuple[float, float] = (3.0, 5.0)
    normal_turn_weights: dict = field(default_factory=lambda: {"Complete": 0.6, "InComplete": 0.4})
    barge_turn_weights: dict = field(default_factory=lambda: {"Interrupt": 0.5, "Backchannel": 0.5})
    p_voice_swap: float = 0.0
    # must match the controller's playback model
    chars_per_second: float = 4.0
    playback_margin_s: float = 0.3

    def __post_init__(self) -> None:
        for name in ("duration_range", "gap_range", "snr_range", "interferer_snr_range", "echo_ser_range",
                     "echo_drive_range", "reference_range", "interferers_range",
                     "target_session_interferers_range"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ConfigError(f"{name}: lower bound {lo} exceeds upper bound {hi}")
            setattr(self, name, (lo, hi))
        if self.gap_range[0] <= 0:
            raise ConfigError("gap_range must be positive")
        if self.echo_drive_range[0] <= 0:
            raise ConfigError("echo_drive_range must be positive")
        if not 0.0 <= self.p_voice_swap <= 1.0:
            raise ConfigError("p_voice_swap must lie in [0, 1]")
        if self.chars_per_second <= 0:
            raise ConfigError("chars_per_second must be positive")
        chunk_length(self.chunk_ms, self.sample_rate)


@dataclass
class PlacedUtterance:
    asset_id: str
    offset: float  # file start on the session timeline
    turn: Optional[str]
    answer: Optional[str]
    barge_in: bool = False
    target: bool = True  # False: voice-swapped turn rendered as non-target speech


@dataclass
class PlacedInterferer:
    asset_id: str
    offset: float
    snr_db: float


@dataclass
class EchoSpec:
    agent_id: str
    ir_id: str
    drive: float
    ser_db: float
    start: float
    end: float


@dataclass
class SessionScript:
    session_id: str
    kind: str
    seed: int
    duration: float
    sample_rate: int
    target_speaker: str
    reference: dict  # {"asset_id", "duration"}
    noise: dict  # {"asset_id", "snr_db"}
    utterances: list[PlacedUtterance] = field(default_factory=list)
    gaps: list[float] = field(default_factory=list)
    gap_overridden: list[bool] = field(default_factory=list)
    interferers: list[PlacedInterferer] = field(default_factory=list)
    echoes: list[EchoSpec] = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "SessionScript":
        try:
            d = dict(d)
            d["utterances"] = [PlacedUtterance(**u) for u in d.get("utterances", [])]
            d["interferers"] = [PlacedInterferer(**u) for u in d.get("interferers", [])]
            d["echoes"] = [EchoSpec(**u) for u in d.get("echoes", [])]
            return cls(**d)
        except TypeError as exc:
            raise DataError(f"malformed session script: {exc}") from exc

    def validate(self, gap_range: tuple[float, float] = (0.5, 3.0)) -> None:
        if self.kind not in KINDS:
            raise DataError(f"unknown scenario kind {self.kind!r}")
        for g, over in zip(self.gaps, self.gap_overridden):
            if not over and not gap_range[0] - 1e-9 <= g <= gap_range[1] + 1e-9:
                raise DataError(f"gap {g:.3f} s outside {gap_range} without an override")
        for u in self.utterances:
            if u.turn is not None and TurnState(u.turn).takes_answer != (u.answer is not None):
                raise DataError(f"utterance {u.asset_id}: answer must be present exactly for Complete/Interrupt")
        for e in self.echoes:
            if not any(u.barge_in for u in self.utterances):
                raise DataError("echo window without a barge-in utterance")
            if not e.start < e.end:
                raise DataError(f"empty echo window [{e.start}, {e.end}]")


# --- assembly primitives -------------------------------------------------------

@dataclass(frozen=True)
class DialogueItem:
    audio: Waveform
    text: str
    words: tuple[WordTiming, ...] = ()
    turn: Optional[TurnState] = None
    answer: Optional[str] = None
    utterance_id: str = ""
    speaker_id: str = ""
    barge_in: bool = False


def _speech_span(words: Sequence[WordTiming], duration: float) -> tuple[float, float]:
    if not words:
        return 0.0, duration
    return max(0.0, words[0].start), min(duration, words[-1].end)


def place_items(items: Sequence[DialogueItem], offsets: Sequence[int], n_total: int) -> tuple[np.ndarray, list[TargetEvent]]:
    """Overlay ``items`` at sample ``offsets`` on a zero track; events carry
    each item's speech span and words in session time."""
    track = np.zeros(n_total)
    events = []
    for item, k in zip(items, offsets):
        x = item.audio.samples
        if k < 0 or k + x.size > n_total:
            raise DataError(f"utterance {item.utterance_id!r} at sample {k} does not fit in {n_total} samples")
        track[k:k + x.size] += x
        t0 = k / item.audio.sample_rate
        s, e = _speech_span(item.words, item.audio.duration)
        events.append(TargetEvent(
            t0 + s, t0 + e, item.text, item.turn, item.answer, item.utterance_id, item.speaker_id,
            tuple(WordTiming(w.text, t0 + w.start, t0 + w.end) for w in item.words), item.barge_in))
    return track, events


def gap_sampler(seed: int, gap_range: tuple[float, float] = (0.5, 3.0)) -> Callable[[], float]:
    rng = np.random.default_rng(seed)
    lo, hi = gap_range
    return lambda: float(lo if lo == hi else rng.uniform(lo, hi))


def assemble_dialogue(items: Sequence[DialogueItem], gaps: Callable[[], float],
                      lead: float = 0.0, tail: float = 0.0) -> tuple[Waveform, list[TargetEvent]]:
    """Concatenate utterances separated by sampled gaps."""
    if not items:
        raise DataError("assemble_dialogue needs at least one utterance")
    sr = items[0].audio.sample_rate
    offsets, k = [], int(round(lead * sr))
    for i, item in enumerate(items):
        if item.audio.sample_rate != sr:
            raise DataError("utterances have different sample rates")
        if i:
            k += int(round(gaps() * sr))
        offsets.append(k)
        k += len(item.audio)
    n_total = k + int(round(tail * sr))
    track, events = place_items(items, offsets, n_total)
    return Waveform(track, sr), events


# --- scenario generation ------------------------------------------------------

class _Grid:
    """Chunk-grid arithmetic in samples."""

    def __init__(self, config: ScenarioConfig):
        self.sr = config.sample_rate
        self.n = chunk_length(config.chunk_ms, self.sr)
        self.min_ov = int(round(config.overlap_min_ms * self.sr / 1000.0))

    def transition_chunk(self, speech_start: int, speech_end: int) -> int:
        """First SIL chunk after speech [speech_start, speech_end), assuming
        nothing else is active nearby."""
        c = (speech_end - 1) // self.n
        overlap = speech_end - max(speech_start, c * self.n)
        return c if overlap < self.min_ov else c + 1

    def free_from(self, speech_start: int, speech_end: int) -> int:
        """Earliest sample at which the next utterance's speech may start
        while keeping a SIL chunk between the two."""
        return (self.transition_chunk(speech_start, speech_end) + 1) * self.n

    def samples(self, t: float) -> int:
        return int(round(t * self.sr))


def _weighted_turn(rng: np.random.Generator, weights: dict) -> TurnState:
    names = sorted(weights)
    p = np.array([float(weights[k]) for k in names])
    if p.sum() <= 0:
        raise ConfigError(f"turn weights {weights} sum to zero")
    return TurnState(names[int(rng.choice(len(names), p=p / p.sum()))])


def _pick(rng: np.random.Generator, seq):
    return seq[int(rng.integers(len(seq)))]


class _Planner:
    def __init__(self, kind, pools, config, rng, grid):
        self.kind, self.pools, self.cfg, self.rng, self.grid = kind, pools, config, rng, grid
        self.utterances: list[PlacedUtterance] = []
        self.gaps: list[float] = []
        self.overridden: list[bool] = []
        self.echoes: list[EchoSpec] = []
        self.audio_end = 0  # end of the last placed file, samples
        self.speech = None  # (start, end) of the last target speech, samples
        self.used: set[str] = set()

    def u(self, rng_range):
        lo, hi = rng_range
        return float(lo if lo == hi else self.rng.uniform(lo, hi))

    def span(self, asset: SpeechAsset) -> tuple[int, int, int]:
        w = self.pools.audio(asset.audio_path)
        s, e = _speech_span(asset.words, w.duration)
        return self.grid.samples(s), self.grid.samples(e), len(w)

    def earliest_offset(self, asset: SpeechAsset, gap_s: float) -> tuple[int, bool]:
        s0, _, _ = self.span(asset)
        offset = self.audio_end + self.grid.samples(gap_s)
        if self.speech is not None:
            offset = max(offset, self.grid.free_from(*self.speech) - s0)
        gap = (offset - self.audio_end) / self.grid.sr
        lo, hi = self.cfg.gap_range
        return offset, not (lo - 1e-9 <= gap <= hi + 1e-9)

    def fits(self, asset: SpeechAsset, offset: int, limit: int) -> bool:
        s0, s1, n = self.span(asset)
        return max(offset + n, self.grid.free_from(offset + s0, offset + s1)) <= limit

    def commit(self, asset: SpeechAsset, offset: int, turn: TurnState, answer, barge_in=False, target=True,
               overridden=False) -> None:
        s0, s1, n = self.span(asset)
        self.gaps.append((offset - self.audio_end) / self.grid.sr)
        self.overridden.append(overridden)
        self.utterances.append(PlacedUtterance(asset.id, offset / self.grid.sr, turn.value if turn else None,
                                               answer, barge_in, target))
        self.audio_end = max(self.audio_end, offset + n)
        if target:
            self.speech = (offset + s0, offset + s1)
        self.used.add(asset.id)

    def normal(self, speaker: str, limit: int) -> None:
        while True:
            turn = _weighted_turn(self.rng, self.cfg.normal_turn_weights)
            choices = self.pools.speech_of(speaker, turn)
            if not choices:
                raise MissingAssetPool(f"speaker {speaker} has no {turn.value} utterances")
            asset = _pick(self.rng, choices)
            target = True
            if self.cfg.p_voice_swap and self.rng.random() < self.cfg.p_voice_swap:
                others = [a for a in self.pools.speech if a.speaker_id != speaker]
                if others:
                    asset, target = _pick(self.rng, others), False
            offset, over = self.earliest_offset(asset, self.u(self.cfg.gap_range))
            if not self.fits(asset, offset, limit):
                return
            self.commit(asset, offset, asset.turn if target else None,
                        asset.answer if target and asset.turn and asset.turn.takes_answer else None,
                        target=target, overridden=over)

    def barge_in(self, speaker: str, limit: int) -> None:
        g = self.grid
        completes = self.pools.speech_of(speaker, TurnState.Complete)
        if not completes:
            raise MissingAssetPool(f"speaker {speaker} has no Complete utterances")
        while True:
            query = _pick(self.rng, completes)
            agent = _pick(self.rng, self.pools.agent)
            ir = _pick(self.rng, self.pools.ir)
            drive = self.u(self.cfg.echo_drive_range)
            ser = self.u(self.cfg.echo_ser_range)
            turn = _weighted_turn(self.rng, self.cfg.barge_turn_weights)
            barge_choices = self.pools.speech_of(speaker, turn)
            if not barge_choices:
                raise MissingAssetPool(f"speaker {speaker} has no {turn.value} utterances")
            barger = _pick(self.rng, barge_choices)
            gap = self.u(self.cfg.gap_range)

            q_off, q_over = self.earliest_offset(query, gap)
            qs0, qs1, qn = self.span(query)
            k = g.transition_chunk(q_off + qs0, q_off + qs1)
            echo_start = (k + 1) * g.n  # playback starts once chunk k is decided
            agent_audio = self.pools.audio(agent.audio_path)
            playback = min(len(agent.text) / self.cfg.chars_per_second, agent_audio.duration)
            if playback * g.sr < 4 * g.n:
                raise DataError(f"agent response {agent.id} is too short for a barge-in window")
            bs0, bs1, bn = self.span(barger)
            # barge-in speech starts in the second half of playback, pulled
            # earlier until its transition is decided while playback runs
            start = echo_start + g.samples(playback / 2)
            while True:
                j = g.transition_chunk(start, start + bs1 - bs0)
                if (j - k) * g.n / g.sr <= playback - self.cfg.playback_margin_s:
                    break
                start -= g.n
                if start < max(echo_start, q_off + qn + bs0):
                    raise DataError(f"barge-in {barger.id} cannot fit inside playback of {agent.id}")
            b_off = start - bs0
            if turn is TurnState.Interrupt:
                echo_end = (j + 1) * g.n  # halted once chunk j is decided
            else:
                ir_len = self.pools.ir_taps(ir).size
                echo_end = echo_start + len(agent_audio) + ir_len - 1
            end_needed = max(echo_end, b_off + bn, g.free_from(b_off + bs0, b_off + bs1))
            if not self.fits(query, q_off, limit) or end_needed > limit:
                return
            self.commit(query, q_off, TurnState.Complete, agent.text, overridden=q_over)
            self.commit(barger, b_off, turn, barger.answer if turn.takes_answer else None,
                        barge_in=True, overridden=True)
            self.echoes.append(EchoSpec(agent.id, ir.id, drive, ser, echo_start / g.sr, echo_end / g.sr))
            self.audio_end = max(self.audio_end, echo_end)


def _interferers(pools: AssetPools, config: ScenarioConfig, rng: np.random.Generator, n_total: int,
                 count: int, grid: _Grid) -> list[PlacedInterferer]:
    speakers = sorted({a.speaker_id for a in pools.interference})
    if count and not speakers:
        raise MissingAssetPool("interferers requested but the interference pool is empty")
    out = []
    chosen = [speakers[int(i)] for i in rng.permutation(len(speakers))[:count]]
    for spk in chosen:
        assets = [a for a in pools.interference if a.speaker_id == spk]
        snr = float(rng.uniform(*config.interferer_snr_range))
        k = grid.samples(rng.uniform(0.0, config.gap_range[1]))
        while True:
            a = _pick(rng, assets)
            n = len(pools.audio(a.audio_path))
            if k + n > n_total:
                break
            out.append(PlacedInterferer(a.id, k / grid.sr, snr))
            k += n + grid.samples(rng.uniform(*config.gap_range))
    return out


def session_seed(root_seed: int, index: int) -> int:
    """Independent per-session seed derived from the run seed."""
    return int(np.random.SeedSequence([int(root_seed), int(index)]).generate_state(1)[0])


def generate_scenario(kind: str, pools: AssetPools, seed: int, config: ScenarioConfig | None = None,
                      session_id: str | None = None) -> SessionScript:
    config = config or ScenarioConfig()
    if kind not in KINDS:
        raise ConfigError(f"unknown scenario kind {kind!r}; expected one of {KINDS}")
    pools.require(kind)
    rng = np.random.default_rng(seed)
    grid = _Grid(config)
    n_total = grid.samples(rng.uniform(*config.duration_range))
    n_total = max(n_total, grid.n)
    speaker = _pick(rng, pools.target_speakers())
    planner = _Planner(kind, pools, config, rng, grid)

    if kind == "NormalInteraction":
        planner.normal(speaker, n_total)
    elif kind == "BargeIn":
        planner.barge_in(speaker, n_total)
    if kind in ("NormalInteraction", "BargeIn") and not planner.utterances:
        raise DataError(f"{kind} session of {n_total / grid.sr:.1f} s fits no utterance")

    n_int = int(rng.integers(config.interferers_range[0], config.interferers_range[1] + 1)) \
        if kind == "InterferenceSpeaker" else \
        int(rng.integers(config.target_session_interferers_range[0], config.target_session_interferers_range[1] + 1)) \
        if kind in ("NormalInteraction", "BargeIn") else 0
    interferers = _interferers(pools, config, rng, n_total, n_int, grid)

    own = pools.speech_of(speaker)
    unused = [a for a in own if a.id not in planner.used] or own
    ref = _pick(rng, unused)
    noise = _pick(rng, pools.noise)
    script = SessionScript(
        session_id=session_id or f"{kind}-{seed}",
        kind=kind,
        seed=int(seed),
        duration=n_total / grid.sr,
        sample_rate=grid.sr,
        target_speaker=speaker,
        reference={"asset_id": ref.id, "duration": float(rng.uniform(*config.reference_range))},
        noise={"asset_id": noise.id, "snr_db": float(rng.uniform(*config.snr_range))},
        utterances=planner.utterances,
        gaps=planner.gaps,
        gap_overridden=planner.overridden,
        interferers=interferers,
        echoes=planner.echoes,
    )
    script.validate(config.gap_range)
    return script


# --- rendering -----------------------------------------------------------------

@dataclass
class SessionRender:
    session_id: str
    kind: str
    seed: int
    mixture: Waveform
    clean_target: Waveform  # target stem as present in the mixture (after rescale)
    reference: Waveform
    events: list[TargetEvent]
    stems: dict[str, np.ndarray]  # unscaled; mixture = rescale * sum(stems)
    meta: dict


def render_session(script: SessionScript, pools: AssetPools) -> SessionRender:
    sr = script.sample_rate
    if sr != pools.sample_rate:
        raise DataError(f"script sample rate {sr} differs from pools ({pools.sample_rate})")
    n_total = int(round(script.duration * sr))
    rng = np.random.default_rng(script.seed)

    target_items, target_offsets, swapped_items, swapped_offsets = [], [], [], []
    for u in script.utterances:
        a = pools.get(u.asset_id)
        turn = TurnState(u.turn) if u.turn is not None else None
        item = DialogueItem(pools.audio(a.audio_path), a.text, a.words, turn, u.answer, a.id, a.speaker_id, u.barge_in)
        (target_items if u.target else swapped_items).append(item)
        (target_offsets if u.target else swapped_offsets).append(int(round(u.offset * sr)))
    target, events = place_items(target_items, target_offsets, n_total)
    swapped, _ = place_items(swapped_items, swapped_offsets, n_total)
    target_w = Waveform(target, sr)
    active = [(e.start, e.end) for e in events]
    ref_rms = rms(target_w, active) if events else NOMINAL_REFERENCE_RMS
    if ref_rms == 0.0:
        raise TargetSilent(f"session {script.session_id}: target speech has zero RMS")

    interference = np.zeros(n_total)
    int_gains = []
    for p in script.interferers:
        w = pools.audio(pools.get(p.asset_id).audio_path)
        level = rms(w)
        if level == 0.0:
            raise NoiseSilent(f"interferer {p.asset_id} is silent")
        g = noise_gain_for_snr(ref_rms, level, p.snr_db)
        k = int(round(p.offset * sr))
        if k + len(w) > n_total:
            raise DataError(f"interferer {p.asset_id} overruns the session")
        interference[k:k + len(w)] += g * w.samples
        int_gains.append(g)

    noise_w = pools.audio(pools.get(script.noise["asset_id"]).audio_path)
    fitted = fit_length(noise_w, n_total, rng)
    noise_rms = rms(fitted)
    if noise_rms == 0.0:
        raise NoiseSilent(f"noise {script.noise['asset_id']} has zero RMS")
    noise_gain = noise_gain_for_snr(ref_rms, noise_rms, script.noise["snr_db"])
    noise = noise_gain * fitted.samples

    echo = np.zeros(n_total)
    echo_meta = []
    for e in script.echoes:
        agent = pools.audio(pools.get(e.agent_id).audio_path)
        linear, normalized = convolve_ir(agent, pools.ir_taps(pools.get(e.ir_id)))
        lin_rms = rms(linear)
        if lin_rms == 0.0:
            raise NoiseSilent(f"agent response {e.agent_id} is silent")
        # level the small-signal path (slope ``drive``) to the signal-to-echo ratio
        g = ref_rms * 10.0 ** (-e.ser_db / 20.0) / (e.drive * lin_rms)
        y = soft_clip(Waveform(g * linear.samples, sr), e.drive).samples
        a, b = int(round(e.start * sr)), int(round(e.end * sr))
        if a < 0 or b > n_total or a >= b:
            raise DataError(f"echo window [{e.start}, {e.end}] outside the session")
        m = min(b - a, y.size)
        echo[a:a + m] += y[:m]
        echo_meta.append({"gain": g, "ir_peak_normalized": normalized})

    stems = {"target": target, "swapped": swapped, "interference": interference, "noise": noise, "echo": echo}
    raw = target + swapped + interference + noise + echo
    peak = float(np.max(np.abs(raw))) if raw.size else 0.0
    rescale = RESCALE_PEAK / peak if peak > 1.0 else 1.0
    mixture = Waveform(raw * rescale, sr)

    ref_asset = pools.get(script.reference["asset_id"])
    ref_n = int(round(script.reference["duration"] * sr))
    reference = fit_length(pools.audio(ref_asset.audio_path), ref_n, np.random.default_rng([script.seed, 1]))

    meta = {
        "session_id": script.session_id,
        "kind": script.kind,
        "seed": script.seed,
        "sample_rate": sr,
        "n_samples": n_total,
        "duration": n_total / sr,
        "target_speaker": script.target_speaker,
        "reference_rms": ref_rms,
        "noise": {"asset_id": script.noise["asset_id"], "snr_db": script.noise["snr_db"], "gain": noise_gain},
        "interferer_gains": int_gains,
        "echo": echo_meta,
        "echo_windows": [[e.start, e.end] for e in script.echoes],
        "rescale": rescale,
        "n_target_utterances": len(events),
    }
    return SessionRender(script.session_id, script.kind, script.seed, mixture,
                         Waveform(target * rescale, sr), reference, events, stems, meta)


def measured_snr_db(render: SessionRender) -> float:
    """Target-to-noise ratio re-measured on the stems."""
    sr = render.mixture.sample_rate
    active = [(e.start, e.end) for e in render.events]
    t = rms(Waveform(render.stems["target"], sr), active) if active else NOMINAL_REFERENCE_RMS
    return 20.0 * float(np.log10(t / rms(Waveform(render.stems["noise"], sr))))


# --- session directories -------------------------------------------------------

def write_session(render: SessionRender, script: SessionScript, out_dir: str | Path,
                  write_stems: bool = False) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_wav(out / "mixture.wav", render.mixture)
    write_wav(out / "clean.wav", render.clean_target)
    write_wav(out / "ref.wav", render.reference)
    if write_stems:
        for name, x in render.stems.items():
            write_wav(out / "stems" / f"{name}.wav", Waveform(x * render.meta["rescale"], render.mixture.sample_rate))
    _write_json(out / "events.json", [e.to_dict() for e in render.events])
    _write_json(out / "meta.json", render.meta)
    _write_json(out / "script.json", script.to_dict())
    return out


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, ensure_ascii=False, indent=1, sort_keys=True) + "\n", encoding="utf-8")


@dataclass
class SessionFiles:
    session_id: str
    directory: Path
    events: list[TargetEvent]
    meta: dict

    @property
    def duration(self) -> float:
        return self.meta["n_samples"] / self.meta["sample_rate"]

    @property
    def sample_rate(self) -> int:
        return int(self.meta["sample_rate"])

    @property
    def kind(self) -> str:
        return self.meta["kind"]

    @property
    def seed(self) -> int:
        return int(self.meta["seed"])


def load_session(directory: str | Path) -> SessionFiles:
    d = Path(directory)
    try:
        events = [TargetEvent.from_dict(x) for x in json.loads((d / "events.json").read_text(encoding="utf-8"))]
        meta = json.loads((d / "meta.json").read_text(encoding="utf-8"))
        return SessionFiles(meta["session_id"], d, events, meta)
    except (OSError, json.JSONDecodeError, KeyError) as exc:
        raise DataError(f"cannot load session directory {d}: {exc}") from exc


def allocate_kinds(n: int, mix: dict[str, float]) -> list[str]:
    """Largest-remainder split of ``n`` sessions over ``mix``, interleaved
    round-robin in ``KINDS`` order."""
    if n < 0:
        raise ConfigError("session count must be non-negative")
    unknown = set(mix) - set(KINDS)
    if unknown:
        raise ConfigError(f"unknown scenario kinds {sorted(unknown)}")
    kinds = [k for k in KINDS if mix.get(k, 0) > 0]
    total = sum(float(mix[k]) for k in kinds)
    if n and not kinds:
        raise ConfigError("scenario mix has no positive weight")
    quotas = {k: n * float(mix[k]) / total for k in kinds} if kinds else {}
    counts = {k: int(q) for k, q in quotas.items()}
    for k in sorted(kinds, key=lambda k: (-(quotas[k] - counts[k]), KINDS.index(k)))[: n - sum(counts.values())]:
        counts[k] += 1
    order = []
    while len(order) < n:
        for k in kinds:
            if counts[k]:
                order.append(k)
                counts[k] -= 1
    return order


def relpath(p: Path, start: Path) -> str:
    return os.path.relpath(p, start)
