"""Synthetic stand-ins for real corpora.

Nothing here imitates speech acoustically beyond what the pipeline needs:
harmonic tone bursts with known edges play the role of characters, speakers
differ by fundamental frequency, and noise is filtered Gaussian noise.
These assets drive the tests, the acceptance suite and the demo pipeline.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .audio import DEFAULT_SAMPLE_RATE, Waveform, exponential_decay_ir, write_wav
from .timestamps import TimedTranscript, WordTiming

# Characters used for synthetic transcripts; none collide with protocol markers.
HANZI = "我们你他她它是的了在有和不这那要去来说看想做好天人大小多少上下前后今明年月日时分点吃喝走跑听写读问答家车路门书水火山风雨"
QUERY_TEMPLATES = 40
BACKCHANNELS = ("嗯嗯", "对", "好的", "是的", "嗯")
INTERRUPTS = ("停一下", "别说了", "等等", "停")


def tone_burst(duration: float, f0: float, amplitude: float, rng: np.random.Generator,
               sample_rate: int = DEFAULT_SAMPLE_RATE, ramp_ms: float = 5.0,
               fricative_ms: float = 0.0) -> np.ndarray:
    """Harmonic burst with raised-cosine ramps; optional noisy onset."""
    n = int(round(duration * sample_rate))
    t = np.arange(n) / sample_rate
    harmonics = rng.uniform(0.2, 1.0, 4)
    harmonics[0] = 1.0
    x = sum(a * np.sin(2 * np.pi * f0 * (k + 1) * t + rng.uniform(0, 2 * np.pi))
            for k, a in enumerate(harmonics))
    x = x / np.sqrt(np.mean(x * x)) * (amplitude / np.sqrt(2))
    r = min(n // 2, int(round(ramp_ms * sample_rate / 1000)))
    if r:
        env = 0.5 - 0.5 * np.cos(np.pi * np.arange(r) / r)
        x[:r] *= env
        x[n - r:] *= env[::-1]
    if fricative_ms:
        m = min(n, int(round(fricative_ms * sample_rate / 1000)))
        hiss = rng.standard_normal(m)
        hiss = np.diff(hiss, prepend=0.0)  # high-pass for a high zero-crossing rate
        x[:m] = hiss / np.std(hiss) * amplitude * 0.12
    return x


@dataclass
class PlantedUtterance:
    audio: Waveform
    truth: TimedTranscript
    coarse: TimedTranscript


def tone_word_utterance(
    rng: np.random.Generator,
    n_words: int,
    jitter_s: float,
    sample_rate: int = DEFAULT_SAMPLE_RATE,
    word_range: tuple[float, float] = (0.35, 0.6),
    gap_range: tuple[float, float] = (0.35, 0.7),
    noise_floor: float = 1e-3,
) -> PlantedUtterance:
    """Tone-burst "words" in near-silence with planted edges plus jittered
    coarse boundaries (each boundary shifted by U(-jitter, +jitter))."""
    level = rng.uniform(0.1, 0.6)
    f0 = rng.uniform(110, 260)
    lead = rng.uniform(*gap_range)
    pieces = [np.zeros(int(round(lead * sample_rate)))]
    t = len(pieces[0]) / sample_rate
    truth, coarse = [], []
    for i in range(n_words):
        dur = rng.uniform(*word_range)
        burst = tone_burst(dur, f0 * rng.uniform(0.9, 1.1), level * rng.uniform(0.7, 1.0), rng, sample_rate)
        start, end = t, t + burst.size / sample_rate
        truth.append(WordTiming(HANZI[int(rng.integers(len(HANZI)))], start, end))
        pieces.append(burst)
        gap = np.zeros(int(round(rng.uniform(*gap_range) * sample_rate)))
        pieces.append(gap)
        t = end + gap.size / sample_rate
    x = np.concatenate(pieces)
    x = x + rng.standard_normal(x.size) * noise_floor
    total = x.size / sample_rate
    for w in truth:
        cs = min(max(0.0, w.start + rng.uniform(-jitter_s, jitter_s)), total)
        ce = min(max(0.0, w.end + rng.uniform(-jitter_s, jitter_s)), total)
        coarse.append(WordTiming(w.text, cs, ce))
    return PlantedUtterance(
        Waveform(x, sample_rate), TimedTranscript(tuple(truth)), TimedTranscript(tuple(coarse))
    )


def planted_corpus(seed: int, n_words: int = 500, jitter_s: float = 0.15,
                   words_per_utterance: int = 10) -> list[PlantedUtterance]:
    rng = np.random.default_rng(seed)
    out, remaining = [], n_words
    while remaining > 0:
        k = min(words_per_utterance, remaining)
        out.append(tone_word_utterance(rng, k, jitter_s))
        remaining -= k
    return out


# --- demo asset pools ------------------------------------------------------

def _chars(rng: np.random.Generator, lo: int, hi: int) -> str:
    n = int(rng.integers(lo, hi + 1))
    return "".join(HANZI[int(i)] for i in rng.integers(0, len(HANZI), n))


def speak(text: str, f0: float, rng: np.random.Generator, sample_rate: int = DEFAULT_SAMPLE_RATE,
          char_range: tuple[float, float] = (0.14, 0.26), gap_range: tuple[float, float] = (0.02, 0.06),
          pad: float = 0.05, level: float = 0.3) -> tuple[Waveform, TimedTranscript]:
    """One tone burst per character, with per-character word timings."""
    pieces = [np.zeros(int(round(pad * sample_rate)))]
    t = pieces[0].size
    words = []
    for i, ch in enumerate(text):
        burst = tone_burst(rng.uniform(*char_range), f0 * rng.uniform(0.92, 1.08),
                           level * rng.uniform(0.8, 1.0), rng, sample_rate,
                           fricative_ms=20.0 if rng.random() < 0.2 else 0.0)
        words.append(WordTiming(ch, t / sample_rate, (t + burst.size) / sample_rate))
        pieces.append(burst)
        t += burst.size
        if i < len(text) - 1:
            gap = np.zeros(int(round(rng.uniform(*gap_range) * sample_rate)))
            pieces.append(gap)
            t += gap.size
    pieces.append(np.zeros(int(round(pad * sample_rate))))
    return Waveform(np.concatenate(pieces), sample_rate), TimedTranscript(tuple(words))


def agent_voice(text: str, rng: np.random.Generator, chars_per_second: float = 4.0,
                sample_rate: int = DEFAULT_SAMPLE_RATE, f0: float = 210.0) -> Waveform:
    """System playback: exactly ``len(text) / chars_per_second`` seconds."""
    slot = int(round(sample_rate / chars_per_second))
    out = np.zeros(slot * len(text))
    for i in range(len(text)):
        burst = tone_burst(0.8 * slot / sample_rate, f0 * rng.uniform(0.95, 1.05), 0.3, rng, sample_rate)
        out[i * slot:i * slot + burst.size] = burst
    return Waveform(out, sample_rate)


def _noise(kind: str, n: int, rng: np.random.Generator, sample_rate: int) -> np.ndarray:
    from scipy.signal import lfilter

    white = rng.standard_normal(n)
    if kind == "white":
        x = white
    elif kind == "brown":
        x = lfilter([1.0], [1.0, -0.98], white)
    elif kind == "lowpass":
        x = lfilter([0.1], [1.0, -0.9], white)
    elif kind == "hum":
        t = np.arange(n) / sample_rate
        x = sum(np.sin(2 * np.pi * 50 * k * t) / k for k in range(1, 6)) + 0.3 * white
    else:  # "babble": amplitude-modulated low-passed noise
        env = lfilter([0.002], [1.0, -0.998], np.abs(rng.standard_normal(n))) * 50
        x = lfilter([0.2], [1.0, -0.8], white) * env
    x = x - np.mean(x)
    return x / np.sqrt(np.mean(x * x)) * 0.1


def _jitter(words: TimedTranscript, rng: np.random.Generator, jitter_s: float, duration: float) -> list[dict]:
    out, prev_end = [], 0.0
    for w in words.entries:
        s = min(max(prev_end, w.start + rng.uniform(-jitter_s, jitter_s)), duration)
        e = min(max(s + 1e-3, w.end + rng.uniform(-jitter_s, jitter_s)), duration)
        out.append({"w": w.text, "start": round(s, 6), "end": round(e, 6)})
        prev_end = e
    return out


def make_demo_assets(out_dir: str | Path, seed: int = 0, n_speakers: int = 6,
                     per_turn: dict[str, int] | None = None, n_interferers: int = 4,
                     chars_per_second: float = 4.0, sample_rate: int = DEFAULT_SAMPLE_RATE) -> Path:
    """Write a small synthetic asset pool and its ``pools.json`` index.

    Target speech carries planted word timings (``speech.jsonl``) and a
    jittered copy (``speech_coarse.jsonl``) for exercising refinement.
    """
    out = Path(out_dir)
    rng = np.random.default_rng(seed)
    per_turn = per_turn or {"Complete": 12, "InComplete": 8, "Interrupt": 6, "Backchannel": 6}
    speech, coarse = [], []
    for s in range(n_speakers):
        spk = f"spk{s:02d}"
        f0 = 100.0 + 140.0 * s / max(1, n_speakers - 1)
        for turn, count in per_turn.items():
            for i in range(count):
                if turn == "Complete":
                    text, answer = _chars(rng, 4, 9), _chars(rng, 8, 20)
                elif turn == "InComplete":
                    text, answer = _chars(rng, 3, 6), None
                elif turn == "Interrupt":
                    text, answer = INTERRUPTS[int(rng.integers(len(INTERRUPTS)))], "好的"
                else:
                    text, answer = BACKCHANNELS[int(rng.integers(len(BACKCHANNELS)))], None
                audio, words = speak(text, f0, rng, sample_rate)
                uid = f"{spk}-{turn[:3].lower()}{i:02d}"
                rel = f"speech/{uid}.wav"
                write_wav(out / rel, audio)
                rec = {"id": uid, "audio_path": rel, "speaker_id": spk, "text": text,
                       "turn_label": turn, "answer_text": answer,
                       "words": [{"w": w.text, "start": round(w.start, 6), "end": round(w.end, 6)}
                                 for w in words.entries]}
                speech.append(rec)
                coarse.append({**rec, "words": _jitter(words, rng, 0.06, audio.duration)})

    interference = []
    for s in range(n_interferers):
        spk = f"int{s:02d}"
        f0 = 120.0 + 25.0 * s + 7.0
        for i in range(10):
            text = _chars(rng, 6, 16)
            audio, _ = speak(text, f0, rng, sample_rate)
            uid = f"{spk}-{i:02d}"
            rel = f"interference/{uid}.wav"
            write_wav(out / rel, audio)
            interference.append({"id": uid, "audio_path": rel, "speaker_id": spk, "text": text})

    noise = []
    for i, kind in enumerate(("white", "brown", "lowpass", "hum", "babble", "babble")):
        n = int(rng.uniform(8.0, 12.0) * sample_rate)
        rel = f"noise/{kind}{i}.wav"
        write_wav(out / rel, Waveform(_noise(kind, n, rng, sample_rate), sample_rate))
        noise.append({"id": f"noise{i}-{kind}", "audio_path": rel})

    irs = []
    for i, rt60 in enumerate((0.2, 0.45)):
        h = exponential_decay_ir(rng, sample_rate, length_ms=150, rt60_s=rt60)
        rel = f"ir/exp{i}.wav"
        write_wav(out / rel, Waveform(h, sample_rate))
        irs.append({"id": f"ir-file{i}", "audio_path": rel})
    for i, rt60 in enumerate((0.15, 0.3)):
        irs.append({"id": f"ir-gen{i}", "generator": "exp_decay",
                    "params": {"rt60_s": rt60, "length_ms": 120, "delay_ms": 3, "seed": 1000 + i}})

    agent = []
    for i in range(16):
        text = _chars(rng, 20, 36)
        rel = f"agent/resp{i:02d}.wav"
        write_wav(out / rel, agent_voice(text, rng, chars_per_second, sample_rate))
        agent.append({"id": f"resp{i:02d}", "audio_path": rel, "text": text})

    pools = {"speech": speech, "speech_coarse": coarse, "interference": interference,
             "noise": noise, "ir": irs, "agent": agent}
    for name, records in pools.items():
        with open(out / f"{name}.jsonl", "w", encoding="utf-8") as f:
            for r in records:
                f.write(json.dumps(r, ensure_ascii=False, sort_keys=True) + "\n")
    index = {k: f"{k}.jsonl" for k in ("speech", "interference", "noise", "ir", "agent")}
    (out / "pools.json").write_text(json.dumps(index, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return out / "pools.json"
