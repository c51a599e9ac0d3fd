"""Sample-level DSP primitives.

Every function here is pure: inputs are never mutated and identical inputs
give identical outputs. Times are in seconds and converted to sample
indices with ``round``; intervals are half-open ``[start, end)``.
"""

from __future__ import annotations

import math
import wave
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence, Union

import numpy as np
from scipy.signal import fftconvolve

from .errors import DataError

DEFAULT_SAMPLE_RATE = 16000
PCM16_SCALE = 32767.0
# Kernels longer than this go through the FFT path.
_DIRECT_CONV_MAX_TAPS = 64

Interval = tuple[float, float]
Region = Union[Interval, Sequence[Interval], None]


class RangeOutOfBounds(DataError):
    pass


class NoiseSilent(DataError):
    pass


class TargetSilent(DataError):
    pass


class OffsetOutOfRange(DataError):
    pass


class ClippingError(DataError):
    pass


@dataclass(frozen=True, eq=False)
class Waveform:
    """Mono sample buffer.

    Magnitudes may exceed 1.0 in intermediate results (a raw sum of stems);
    the bound is enforced where audio leaves the pipeline (``write_wav``) and
    by the session renderer's uniform rescale.
    """

    samples: np.ndarray
    sample_rate: int = DEFAULT_SAMPLE_RATE

    def __post_init__(self) -> None:
        if self.sample_rate <= 0:
            raise ValueError(f"sample_rate must be positive, got {self.sample_rate}")
        arr = np.asarray(self.samples, dtype=np.float64)
        if arr.ndim != 1:
            raise ValueError("Waveform samples must be one-dimensional (mono)")
        object.__setattr__(self, "samples", arr)

    def __len__(self) -> int:
        return self.samples.shape[0]

    @property
    def duration(self) -> float:
        return len(self) / self.sample_rate

    @property
    def peak(self) -> float:
        return float(np.max(np.abs(self.samples))) if len(self) else 0.0

    def to_index(self, t: float) -> int:
        return int(round(t * self.sample_rate))

    def slice(self, start: float, end: float) -> "Waveform":
        a, b = self._bounds(start, end)
        return Waveform(self.samples[a:b].copy(), self.sample_rate)

    def _bounds(self, start: float, end: float) -> tuple[int, int]:
        a, b = self.to_index(start), self.to_index(end)
        if a < 0 or b > len(self) or a > b:
            raise RangeOutOfBounds(
                f"range [{start}, {end}) outside waveform of {self.duration:.6f} s"
            )
        return a, b

    @classmethod
    def silence(cls, duration: float, sample_rate: int = DEFAULT_SAMPLE_RATE) -> "Waveform":
        return cls(np.zeros(int(round(duration * sample_rate))), sample_rate)


@dataclass(frozen=True, eq=False)
class Chunk:
    samples: np.ndarray
    index: int
    padded_samples: int = 0


def _normalize_region(region: Region) -> list[Interval]:
    if region is None:
        return []
    if len(region) == 2 and all(isinstance(v, (int, float, np.floating, np.integer)) for v in region):
        return [(float(region[0]), float(region[1]))]
    return [(float(a), float(b)) for a, b in region]


def region_mask(w: Waveform, region: Region) -> np.ndarray:
    """Boolean mask of the samples covered by one interval or a union of them."""
    intervals = _normalize_region(region)
    if not intervals:
        return np.ones(len(w), dtype=bool)
    mask = np.zeros(len(w), dtype=bool)
    for start, end in intervals:
        a, b = w._bounds(start, end)
        mask[a:b] = True
    return mask


def rms(w: Waveform, range: Region = None) -> float:
    """Root-mean-square of ``w`` over ``range`` (whole signal when omitted).

    ``range`` may be a single ``(start, end)`` pair or a list of pairs whose
    union is measured. An empty range measures 0.0.
    """
    x = w.samples[region_mask(w, range)]
    if x.size == 0:
        return 0.0
    return float(np.sqrt(np.mean(x * x)))


def fit_length(noise: Waveform, n: int, rng: np.random.Generator | None = None) -> Waveform:
    """Tile or crop ``noise`` to exactly ``n`` samples.

    Shorter noise is tiled starting at a random circular offset; longer noise
    is cropped at a random start. Without ``rng`` both offsets are zero.
    """
    m = len(noise)
    if m == 0:
        raise NoiseSilent("noise waveform is empty")
    x = noise.samples
    if m >= n:
        start = int(rng.integers(0, m - n + 1)) if rng is not None else 0
        out = x[start:start + n]
    else:
        shift = int(rng.integers(0, m)) if rng is not None else 0
        reps = math.ceil((n + shift) / m)
        out = np.tile(x, reps)[shift:shift + n]
    return Waveform(out.copy(), noise.sample_rate)


def noise_gain_for_snr(target_rms: float, noise_rms: float, snr_db: float) -> float:
    return (target_rms / noise_rms) * 10.0 ** (-snr_db / 20.0)


def mix_at_snr(
    target: Waveform,
    noise: Waveform,
    snr_db: float,
    target_active_region: Region = None,
    rng: np.random.Generator | None = None,
) -> tuple[Waveform, float]:
    """Add ``noise`` to ``target`` at ``snr_db`` measured over the active region.

    Returns the mixture and the linear gain applied to the length-fitted noise.
    """
    _check_rates(target, noise)
    fitted = fit_length(noise, len(target), rng)
    noise_rms = rms(fitted)
    if noise_rms == 0.0:
        raise NoiseSilent("noise has zero RMS")
    target_rms = rms(target, target_active_region)
    if target_rms == 0.0:
        raise TargetSilent("target has zero RMS over its active region")
    gain = noise_gain_for_snr(target_rms, noise_rms, snr_db)
    return Waveform(target.samples + gain * fitted.samples, target.sample_rate), gain


def convolve_ir(signal: Waveform, ir: np.ndarray | Waveform) -> tuple[Waveform, bool]:
    """Full linear convolution with an impulse response.

    The result is peak-normalized to 1.0 only when it would exceed full
    scale; the second return value reports whether that happened.
    """
    if isinstance(ir, Waveform):
        _check_rates(signal, ir)
        h = ir.samples
    else:
        h = np.asarray(ir, dtype=np.float64)
    if h.size == 0:
        raise DataError("impulse response is empty")
    if len(signal) == 0:
        return Waveform(np.zeros(h.size - 1), signal.sample_rate), False
    if h.size == 1:
        y = signal.samples * h[0]
    elif h.size <= _DIRECT_CONV_MAX_TAPS:
        y = np.convolve(signal.samples, h)
    else:
        y = fftconvolve(signal.samples, h)
    peak = float(np.max(np.abs(y)))
    normalized = peak > 1.0
    if normalized:
        y = y / peak
    return Waveform(y, signal.sample_rate), normalized


def soft_clip(w: Waveform, drive: float) -> Waveform:
    """Memoryless saturation ``tanh(drive * x)``; odd, monotone, bounded by 1."""
    if not drive > 0:
        raise ValueError(f"drive must be positive, got {drive}")
    return Waveform(np.tanh(drive * w.samples), w.sample_rate)


def overlay_at(base: Waveform, insert: Waveform, offset: float) -> Waveform:
    _check_rates(base, insert)
    k = base.to_index(offset)
    if offset < 0 or k < 0 or k + len(insert) > len(base):
        raise OffsetOutOfRange(
            f"insert of {len(insert)} samples at offset {offset} s does not fit "
            f"in base of {len(base)} samples"
        )
    out = base.samples.copy()
    out[k:k + len(insert)] += insert.samples
    return Waveform(out, base.sample_rate)


def chunk_length(chunk_ms: float, sample_rate: int) -> int:
    if chunk_ms <= 0:
        raise ValueError(f"chunk_ms must be positive, got {chunk_ms}")
    n = chunk_ms * sample_rate / 1000.0
    if abs(n - round(n)) > 1e-9:
        raise ValueError(f"{chunk_ms} ms is not a whole number of samples at {sample_rate} Hz")
    return int(round(n))


def segment_chunks(w: Waveform, chunk_ms: float = 600) -> list[Chunk]:
    n = chunk_length(chunk_ms, w.sample_rate)
    count = -(-len(w) // n)
    chunks = []
    for i in range(count):
        piece = w.samples[i * n:(i + 1) * n]
        pad = n - piece.size
        if pad:
            piece = np.concatenate([piece, np.zeros(pad)])
        chunks.append(Chunk(piece.copy(), i, pad))
    return chunks


def concat_chunks(chunks: Sequence[Chunk], sample_rate: int = DEFAULT_SAMPLE_RATE) -> Waveform:
    """Inverse of ``segment_chunks``: join chunks and drop trailing padding."""
    parts = [c.samples[: c.samples.size - c.padded_samples] for c in chunks]
    return Waveform(np.concatenate(parts) if parts else np.zeros(0), sample_rate)


def exponential_decay_ir(
    rng: np.random.Generator,
    sample_rate: int = DEFAULT_SAMPLE_RATE,
    length_ms: float = 120.0,
    rt60_s: float = 0.25,
    delay_ms: float = 2.0,
    direct_gain: float = 1.0,
) -> np.ndarray:
    """Parametric echo path: a direct tap followed by an exponentially
    decaying Gaussian tail reaching -60 dB at ``rt60_s``."""
    n = max(1, int(round(length_ms * sample_rate / 1000.0)))
    d = min(n - 1, int(round(delay_ms * sample_rate / 1000.0)))
    t = np.arange(n) / sample_rate
    tail = rng.standard_normal(n) * np.exp(-6.907755 * t / rt60_s) * 0.2
    tail[: d + 1] = 0.0
    tail[d] = direct_gain
    return tail / np.sqrt(np.sum(tail * tail))


def _check_rates(a: Waveform, b: Waveform) -> None:
    if a.sample_rate != b.sample_rate:
        raise DataError(f"sample rate mismatch: {a.sample_rate} vs {b.sample_rate}")


# --- WAV I/O -------------------------------------------------------------

def resample_linear(w: Waveform, sample_rate: int) -> Waveform:
    """Linear-interpolation resampler; adequate for ingestion, not hi-fi."""
    if sample_rate == w.sample_rate or len(w) == 0:
        return Waveform(w.samples, sample_rate)
    n_out = int(round(len(w) * sample_rate / w.sample_rate))
    t_out = np.arange(n_out) / sample_rate
    t_in = np.arange(len(w)) / w.sample_rate
    return Waveform(np.interp(t_out, t_in, w.samples), sample_rate)


def read_wav(path: str | Path, sample_rate: int | None = DEFAULT_SAMPLE_RATE) -> Waveform:
    """Load a mono 16-bit PCM WAV, resampling to ``sample_rate`` if given."""
    try:
        with wave.open(str(path), "rb") as f:
            channels, width, rate = f.getnchannels(), f.getsampwidth(), f.getframerate()
            frames = f.readframes(f.getnframes())
    except (OSError, EOFError, wave.Error) as exc:
        raise DataError(f"cannot read WAV {path}: {exc}") from exc
    if channels != 1:
        raise DataError(f"{path}: expected mono audio, found {channels} channels")
    if width != 2:
        raise DataError(f"{path}: expected 16-bit PCM, found {8 * width}-bit")
    x = np.frombuffer(frames, dtype="<i2").astype(np.float64) / PCM16_SCALE
    w = Waveform(x, rate)
    if sample_rate is not None and rate != sample_rate:
        w = resample_linear(w, sample_rate)
    return w


def to_pcm16(w: Waveform) -> np.ndarray:
    if w.peak > 1.0:
        raise ClippingError(f"peak {w.peak:.4f} exceeds full scale; rescale before writing")
    return np.round(w.samples * PCM16_SCALE).astype("<i2")


def write_wav(path: str | Path, w: Waveform) -> None:
    pcm = to_pcm16(w)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with wave.open(str(path), "wb") as f:
        f.setnchannels(1)
        f.setsampwidth(2)
        f.setframerate(w.sample_rate)
        f.writeframes(pcm.tobytes())
