"""Training objective over reference-token log-probabilities.

l_text is the negative mean (over steps) of the summed log-probabilities of
each step's reference semantic tokens. l_state is the negative mean of the
joint state log-probability, taken as lp_vad + lp_turn since the two heads
are independent given the context; a step without a turn target contributes
only its VAD term. l_total = alpha * l_text + (1 - alpha) * l_state.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence, Union

import numpy as np
from scipy.special import log_softmax

from .errors import ConfigError, DataError

StepLogProbs = Union[float, Sequence[float]]
# slack for log-probabilities computed in floating point
_LOGPROB_TOL = 1e-12


@dataclass(frozen=True)
class LossInput:
    text_logprobs: Sequence[StepLogProbs]
    vad_logprobs: Sequence[float]
    turn_logprobs: Sequence[Optional[float]]
    alpha: float = 0.5


@dataclass(frozen=True)
class Losses:
    l_text: float
    l_state: float
    l_total: float


def _check_lp(x: float, what: str) -> float:
    x = float(x)
    if math.isnan(x) or x > _LOGPROB_TOL:
        raise DataError(f"{what}: {x} is not a log-probability")
    return x


def compute_losses(inp: LossInput) -> Losses:
    T = len(inp.vad_logprobs)
    if T < 1:
        raise DataError("loss input needs at least one step")
    if len(inp.text_logprobs) != T or len(inp.turn_logprobs) != T:
        raise DataError(
            f"step counts differ: text {len(inp.text_logprobs)}, vad {T}, turn {len(inp.turn_logprobs)}"
        )
    if not 0.0 <= inp.alpha <= 1.0:
        raise ConfigError(f"alpha {inp.alpha} outside [0, 1]")
    text_terms = []
    for t, step in enumerate(inp.text_logprobs):
        values = [step] if np.isscalar(step) else list(step)
        text_terms.append(math.fsum(_check_lp(v, f"text step {t}") for v in values))
    state_terms = []
    for t, (v, u) in enumerate(zip(inp.vad_logprobs, inp.turn_logprobs)):
        lp = _check_lp(v, f"vad step {t}")
        if u is not None:
            lp += _check_lp(u, f"turn step {t}")
        state_terms.append(lp)
    l_text = -math.fsum(text_terms) / T
    l_state = -math.fsum(state_terms) / T
    # endpoints skip the product so an infinite unused term cannot give 0 * inf
    if inp.alpha == 1.0:
        l_total = l_text
    elif inp.alpha == 0.0:
        l_total = l_state
    else:
        l_total = inp.alpha * l_text + (1.0 - inp.alpha) * l_state
    return Losses(l_text, l_state, l_total)


def reference_logprobs(logits: np.ndarray, targets: Sequence[int]) -> np.ndarray:
    """Log-probability of ``targets[t]`` under softmax(``logits[t]``)."""
    logits = np.asarray(logits, dtype=np.float64)
    idx = np.asarray(targets, dtype=int)
    if logits.ndim != 2 or logits.shape[0] != idx.size:
        raise DataError(f"logits shape {logits.shape} does not match {idx.size} targets")
    if idx.size and (idx.min() < 0 or idx.max() >= logits.shape[1]):
        raise DataError("target index outside the vocabulary")
    return log_softmax(logits, axis=1)[np.arange(idx.size), idx]
