from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from duplex_frontend.errors import ConfigError, DataError
from duplex_frontend.losses import LossInput, compute_losses, reference_logprobs

lp = st.floats(-20.0, 0.0)


@st.composite
def loss_inputs(draw):
    n = draw(st.integers(1, 12))
    text = [draw(st.lists(lp, min_size=0, max_size=4)) for _ in range(n)]
    vad = [draw(lp) for _ in range(n)]
    turn = [draw(st.one_of(st.none(), lp)) for _ in range(n)]
    return text, vad, turn


@given(loss_inputs())
def test_endpoints(parts):
    text, vad, turn = parts
    one = compute_losses(LossInput(text, vad, turn, 1.0))
    zero = compute_losses(LossInput(text, vad, turn, 0.0))
    assert one.l_total == one.l_text
    assert zero.l_total == zero.l_state


@given(loss_inputs(), st.floats(0.0, 1.0))
def test_total_is_convex_combination(parts, alpha):
    text, vad, turn = parts
    r = compute_losses(LossInput(text, vad, turn, alpha))
    assert r.l_total == pytest.approx(alpha * r.l_text + (1 - alpha) * r.l_state, abs=1e-9)
    assert min(r.l_text, r.l_state) - 1e-9 <= r.l_total <= max(r.l_text, r.l_state) + 1e-9


@pytest.mark.parametrize("V", [2, 7, 151_646])
def test_uniform_text_is_log_vocab(V):
    T = 9
    logits = np.zeros((T, V))
    lps = reference_logprobs(logits, [t % V for t in range(T)])
    r = compute_losses(LossInput([[x] for x in lps], [0.0] * T, [None] * T))
    assert abs(r.l_text - math.log(V)) < 1e-9


def test_certain_targets_give_zero_loss():
    r = compute_losses(LossInput([[0.0, 0.0], [0.0]], [0.0, 0.0], [0.0, None], 0.3))
    assert (r.l_text, r.l_state, r.l_total) == (0.0, 0.0, 0.0)


def test_hand_values():
    text = [[math.log(0.5), math.log(0.25)], []]
    r = compute_losses(LossInput(text, [math.log(0.5), math.log(0.5)], [math.log(0.5), None], 0.5))
    assert r.l_text == pytest.approx(3 * math.log(2) / 2)
    assert r.l_state == pytest.approx(3 * math.log(2) / 2)


def test_infinite_unused_term_at_endpoint():
    r = compute_losses(LossInput([[-math.inf]], [0.0], [None], 0.0))
    assert r.l_total == 0.0 and r.l_text == math.inf


@given(loss_inputs(), st.integers(0, 11), st.floats(0.01, 5.0))
def test_monotone_in_reference_probability(parts, t, delta):
    text, vad, turn = parts
    t %= len(vad)
    base = compute_losses(LossInput(text, vad, turn, 0.5))
    worse = list(vad)
    worse[t] -= delta
    assert compute_losses(LossInput(text, worse, turn, 0.5)).l_state > base.l_state


def test_validation():
    with pytest.raises(DataError):
        compute_losses(LossInput([], [], []))
    with pytest.raises(DataError):
        compute_losses(LossInput([[0.0]], [0.0, 0.0], [None, None]))
    with pytest.raises(DataError):
        compute_losses(LossInput([[0.5]], [0.0], [None]))
    with pytest.raises(DataError):
        compute_losses(LossInput([[math.nan]], [0.0], [None]))
    with pytest.raises(ConfigError):
        compute_losses(LossInput([[0.0]], [0.0], [None], 1.5))
    with pytest.raises(DataError):
        reference_logprobs(np.zeros((2, 3)), [0, 3])
