from __future__ import annotations

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from duplex_frontend.errors import DataError
from duplex_frontend.labeling import (
    EventOutOfBounds,
    LabelAlignmentError,
    TargetEvent,
    TrainingSample,
    attach_semantic_events,
    chunk_count,
    emit_training_sample,
    label_events,
    label_session,
    label_vad_chunks,
    read_samples,
    write_samples,
)
from duplex_frontend.scenarios import generate_scenario, render_session
from duplex_frontend.tokens import ChunkEvent, TurnState, VadState, parse

T, S = VadState.TALK, VadState.SIL


def ev(start, end, text="query", turn=TurnState.Complete, answer="answer"):
    if turn is not None and not turn.takes_answer:
        answer = None
    return TargetEvent(start, end, text, turn, answer)


def test_chunk_count():
    assert chunk_count(1.8) == 3
    assert chunk_count(1.5) == 3
    assert chunk_count(0.0) == 0


def test_vad_interval_arithmetic():
    assert label_vad_chunks([ev(0.0, 1.2)], 1.8) == [T, T, S]


def test_vad_no_events_all_sil():
    assert label_vad_chunks([], 3.0) == [S] * 5


def test_vad_overlap_threshold():
    # 30 ms into chunk 1 is below the 60 ms minimum; 60 ms exactly is enough
    assert label_vad_chunks([ev(0.0, 0.63)], 1.8) == [T, S, S]
    assert label_vad_chunks([ev(0.0, 0.66)], 1.8) == [T, T, S]
    assert label_vad_chunks([ev(0.0, 0.63)], 1.8, overlap_min_ms=30) == [T, T, S]


def test_vad_overlap_uses_union_of_events():
    # two 40 ms slivers in one chunk add up to 80 ms of speech
    events = [ev(0.0, 0.64), ev(0.70, 0.74)]
    assert label_vad_chunks(events, 1.8)[1] is T
    # overlapping events are not double counted
    assert label_vad_chunks([ev(0.0, 0.64), ev(0.0, 0.64)], 1.8)[1] is S


def test_vad_event_outside_session():
    with pytest.raises(EventOutOfBounds):
        label_vad_chunks([ev(1.0, 2.0)], 1.8)


def test_complete_attached_at_transition():
    labels, info = label_events([ev(0.3, 1.3)], 3.0)
    assert [e.vad for e in labels] == [T, T, T, S, S]
    assert labels[3] == ChunkEvent(3, S, "query", TurnState.Complete, "answer")
    assert all(e.asr_text is None for i, e in enumerate(labels) if i != 3)
    assert info.virtual_tail_chunks == 0


def test_complete_ending_inside_chunk_two():
    # speech over chunks 0..1, ending inside chunk 2 by less than the minimum overlap
    labels, _ = label_events([ev(0.0, 1.22)], 3.0)
    assert labels[2] == ChunkEvent(2, S, "query", TurnState.Complete, "answer")


def test_backchannel_has_no_answer():
    labels, _ = label_events([ev(0.0, 0.9, "嗯嗯", TurnState.Backchannel)], 2.4)
    assert labels[2] == ChunkEvent(2, S, "嗯嗯", TurnState.Backchannel, None)


def test_all_sil_stream_has_no_semantics():
    labels, info = attach_semantic_events([S] * 4, [])
    assert labels == [ChunkEvent(k, S) for k in range(4)]
    assert info.merged_utterances == 0


def test_virtual_tail_chunk():
    labels, info = label_events([ev(0.0, 1.2)], 1.2)
    assert [e.vad for e in labels] == [T, T, S]
    assert info.virtual_tail_chunks == 1
    assert labels[2].turn is TurnState.Complete


def test_utterances_without_sil_between_are_merged():
    events = [ev(0.0, 0.9, "你好", TurnState.InComplete), ev(1.0, 1.7, "世界")]
    labels, info = label_events(events, 3.0)
    assert info.merged_utterances == 1
    assert labels[3] == ChunkEvent(3, S, "你好世界", TurnState.Complete, "answer")


def test_event_without_talk_chunk_is_an_error():
    with pytest.raises(LabelAlignmentError):
        label_events([ev(0.0, 0.05)], 1.8)


def test_talk_without_event_is_an_error():
    with pytest.raises(LabelAlignmentError):
        attach_semantic_events([T, S], [])


def test_stage_one_event_has_no_turn():
    labels, _ = label_events([ev(0.0, 0.9, "你好", None)], 1.8)
    assert labels[2] == ChunkEvent(2, S, "你好", None, None)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.tuples(st.floats(0.0, 20.0), st.floats(0.05, 3.0)), max_size=6),
       st.integers(0, 120))
def test_vad_matches_per_chunk_oracle(spans, overlap_ms):
    sr, n = 16000, 9600
    events = [ev(a, a + d) for a, d in spans]
    dur = 25.0
    got = label_vad_chunks(events, dur, overlap_min_ms=overlap_ms)
    merged: list[list[int]] = []
    for a, b in sorted((int(round(e.start * sr)), int(round(e.end * sr))) for e in events):
        if merged and a <= merged[-1][1]:
            merged[-1][1] = max(merged[-1][1], b)
        else:
            merged.append([a, b])
    want = []
    for k in range(chunk_count(dur)):
        c = sum(max(0, min(b, (k + 1) * n) - max(a, k * n)) for a, b in merged)
        want.append(T if c >= round(overlap_ms * sr / 1000) else S)
    assert got == want


# --- training samples --------------------------------------------------------

def _render(pools, kind, seed=3):
    return render_session(generate_scenario(kind, pools, seed, session_id=f"{kind}-x"), pools)


def test_sample_round_trip(tmp_path, pools):
    r = _render(pools, "NormalInteraction")
    labels, info = label_session(r)
    s = emit_training_sample(r, labels, "ref.wav", "prompt", "mix.wav", info=info)
    write_samples(tmp_path / "s.jsonl", [s])
    back, = read_samples(tmp_path / "s.jsonl")
    assert back == s
    assert back.n_chunks == chunk_count(r.mixture.duration) + info.virtual_tail_chunks
    assert parse(back.tokens) == back.labels


def test_sample_layout_order(pools):
    r = _render(pools, "PureNoise")
    labels, info = label_session(r)
    s = emit_training_sample(r, labels, "ref.wav", "prompt", "mix.wav", info=info)
    lay = s.layout()
    assert lay[0] == ("ref_audio", "ref.wav") and lay[1] == ("system_prompt", "prompt")
    assert [x for x, _ in lay[2:]] == ["chunk", "label"] * s.n_chunks
    assert s.tokens == "<SIL>" * s.n_chunks


def test_bargein_sample_tokens(pools):
    r = _render(pools, "BargeIn")
    labels, info = label_session(r)
    s = emit_training_sample(r, labels, "ref.wav", "prompt", "mix.wav", info=info)
    assert "<Interrupt>" in s.tokens or "<Backchannel>" in s.tokens
    parse(s.tokens)


def test_sample_errors(pools):
    r = _render(pools, "PureNoise")
    labels, info = label_session(r)
    with pytest.raises(DataError):
        emit_training_sample(r, labels, "", "prompt", "mix.wav", info=info)
    with pytest.raises(DataError):
        emit_training_sample(r, labels[:-1], "ref.wav", "prompt", "mix.wav", info=info)


def test_zero_chunk_session_rejected():
    class Empty:
        session_id, kind, seed, events, duration, sample_rate = "e", "PureNoise", 0, [], 0.0, 16000

    with pytest.raises(DataError, match="zero-chunk"):
        emit_training_sample(Empty(), [], "ref.wav", "p", "m.wav")


def test_sample_with_inconsistent_tokens_rejected(pools):
    r = _render(pools, "PureNoise")
    labels, info = label_session(r)
    d = emit_training_sample(r, labels, "ref.wav", "prompt", "mix.wav", info=info).to_dict()
    d["tokens"] = d["tokens"].replace("<SIL>", "<TALK>", 1)
    with pytest.raises(DataError):
        TrainingSample.from_dict(d)
