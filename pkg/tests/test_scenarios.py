from __future__ import annotations

import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from duplex_frontend.audio import Waveform
from duplex_frontend.controller import ActionKind, simulate_oracle
from duplex_frontend.errors import ConfigError
from duplex_frontend.labeling import label_session
from duplex_frontend.scenarios import (
    KINDS,
    AssetPools,
    DialogueItem,
    MissingAssetPool,
    ScenarioConfig,
    SessionScript,
    allocate_kinds,
    assemble_dialogue,
    gap_sampler,
    generate_scenario,
    load_session,
    measured_snr_db,
    render_session,
    session_seed,
    write_session,
)
from duplex_frontend.tokens import TurnState, VadState, serialize

SR = 16000


def item(seconds: float, text: str = "你好") -> DialogueItem:
    return DialogueItem(Waveform(np.full(int(seconds * SR), 0.1), SR), text)


# --- assembly ------------------------------------------------------------------

def test_single_utterance_no_gap():
    w, events = assemble_dialogue([item(2.0)], gap_sampler(0))
    assert w.duration == 2.0
    assert [(e.start, e.end) for e in events] == [(0.0, 2.0)]


def test_fixed_gap_arithmetic():
    w, events = assemble_dialogue([item(1.0), item(1.0)], lambda: 1.0)
    assert w.duration == 3.0
    assert (events[1].start, events[1].end) == (2.0, 3.0)
    assert np.all(w.samples[SR:2 * SR] == 0)


@pytest.mark.parametrize("seed", [0, 1, 99])
def test_degenerate_gap_range(seed):
    draw = gap_sampler(seed, (1.0, 1.0))
    assert [draw() for _ in range(5)] == [1.0] * 5


def test_gap_sampler_in_range_and_seeded():
    a, b = gap_sampler(5), gap_sampler(5)
    xs = [a() for _ in range(200)]
    assert xs == [b() for _ in range(200)]
    assert all(0.5 <= x <= 3.0 for x in xs)


def test_empty_dialogue_rejected():
    with pytest.raises(ValueError):
        assemble_dialogue([], gap_sampler(0))


# --- scripts ---------------------------------------------------------------------

def test_allocate_kinds_one_of_each():
    assert sorted(allocate_kinds(4, {k: 1 for k in KINDS})) == sorted(KINDS)
    assert allocate_kinds(0, {k: 1 for k in KINDS}) == []


@given(st.integers(0, 60), st.lists(st.integers(0, 5), min_size=4, max_size=4))
def test_allocate_kinds_proportions(n, weights):
    mix = dict(zip(KINDS, weights))
    if not any(weights):
        if n:
            with pytest.raises(ConfigError):
                allocate_kinds(n, mix)
        return
    got = allocate_kinds(n, mix)
    assert len(got) == n
    total = sum(weights)
    for k, w in mix.items():
        assert abs(got.count(k) - n * w / total) < 1.0


def test_unknown_kind(pools):
    with pytest.raises(ConfigError):
        generate_scenario("Chitchat", pools, 0)


def test_missing_pool(pools):
    empty = AssetPools(speech=pools.speech, noise=pools.noise)
    with pytest.raises(MissingAssetPool):
        generate_scenario("BargeIn", empty, 0)


@pytest.mark.parametrize("kind", KINDS)
def test_script_round_trip_and_constraints(pools, kind):
    cfg = ScenarioConfig()
    s = generate_scenario(kind, pools, 11, cfg)
    assert SessionScript.from_dict(json.loads(json.dumps(s.to_dict()))) == s
    assert cfg.duration_range[0] <= s.duration <= cfg.duration_range[1] + 0.6
    assert cfg.reference_range[0] <= s.reference["duration"] <= cfg.reference_range[1]
    for g, over in zip(s.gaps, s.gap_overridden):
        assert over or cfg.gap_range[0] <= g <= cfg.gap_range[1]
    ref = pools.get(s.reference["asset_id"])
    assert ref.speaker_id == s.target_speaker
    assert all(pools.get(u.asset_id).speaker_id == s.target_speaker for u in s.utterances)


def test_session_seeds_distinct():
    seeds = {session_seed(0, i) for i in range(1000)}
    assert len(seeds) == 1000
    assert session_seed(0, 3) == session_seed(0, 3) != session_seed(1, 3)


# --- rendering -------------------------------------------------------------------

def _labels(render):
    return label_session(render)[0]


def test_pure_noise_all_sil(pools):
    r = render_session(generate_scenario("PureNoise", pools, 2), pools)
    assert not r.events
    assert set(serialize(_labels(r)).split(">")[:-1]) == {"<SIL"}
    assert not np.any(r.stems["target"])


def test_interference_only_non_target(pools):
    r = render_session(generate_scenario("InterferenceSpeaker", pools, 2), pools)
    assert not r.events
    assert all(e.vad is VadState.SIL for e in _labels(r))
    assert np.any(r.stems["interference"]) and not np.any(r.stems["target"])


def test_normal_interaction_tokens(pools):
    r = render_session(generate_scenario("NormalInteraction", pools, 2), pools)
    text = serialize(_labels(r))
    assert "<TALK><SIL><AsrStart>" in text
    assert "<Complete><AnswerStart>" in text or "<InComplete>" in text
    assert not np.any(r.stems["echo"])


def test_bargein_tokens(pools):
    for seed in range(6):
        r = render_session(generate_scenario("BargeIn", pools, seed), pools)
        text = serialize(_labels(r))
        assert "<Interrupt>" in text or "<Backchannel>" in text


def test_render_deterministic(pools):
    s = generate_scenario("BargeIn", pools, 4)
    a, b = render_session(s, pools), render_session(s, pools)
    assert a.mixture.samples.tobytes() == b.mixture.samples.tobytes()
    assert a.events == b.events
    assert generate_scenario("BargeIn", pools, 4) == s


def test_snr_twenty_db(pools):
    s = generate_scenario("NormalInteraction", pools, 8)
    s.noise["snr_db"] = 20.0
    assert measured_snr_db(render_session(s, pools)) == pytest.approx(20.0, abs=0.1)


def test_stems_add_up_to_mixture(pools):
    r = render_session(generate_scenario("BargeIn", pools, 5), pools)
    total = sum(r.stems.values()) * r.meta["rescale"]
    assert np.allclose(total, r.mixture.samples, atol=1e-12)
    assert np.max(np.abs(r.mixture.samples)) <= 1.0


def test_echo_exactly_inside_windows(pools):
    for seed in range(4):
        r = render_session(generate_scenario("BargeIn", pools, seed), pools)
        resc = r.meta["rescale"]
        residual = r.mixture.samples - r.clean_target.samples - resc * r.stems["noise"]
        inside = np.zeros(residual.size, dtype=bool)
        for a, b in r.meta["echo_windows"]:
            lo, hi = int(round(a * SR)), int(round(b * SR))
            inside[lo:hi] = True
            assert np.sum(residual[lo:hi] ** 2) > 1e-3
        assert np.max(np.abs(residual[~inside]), initial=0.0) < 1e-12


def test_echo_windows_match_controller_playback(pools):
    seen = set()
    for seed in range(8):
        r = render_session(generate_scenario("BargeIn", pools, seed), pools)
        labels = _labels(r)
        trace = simulate_oracle("x", labels)
        responds = [c.chunk_index for c in trace.chunks if any(a.kind is ActionKind.Respond for a in c.actions)]
        halts = [c.chunk_index for c in trace.chunks if any(a.kind is ActionKind.HaltPlayback for a in c.actions)]
        for a, b in r.meta["echo_windows"]:
            k = round(a / 0.6) - 1
            assert k in responds
            j = round(b / 0.6) - 1
            if j in halts:
                seen.add("halt")
                assert labels[j].turn is TurnState.Interrupt
            else:
                seen.add("continue")
            # playback is live at every barge-in decision inside the window
            for e in labels:
                if e.turn in (TurnState.Interrupt, TurnState.Backchannel) and a < e.index * 0.6 < b:
                    kinds = {x.kind for x in trace.chunks[e.index].actions}
                    want = ActionKind.HaltPlayback if e.turn is TurnState.Interrupt else ActionKind.ContinuePlayback
                    assert want in kinds
                    seen.add(e.turn.value)
    assert seen == {"halt", "continue", "Interrupt", "Backchannel"}


def test_write_and_load_session(tmp_path, pools):
    s = generate_scenario("NormalInteraction", pools, 1, session_id="s1")
    r = render_session(s, pools)
    d = write_session(r, s, tmp_path / "s1", write_stems=True)
    for name in ("mixture.wav", "clean.wav", "ref.wav", "events.json", "meta.json", "script.json",
                 "stems/echo.wav"):
        assert (d / name).exists()
    back = load_session(d)
    assert back.events == r.events
    assert back.duration == r.mixture.duration
    assert _labels(back) == _labels(r)
