"""Exit criteria, each checked at its stated tolerance.

Every check prints one PASS/FAIL line (also collected for the terminal
summary). Run alone with ``pytest tests/test_acceptance.py -s``.
"""

from __future__ import annotations

import hashlib
import math
import time
from pathlib import Path

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES
from duplex_frontend.controller import FlipProbs, simulate_oracle, simulate_perturbed
from duplex_frontend.evaluation import (
    binomial_sigma,
    edit_distance_matrix,
    f1_score,
    run_evaluation,
    write_report,
    write_traces,
)
from duplex_frontend.labeling import emit_training_sample, label_session, write_samples
from duplex_frontend.losses import LossInput, compute_losses, reference_logprobs
from duplex_frontend.scenarios import KINDS, allocate_kinds, generate_scenario, render_session, session_seed
from duplex_frontend.synthetic import planted_corpus
from duplex_frontend.timestamps import refine_transcript
from duplex_frontend.tokens import TokenError, parse, serialize

from event_gen import mutate, random_events
from wer_oracle import all_pairs_check, alignment_distance, all_strings

pytestmark = pytest.mark.acceptance

SEED = 20240
SR = 16000


def record(n: int, ok: bool, detail: str) -> None:
    line = f"{'PASS' if ok else 'FAIL'}  criterion {n}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line


def digest_dir(d: Path, extra: bytes = b"") -> str:
    h = hashlib.sha256(extra)
    for p in sorted(d.rglob("*")):
        if p.is_file():
            h.update(str(p.relative_to(d)).encode())
            h.update(p.read_bytes())
    return h.hexdigest()


# --- runs shared by criteria 2-5 and the determinism check ---------------------

def closed_loop(pools, out: Path, seed: int) -> dict:
    t0 = time.perf_counter()
    kinds = allocate_kinds(200, {k: 1 for k in KINDS})
    samples, audio = [], hashlib.sha256()
    for i, kind in enumerate(kinds):
        sid = f"s{i:05d}"
        render = render_session(generate_scenario(kind, pools, session_seed(seed, i), session_id=sid), pools)
        audio.update(render.mixture.samples.tobytes())
        labels, info = label_session(render)
        samples.append(emit_training_sample(render, labels, f"{sid}/ref.wav", "prompt", f"{sid}/mixture.wav",
                                            info=info))
    traces = [simulate_oracle(s.id, s.labels) for s in samples]
    report = run_evaluation(traces, samples)
    write_samples(out / "samples.jsonl", samples)
    write_traces(out / "traces.jsonl", traces)
    write_report(report, out / "report", {"seed": seed})
    elapsed = time.perf_counter() - t0
    return {"report": report, "samples": samples, "kinds": kinds, "elapsed": elapsed,
            "digest": digest_dir(out, audio.digest())}


def perturbed_loop(samples, out: Path, seed: int) -> dict:
    flip = FlipProbs(vad=0.05, turn=0.10)
    traces = [simulate_perturbed(s.id, s.labels, flip, seed) for s in samples]
    report = run_evaluation(traces, samples)
    write_traces(out / "traces.jsonl", traces)
    write_report(report, out / "report", {"seed": seed, "p_vad": 0.05, "p_turn": 0.10})
    return {"report": report, "digest": digest_dir(out)}


def snr_contract(pools, seed: int) -> dict:
    rng = np.random.default_rng(seed)
    errors, h = [], hashlib.sha256()
    for i in range(100):
        kind = ("NormalInteraction", "BargeIn")[i % 2]
        script = generate_scenario(kind, pools, session_seed(seed, i))
        requested = float(rng.uniform(0.0, 20.0))
        script.noise["snr_db"] = requested
        r = render_session(script, pools)
        # independent re-measurement: target power over its active speech, noise power overall
        mask = np.zeros(r.mixture.samples.size, dtype=bool)
        for e in r.events:
            mask[int(round(e.start * SR)):int(round(e.end * SR))] = True
        target = r.clean_target.samples[mask]
        noise = r.meta["rescale"] * r.stems["noise"]
        measured = 10 * math.log10(np.mean(target ** 2) / np.mean(noise ** 2))
        errors.append(measured - requested)
        h.update(r.mixture.samples.tobytes())
    return {"errors": np.array(errors), "digest": h.hexdigest() + repr(errors)}


def timestamp_refinement(seed: int) -> dict:
    refined, raw, coarse = [], [], []
    lines = []
    pad = 0.015
    for u in planted_corpus(seed, n_words=500, jitter_s=0.15):
        out = refine_transcript(u.audio, u.coarse)
        for t, c, e in zip(u.truth.entries, u.coarse.entries, out.entries):
            raw += [abs(e.start - t.start), abs(e.end - t.end)]
            refined += [abs(e.start - (t.start - pad)), abs(e.end - (t.end + pad))]
            coarse += [abs(c.start - t.start), abs(c.end - t.end)]
            lines.append(f"{e.text} {e.start!r} {e.end!r} {e.fallback}")
    return {"raw_mae": float(np.mean(raw)), "padded_mae": float(np.mean(refined)),
            "coarse_mae": float(np.mean(coarse)), "n_words": len(raw) // 2,
            "digest": hashlib.sha256("\n".join(lines).encode()).hexdigest()}


@pytest.fixture(scope="module")
def runs(pools, tmp_path_factory):
    out = []
    for rep in range(2):
        base = tmp_path_factory.mktemp(f"acceptance{rep}")
        loop = closed_loop(pools, base / "loop", SEED)
        out.append({
            "loop": loop,
            "perturbed": perturbed_loop(loop["samples"], base / "perturbed", SEED),
            "snr": snr_contract(pools, SEED),
            "timestamps": timestamp_refinement(SEED),
        })
    return out


# --- criteria --------------------------------------------------------------------

def test_criterion_1_f1_formula():
    t0 = time.perf_counter()
    silero = 100 * f1_score(0.9835, 0.9662)
    ten = 100 * f1_score(0.9632, 0.9787)
    dt = time.perf_counter() - t0
    ok = abs(silero - 97.48) <= 0.01 and abs(ten - 97.09) <= 0.01 and dt < 1.0
    record(1, ok, f"F1(98.35, 96.62) = {silero:.4f} (97.48), F1(96.32, 97.87) = {ten:.4f} (97.09), {dt * 1e3:.2f} ms")


def test_criterion_2_oracle_closed_loop(runs):
    loop = runs[0]["loop"]
    r = loop["report"]
    per_kind = {k: loop["kinds"].count(k) for k in KINDS}
    turns = {k: v["accuracy"] for k, v in r["turn_accuracy"].items()}
    b = r["barge_in_latency"]
    ok = (per_kind == {k: 50 for k in KINDS}
          and r["vad"]["f1"] == 1.0
          and r["wer"]["value"] == 0.0
          and set(turns) == {"Complete", "InComplete", "Interrupt", "Backchannel"}
          and all(v == 1.0 for v in turns.values())
          and b["count"] > 0 and b["fraction_zero"] == 1.0
          and r["sessions"]["failed"] == 0
          and loop["elapsed"] < 120.0)
    record(2, ok, f"{r['sessions']['total']} sessions {per_kind}; VAD F1 {r['vad']['f1']}, WER {r['wer']['value']}, "
                  f"turn {turns}, interrupts {b['count']} at 0 chunks {b['fraction_zero']}, "
                  f"failed {r['sessions']['failed']}, {loop['elapsed']:.1f} s")


def test_criterion_3_calibrated_degradation(runs):
    r = runs[0]["perturbed"]["report"]
    n = r["vad"]["tp"] + r["vad"]["fp"] + r["vad"]["tn"] + r["vad"]["fn"]
    acc = r["vad"]["accuracy"]
    sigma = binomial_sigma(0.95, n)
    details = [f"{n} chunks, VAD accuracy {acc:.4f} (0.95 +/- {3 * sigma:.4f})"]
    ok = n >= 10_000 and abs(acc - 0.95) <= 3 * sigma
    for cls, v in r["turn_accuracy"].items():
        s = binomial_sigma(0.90, v["support"])
        within = abs(v["accuracy"] - 0.90) <= 3 * s
        ok = ok and within
        details.append(f"{cls} {v['accuracy']:.4f} (n={v['support']}, +/- {3 * s:.4f})")
    ok = ok and len(r["turn_accuracy"]) == 4
    record(3, ok, "; ".join(details))


def test_criterion_4_snr_contract(runs):
    err = runs[0]["snr"]["errors"]
    worst = float(np.max(np.abs(err)))
    record(4, err.size == 100 and worst <= 0.1, f"100 renders, max |measured - requested| = {worst:.2e} dB (<= 0.1)")


def test_criterion_5_timestamp_refinement(runs):
    t = runs[0]["timestamps"]
    bound = t["coarse_mae"] / 4.8
    ok = t["n_words"] == 500 and t["raw_mae"] <= 0.020 and t["raw_mae"] <= bound
    record(5, ok, f"{t['n_words']} words, refined MAE {t['raw_mae'] * 1e3:.2f} ms vs planted edges "
                  f"({t['padded_mae'] * 1e3:.2f} ms vs padded edges), coarse MAE {t['coarse_mae'] * 1e3:.2f} ms, "
                  f"bound min(20, coarse/4.8 = {bound * 1e3:.2f}) ms")


def test_criterion_6_grammar_soundness():
    rng = np.random.default_rng(SEED)
    roundtrip_ok = 0
    for _ in range(10_000):
        events = random_events(rng)
        text = serialize(events)
        roundtrip_ok += parse(text) == events and serialize(parse(text)) == text
    rejected = different = silent = 0
    for _ in range(1_000):
        events = random_events(rng)
        text = serialize(events)
        bad = mutate(rng, text)
        try:
            got = parse(bad)
        except TokenError as exc:
            rejected += exc.offset is not None and 0 <= exc.offset <= len(bad)
            continue
        if got != events:
            different += 1
        else:
            silent += 1
    ok = roundtrip_ok == 10_000 and rejected + different == 1_000 and silent == 0
    record(6, ok, f"round trips {roundtrip_ok}/10000; mutations: {rejected} rejected with position, "
                  f"{different} parse to a different list, {silent} accepted as the original")


def test_criterion_7_wer_exhaustive():
    t0 = time.perf_counter()
    # the search oracle itself against explicit alignment enumeration
    small = all_strings(3, "abcd")
    enum_bad = sum(alignment_distance(a, b) != d for a in small
                   for b, d in zip(small, edit_distance_matrix([a], small)[0]))
    res = all_pairs_check(edit_distance_matrix, L=8, alphabet="abcd")
    dt = time.perf_counter() - t0
    ok = enum_bad == 0 and res["mismatches"] == 0 and res["pairs"] == 87381 ** 2
    record(7, ok, f"{res['pairs']} pairs (all strings of length <= 8 over 4 symbols) agree with edit-script "
                  f"enumeration; {len(small) ** 2} pairs of length <= 3 with explicit alignment enumeration; "
                  f"mismatches {res['mismatches'] + enum_bad}, {dt:.0f} s")


def test_criterion_8_loss_endpoints():
    rng = np.random.default_rng(SEED)
    exact = True
    for _ in range(500):
        T = int(rng.integers(1, 30))
        text = [list(-rng.exponential(2.0, int(rng.integers(0, 5)))) for _ in range(T)]
        vad = list(-rng.exponential(1.0, T))
        turn = [None if rng.random() < 0.5 else -float(rng.exponential(1.0)) for _ in range(T)]
        a1 = compute_losses(LossInput(text, vad, turn, 1.0))
        a0 = compute_losses(LossInput(text, vad, turn, 0.0))
        exact &= a1.l_total == a1.l_text and a0.l_total == a0.l_state
    worst = 0.0
    for V in (2, 3, 10, 1000, 151_646):
        T = 16
        lps = reference_logprobs(np.zeros((T, V)), rng.integers(0, V, T))
        r = compute_losses(LossInput([[x] for x in lps], [0.0] * T, [None] * T))
        worst = max(worst, abs(r.l_text - math.log(V)))
    record(8, exact and worst <= 1e-9,
           f"alpha endpoints exact on 500 random inputs: {exact}; max |l_text - ln V| = {worst:.1e} (<= 1e-9)")


def test_criterion_9_determinism(runs):
    a, b = runs
    same = {
        "closed loop": a["loop"]["digest"] == b["loop"]["digest"],
        "perturbed": a["perturbed"]["digest"] == b["perturbed"]["digest"],
        "snr": a["snr"]["digest"] == b["snr"]["digest"],
        "timestamps": a["timestamps"]["digest"] == b["timestamps"]["digest"],
    }
    record(9, all(same.values()), "byte-identical reruns of criteria 2-5: " + ", ".join(
        f"{k} {'same' if v else 'DIFFERENT'}" for k, v in same.items()))
