"""Command-line pipeline: make-assets, refine, synth, label, simulate, eval.

Exit codes: 0 success, 1 usage or configuration error, 2 data error,
3 protocol violation (a simulated or evaluated session failed).
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Callable, Sequence

from .config import PipelineConfig, load_config
from .controller import FlipProbs, simulate_oracle, simulate_perturbed
from .errors import ConfigError, DataError, ProtocolViolation
from .evaluation import read_traces, run_evaluation, summary_rows, write_report, write_traces
from .jsonl import read_jsonl, resolve_path, write_jsonl
from .labeling import emit_training_sample, label_session, read_samples, write_samples
from .scenarios import (
    AssetPools,
    allocate_kinds,
    generate_scenario,
    load_session,
    render_session,
    session_seed,
    write_session,
)

log = logging.getLogger("duplex_frontend")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_PROTOCOL = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):  # usage errors share the config exit code
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def _parse_mix(text: str) -> dict[str, float]:
    mix = {}
    for part in text.split(","):
        name, _, weight = part.partition("=")
        try:
            mix[name.strip()] = float(weight) if weight else 1.0
        except ValueError:
            raise ConfigError(f"bad scenario mix entry {part!r}; expected Kind=weight") from None
    return mix


def _map(fn: Callable, items: Sequence, jobs: int) -> list:
    if jobs > 1 and len(items) > 1:
        with ThreadPoolExecutor(jobs) as pool:
            return list(pool.map(fn, items))
    return [fn(x) for x in items]


def _config(args, **overrides) -> PipelineConfig:
    common = {"seed": getattr(args, "seed", None), "jobs": getattr(args, "jobs", None)}
    common.update(overrides)
    return load_config(args.config, common)


# --- commands ----------------------------------------------------------------

def cmd_make_assets(args) -> int:
    from .synthetic import make_demo_assets

    index = make_demo_assets(args.out, seed=args.seed if args.seed is not None else 0)
    print(index)
    return EXIT_OK


def cmd_refine(args) -> int:
    from .timestamps import refine_jsonl

    cfg = _config(args, pad_ms=args.pad_ms)
    n = refine_jsonl(args.input, args.output, cfg.refine, cfg.jobs)
    print(f"refined {n} records -> {args.output}")
    return EXIT_OK


def cmd_synth(args) -> int:
    cfg = _config(args, pools=args.pools, n_sessions=args.n,
                  scenario_mix=_parse_mix(args.mix) if args.mix else None,
                  write_stems=True if args.write_stems else None)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    kinds = allocate_kinds(cfg.n_sessions, cfg.scenario_mix)
    if kinds and cfg.pools is None:
        raise ConfigError("synth needs --pools or 'pools' in the config")
    pools = AssetPools.load(cfg.pools) if kinds else None

    def one(i: int) -> dict:
        sid = f"s{i:05d}"
        seed = session_seed(cfg.seed, i)
        script = generate_scenario(kinds[i], pools, seed, cfg.scenario, sid)
        render = render_session(script, pools)
        write_session(render, script, out / sid, cfg.write_stems)
        log.debug("rendered %s (%s, %.1f s, rescale %.3f)", sid, kinds[i], script.duration, render.meta["rescale"])
        return {"id": sid, "kind": kinds[i], "seed": seed, "dir": sid}

    manifest = _map(one, list(range(len(kinds))), cfg.jobs)
    write_jsonl(out / "sessions.jsonl", sorted(manifest, key=lambda r: r["id"]))
    print(f"synthesized {len(manifest)} sessions -> {out / 'sessions.jsonl'}")
    return EXIT_OK


def cmd_label(args) -> int:
    cfg = _config(args, chunk_ms=args.chunk_ms, overlap_min_ms=args.overlap_min_ms,
                  system_prompt=args.system_prompt)
    manifest = Path(args.sessions)
    out_path = Path(args.out)
    out_dir = out_path.parent
    records = read_jsonl(manifest)

    def one(rec: dict):
        try:
            sdir = resolve_path(manifest.parent, rec["dir"])
        except KeyError:
            raise DataError(f"{manifest}: record {rec!r} has no 'dir'") from None
        session = load_session(sdir)
        labels, info = label_session(session, cfg.chunk_ms, cfg.overlap_min_ms)
        log.debug("labeled %s: %d chunks, %d merged utterances", session.session_id, len(labels),
                  info.merged_utterances)
        return emit_training_sample(
            session, labels, os.path.relpath(sdir / "ref.wav", out_dir), cfg.system_prompt,
            os.path.relpath(sdir / "mixture.wav", out_dir), cfg.chunk_ms, info)

    samples = _map(one, records, cfg.jobs)
    write_samples(out_path, samples)
    print(f"labeled {len(samples)} sessions -> {out_path}")
    return EXIT_OK


def cmd_simulate(args) -> int:
    cfg = _config(args, **{"perturb.vad": args.p_vad, "perturb.turn": args.p_turn,
                           "perturb.char_sub": args.p_char})
    samples = read_samples(args.samples)
    if args.model == "oracle":
        traces = _map(lambda s: simulate_oracle(s.id, s.labels, cfg.controller), samples, cfg.jobs)
    else:
        flip = FlipProbs(cfg.perturb.vad, cfg.perturb.turn, cfg.perturb.char_sub)
        traces = _map(lambda s: simulate_perturbed(s.id, s.labels, flip, cfg.seed, cfg.controller),
                      samples, cfg.jobs)
    write_traces(args.out, traces)
    failed = [t.session_id for t in traces if t.failed]
    print(f"simulated {len(traces)} sessions ({len(failed)} failed) -> {args.out}")
    for t in traces:
        if t.failed:
            print(f"  {t.session_id}: {t.error}", file=sys.stderr)
    return EXIT_PROTOCOL if failed else EXIT_OK


def cmd_eval(args) -> int:
    cfg = _config(args)
    report = run_evaluation(read_traces(args.traces), read_samples(args.samples))
    paths = write_report(report, args.out, config_echo=cfg.echo(), figures=not args.no_figures)
    width = max(len(k) for k, _ in summary_rows(report))
    for k, v in summary_rows(report):
        print(f"{k:<{width}}  {v}")
    print(f"report -> {paths['report']}")
    return EXIT_PROTOCOL if report["sessions"]["failed"] else EXIT_OK


# --- parser --------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML or JSON pipeline config")
    common.add_argument("--seed", type=int, help="root seed for every stochastic stage")
    common.add_argument("--jobs", type=int, help="parallel sessions (default 1)")
    common.add_argument("-v", "--verbose", action="store_true")

    p = _Parser(prog="duplex-frontend", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("make-assets", parents=[common], help="write a synthetic demo asset pool")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_make_assets)

    s = sub.add_parser("refine", parents=[common], help="refine coarse word timestamps")
    s.add_argument("--in", dest="input", required=True, help="coarse JSONL")
    s.add_argument("--out", dest="output", required=True)
    s.add_argument("--pad-ms", type=float)
    s.set_defaults(func=cmd_refine)

    s = sub.add_parser("synth", parents=[common], help="render scenario sessions")
    s.add_argument("--pools", help="asset pool index (pools.json)")
    s.add_argument("--out", required=True)
    s.add_argument("-n", type=int, help="number of sessions")
    s.add_argument("--mix", help="e.g. PureNoise=1,InterferenceSpeaker=1,NormalInteraction=1,BargeIn=1")
    s.add_argument("--write-stems", action="store_true")
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("label", parents=[common], help="label sessions into training samples")
    s.add_argument("--sessions", required=True, help="sessions.jsonl from synth")
    s.add_argument("--out", required=True)
    s.add_argument("--chunk-ms", type=float)
    s.add_argument("--overlap-min-ms", type=float)
    s.add_argument("--system-prompt")
    s.set_defaults(func=cmd_label)

    s = sub.add_parser("simulate", parents=[common], help="drive the controller with a reference frontend")
    s.add_argument("--samples", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--model", choices=("oracle", "perturbed"), default="oracle")
    s.add_argument("--p-vad", type=float)
    s.add_argument("--p-turn", type=float)
    s.add_argument("--p-char", type=float)
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("eval", parents=[common], help="score traces against labeled samples")
    s.add_argument("--traces", required=True)
    s.add_argument("--samples", required=True)
    s.add_argument("--out", required=True, help="report directory")
    s.add_argument("--no-figures", action="store_true")
    s.set_defaults(func=cmd_eval)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ProtocolViolation as exc:
        print(f"protocol violation: {exc}", file=sys.stderr)
        return EXIT_PROTOCOL
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
