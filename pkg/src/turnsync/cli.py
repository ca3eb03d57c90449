"""Command-line entry point: ``turnsync <subcommand> ...``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from .core import InputError, TurnsyncError
from .fixture import generate_fixture, spec_from_json, write_fixture
from .io import load_segments_csv, read_wav, write_segments_csv
from .pipeline import PipelineParams, run_pipeline
from .segmentation import energy_vad, merge_to_ipus

log = logging.getLogger("turnsync")


def _load_config(path) -> dict:
    if not path:
        return {}
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise InputError(f"cannot read config {path}: {exc}") from None


def _params(args) -> PipelineParams:
    return PipelineParams.from_dict(_load_config(args.config).get("pipeline", {}))


def _out(args, default: str) -> Path:
    return Path(args.out or default)


def cmd_vad(args) -> None:
    samples, rate = read_wav(args.wav)
    params = _params(args)
    segs = energy_vad(samples, rate, params.vad, args.participant)
    write_segments_csv(_out(args, Path(args.wav).with_suffix(".vad.csv")), segs)
    log.info("%d speech segments", len(segs))


def cmd_segment(args) -> None:
    vad = load_segments_csv(args.segments, args.participant)
    ipus = merge_to_ipus(vad, args.gap)
    write_segments_csv(_out(args, Path(args.segments).with_suffix(".ipu.csv")), ipus)
    log.info("%d VAD segments -> %d IPUs", len(vad), len(ipus))


def _pipeline(sections):
    def run(args) -> None:
        report = run_pipeline(args.manifests, _params(args), _out(args, "turnsync_out"), args.jobs, sections)
        if "census" in report:
            log.info("exchange counts: %s", report["census"]["counts"])
        bad = [s for s in report["sessions"] if s["violations"]]
        for s in bad:
            log.warning("session %s: %d invariant violations", s["session_id"], len(s["violations"]))

    return run


def cmd_fixture(args) -> None:
    spec = spec_from_json(args.spec)
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.sessions is not None:
        overrides["n_sessions"] = args.sessions
    spec = replace(spec, **overrides)
    fixture = generate_fixture(spec)
    paths = write_fixture(fixture, _out(args, "fixture"), with_annotations=args.with_annotations)
    log.info("wrote %d sessions", len(paths))


def _global_flags(suppress: bool) -> argparse.ArgumentParser:
    # the same flags are accepted before and after the subcommand; the
    # subcommand copy must not overwrite values given before it
    def default(value):
        return argparse.SUPPRESS if suppress else value

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=default(None), help="JSON file; its 'pipeline' object sets analysis parameters")
    common.add_argument("--seed", type=int, default=default(None), help="seed for the fixture generator")
    common.add_argument("--jobs", type=int, default=default(1), help="sessions processed in parallel")
    common.add_argument("--out", default=default(None), help="output file or directory")
    common.add_argument("-v", "--verbose", action="store_true", default=default(False))
    return common


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="turnsync", description=__doc__, parents=[_global_flags(False)])
    common = _global_flags(True)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("vad", parents=[common], help="energy VAD on a mono WAV -> segments CSV")
    p.add_argument("wav")
    p.add_argument("--participant", default="")
    p.set_defaults(func=cmd_vad)

    p = sub.add_parser("segment", parents=[common], help="merge VAD segments into IPUs")
    p.add_argument("segments")
    p.add_argument("--gap", type=float, default=0.050, help="IPU gap threshold in seconds")
    p.add_argument("--participant", default="")
    p.set_defaults(func=cmd_segment)

    for name, sections, text in (
        ("classify", ("classify",), "detect and classify exchanges -> exchanges.csv"),
        ("stats", ("classify", "stats"), "census, timing, role and feature statistics -> report.json"),
        ("curves", ("curves",), "onset-aligned feature curves -> curves/*.csv"),
        ("sync", ("sync",), "onset-aligned synchrony curves -> sync/*.csv"),
        ("report", ("classify", "stats", "curves", "sync"), "full pipeline"),
    ):
        p = sub.add_parser(name, parents=[common], help=text)
        p.add_argument("manifests", nargs="+", help="manifest.json files or directories containing them")
        p.set_defaults(func=_pipeline(sections))

    p = sub.add_parser("fixture", parents=[common], help="generate a synthetic corpus with ground truth")
    p.add_argument("--spec", help="fixture spec JSON")
    p.add_argument("--sessions", type=int, default=None)
    p.add_argument("--with-annotations", action="store_true", help="reference ground truth from each manifest")
    p.set_defaults(func=cmd_fixture)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, format="%(levelname)s %(message)s")
    try:
        args.func(args)
    except TurnsyncError as exc:
        log.error("%s", exc)
        return exc.exit_code
    except (OSError, ValueError) as exc:
        log.error("%s", exc)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
