"""Command-line interface.

Subcommands: ``manifest`` (index a corpus), ``train-melnet`` /
``train-cmelgan`` (train and checkpoint), ``generate`` (sample a WAV from a
checkpoint), ``invert`` (Mel round trip of real audio) and ``bench``
(training throughput).  Exit code 0 on success, 1 with a message on stderr
for any handled error.
"""

from __future__ import annotations

import argparse
import os
import sys

from . import training
from .config import parse_config
from .data import read_manifest, scan_corpus, write_manifest
from .dsp import SpectroParams
from .errors import ConfigError, CorpusError, NumericFault, ParseError


def _read_genre_map(path) -> dict[str, str]:
    mapping = {}
    with open(path, "r", encoding="utf-8") as f:
        for lineno, raw in enumerate(f, start=1):
            line = raw.strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != 2:
                raise ParseError("genre map rows are 'directory,genre'", line=lineno)
            mapping[parts[0].strip()] = parts[1].strip()
    return mapping


def cmd_manifest(args) -> int:
    genre_map = _read_genre_map(args.genre_map) if args.genre_map else None
    result = scan_corpus(args.roots, genre_map)
    write_manifest(result.entries, args.out)
    genres = sorted({e.genre for e in result.entries})
    hours = result.total_duration_s / 3600.0
    print(f"indexed {len(result.entries)} files, {len(genres)} genres "
          f"({', '.join(genres)}), {hours:.2f} h total; "
          f"skipped {len(result.skipped)} undecodable")
    print(f"wrote {args.out}")
    return 0


def _run_training(args, kind: str) -> int:
    cfg = parse_config(args.config)
    if cfg.model_kind != kind:
        raise ConfigError(f"{args.config} configures {cfg.model_kind!r}, "
                          f"but this command trains {kind!r}")
    manifest = read_manifest(args.manifest)
    train = training.train_melnet if kind == "melnet" else training.train_cmelgan
    result = train(cfg, manifest, out_dir=args.out, steps=args.steps,
                   prefetch_depth=args.prefetch)
    os.makedirs(args.out, exist_ok=True)
    runlog_path = os.path.join(args.out, f"{kind}_runlog.csv")
    result.runlog.write_csv(runlog_path)
    last = result.runlog.records[-1]
    rate = f"{last.rate_khz:.1f} kHz"
    print(f"trained {last.step} steps ({last.epoch} epoch(s)) at {rate}")
    print(f"checkpoint: {result.checkpoint_path}")
    print(f"run log:    {runlog_path}")
    return 0


def cmd_train_melnet(args) -> int:
    return _run_training(args, "melnet")


def cmd_train_cmelgan(args) -> int:
    return _run_training(args, "cmelgan")


def cmd_generate(args) -> int:
    wave = training.generate_from_checkpoint(args.ckpt, args.genre, args.seed,
                                             args.out, gl_iters=args.iters)
    print(f"wrote {args.out}: {wave.duration_s:.2f} s at {wave.sample_rate} Hz")
    return 0


def cmd_invert(args) -> int:
    params = SpectroParams(args.sample_rate, args.stft_win, args.stft_hop, args.num_mels)
    errors = training.invert_wav(args.infile, params, args.iters, args.out, seed=args.seed)
    print(f"wrote {args.out}")
    print(f"spectral convergence error: initial {errors[0]:.4f}, final {errors[-1]:.4f} "
          f"({args.iters} iterations)")
    return 0


def cmd_bench(args) -> int:
    cfg = parse_config(args.config)
    manifest = read_manifest(args.manifest)
    report = training.bench(cfg, manifest, args.steps)
    print(f"model {report['model']}: {report['steps']} steps, "
          f"{report['samples']} audio samples in {report['wall_s']:.2f} s wall")
    print(f"throughput: {report['rate_khz']:.1f} kHz")
    ref = "/".join(f"{v:g}" for v in report["reference_khz"])
    print(f"reference speeds for comparison (kHz, GPU): {ref} - informational only")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="melgen",
        description="Genre-conditional music spectrogram generation toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("manifest", help="index a corpus of WAV files into a CSV manifest")
    p.add_argument("roots", nargs="+", help="genre directories to scan")
    p.add_argument("--genre-map", help="CSV of 'directory,genre' overrides")
    p.add_argument("-o", "--out", required=True, help="manifest CSV to write")
    p.set_defaults(func=cmd_manifest)

    for kind, fn in (("melnet", cmd_train_melnet), ("cmelgan", cmd_train_cmelgan)):
        p = sub.add_parser(f"train-{kind}", help=f"train the {kind} model")
        p.add_argument("--config", required=True)
        p.add_argument("--manifest", required=True)
        p.add_argument("--out", required=True, help="output directory for checkpoints/logs")
        p.add_argument("--steps", type=int, default=None,
                       help="override the epoch-derived step count")
        p.add_argument("--prefetch", type=int, default=0,
                       help="batches prepared ahead (0 = synchronous, deterministic)")
        p.set_defaults(func=fn)

    p = sub.add_parser("generate", help="sample audio from a trained checkpoint")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--genre", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--iters", type=int, default=60, help="phase reconstruction iterations")
    p.add_argument("-o", "--out", required=True)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("invert", help="Mel-spectrogram round trip of a WAV file")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--iters", type=int, default=60)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--num-mels", type=int, default=180)
    p.add_argument("--stft-win", type=int, default=2048)
    p.add_argument("--stft-hop", type=int, default=800)
    p.add_argument("--sample-rate", type=int, default=22050,
                   help="assumed only until the file header is read")
    p.add_argument("-o", "--out", required=True)
    p.set_defaults(func=cmd_invert)

    p = sub.add_parser("bench", help="measure training throughput")
    p.add_argument("--config", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--steps", type=int, required=True)
    p.set_defaults(func=cmd_bench)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except KeyError as exc:
        print(f"error: {exc.args[0]}", file=sys.stderr)
        return 1
    except (ValueError, ConfigError, ParseError, CorpusError, NumericFault,
            OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
