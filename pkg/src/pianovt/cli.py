"""``pianovt`` command line: synth, train, transcribe, eval, gradcheck, preview."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import time
import zlib
from pathlib import Path

import numpy as np

from . import synthkbd
from .gradcheck import check_gradients
from .keyboard_region import DEFAULT_SCAN_FRAMES, crop_frame, read_detections, select_box
from .metrics import DEFAULT_TOLERANCE, Scores, aggregate, evaluate
from .model import ModelConfig, init_params, load_checkpoint
from .preprocess import FitMode, PreprocSettings, fit_square
from .smf import parse_smf, write_smf
from .train import Dataset, TrainConfig, VideoData, train
from .transcribe import DEFAULT_RADIUS, DEFAULT_SIGMA, DEFAULT_THRESHOLD, postprocess, sliding_predict
from .video_io import encode_ppm, read_all_frames, read_frame, read_manifest

log = logging.getLogger("pianovt")

GRADCHECK_LIMIT = 1e-4


class CliError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CliError(f"usage: {message}")


def subseed(seed: int, name: str) -> int:
    """Independent, stable seed for one named consumer of randomness."""
    return int(np.random.SeedSequence([seed, zlib.crc32(name.encode())]).generate_state(1)[0])


def _jitter(text: str) -> tuple[int, int]:
    parts = text.split(",")
    if len(parts) == 1:
        r = int(parts[0])
        return -abs(r), abs(r)
    if len(parts) != 2:
        raise argparse.ArgumentTypeError("expected LO,HI or a single radius")
    lo, hi = int(parts[0]), int(parts[1])
    if lo > hi:
        raise argparse.ArgumentTypeError("jitter LO must not exceed HI")
    return lo, hi


def _fit(text: str) -> FitMode:
    try:
        return FitMode.parse(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from exc


def _add_preproc(p: argparse.ArgumentParser) -> None:
    p.add_argument("--fit", type=_fit, default=FitMode("stretch"), help="stretch | aspect:F | split | split-stretch")
    p.add_argument("--grayscale", action="store_true", help="single-channel luma input in [0, 1]")
    p.add_argument("--normalize-rgb", action="store_true", help="ImageNet-standardize color input (default for color)")
    p.add_argument("--no-normalize", action="store_true", help="feed color input as raw [0, 1] values")
    p.add_argument("--resolution", type=int, default=32, help="square input size S")


def _preproc(args) -> PreprocSettings:
    if args.grayscale and args.normalize_rgb:
        raise CliError("conflicting flags: --grayscale with --normalize-rgb")
    if args.normalize_rgb and args.no_normalize:
        raise CliError("conflicting flags: --normalize-rgb with --no-normalize")
    return PreprocSettings(args.fit, args.resolution, args.grayscale, not args.no_normalize)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="pianovt", description="Visual piano transcription toolkit")
    parser.add_argument("--config", type=Path, help="JSON file of flag defaults (flags override it)")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", help="render a synthetic keyboard video with ground truth")
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--duration", type=float, default=120.0, help="seconds")
    p.add_argument("--fps", type=float, default=30.0)
    p.add_argument("--note-rate", type=float, default=0.8, help="onsets per second")
    p.add_argument("--press-frames", type=int, default=6)
    p.add_argument("--press-intensity", type=float, default=0.9, help="fraction of brightness removed from a pressed key")
    p.add_argument("--noise", type=float, default=0.0, help="per-pixel noise std (0..255 scale)")
    p.add_argument("--white-key-width", type=int, default=4)
    p.add_argument("--width", type=int, default=240)
    p.add_argument("--height", type=int, default=48)
    p.add_argument("--descending", action="store_true", help="highest pitch on the left")

    p = sub.add_parser("train", help="train the onset model on synthetic or prepared videos")
    p.add_argument("--data", type=Path, action="append", required=True,
                   help="video directory holding manifest.txt, notes.mid, detections.txt (repeatable)")
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--metrics", type=Path, help="append step,lr,loss rows to this CSV")
    p.add_argument("--checkpoint-every", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--steps", type=int, default=4000)
    p.add_argument("--batch-size", type=int, default=16)
    p.add_argument("--lr", type=float, default=6.25e-5)
    p.add_argument("--weight-decay", type=float, default=0.05)
    p.add_argument("--warmup", type=float, default=0.05, help="warmup fraction of total steps")
    p.add_argument("--class-weight", type=float, default=1.0)
    p.add_argument("--keep-fraction", type=float, default=0.05, help="share of empty windows kept")
    p.add_argument("--jitter", type=_jitter, help="spatial jitter LO,HI in pixels")
    p.add_argument("--noise", type=float, default=0.0, help="Gaussian noise std on [0, 1] input")
    p.add_argument("--frames", type=int, default=16)
    p.add_argument("--tubelet", type=int, default=2)
    p.add_argument("--patch", type=int, default=8)
    p.add_argument("--dim", type=int, default=64)
    p.add_argument("--layers", type=int, default=4)
    p.add_argument("--heads", type=int, default=4)
    p.add_argument("--scan-frames", type=int, default=DEFAULT_SCAN_FRAMES)
    _add_preproc(p)

    p = sub.add_parser("transcribe", help="video -> onset MIDI")
    p.add_argument("--manifest", type=Path, required=True)
    p.add_argument("--detections", type=Path, required=True)
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True, help="output MIDI file")
    p.add_argument("--activations", type=Path, help="dump raw activations as CSV")
    p.add_argument("--scan-frames", type=int, default=DEFAULT_SCAN_FRAMES)
    p.add_argument("--drop-last-window", action="store_true", help="emit number_of_frames - 16 columns")
    p.add_argument("--sigma", type=float, default=DEFAULT_SIGMA)
    p.add_argument("--radius", type=int, default=DEFAULT_RADIUS)
    p.add_argument("--threshold", type=float, default=DEFAULT_THRESHOLD)
    p.add_argument("--batch-size", type=int, default=64)

    p = sub.add_parser("eval", help="score estimated against reference MIDI")
    p.add_argument("--ref", type=Path, action="append", required=True)
    p.add_argument("--est", type=Path, action="append", required=True)
    p.add_argument("--tolerance", type=float, default=DEFAULT_TOLERANCE, help="onset tolerance in seconds")
    p.add_argument("--report", type=Path, help="also write the CSV report here")

    p = sub.add_parser("gradcheck", help="finite-difference check of backprop on a tiny model")
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("preview", help="write every fit mode of one frame as PPM")
    p.add_argument("--manifest", type=Path, required=True)
    p.add_argument("--detections", type=Path, required=True)
    p.add_argument("--frame", type=int, default=0)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--target", type=int, default=224)
    p.add_argument("--aspect-factor", type=float, default=4.3)
    return parser


def parse_args(argv) -> argparse.Namespace:
    """Parse ``argv``; values from ``--config`` replace defaults but not explicit flags."""
    parser = build_parser()
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config", type=Path)
    known, rest = pre.parse_known_args(argv)
    command = next((tok for tok in rest if tok in COMMANDS), None)
    if known.config is None or command is None:
        return parser.parse_args(argv)
    try:
        defaults = json.loads(known.config.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise CliError(f"bad config file {known.config}: {exc}") from exc
    sub = next(a for a in parser._actions if isinstance(a, argparse._SubParsersAction))
    subparser = sub.choices[command]
    actions = {a.dest: a for a in subparser._actions}
    for key, value in defaults.items():
        dest = key.replace("-", "_")
        if dest not in actions:
            raise CliError(f"unknown config key {key!r} for {command}")
        action = actions[dest]
        convert = action.type or (lambda v: v)
        value = [convert(v) for v in value] if isinstance(value, list) else convert(value) if isinstance(value, str) else value
        action.required = False
        subparser.set_defaults(**{dest: value})
    return parser.parse_args(argv)


def _box(detections_path: Path, scan_frames: int):
    return select_box(read_detections(detections_path, scan_frames))


def cmd_synth(args) -> int:
    spec = synthkbd.SynthSpec(
        seed=args.seed,
        duration=args.duration,
        fps=args.fps,
        width=args.width,
        height=args.height,
        white_key_width=args.white_key_width,
        descending=args.descending,
        note_rate=args.note_rate,
        press_intensity=args.press_intensity,
        press_frames=args.press_frames,
        noise=args.noise,
    )
    manifest, midi, _ = synthkbd.generate(spec, args.out)
    print(f"wrote {manifest.frame_count} frames and {len(parse_smf(midi))} notes to {args.out}")
    return 0


def load_video(directory: Path, settings: PreprocSettings, scan_frames: int, keep_raw: bool) -> VideoData:
    manifest = read_manifest(directory / synthkbd.MANIFEST_NAME)
    box = _box(directory / synthkbd.DETECTIONS_NAME, scan_frames)
    notes = parse_smf((directory / synthkbd.MIDI_NAME).read_bytes())
    return VideoData.build(read_all_frames(manifest), box, notes, manifest.fps, settings, keep_raw)


def cmd_train(args) -> int:
    settings = _preproc(args)
    config = ModelConfig(
        frames=args.frames,
        resolution=args.resolution,
        tubelet=args.tubelet,
        patch=args.patch,
        dim=args.dim,
        layers=args.layers,
        heads=args.heads,
        channels=settings.channels,
    )
    tc = TrainConfig(
        batch_size=args.batch_size,
        lr=args.lr,
        weight_decay=args.weight_decay,
        warmup_frac=args.warmup,
        total_steps=args.steps,
        class_weight=args.class_weight,
        seed=subseed(args.seed, "train"),
        keep_fraction=args.keep_fraction,
        noise=args.noise,
        jitter=args.jitter,
    )
    t0 = time.time()
    videos = [load_video(d, settings, args.scan_frames, args.jitter is not None) for d in args.data]
    data = Dataset.assemble(videos, np.random.default_rng(subseed(args.seed, "cull")), tc.keep_fraction)
    log.info("%d samples (%d positive) from %d videos in %.1fs", len(data), data.n_positive(), len(videos), time.time() - t0)
    model = init_params(config, subseed(args.seed, "init"))
    losses = train(model, data, tc, settings, args.metrics, args.checkpoint, args.checkpoint_every)
    print(f"trained {tc.total_steps} steps, final loss {np.mean(losses[-50:]):.5f}, checkpoint {args.checkpoint}")
    return 0


def cmd_transcribe(args) -> int:
    model, meta = load_checkpoint(args.checkpoint)
    settings = PreprocSettings.from_dict(meta["preproc"])
    manifest = read_manifest(args.manifest)
    box = _box(args.detections, args.scan_frames)
    act = sliding_predict(manifest, box, model, settings, args.batch_size, args.drop_last_window)
    if args.activations:
        act.to_csv(args.activations)
    notes = postprocess(act, args.sigma, args.radius, args.threshold)
    args.out.write_bytes(write_smf(notes))
    print(f"{len(notes)} onsets from {act.n_columns} windows written to {args.out}")
    return 0


def _row(name: str, s: Scores) -> list:
    return [name, f"{s.precision:.6f}", f"{s.recall:.6f}", f"{s.f1:.6f}", s.n_ref, s.n_est, s.n_matched]


def cmd_eval(args) -> int:
    if len(args.ref) != len(args.est):
        raise CliError("--ref and --est must be given the same number of times")
    rows, scores = [], []
    for ref_path, est_path in zip(args.ref, args.est):
        s = evaluate(parse_smf(ref_path.read_bytes()), parse_smf(est_path.read_bytes()), args.tolerance)
        scores.append(s)
        rows.append(_row(str(est_path), s))
    micro, macro = aggregate(scores)
    rows.append(_row("ALL(micro)", micro))
    rows.append(_row("ALL(macro)", macro))
    header = ["file", "precision", "recall", "f1", "n_ref", "n_est", "n_matched"]
    writer = csv.writer(sys.stdout, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    if args.report:
        with open(args.report, "w", newline="") as f:
            csv.writer(f).writerows([header, *rows])
    return 0


def cmd_gradcheck(args) -> int:
    t0 = time.time()
    result = check_gradients(seed=args.seed)
    ok = result.max_rel_error < GRADCHECK_LIMIT
    print(
        f"gradcheck {'PASS' if ok else 'FAIL'} max_rel_error={result.max_rel_error:.3e} "
        f"worst={result.worst_param} params={result.n_checked} seconds={time.time() - t0:.1f}"
    )
    return 0 if ok else 1


def cmd_preview(args) -> int:
    manifest = read_manifest(args.manifest)
    box = _box(args.detections, DEFAULT_SCAN_FRAMES)
    crop = crop_frame(read_frame(manifest, args.frame), box)
    args.out.mkdir(parents=True, exist_ok=True)
    modes = {
        "stretch": FitMode("stretch"),
        "aspect": FitMode("aspect", args.aspect_factor),
        "split": FitMode("split"),
        "split-stretch": FitMode("split-stretch"),
    }
    for name, mode in modes.items():
        img = np.clip(np.round(fit_square(crop, mode, args.target)), 0, 255).astype(np.uint8)
        (args.out / f"{name}.ppm").write_bytes(encode_ppm(img))
    print(f"wrote {len(modes)} previews to {args.out}")
    return 0


COMMANDS = {
    "synth": cmd_synth,
    "train": cmd_train,
    "transcribe": cmd_transcribe,
    "eval": cmd_eval,
    "gradcheck": cmd_gradcheck,
    "preview": cmd_preview,
}


def dispatch(argv) -> int:
    """Run one subcommand; errors become a single ``pianovt: error: <Kind>: <message>`` line."""
    try:
        args = parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
        return COMMANDS[args.command](args)
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    except Exception as exc:  # noqa: BLE001 - every failure maps to one line
        message = " ".join(str(exc).split()) or exc.__class__.__name__
        print(f"pianovt: error: {exc.__class__.__name__}: {message}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(dispatch(sys.argv[1:]))


if __name__ == "__main__":
    main()
