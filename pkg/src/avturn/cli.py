"""Command-line entry point: ``avturn <subcommand> [flags]``.

Exit codes: 0 success, 2 configuration or usage error, 3 data error.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import datagen, dsp
from .harness.config import ConfigError, RunConfig, desk_config, load_config
from .harness.evaluate import evaluate, evaluate_model, predicted_point, speaker_at
from .harness.model import forward_clip, prepare_inputs, separate
from .harness.train import CHECKPOINT_NAME, ClipSource, DataError, check_dataset, load_run, split_clips, train
from . import tensor as T

EXIT_OK, EXIT_CONFIG, EXIT_DATA = 0, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_CONFIG)


def _common(p: argparse.ArgumentParser):
    p.add_argument("--config", type=Path, help="JSON run config (keys override the desk preset)")
    p.add_argument("--seed", type=int, help="model/training seed (data seed for gen-data)")
    p.add_argument("--out", type=Path, default=Path("runs/default"), help="output directory")
    p.add_argument("--mode", choices=("coop", "compet"), default="coop", help="conversation grammar")
    p.add_argument("--no-align", action="store_true", help="drop the alignment loss")
    p.add_argument("--supervised", action="store_true", help="add the supervised localization loss")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="avturn", description="Audio-visual main-speaker localization and separation")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    p = sub.add_parser("gen-data", help="render a synthetic dataset")
    _common(p)
    p.add_argument("--clips", type=int, help="number of clips (default from config)")
    p = sub.add_parser("train", help="train a model on a dataset")
    _common(p)
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--resume", action="store_true")
    p = sub.add_parser("eval", help="score a checkpoint on a dataset")
    _common(p)
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--checkpoint", type=Path)
    p.add_argument("--all", action="store_true", help="score every clip, not only the held-out split")
    for name, text in (("separate", "write the separated main voice of a clip"),
                       ("localize", "print the predicted main speaker per segment")):
        p = sub.add_parser(name, help=text)
        _common(p)
        p.add_argument("clip", type=Path, help="clip directory")
        p.add_argument("--checkpoint", type=Path)
    p = sub.add_parser("ablate", help="train with and without the alignment loss and compare")
    _common(p)
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--seeds", type=int, default=1, help="number of consecutive seeds")
    return parser


def resolve_config(args) -> RunConfig:
    base = desk_config()
    cfg = load_config(args.config, base) if args.config else base
    if args.seed is not None:
        cfg.model.seed = args.seed
    if args.no_align:
        cfg.model.alpha_align = 0.0
    if args.supervised:
        cfg.model.alpha_supervised = 1.0
    return cfg.validate()


def _checkpoint(args) -> Path:
    path = args.checkpoint or args.out / CHECKPOINT_NAME
    if not path.exists():
        raise DataError(f"checkpoint {path} not found")
    return path


def cmd_gen_data(args) -> int:
    cfg = resolve_config(args)
    seed = args.seed if args.seed is not None else cfg.train.data_seed
    n = args.clips if args.clips is not None else cfg.train.n_clips
    manifest = datagen.make_dataset(n, args.mode, seed, args.out, cfg.data)
    print(f"wrote {len(manifest['clips'])} clips to {args.out}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = resolve_config(args)
    res = train(cfg, args.data, args.out, resume=args.resume, progress=lambda s: print(s, flush=True))
    print(f"checkpoint: {res.checkpoint} ({res.steps} steps, {res.skipped} skipped)")
    return EXIT_OK


def cmd_eval(args) -> int:
    report = evaluate(_checkpoint(args), args.data, held_out=not args.all)
    print(json.dumps(report.summary(), indent=1, sort_keys=True))
    return EXIT_OK


def _load_single(args):
    model, _, cfg, _ = load_run(_checkpoint(args))
    try:
        clip = datagen.load_clip(args.clip)
    except (FileNotFoundError, ValueError) as exc:
        raise DataError(str(exc)) from exc
    try:
        inputs = prepare_inputs(clip, cfg.model)
    except ValueError as exc:
        raise DataError(f"{args.clip}: {exc}") from exc
    return model, clip, inputs


def cmd_separate(args) -> int:
    model, clip, inputs = _load_single(args)
    est = separate(model, inputs)
    samples = np.concatenate([w.samples for w in est])
    n = len(clip.audio_mix)
    samples = np.pad(samples, (0, max(0, n - len(samples))))[:n]
    args.out.mkdir(parents=True, exist_ok=True)
    path = args.out / f"{Path(args.clip).name}_separated.wav"
    dsp.write_wav(path, dsp.Waveform(samples, clip.audio_mix.sample_rate))
    print(path)
    return EXIT_OK


def cmd_localize(args) -> int:
    model, clip, inputs = _load_single(args)
    with T.no_grad():
        alpha = forward_clip(model, inputs, cycle=False).alpha_within.data
    for k in range(len(alpha)):
        idx, point = predicted_point(alpha[k], inputs.boxes[k])
        print(json.dumps({"segment": k, "sroi": idx, "center": list(point), "speaker": speaker_at(point, clip),
                          "box": inputs.boxes[k][idx].as_list()}))
    return EXIT_OK


def format_ablation(rows: dict) -> str:
    """``rows``: condition -> (without, with) SI-SDR in dB."""
    lines = [f"{'condition':<10} {'w/o L_align':>12} {'w/ L_align':>12}"]
    for cond, (wo, w) in rows.items():
        lines.append(f"{cond:<10} {wo:>12.2f} {w:>12.2f}")
    return "\n".join(lines)


def run_ablation(cfg: RunConfig, data_dir, out_dir, seeds, progress=None) -> dict:
    """Train with and without alignment per seed; returns per-seed, per-condition held-out SI-SDR records."""
    manifest = check_dataset(cfg, data_dir)
    _, held = split_clips(manifest, cfg.train.holdout_fraction)
    results = {}
    for seed in seeds:
        for label, weight in (("without", 0.0), ("with", cfg.model.alpha_align or 1.0)):
            run_cfg = RunConfig.from_dict(cfg.to_dict())
            run_cfg.model.seed = seed
            run_cfg.model.alpha_align = weight
            run_dir = Path(out_dir) / f"seed{seed}_{label}"
            train(run_cfg, data_dir, run_dir, progress=progress)
            model, _, _, _ = load_run(run_dir / CHECKPOINT_NAME)
            report = evaluate_model(model, ClipSource(run_cfg, data_dir), held)
            results[(seed, label)] = report
    return results


def cmd_ablate(args) -> int:
    cfg = resolve_config(args)
    seeds = range(cfg.model.seed, cfg.model.seed + args.seeds)
    results = run_ablation(cfg, args.data, args.out, seeds)
    conds = sorted({c for r in results.values() for c in r.si_sdr})
    rows = {}
    for c in conds:
        wo = np.mean([results[(s, "without")].si_sdr[c]["model"] for s in seeds])
        w = np.mean([results[(s, "with")].si_sdr[c]["model"] for s in seeds])
        rows[c] = (wo, w)
    print(format_ablation(rows))
    return EXIT_OK


COMMANDS = {"gen-data": cmd_gen_data, "train": cmd_train, "eval": cmd_eval, "separate": cmd_separate,
            "localize": cmd_localize, "ablate": cmd_ablate}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
