"""Command-line entry point: ``rsm-bench <command> [options]``.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 a selftest
invariant failed.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys

import numpy as np

from .config import LARGE_SCALE_N, ConfigError, load_config, write_config
from .pipeline import (DataError, StageError, cmd_corrupt, cmd_denoise, cmd_evaluate,
                       cmd_generate, cmd_pipeline, cmd_segment, run_lock)

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_INVARIANT = 0, 2, 3, 4
COMMANDS = ("generate", "corrupt", "denoise", "segment", "evaluate", "pipeline", "selftest")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rsm-bench",
        description="Synthetic arm self-modelling benchmark: generate, corrupt, "
                    "denoise, segment and evaluate.")
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", metavar="PATH", help="INI config file (defaults if omitted)")
    parser.add_argument("--out", metavar="DIR", help="run directory (overrides [run] out)")
    parser.add_argument("--seed", type=int, help="master seed (overrides [run] seed)")
    parser.add_argument("--jobs", type=int, help="worker processes for per-image work")
    parser.add_argument("--skip-denoise", action="store_true",
                        help="leave out the denoised conditions")
    parser.add_argument("--large-scale", action="store_true",
                        help=f"use a {LARGE_SCALE_N}-image corpus")
    parser.add_argument("-v", "--verbose", action="store_true")
    return parser


def _overrides(args) -> dict:
    out = {}
    if args.out is not None:
        out[("run", "out")] = args.out
    if args.seed is not None:
        out[("run", "seed")] = args.seed
    if args.jobs is not None:
        out[("run", "jobs")] = args.jobs
    if args.skip_denoise:
        out[("evaluate", "denoise")] = "false"
    if args.large_scale:
        out[("corpus", "n")] = LARGE_SCALE_N
    return out


def selftest(cfg) -> list[str]:
    """Fast internal checks, plus the ordering claims of an existing report
    in the run directory. Returns the failures."""
    from .. import arm_world, segmenter
    from ..metrics import confusion, f1_from_iou, iou, precision_recall_f1
    from ..noise_lab import NoiseSpec, add_salt_pepper
    from ..restoration import NlmConfig, fft2, ifft2, nlm_weight_sums
    from ..seeding import child_seed, make_rng

    failures = []
    rng = make_rng(child_seed(cfg.seed, "selftest"))
    a, b = rng.random((32, 32)) < 0.3, rng.random((32, 32)) < 0.3
    c = confusion(a, b)
    if abs(precision_recall_f1(c).f1 - f1_from_iou(iou(c))) > 1e-12:
        failures.append("F1 = 2 IoU / (1 + IoU) identity")
    img = rng.random((16, 12, 1))
    if np.abs(ifft2(fft2(img)) - img).max() > 1e-8:
        failures.append("FFT round trip")
    if np.abs(nlm_weight_sums(rng.random((12, 12, 1)), NlmConfig(0.1, 1, 3)) - 1).max() > 1e-6:
        failures.append("NLM weights sum to one")
    flat = np.full((128, 128, 1), 0.5)
    frac = np.mean(add_salt_pepper(flat, NoiseSpec("sp", p=0.1, seed=cfg.seed)) != 0.5)
    if abs(frac - 0.1) > 0.02:
        failures.append(f"salt-and-pepper density {frac:.3f}")
    logits = np.zeros((2, 2, 2))
    if abs(segmenter.cross_entropy_loss(logits, np.zeros((2, 2), int)) - np.log(2)) > 1e-12:
        failures.append("cross-entropy of uniform logits")
    model = arm_world.ArmModel()
    pose = arm_world.sample_pose(model, rng)
    mask = arm_world.render_mask(model, pose)
    _, fit_iou = arm_world.fit_arm_pose(mask, model)
    if fit_iou < 0.99:
        failures.append(f"pose fit IoU {fit_iou:.3f} on an exact mask")
    report = cfg.out / "report.json"
    if report.is_file():
        checks = json.loads(report.read_text()).get("checks", {})
        failures += [f"report: {name}" for name, ok in checks.items() if not ok]
    return failures


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config, overrides=_overrides(args))
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    if args.command == "selftest":
        failures = selftest(cfg)
        for f in failures:
            print(f"FAIL {f}")
        print("selftest: " + ("ok" if not failures else f"{len(failures)} failure(s)"))
        return EXIT_INVARIANT if failures else EXIT_OK

    try:
        with run_lock(cfg.out):
            if args.command != "pipeline":
                write_config(cfg, cfg.out / "config.ini")
            if args.command == "generate":
                manifest = cmd_generate(cfg)
                print(f"wrote {len(manifest.entries)} images to {manifest.root}")
            elif args.command == "corrupt":
                for d in cmd_corrupt(cfg):
                    print(f"wrote {d}")
            elif args.command == "denoise":
                for d in cmd_denoise(cfg):
                    print(f"wrote {d}")
            elif args.command == "segment":
                for slug, s in cmd_segment(cfg).items():
                    print(f"{slug}: IoU {s['iou']:.4f} F1 {s['f1']:.4f} "
                          f"(threshold baseline IoU {s['baseline_iou']:.4f})")
            else:
                run = cmd_pipeline if args.command == "pipeline" else cmd_evaluate
                report = run(cfg)
                for row in report["rows"]:
                    print(f"{row['condition']:<24} {row['filter']:<48} seed={row['seed']} "
                          f"mse={row['mse']:.6f} iou={row['iou']:.4f} f1={row['f1']:.4f} "
                          f"psnr={row['psnr']:.2f}")
                for name, ok in report["checks"].items():
                    print(f"{'ok  ' if ok else 'FAIL'} {name}")
                print(f"report: {cfg.out / 'report.csv'}")
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (DataError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
