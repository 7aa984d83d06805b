"""Pipeline stages: generate -> corrupt -> denoise -> segment -> evaluate.

Every stage reads its inputs from and writes its outputs to the run
directory, so stages can be run one at a time from the CLI or chained by
:func:`cmd_pipeline`. All randomness is derived from the master seed with
:func:`child_seed`, one stream per (stage, image), so results do not depend on
the number of worker processes.

Run directory layout::

    config.ini                       effective configuration
    corpus/                          clean renders, masks, manifest.csv
    corrupted/r<rep>/<noise>/        corrupted test images (+ noise.txt)
    denoised/r<rep>/<noise>/         restored test images (+ psnr.csv)
    models/                          segmenter.txt, patch_model.txt
    segment/<condition>/             predicted masks, masked images, metrics.csv
    report.csv, report_long.csv, report.json
"""

from __future__ import annotations

import csv
import json
import logging
import os
import time
from concurrent.futures import ProcessPoolExecutor
from contextlib import contextmanager
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .. import arm_world, ift_svm, segmenter
from ..arm_world import ArmModel, Manifest
from ..image_core import load_image, load_mask, save_image, save_mask
from ..metrics import mask_scores, mse_points, psnr
from ..noise_lab import NoiseSpec, corrupt, gaussian_kernel
from ..restoration import (NlmConfig, RefineConfig, WienerConfig, median_filter,
                           nlm_denoise, nlm_iftsvm_denoise, wiener_deblur)
from ..seeding import child_seed, make_rng
from .config import FilterSpec, PipelineConfig, write_config

log = logging.getLogger("robust_selfmodel.bench")

REPORT_COLUMNS = ["condition", "filter", "seed", "mse", "iou", "precision", "recall",
                  "f1", "psnr"]
LONG_COLUMNS = ["condition", "filter", "seed", "index", "metric", "value"]


class DataError(RuntimeError):
    """Missing or inconsistent data on disk (CLI exit code 3)."""


class StageError(RuntimeError):
    def __init__(self, stage: str, item: str, cause: Exception):
        super().__init__(f"stage {stage!r} failed on {item}: {cause}")
        self.stage, self.item, self.cause = stage, item, cause


@dataclass(frozen=True)
class Condition:
    """One cell of the experiment: a noise (or none) and the filter applied
    before segmentation ("none" for raw inputs)."""

    noise: NoiseSpec | None
    filter: str
    replicate: int

    @property
    def name(self) -> str:
        return "clean" if self.noise is None else self.noise.label

    @property
    def slug(self) -> str:
        if self.noise is None:
            return "clean"
        base = _slug(self.noise.label)
        tag = "raw" if self.filter == "none" else "denoised"
        return f"r{self.replicate}/{base}/{tag}"


def _slug(text: str) -> str:
    return text.replace(":", "_").replace(",", "_").replace("=", "-")


def conditions(cfg: PipelineConfig, denoise: bool | None = None) -> list[Condition]:
    denoise = cfg.denoise if denoise is None else denoise
    out = []
    for rep in range(cfg.replicates):
        out.append(Condition(None, "none", rep))
        for spec in cfg.noise:
            out.append(Condition(spec, "none", rep))
            if denoise:
                out.append(Condition(spec, str(cfg.filters[spec.kind]), rep))
    return out


# --- run directory helpers -------------------------------------------------

@contextmanager
def run_lock(out: Path):
    """Refuse concurrent invocations against one output directory."""
    out.mkdir(parents=True, exist_ok=True)
    lock = out / ".lock"
    try:
        fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise DataError(f"{out} is locked by another run (delete {lock} if it is stale)") from None
    try:
        os.write(fd, str(os.getpid()).encode())
        os.close(fd)
        yield
    finally:
        lock.unlink(missing_ok=True)


def _map(fn, items, jobs: int):
    items = list(items)
    if jobs <= 1 or len(items) < 2:
        return [fn(item) for item in items]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items, chunksize=max(1, len(items) // (4 * jobs))))


def _load_corpus(cfg: PipelineConfig) -> Manifest:
    path = cfg.out / "corpus" / "manifest.csv"
    if not path.is_file():
        raise DataError(f"no corpus at {path.parent}; run 'generate' first")
    try:
        return Manifest.read(path)
    except (OSError, ValueError, KeyError) as exc:
        raise DataError(f"unreadable manifest {path}: {exc}") from None


def _image_name(entry) -> str:
    return Path(entry.image_path).name


def _noise_dir(cfg, spec: NoiseSpec, rep: int, stage: str) -> Path:
    return cfg.out / stage / f"r{rep}" / _slug(spec.label)


def noise_seed(master: int, spec: NoiseSpec, rep: int, index: int) -> int:
    return child_seed(child_seed(master, f"noise:{spec.label}", rep), "image", index)


def _fmt(value: float) -> str:
    return repr(float(value))


def _write_rows(path: Path, columns: list[str], rows: list[dict]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=columns, lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: _fmt(v) if isinstance(v, float) else v for k, v in row.items()})


# --- generate --------------------------------------------------------------

def cmd_generate(cfg: PipelineConfig) -> Manifest:
    out = cfg.out / "corpus"
    log.info("generating %d images into %s", cfg.n, out)
    try:
        return arm_world.generate_corpus(ArmModel(), cfg.n, out, cfg.train_fraction,
                                         cfg.background, cfg.seed, cfg.size)
    except OSError as exc:
        raise DataError(f"cannot write corpus to {out}: {exc}") from None


# --- corrupt ---------------------------------------------------------------

def _corrupt_one(task):
    src, dst, spec = task
    save_image(corrupt(load_image(src), spec), dst)


def cmd_corrupt(cfg: PipelineConfig) -> list[Path]:
    manifest = _load_corpus(cfg)
    test = manifest.split("test")
    dirs = []
    for rep in range(cfg.replicates):
        for spec in cfg.noise:
            out = _noise_dir(cfg, spec, rep, "corrupted")
            (out / "images").mkdir(parents=True, exist_ok=True)
            tasks = [(manifest.root / e.image_path, out / "images" / _image_name(e),
                      spec.with_seed(noise_seed(cfg.seed, spec, rep, e.index))) for e in test]
            try:
                _map(_corrupt_one, tasks, cfg.jobs)
            except Exception as exc:
                raise StageError("corrupt", str(out), exc) from exc
            Manifest(out, test).write(out / "manifest.csv")
            (out / "noise.txt").write_text(f"{spec.label}\nreplicate={rep}\n")
            log.info("corrupted %d images with %s (replicate %d)", len(test), spec.label, rep)
            dirs.append(out)
    return dirs


# --- denoise ---------------------------------------------------------------

def apply_filter(img, filt: FilterSpec, spec: NoiseSpec, patch_model=None) -> np.ndarray:
    opts = filt.options
    if filt.kind == "wiener":
        if spec.kind != "blur":
            raise ValueError("the Wiener filter needs a known blur kernel")
        kernel = gaussian_kernel(spec.sigma_blur, spec.halfwidth)
        pad = int(opts.get("pad", 0))
        wc = WienerConfig(kernel, opts.get("nsr", 1e-3))
        if pad:
            padded = np.pad(img, ((pad, pad), (pad, pad), (0, 0)), mode="reflect")
            return wiener_deblur(padded, wc)[pad:-pad, pad:-pad]
        return wiener_deblur(img, wc)
    if filt.kind == "median":
        return median_filter(img, int(opts.get("k", 1)))
    sigma = spec.sigma_noise if spec.kind == "gauss" else 10.0
    base = NlmConfig.for_noise(sigma)
    ncfg = NlmConfig(opts.get("h", base.h), int(opts.get("patch", base.patch_halfwidth)),
                     int(opts.get("window", base.window_halfwidth)))
    if filt.kind == "nlm":
        return nlm_denoise(img, ncfg)
    if patch_model is None:
        raise ValueError("nlm+iftsvm needs a trained patch model")
    refine = RefineConfig(opts.get("alpha_edge", 0.6), opts.get("alpha_smooth", 1.4))
    return nlm_iftsvm_denoise(img, ncfg, patch_model, refine)


def _denoise_one(task):
    src, clean_path, dst, filt, spec, patch_model = task
    noisy = load_image(src)
    restored = apply_filter(noisy, filt, spec, patch_model)
    save_image(restored, dst)
    clean = load_image(clean_path)
    return psnr(noisy, clean), psnr(load_image(dst), clean)


def train_patch_model(cfg: PipelineConfig, manifest: Manifest):
    path = cfg.out / "models" / "patch_model.txt"
    train = manifest.split("train")[:cfg.denoiser["patch_images"]]
    model = ift_svm.train_patch_model([manifest.image(e) for e in train],
                                      samples_per_class=cfg.denoiser["samples_per_class"],
                                      seed=child_seed(cfg.seed, "patch-model"))
    path.parent.mkdir(parents=True, exist_ok=True)
    ift_svm.save_model(model, path)
    return model


def cmd_denoise(cfg: PipelineConfig, retrain: bool = False) -> list[Path]:
    manifest = _load_corpus(cfg)
    test = manifest.split("test")
    patch_model = None
    bound = [f for f in cfg.filters.values() if f.kind == "nlm+iftsvm"]
    if bound:
        path = cfg.out / "models" / "patch_model.txt"
        given = bound[0].options.get("model")
        if given:
            if not Path(given).is_file():
                raise DataError(f"patch model {given} not found")
            patch_model = ift_svm.load_model(given)
        elif path.is_file() and not retrain:
            patch_model = ift_svm.load_model(path)
        else:
            patch_model = train_patch_model(cfg, manifest)
    dirs = []
    for rep in range(cfg.replicates):
        for spec in cfg.noise:
            if spec.kind not in cfg.filters:
                raise DataError(f"no filter bound to {spec.kind!r}; bindings: {cfg.binding_text()}")
            filt = cfg.filters[spec.kind]
            src = _noise_dir(cfg, spec, rep, "corrupted")
            if not (src / "manifest.csv").is_file():
                raise DataError(f"missing corrupted corpus {src}; run 'corrupt' first")
            out = _noise_dir(cfg, spec, rep, "denoised")
            (out / "images").mkdir(parents=True, exist_ok=True)
            tasks = [(src / "images" / _image_name(e), manifest.root / e.image_path,
                      out / "images" / _image_name(e), filt, spec, patch_model) for e in test]
            try:
                gains = _map(_denoise_one, tasks, cfg.jobs)
            except Exception as exc:
                raise StageError("denoise", str(src), exc) from exc
            rows = [{"index": e.index, "psnr_corrupted": a, "psnr_restored": b}
                    for e, (a, b) in zip(test, gains)]
            _write_rows(out / "psnr.csv", ["index", "psnr_corrupted", "psnr_restored"], rows)
            Manifest(out, test).write(out / "manifest.csv")
            (out / "noise.txt").write_text(f"{spec.label}\nreplicate={rep}\nfilter={filt}\n")
            gain = np.mean([b - a for a, b in gains])
            log.info("%s with %s: mean PSNR gain %.2f dB", spec.label, filt, gain)
            dirs.append(out)
    return dirs


# --- segment ---------------------------------------------------------------

def _input_dir(cfg: PipelineConfig, cond: Condition, manifest: Manifest) -> Path:
    if cond.noise is None:
        return manifest.root / "images"
    stage = "corrupted" if cond.filter == "none" else "denoised"
    path = _noise_dir(cfg, cond.noise, cond.replicate, stage) / "images"
    if not path.is_dir():
        raise DataError(f"missing inputs {path}; run the {stage[:-2]} stage first")
    return path


def _segment_one(task):
    img_path, gt_path, mask_out, masked_out, model, threshold = task
    img = load_image(img_path)
    gt = load_mask(gt_path)
    pred = segmenter.infer_mask(model, img)
    save_mask(pred, mask_out)
    save_image(segmenter.apply_mask(img, pred), masked_out)
    learned = mask_scores(pred, gt)
    base = mask_scores(segmenter.color_threshold_baseline(img, threshold), gt)
    return learned, base


def train_segmenter(cfg: PipelineConfig, manifest: Manifest) -> segmenter.SegModel:
    s = cfg.seg
    train = manifest.split("train")
    pairs = [(manifest.image(e), manifest.mask(e)) for e in train]
    enc = segmenter.EncodingConfig(s["L"], s["include_rgb"])
    tcfg = segmenter.TrainConfig(lr=s["lr"], epochs=s["epochs"], batch=s["batch"],
                                 pixels_per_epoch=s["pixels_per_epoch"], hidden=s["hidden"],
                                 seed=child_seed(cfg.seed, "segmenter"))
    model = segmenter.train_segmenter(pairs, enc, tcfg)
    path = cfg.out / "models" / "segmenter.txt"
    path.parent.mkdir(parents=True, exist_ok=True)
    segmenter.save_model(model, path)
    log.info("segmenter trained on %d images, final loss %.5f", len(pairs), model.final_loss)
    return model


def segment_dir(cfg: PipelineConfig, cond: Condition) -> Path:
    return cfg.out / "segment" / cond.slug


def cmd_segment(cfg: PipelineConfig, denoise: bool | None = None,
                retrain: bool = False) -> dict:
    manifest = _load_corpus(cfg)
    test = manifest.split("test")
    path = cfg.out / "models" / "segmenter.txt"
    if path.is_file() and not retrain:
        model = segmenter.load_model(path)
    elif cfg.seg["train"]:
        model = train_segmenter(cfg, manifest)
    else:
        raise DataError(f"no segmenter model at {path} and training is disabled")
    summary = {}
    done = set()
    for cond in conditions(cfg, denoise):
        if cond.slug in done:
            continue
        done.add(cond.slug)
        src = _input_dir(cfg, cond, manifest)
        out = segment_dir(cfg, cond)
        (out / "masks").mkdir(parents=True, exist_ok=True)
        (out / "masked").mkdir(parents=True, exist_ok=True)
        tasks = [(src / _image_name(e), manifest.root / e.mask_path,
                  out / "masks" / Path(e.mask_path).name, out / "masked" / _image_name(e),
                  model, cfg.seg["white_threshold"]) for e in test]
        for t in tasks:
            if not t[0].is_file():
                raise DataError(f"missing input image {t[0]}")
        try:
            scores = _map(_segment_one, tasks, cfg.jobs)
        except Exception as exc:
            raise StageError("segment", str(src), exc) from exc
        rows = []
        for e, (learned, base) in zip(test, scores):
            row = {"index": e.index, "background": e.bg_kind}
            row.update({k: float(v) for k, v in learned.items()})
            row.update({f"baseline_{k}": float(v) for k, v in base.items()})
            rows.append(row)
        _write_rows(out / "metrics.csv", list(rows[0]), rows)
        summary[cond.slug] = {
            "iou": float(np.mean([r["iou"] for r in rows])),
            "f1": float(np.mean([r["f1"] for r in rows])),
            "baseline_iou": float(np.mean([r["baseline_iou"] for r in rows])),
            "baseline_f1": float(np.mean([r["baseline_f1"] for r in rows])),
        }
        log.info("segmented %s: IoU %.4f (threshold baseline %.4f)", cond.slug,
                 summary[cond.slug]["iou"], summary[cond.slug]["baseline_iou"])
    return summary


# --- evaluate --------------------------------------------------------------

def _fit_one(task):
    mask_path, pose = task
    model = ArmModel()
    mask = load_mask(mask_path)
    gt = arm_world.forward_kinematics(model, pose)
    if not mask.any():
        # nothing to fit: fall back to the upright arm
        return mse_points(arm_world.forward_kinematics(model, np.zeros(4)), gt), 0.0
    fit, fit_iou = arm_world.fit_arm_pose(mask, model)
    return mse_points(arm_world.forward_kinematics(model, fit), gt), fit_iou


class _NearestNeighbour:
    """Training pose whose ground-truth mask best overlaps a query mask."""

    def __init__(self, manifest: Manifest):
        train = manifest.split("train")
        self.poses = [e.pose for e in train]
        self.masks = np.stack([manifest.mask(e).ravel() for e in train]).astype(np.float64)
        self.areas = self.masks.sum(axis=1)

    def pose_for(self, mask) -> np.ndarray:
        q = np.asarray(mask, dtype=np.float64).ravel()
        inter = self.masks @ q
        union = self.areas + q.sum() - inter
        scores = np.where(union > 0, inter / np.maximum(union, 1), 1.0)
        return self.poses[int(np.argmax(scores))]


def cmd_evaluate(cfg: PipelineConfig, denoise: bool | None = None,
                 wall_time: dict | None = None) -> dict:
    manifest = _load_corpus(cfg)
    test = manifest.split("test")
    model = ArmModel()
    gt_points = {e.index: arm_world.forward_kinematics(model, e.pose) for e in test}
    nn = _NearestNeighbour(manifest) if cfg.baselines else None
    random_mse = {}
    if cfg.baselines:
        for e in test:
            pose = arm_world.sample_pose(model, make_rng(child_seed(cfg.seed, "random-pose", e.index)))
            random_mse[e.index] = mse_points(arm_world.forward_kinematics(model, pose),
                                              gt_points[e.index])

    rows, long_rows, fits = [], [], {}
    per_condition = {}
    for cond in conditions(cfg, denoise):
        seg = segment_dir(cfg, cond)
        metrics_path = seg / "metrics.csv"
        if not metrics_path.is_file():
            raise DataError(f"missing segmentation for {cond.slug}; run 'segment' first")
        with open(metrics_path, newline="") as fh:
            seg_rows = {int(r["index"]): r for r in csv.DictReader(fh)}
        missing = [e.index for e in test if e.index not in seg_rows
                   or not (seg / "masks" / Path(e.mask_path).name).is_file()]
        if missing:
            raise DataError(f"{seg}: masks missing for test images {missing[:10]}")
        if cond.slug not in fits:
            tasks = [(seg / "masks" / Path(e.mask_path).name, e.pose) for e in test]
            try:
                fits[cond.slug] = _map(_fit_one, tasks, cfg.jobs)
            except Exception as exc:
                raise StageError("evaluate", str(seg), exc) from exc
            log.info("fitted %d masks for %s", len(tasks), cond.slug)
        src = _input_dir(cfg, cond, manifest)
        image_rows = []
        for e, (mse, fit_iou) in zip(test, fits[cond.slug]):
            s = seg_rows[e.index]
            value = {"mse": mse, "iou": float(s["iou"]), "precision": float(s["precision"]),
                     "recall": float(s["recall"]), "f1": float(s["f1"]),
                     "psnr": psnr(load_image(src / _image_name(e)), manifest.image(e)),
                     "fit_iou": fit_iou,
                     "baseline_iou": float(s["baseline_iou"]),
                     "baseline_f1": float(s["baseline_f1"])}
            if nn is not None:
                pred = load_mask(seg / "masks" / Path(e.mask_path).name)
                value["nn_mse"] = mse_points(
                    arm_world.forward_kinematics(model, nn.pose_for(pred)), gt_points[e.index])
                value["random_mse"] = random_mse[e.index]
            image_rows.append(value)
            for metric, v in value.items():
                long_rows.append({"condition": cond.name, "filter": cond.filter,
                                  "seed": cond.replicate, "index": e.index,
                                  "metric": metric, "value": float(v)})
        row = {"condition": cond.name, "filter": cond.filter, "seed": cond.replicate}
        for col in REPORT_COLUMNS[3:]:
            row[col] = float(np.mean([r[col] for r in image_rows]))
        rows.append(row)
        key = f"{cond.name}|{cond.filter}"
        per_condition.setdefault(key, []).append(
            {m: float(np.mean([r[m] for r in image_rows])) for m in image_rows[0]})

    expected = {(c.name, c.filter, c.replicate) for c in conditions(cfg, denoise)}
    got = [(r["condition"], r["filter"], r["seed"]) for r in rows]
    if set(got) != expected or len(got) != len(expected):
        raise DataError("report is missing conditions: "
                        f"{sorted(expected - set(got))}")

    _write_rows(cfg.out / "report.csv", REPORT_COLUMNS, rows)
    _write_rows(cfg.out / "report_long.csv", LONG_COLUMNS, long_rows)
    summary = {}
    for key, reps in per_condition.items():
        summary[key] = {m: {"mean": float(np.mean([r[m] for r in reps])),
                            "std": float(np.std([r[m] for r in reps]))} for m in reps[0]}
    report = {"rows": rows, "summary": summary, "checks": ordering_checks(summary, cfg),
              "wall_time": wall_time or {}, "seed": cfg.seed, "n": cfg.n,
              "test_images": len(test)}
    with open(cfg.out / "report.json", "w") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
    return report


def ordering_checks(summary: dict, cfg: PipelineConfig) -> dict:
    """The comparative claims the report should reproduce, as booleans."""
    checks = {}
    clean = summary.get("clean|none")
    if clean is None:
        return checks
    c = clean["mse"]["mean"]
    if "nn_mse" in clean:
        checks["pipeline_lt_nn"] = c < clean["nn_mse"]["mean"]
        checks["nn_lt_random"] = clean["nn_mse"]["mean"] < clean["random_mse"]["mean"]
    for spec in cfg.noise:
        raw = summary.get(f"{spec.label}|none")
        if raw is not None:
            checks[f"{spec.label}: noisy/clean >= 2"] = raw["mse"]["mean"] >= 2 * c
        filt = cfg.filters.get(spec.kind)
        den = summary.get(f"{spec.label}|{filt}") if filt is not None else None
        if den is not None:
            checks[f"{spec.label}: denoised/clean <= 1.5"] = den["mse"]["mean"] <= 1.5 * c
    return checks


# --- whole pipeline --------------------------------------------------------

def cmd_pipeline(cfg: PipelineConfig) -> dict:
    denoise = cfg.denoise
    wall = {}
    write_config(cfg, cfg.out / "config.ini")
    stages = [("generate", lambda: cmd_generate(cfg)),
              ("corrupt", lambda: cmd_corrupt(cfg))]
    if denoise:
        stages.append(("denoise", lambda: cmd_denoise(cfg, retrain=True)))
    stages.append(("segment", lambda: cmd_segment(cfg, denoise, retrain=True)))
    for name, fn in stages:
        t0 = time.perf_counter()
        fn()
        wall[name] = time.perf_counter() - t0
    t0 = time.perf_counter()
    report = cmd_evaluate(cfg, denoise, wall)
    wall["evaluate"] = time.perf_counter() - t0
    report["wall_time"] = wall
    with open(cfg.out / "report.json", "w") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
    return report
