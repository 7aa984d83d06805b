"""A synthetic 4-joint planar arm: rendering, corpora and pose fitting.

Scene coordinates are the unit square with y pointing up. Pixel ``(row, col)``
of a W x H image samples the scene at its centre,
``((col + 0.5) / W, 1 - (row + 0.5) / H)``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .image_core import load_image, load_mask, save_image, save_mask
from .seeding import child_seed, make_rng

JOINT_LIMIT = math.pi / 2
DEFAULT_SIZE = (100, 100)
BACKGROUND_KINDS = ("white", "leaves", "pigeons", "lab-clutter", "procedural")
CLUTTER_KINDS = ("leaves", "pigeons", "lab-clutter")
MANIFEST_COLUMNS = ["index", "theta1", "theta2", "theta3", "theta4",
                    "image_path", "mask_path", "bg_kind", "seed", "split"]

# near-black links with slight per-link shading
LINK_GRAY = (0.05, 0.075, 0.10, 0.125)
BASE_COLOR = (0.95, 0.95, 0.93)


@dataclass(frozen=True)
class ArmModel:
    base: tuple[float, float] = (0.5, 0.08)
    link_lengths: tuple[float, ...] = (0.22, 0.18, 0.14, 0.10)
    link_widths: tuple[float, ...] = (0.055, 0.045, 0.04, 0.03)
    base_radius: float = 0.05

    def __post_init__(self):
        if len(self.link_lengths) != 4 or len(self.link_widths) != 4:
            raise ValueError("the arm has exactly four links")
        if min(self.link_lengths) <= 0 or min(self.link_widths) <= 0 or self.base_radius <= 0:
            raise ValueError("link lengths, widths and base radius must be positive")
        top = self.base[1] + sum(self.link_lengths) + self.link_widths[-1] / 2
        if not (0 <= self.base[0] <= 1 and 0 <= self.base[1] and top <= 1):
            raise ValueError("the fully extended (upright) arm must fit in the unit scene")


def check_pose(pose) -> np.ndarray:
    pose = np.asarray(pose, dtype=np.float64)
    if pose.shape != (4,):
        raise ValueError(f"a pose has 4 joint angles, got shape {pose.shape}")
    if not np.all(np.isfinite(pose)) or np.any(np.abs(pose) > JOINT_LIMIT + 1e-12):
        raise ValueError("joint angles must lie in [-pi/2, pi/2]")
    return pose


def forward_kinematics(model: ArmModel, pose) -> np.ndarray:
    """Base plus the four link endpoints, shape (5, 2).

    Angles accumulate along the chain and are measured from the vertical, so
    a zero pose points straight up and positive angles lean towards +x.
    """
    pose = check_pose(pose)
    cum = np.cumsum(pose)
    lengths = np.asarray(model.link_lengths)
    steps = np.stack([lengths * np.sin(cum), lengths * np.cos(cum)], axis=1)
    return np.vstack([np.asarray(model.base, dtype=np.float64),
                      np.asarray(model.base) + np.cumsum(steps, axis=0)])


def in_frame(model: ArmModel, pose) -> bool:
    """True when every link capsule lies inside the unit scene."""
    pts = forward_kinematics(model, pose)
    for k, width in enumerate(model.link_widths):
        r = width / 2
        seg = pts[k:k + 2]
        if seg.min() - r < 0 or seg.max() + r > 1:
            return False
    return True


class Raster:
    """Pixel-centre coordinates for one image size, reused across renders."""

    def __init__(self, size=DEFAULT_SIZE):
        self.width, self.height = size
        self.xs = (np.arange(self.width) + 0.5) / self.width
        self.ys = 1.0 - (np.arange(self.height) + 0.5) / self.height

    def _box(self, a, b, radius: float):
        W, H = self.width, self.height
        x0, x1 = min(a[0], b[0]) - radius, max(a[0], b[0]) + radius
        y0, y1 = min(a[1], b[1]) - radius, max(a[1], b[1]) + radius
        c0 = max(0, int(math.floor(x0 * W - 0.5)))
        c1 = min(W, int(math.ceil(x1 * W - 0.5)) + 1)
        r0 = max(0, int(math.floor((1 - y1) * H - 0.5)))
        r1 = min(H, int(math.ceil((1 - y0) * H - 0.5)) + 1)
        return r0, r1, c0, c1

    def _dist2(self, a, b, box):
        r0, r1, c0, c1 = box
        px = self.xs[None, c0:c1] - a[0]
        py = self.ys[r0:r1, None] - a[1]
        dx, dy = b[0] - a[0], b[1] - a[1]
        len2 = dx * dx + dy * dy
        if len2 > 0:
            t = np.clip((px * dx + py * dy) / len2, 0.0, 1.0)
        else:
            t = 0.0
        ex = px - t * dx
        ey = py - t * dy
        return ex * ex + ey * ey

    def capsule(self, a, b, radius: float, out: np.ndarray) -> None:
        """OR into ``out`` the pixels within ``radius`` of segment ab."""
        box = self._box(a, b, radius)
        r0, r1, c0, c1 = box
        if c0 >= c1 or r0 >= r1:
            return
        out[r0:r1, c0:c1] |= self._dist2(a, b, box) <= radius * radius

    def soft_capsule(self, a, b, radius: float, out: np.ndarray) -> None:
        """Max into ``out`` an anti-aliased coverage of the capsule: 1 inside,
        0 beyond half a pixel outside, linear in distance in between."""
        pad = 1.0 / min(self.width, self.height)
        box = self._box(a, b, radius + pad)
        r0, r1, c0, c1 = box
        if c0 >= c1 or r0 >= r1:
            return
        d = np.sqrt(self._dist2(a, b, box))
        cov = np.clip((radius - d) * self.width + 0.5, 0.0, 1.0)
        np.maximum(out[r0:r1, c0:c1], cov, out=out[r0:r1, c0:c1])

    def arm_mask(self, model: ArmModel, pose) -> np.ndarray:
        pts = forward_kinematics(model, pose)
        mask = np.zeros((self.height, self.width), dtype=bool)
        for k, width in enumerate(model.link_widths):
            self.capsule(pts[k], pts[k + 1], width / 2, mask)
        return mask

    def link_masks(self, model: ArmModel, pose) -> list[np.ndarray]:
        pts = forward_kinematics(model, pose)
        masks = []
        for k, width in enumerate(model.link_widths):
            m = np.zeros((self.height, self.width), dtype=bool)
            self.capsule(pts[k], pts[k + 1], width / 2, m)
            masks.append(m)
        return masks

    def disk(self, center, radius: float) -> np.ndarray:
        m = np.zeros((self.height, self.width), dtype=bool)
        self.capsule(center, center, radius, m)
        return m


_RASTERS: dict[tuple[int, int], Raster] = {}


def raster_for(size) -> Raster:
    size = tuple(int(s) for s in size)
    if size not in _RASTERS:
        _RASTERS[size] = Raster(size)
    return _RASTERS[size]


def render_mask(model: ArmModel, pose, size=DEFAULT_SIZE) -> np.ndarray:
    """Silhouette of the four links as a 0/1 mask (the base is excluded)."""
    return raster_for(size).arm_mask(model, pose).astype(np.uint8)


# --- backgrounds ----------------------------------------------------------

@dataclass(frozen=True)
class Background:
    kind: str = "white"
    seed: int = 0

    def __post_init__(self):
        if self.kind not in BACKGROUND_KINDS:
            raise ValueError(f"unknown background {self.kind!r}; expected one of {BACKGROUND_KINDS}")

    def resolved_kind(self) -> str:
        """Concrete scene for ``procedural`` backgrounds (chosen by seed)."""
        if self.kind != "procedural":
            return self.kind
        rng = make_rng(child_seed(self.seed, "procedural-kind"))
        return CLUTTER_KINDS[int(rng.integers(len(CLUTTER_KINDS)))]


def _grid(size):
    W, H = size
    xs = (np.arange(W) + 0.5) / W
    ys = 1.0 - (np.arange(H) + 0.5) / H
    return np.meshgrid(xs, ys)


def _ellipse(X, Y, cx, cy, ax, ay, angle):
    c, s = math.cos(angle), math.sin(angle)
    u = (X - cx) * c + (Y - cy) * s
    v = -(X - cx) * s + (Y - cy) * c
    return (u / ax) ** 2 + (v / ay) ** 2 <= 1.0


def _vertical_gradient(Y, top, bottom):
    top, bottom = np.asarray(top), np.asarray(bottom)
    return bottom + (top - bottom) * Y[..., None]


def _leaves(rng, size):
    X, Y = _grid(size)
    img = _vertical_gradient(Y, (0.32, 0.55, 0.25), (0.25, 0.45, 0.18))
    palette = np.array([
        (0.20, 0.60, 0.20), (0.45, 0.75, 0.25), (0.85, 0.80, 0.20), (0.90, 0.55, 0.15),
        (0.80, 0.25, 0.15), (0.55, 0.40, 0.20), (0.30, 0.50, 0.15), (0.70, 0.85, 0.40),
    ])
    for _ in range(int(rng.integers(45, 70))):
        color = palette[rng.integers(len(palette))] * rng.uniform(0.85, 1.1)
        m = _ellipse(X, Y, rng.uniform(0, 1), rng.uniform(0, 1), rng.uniform(0.03, 0.10),
                     rng.uniform(0.015, 0.04), rng.uniform(0, math.pi))
        img[m] = np.clip(color, 0, 1)
    return img


def _pigeons(rng, size):
    X, Y = _grid(size)
    img = _vertical_gradient(Y, (0.70, 0.72, 0.78), (0.55, 0.50, 0.48))
    # roof tiles: alternating horizontal bands
    bands = (np.floor(Y * 12) % 2 == 0)
    img[bands] *= 0.92
    for i in range(int(rng.integers(2, 5))):
        dark = i % 2 == 1
        body = np.array((0.30, 0.30, 0.36)) if dark else np.array((0.48, 0.48, 0.52))
        body = body * rng.uniform(0.95, 1.08)
        cx, cy = rng.uniform(0.1, 0.9), rng.uniform(0.15, 0.9)
        ax, ay = rng.uniform(0.08, 0.14), rng.uniform(0.05, 0.08)
        img[_ellipse(X, Y, cx, cy, ax, ay, rng.uniform(-0.3, 0.3))] = body
        hx = cx + ax * (0.9 if rng.random() < 0.5 else -0.9)
        img[_ellipse(X, Y, hx, cy + ay * 0.8, 0.035, 0.035, 0.0)] = body * 1.1
        img[_ellipse(X, Y, hx, cy + ay * 0.8, 0.008, 0.008, 0.0)] = (0.85, 0.55, 0.20)
    return img


def _lab_clutter(rng, size):
    X, Y = _grid(size)
    img = _vertical_gradient(Y, (0.82, 0.78, 0.70), (0.62, 0.58, 0.52))
    palette = np.array([
        (0.25, 0.30, 0.55), (0.60, 0.20, 0.20), (0.90, 0.90, 0.88), (0.35, 0.28, 0.25),
        (0.20, 0.45, 0.35), (0.75, 0.65, 0.30), (0.30, 0.30, 0.38), (0.55, 0.55, 0.60),
    ])
    for _ in range(int(rng.integers(8, 16))):
        x0, y0 = rng.uniform(-0.1, 0.95), rng.uniform(-0.1, 0.95)
        w, h = rng.uniform(0.05, 0.35), rng.uniform(0.04, 0.30)
        m = (X >= x0) & (X <= x0 + w) & (Y >= y0) & (Y <= y0 + h)
        img[m] = palette[rng.integers(len(palette))] * rng.uniform(0.9, 1.1)
    return np.clip(img, 0, 1)


def render_background(bg: Background, size=DEFAULT_SIZE) -> np.ndarray:
    kind = bg.resolved_kind()
    W, H = size
    if kind == "white":
        _, Y = _grid(size)
        return np.clip(_vertical_gradient(Y, (1.0, 1.0, 1.0), (0.96, 0.96, 0.96)), 0, 1)
    rng = make_rng(child_seed(bg.seed, kind))
    img = {"leaves": _leaves, "pigeons": _pigeons, "lab-clutter": _lab_clutter}[kind](rng, size)
    return np.clip(img, 0.0, 1.0).reshape(H, W, 3)


def render(model: ArmModel, pose, bg: Background = Background(), size=DEFAULT_SIZE):
    """Image and ground-truth mask of the arm posed over ``bg``.

    The white base disk is drawn but left out of the mask. Poses whose links
    leave the frame are rejected.
    """
    pose = check_pose(pose)
    if not in_frame(model, pose):
        raise ValueError("arm leaves the frame in this pose")
    raster = raster_for(size)
    img = render_background(bg, size).copy()
    img[raster.disk(model.base, model.base_radius)] = BASE_COLOR
    mask = np.zeros((raster.height, raster.width), dtype=bool)
    for link, gray in zip(raster.link_masks(model, pose), LINK_GRAY):
        img[link] = gray
        mask |= link
    return img, mask.astype(np.uint8)


# --- corpora --------------------------------------------------------------

def sample_pose(model: ArmModel, rng: np.random.Generator, max_tries: int = 10_000) -> np.ndarray:
    """Uniform pose in the joint box, conditioned on staying in frame."""
    for _ in range(max_tries):
        pose = np.round(rng.uniform(-JOINT_LIMIT, JOINT_LIMIT, size=4), 6)
        if in_frame(model, pose):
            return pose
    raise RuntimeError("could not sample an in-frame pose")


@dataclass
class CorpusEntry:
    index: int
    pose: np.ndarray
    image_path: str
    mask_path: str
    bg_kind: str
    seed: int
    split: str


@dataclass
class Manifest:
    root: Path
    entries: list[CorpusEntry] = field(default_factory=list)

    def split(self, name: str) -> list[CorpusEntry]:
        return [e for e in self.entries if e.split == name]

    def image(self, entry: CorpusEntry) -> np.ndarray:
        return load_image(self.root / entry.image_path)

    def mask(self, entry: CorpusEntry) -> np.ndarray:
        return load_mask(self.root / entry.mask_path)

    def write(self, path=None) -> Path:
        path = Path(path) if path else self.root / "manifest.csv"
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(MANIFEST_COLUMNS)
            for e in self.entries:
                writer.writerow([e.index, *(f"{t:.6f}" for t in e.pose), e.image_path,
                                 e.mask_path, e.bg_kind, e.seed, e.split])
        return path

    @classmethod
    def read(cls, path) -> "Manifest":
        path = Path(path)
        if not path.exists():
            raise FileNotFoundError(f"manifest not found: {path}")
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            missing = set(MANIFEST_COLUMNS) - set(reader.fieldnames or ())
            if missing:
                raise ValueError(f"{path}: manifest lacks columns {sorted(missing)}")
            entries = [
                CorpusEntry(int(r["index"]),
                            np.array([float(r[f"theta{k}"]) for k in range(1, 5)]),
                            r["image_path"], r["mask_path"], r["bg_kind"], int(r["seed"]),
                            r["split"])
                for r in reader
            ]
        return cls(path.parent, entries)


def split_counts(n: int, train_fraction: float) -> tuple[int, int]:
    n_train = int(round(n * train_fraction))
    n_train = min(max(n_train, 1), n - 1)
    return n_train, n - n_train


def generate_corpus(model: ArmModel, n: int, out_dir, train_fraction: float = 5 / 6,
                    bg_kind: str = "procedural", seed: int = 0, size=DEFAULT_SIZE) -> Manifest:
    """Render ``n`` seeded poses to ``out_dir`` and write ``manifest.csv``.

    Image ``i`` draws its pose and background from streams derived from
    ``(seed, i)``, so any subset can be regenerated independently.
    """
    if n < 2:
        raise ValueError("a corpus needs at least 2 images")
    if not 0 < train_fraction < 1:
        raise ValueError("train fraction must lie in (0, 1)")
    Background(bg_kind)  # validates the kind
    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    (out / "masks").mkdir(parents=True, exist_ok=True)
    n_train, _ = split_counts(n, train_fraction)
    manifest = Manifest(out)
    for i in range(n):
        pose = sample_pose(model, make_rng(child_seed(seed, "pose", i)))
        bg = Background(bg_kind, child_seed(seed, "background", i))
        img, mask = render(model, pose, bg, size)
        entry = CorpusEntry(i, pose, f"images/img_{i:05d}.ppm", f"masks/mask_{i:05d}.pgm",
                            bg.resolved_kind(), bg.seed, "train" if i < n_train else "test")
        try:
            save_image(img, out / entry.image_path)
            save_mask(mask, out / entry.mask_path)
        except OSError as exc:
            raise OSError(f"writing corpus item {i}: {exc}") from exc
        manifest.entries.append(entry)
    manifest.write()
    return manifest


# --- pose fitting ---------------------------------------------------------

# angles are searched in integer hundredths of a degree so cache keys are exact
UNIT = 100
COARSE_STEP = 15 * UNIT
REFINE_STEPS = ((3 * UNIT, 5), (1 * UNIT, 3))  # (step, +/- steps searched)
JOINT_LIMIT_UNITS = 90 * UNIT
HINGE_CAP = 2.0  # pixels; bounds the pull of any single stray pixel


def mask_iou(a, b) -> float:
    a, b = np.asarray(a, dtype=bool), np.asarray(b, dtype=bool)
    union = np.count_nonzero(a | b)
    return np.count_nonzero(a & b) / union if union else 1.0


class _Objective:
    """Scores for one target mask, cached by pose (in search units)."""

    def __init__(self, target: np.ndarray, model: ArmModel):
        self.target = target
        self.model = model
        self.raster = raster_for((target.shape[1], target.shape[0]))
        self.tf = target.astype(np.float64)
        self.nb = float(self.tf.sum())
        rows, cols = np.nonzero(target)
        self.tbox = (rows.min(), rows.max() + 1, cols.min(), cols.max() + 1)
        self.scale = float(max(self.raster.width, self.raster.height))
        self.radii = np.asarray(model.link_widths) / 2
        self.lengths = np.asarray(model.link_lengths, dtype=np.float64)
        self.base = np.asarray(model.base, dtype=np.float64)
        self._soft: dict[tuple, float] = {}
        self._hinge: dict[tuple, float] = {}

    def points(self, deg) -> np.ndarray:
        """Base and endpoints of the first ``len(deg)`` links (same maths as
        :func:`forward_kinematics`, minus validation)."""
        n = len(deg)
        cum = np.cumsum(np.asarray(deg, dtype=np.float64) * (math.pi / 180 / UNIT))
        out = np.empty((n + 1, 2))
        out[0] = self.base
        out[1:, 0] = self.lengths[:n] * np.sin(cum)
        out[1:, 1] = self.lengths[:n] * np.cos(cum)
        return np.cumsum(out, axis=0)

    def _signed(self, deg, pad: float):
        """Signed distance to the first ``len(deg)`` links over the union of
        their bounding box (grown by ``pad``) and the target's."""
        pts = self.points(deg)
        r = self.radii[:len(deg)]
        lo = pts.min(axis=0) - r.max() - pad
        hi = pts.max(axis=0) + r.max() + pad
        r0, r1, c0, c1 = self.raster._box(lo, hi, 0.0)
        t0, t1, u0, u1 = self.tbox
        r0, r1, c0, c1 = min(r0, t0), max(r1, t1), min(c0, u0), max(c1, u1)
        a, b = pts[:-1, :, None, None], pts[1:, :, None, None]
        px = self.raster.xs[None, c0:c1] - a[:, 0]
        py = self.raster.ys[r0:r1, None] - a[:, 1]
        dx, dy = b[:, 0] - a[:, 0], b[:, 1] - a[:, 1]
        len2 = np.maximum(dx * dx + dy * dy, 1e-300)
        t = np.clip((px * dx + py * dy) / len2, 0.0, 1.0)
        ex, ey = px - t * dx, py - t * dy
        d = np.sqrt(ex * ex + ey * ey) - r[:, None, None]
        return (slice(r0, r1), slice(c0, c1)), d.min(axis=0)

    def soft_iou(self, deg: tuple) -> float:
        """IoU of an anti-aliased render of the first ``len(deg)`` links:
        coverage is 1 inside, 0 beyond half a pixel outside, linear between."""
        if deg not in self._soft:
            box, s = self._signed(deg, 1.0 / self.scale)
            cov = np.clip(0.5 - s * self.raster.width, 0.0, 1.0)
            inter = float(np.vdot(cov, self.tf[box]))
            self._soft[deg] = inter / (float(cov.sum()) + self.nb - inter)
        return self._soft[deg]

    def hinge(self, deg) -> float:
        """Signed-distance violation in pixels.

        Target pixel centres outside every link and other pixel centres inside
        some link each add their distance to the boundary, capped at
        ``HINGE_CAP``. The loss vanishes exactly when the render equals the
        mask.
        """
        key = tuple(int(v) for v in deg)
        if key not in self._hinge:
            box, s = self._signed(key, 0.0)
            v = np.where(self.target[box], s, -s) * self.scale
            self._hinge[key] = float(np.minimum(np.maximum(v, 0.0), HINGE_CAP).sum())
        return self._hinge[key]

    def iou(self, pose) -> float:
        return mask_iou(self.raster.arm_mask(self.model, pose), self.target)


def _in_limits(deg) -> bool:
    return all(abs(v) <= JOINT_LIMIT_UNITS for v in deg)


def _grid_refine(start: tuple, loss, max_passes: int) -> tuple[tuple, float]:
    """Coordinate descent on the 3 and 1 degree grids, with coupled moves that
    turn one joint and counter-turn the next. Only strict improvements are
    taken, scanning joints base-first and offsets from most negative up."""
    best, best_loss = start, loss(start)
    for step, reach in REFINE_STEPS:
        offsets = [m * step for m in range(-reach, reach + 1) if m]
        moves = [((j, d),) for j in range(4) for d in offsets]
        moves += [((j, d), (j + 1, -d)) for j in range(3) for d in offsets]
        for _ in range(max_passes):
            changed = False
            for move in moves:
                cand = list(best)
                for j, d in move:
                    cand[j] += d
                cand = tuple(cand)
                if not _in_limits(cand):
                    continue
                value = loss(cand)
                if value < best_loss:
                    best, best_loss, changed = cand, value, True
            if not changed:
                break
    return best, best_loss


def _polish(start: tuple, loss, max_evals: int = 600) -> tuple[tuple, float]:
    """Nelder-Mead on the continuous hinge loss, snapped to search units."""
    from scipy.optimize import minimize

    def f(x):
        return loss(np.clip(np.round(x), -JOINT_LIMIT_UNITS, JOINT_LIMIT_UNITS))

    x0 = np.asarray(start, dtype=np.float64)
    simplex = np.vstack([x0] + [x0 + 1.5 * UNIT * np.eye(4)[k] for k in range(4)])
    res = minimize(f, x0, method="Nelder-Mead",
                   options={"initial_simplex": simplex, "xatol": 2.0, "fatol": 1e-9,
                            "maxfev": max_evals})
    cand = tuple(int(v) for v in np.clip(np.round(res.x), -JOINT_LIMIT_UNITS, JOINT_LIMIT_UNITS))
    if loss(cand) < loss(start):
        return cand, loss(cand)
    return start, loss(start)


def fit_arm_pose(mask, model: ArmModel, beam: int = 8, refine_top: int = 1,
                 max_passes: int = 6, polish_rounds: int = 4):
    """Recover the pose whose rendered silhouette best explains ``mask``.

    1. Coarse: joints are placed one at a time, base first, on the 15 degree
       grid. Partial chains are scored by the IoU of an anti-aliased render of
       the links placed so far, and the best ``beam`` are kept.
    2. Grid refinement at 3 then 1 degree around the best ``refine_top``
       chains, minimising a signed-distance hinge loss that is zero exactly
       when the render reproduces the mask.
    3. Nelder-Mead polish of that loss, restarted while it keeps improving.

    At 100 x 100 a distal joint can often turn by a degree or more without
    changing a single pixel, so an exact silhouette match does not pin the
    pose down further than that.

    Deterministic: ties always keep the earlier candidate (base joint first,
    smaller angle first). Returns ``(pose, iou)``: the pose in radians and the
    binary IoU between its render and ``mask``.
    """
    target = np.asarray(mask).astype(bool)
    if target.ndim != 2:
        raise ValueError("mask must be 2-D")
    if not target.any():
        raise ValueError("cannot fit a pose to an empty mask")
    obj = _Objective(target, model)

    grid = range(-JOINT_LIMIT_UNITS, JOINT_LIMIT_UNITS + 1, COARSE_STEP)
    frontier = [()]
    for _ in range(4):
        scored = [(obj.soft_iou(p + (v,)), p + (v,)) for p in frontier for v in grid]
        # stable sort on score alone keeps earlier candidates first on ties
        scored.sort(key=lambda item: -item[0])
        frontier = [p for _, p in scored[:beam]]

    results = [_grid_refine(p, obj.hinge, max_passes) for p in frontier[:refine_top]]
    best, loss = min(results, key=lambda item: item[1])
    for _ in range(polish_rounds):
        if loss == 0:
            break
        cand, cand_loss = _polish(best, obj.hinge)
        if cand_loss >= loss:
            break
        best, loss = cand, cand_loss
    pose = np.radians(np.asarray(best, dtype=np.float64) / UNIT)
    fit_arm_pose.evaluations = len(obj._soft) + len(obj._hinge)
    return pose, obj.iou(pose)
