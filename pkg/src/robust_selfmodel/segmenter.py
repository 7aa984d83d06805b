"""Per-pixel robot/background classifier over positional encodings (plus
colour), the colour-threshold baseline it is compared against, and mask
application.

The classifier is a one-hidden-layer tanh MLP with two output logits
(0 = background, 1 = robot), trained by seeded minibatch SGD with momentum.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .image_core import as_image, as_mask
from .seeding import child_seed, make_rng

MODEL_HEADER = "segmodel v1"


@dataclass(frozen=True)
class EncodingConfig:
    L: int = 6
    include_rgb: bool = True

    def __post_init__(self):
        if self.L < 0:
            raise ValueError("L must be >= 0")

    @property
    def length(self) -> int:
        return 2 + 4 * self.L + (3 if self.include_rgb else 0)


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 0.05
    epochs: int = 500
    batch: int = 1024
    pixels_per_epoch: int = 4096
    hidden: int = 32
    momentum: float = 0.9
    seed: int = 0

    def __post_init__(self):
        if not self.lr > 0:
            raise ValueError("learning rate must be > 0")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch < 1 or self.pixels_per_epoch < 1 or self.hidden < 1:
            raise ValueError("batch, pixels_per_epoch and hidden must be >= 1")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must lie in [0, 1)")


@dataclass
class SegModel:
    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray
    enc: EncodingConfig
    seed: int = 0
    final_loss: float = float("nan")
    history: list = field(default_factory=list, repr=False)

    @property
    def sizes(self) -> tuple[int, int, int]:
        return self.W1.shape[0], self.W1.shape[1], self.W2.shape[1]

    def check(self) -> None:
        d_in, hidden, out = self.sizes
        if out != 2:
            raise ValueError("segmentation model must have 2 outputs")
        if d_in != self.enc.length:
            raise ValueError(f"model input {d_in} does not match encoding length {self.enc.length}")
        if self.b1.shape != (hidden,) or self.W2.shape[0] != hidden or self.b2.shape != (out,):
            raise ValueError("inconsistent layer shapes")
        for name in ("W1", "b1", "W2", "b2"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise ValueError(f"non-finite parameters in {name}")

    def params(self) -> list[np.ndarray]:
        return [self.W1, self.b1, self.W2, self.b2]


# --- encoding -------------------------------------------------------------

def positional_encode(coords, cfg: EncodingConfig) -> np.ndarray:
    """Encode normalised (x, y) coordinates, shape (2,) or (N, 2), as
    ``[x, y, sin(2^l pi x), cos(2^l pi x) ..., same for y]``."""
    coords = np.asarray(coords, dtype=np.float64)
    single = coords.ndim == 1
    coords = np.atleast_2d(coords)
    if coords.shape[1] != 2:
        raise ValueError("coordinates must have two components")
    if np.any(coords < 0) or np.any(coords > 1):
        raise ValueError("coordinates must lie in [0, 1]")
    parts = [coords]
    for axis in range(2):
        v = coords[:, axis:axis + 1]
        freqs = (2.0 ** np.arange(cfg.L)) * math.pi
        ang = v * freqs
        band = np.empty((len(coords), 2 * cfg.L))
        band[:, 0::2] = np.sin(ang)
        band[:, 1::2] = np.cos(ang)
        parts.append(band)
    out = np.concatenate(parts, axis=1)
    return out[0] if single else out


def pixel_coords(height: int, width: int) -> np.ndarray:
    """Pixel-centre coordinates ``((col + 0.5) / W, (row + 0.5) / H)`` in
    row-major order, shape (H*W, 2)."""
    rows, cols = np.mgrid[0:height, 0:width]
    return np.stack([(cols.ravel() + 0.5) / width, (rows.ravel() + 0.5) / height], axis=1)


def encode_image(img, cfg: EncodingConfig) -> np.ndarray:
    """Features for every pixel of ``img``, shape (H*W, cfg.length)."""
    img = as_image(img)
    h, w, c = img.shape
    feats = positional_encode(pixel_coords(h, w), cfg)
    if cfg.include_rgb:
        rgb = img.reshape(-1, c)
        if c == 1:
            rgb = np.repeat(rgb, 3, axis=1)
        feats = np.concatenate([feats, rgb], axis=1)
    return feats


# --- network --------------------------------------------------------------

def init_model(enc: EncodingConfig, hidden: int, seed: int) -> SegModel:
    rng = make_rng(child_seed(seed, "seg-init"))
    d = enc.length
    W1 = rng.normal(0.0, 1.0 / math.sqrt(d), size=(d, hidden))
    W2 = rng.normal(0.0, 1.0 / math.sqrt(hidden), size=(hidden, 2))
    return SegModel(W1, np.zeros(hidden), W2, np.zeros(2), enc, seed)


def forward(model: SegModel, X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Returns ``(logits, hidden activations)`` for feature rows ``X``."""
    hid = np.tanh(X @ model.W1 + model.b1)
    return hid @ model.W2 + model.b2, hid


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def cross_entropy_loss(logits, mask) -> float:
    """Mean over pixels of ``-log softmax(logits)[true class]``.

    ``logits`` is (H, W, 2) (or (N, 2) with a length-N label vector)."""
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(mask)
    if logits.shape[-1] != 2 or logits.shape[:-1] != labels.shape:
        raise ValueError(f"logits {logits.shape} do not match mask {labels.shape}")
    logp = _log_softmax(logits.reshape(-1, 2))
    y = labels.reshape(-1).astype(np.intp)
    return float(-logp[np.arange(len(y)), y].mean())


def loss_and_grad(model: SegModel, X: np.ndarray, y: np.ndarray):
    """Cross-entropy on a batch and its gradient with respect to
    ``(W1, b1, W2, b2)``."""
    logits, hid = forward(model, X)
    logp = _log_softmax(logits)
    n = len(y)
    loss = float(-logp[np.arange(n), y].mean())
    g = np.exp(logp)
    g[np.arange(n), y] -= 1.0
    g /= n
    gW2 = hid.T @ g
    gb2 = g.sum(axis=0)
    gh = (g @ model.W2.T) * (1.0 - hid * hid)
    gW1 = X.T @ gh
    gb1 = gh.sum(axis=0)
    return loss, [gW1, gb1, gW2, gb2]


def train_segmenter(pairs, enc: EncodingConfig = EncodingConfig(),
                    cfg: TrainConfig = TrainConfig()) -> SegModel:
    """Fit the classifier to ``(image, mask)`` pairs.

    Each epoch draws ``cfg.pixels_per_epoch`` pixels uniformly (with
    replacement) from all training pixels and takes SGD-with-momentum steps
    over them in minibatches of ``cfg.batch``.
    """
    pairs = list(pairs)
    if not pairs:
        raise ValueError("need at least one training pair")
    imgs = [as_image(img) for img, _ in pairs]
    masks = [as_mask(m) for _, m in pairs]
    shape = imgs[0].shape[:2]
    for img, m in zip(imgs, masks):
        if img.shape[:2] != shape or m.shape != shape:
            raise ValueError("all training images and masks must share one size")
    h, w = shape
    pos = positional_encode(pixel_coords(h, w), EncodingConfig(enc.L, False))
    if enc.include_rgb:
        rgb = np.stack([im if im.shape[2] == 3 else np.repeat(im, 3, axis=2) for im in imgs])
        rgb = rgb.reshape(len(imgs), h * w, 3)
    labels = np.stack([m.reshape(-1) for m in masks]).astype(np.intp)

    model = init_model(enc, cfg.hidden, cfg.seed)
    velocity = [np.zeros_like(p) for p in model.params()]
    rng = make_rng(child_seed(cfg.seed, "seg-batches"))
    history = []
    for epoch in range(cfg.epochs):
        which = rng.integers(len(imgs), size=cfg.pixels_per_epoch)
        where = rng.integers(h * w, size=cfg.pixels_per_epoch)
        total = 0.0
        for start in range(0, cfg.pixels_per_epoch, cfg.batch):
            i = which[start:start + cfg.batch]
            j = where[start:start + cfg.batch]
            X = pos[j]
            if enc.include_rgb:
                X = np.concatenate([X, rgb[i, j]], axis=1)
            loss, grads = loss_and_grad(model, X, labels[i, j])
            if not math.isfinite(loss):
                raise FloatingPointError(
                    f"segmenter training diverged at epoch {epoch} (loss {loss}); "
                    f"lower the learning rate (now {cfg.lr})")
            for p, v, g in zip(model.params(), velocity, grads):
                v *= cfg.momentum
                v -= cfg.lr * g
                p += v
            total += loss * len(j)
        history.append(total / cfg.pixels_per_epoch)
    model.history = history
    model.final_loss = history[-1]
    model.check()
    return model


def predict_logits(model: SegModel, img) -> np.ndarray:
    img = as_image(img)
    logits, _ = forward(model, encode_image(img, model.enc))
    return logits.reshape(img.shape[0], img.shape[1], 2)


def infer_mask(model: SegModel, img) -> np.ndarray:
    """Per-pixel argmax of the two logits; exact ties go to background."""
    logits = predict_logits(model, img)
    return (logits[:, :, 1] > logits[:, :, 0]).astype(np.uint8)


def apply_mask(img, mask) -> np.ndarray:
    """Zero out background pixels in every channel."""
    img = as_image(img)
    mask = as_mask(mask)
    if mask.shape != img.shape[:2]:
        raise ValueError(f"mask {mask.shape} does not match image {img.shape[:2]}")
    return img * mask[:, :, None]


def color_threshold_baseline(img, white_threshold: float = 0.8) -> np.ndarray:
    """Background iff every channel is at least ``white_threshold``."""
    if not 0 < white_threshold < 1:
        raise ValueError("threshold must lie in (0, 1)")
    img = as_image(img)
    return (img.min(axis=2) < white_threshold).astype(np.uint8)


# --- persistence ----------------------------------------------------------

def save_model(model: SegModel, path) -> None:
    model.check()
    d_in, hidden, out = model.sizes
    lines = [MODEL_HEADER,
             f"sizes {d_in} {hidden} {out}",
             f"encoding L={model.enc.L} rgb={int(model.enc.include_rgb)}",
             f"seed {model.seed}",
             f"final_loss {model.final_loss!r}"]
    for name, arr in zip(("W1", "b1", "W2", "b2"), model.params()):
        lines.append(f"{name} " + " ".join(repr(float(v)) for v in arr.ravel()))
    Path(path).write_text("\n".join(lines) + "\n")


def load_model(path) -> SegModel:
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0].strip() != MODEL_HEADER:
        raise ValueError(f"{path}: not a {MODEL_HEADER!r} file")
    try:
        fields = {}
        for line in lines[1:]:
            key, _, rest = line.partition(" ")
            fields[key] = rest
        d_in, hidden, out = (int(v) for v in fields["sizes"].split())
        enc_items = dict(item.split("=") for item in fields["encoding"].split())
        enc = EncodingConfig(int(enc_items["L"]), bool(int(enc_items["rgb"])))
        shapes = {"W1": (d_in, hidden), "b1": (hidden,), "W2": (hidden, out), "b2": (out,)}
        arrays = {k: np.array([float(v) for v in fields[k].split()]).reshape(s)
                  for k, s in shapes.items()}
    except (KeyError, ValueError) as exc:
        raise ValueError(f"{path}: malformed model file ({exc})") from exc
    model = SegModel(arrays["W1"], arrays["b1"], arrays["W2"], arrays["b2"], enc,
                     int(fields.get("seed", 0)), float(fields.get("final_loss", "nan")))
    model.check()
    return model
