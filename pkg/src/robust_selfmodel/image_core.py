"""Image and mask conventions shared by every stage.

Images are ``float64`` arrays of shape ``(H, W, C)`` with ``C`` in {1, 3} and
values in [0, 1]. Masks are ``uint8`` arrays of shape ``(H, W)`` holding 0/1.
Plain numpy arrays are used throughout; the helpers here only validate and
convert.
"""

from __future__ import annotations

import os
from pathlib import Path

import numpy as np

LUMA_WEIGHTS = np.array([0.2126, 0.7152, 0.0722])


class ImageFormatError(ValueError):
    """Raised when an image file cannot be decoded."""


def as_image(data, *, copy: bool = False) -> np.ndarray:
    """Validate ``data`` as an image and return it as an (H, W, C) float array.

    2-D input is promoted to a single channel.
    """
    arr = np.array(data, dtype=np.float64) if copy else np.asarray(data, dtype=np.float64)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    if arr.ndim != 3 or arr.shape[2] not in (1, 3):
        raise ValueError(f"image must be HxW, HxWx1 or HxWx3, got shape {arr.shape}")
    if arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ValueError("image must be at least 1x1")
    if not np.all(np.isfinite(arr)):
        raise ValueError("image contains non-finite values")
    if arr.min() < 0.0 or arr.max() > 1.0:
        raise ValueError("image values must lie in [0, 1]")
    return arr


def as_mask(data) -> np.ndarray:
    arr = np.asarray(data)
    if arr.ndim != 2:
        raise ValueError(f"mask must be 2-D, got shape {arr.shape}")
    if not np.all((arr == 0) | (arr == 1)):
        raise ValueError("mask values must be 0 or 1")
    return arr.astype(np.uint8)


def to_grayscale(img) -> np.ndarray:
    """Rec. 709 luma of an RGB image, returned as a single-channel image."""
    img = as_image(img)
    if img.shape[2] != 3:
        raise ValueError("image is already grayscale")
    luma = img @ LUMA_WEIGHTS
    return np.clip(luma, 0.0, 1.0)[:, :, None]


def luma(img: np.ndarray) -> np.ndarray:
    """2-D luma plane for either channel layout."""
    img = as_image(img)
    if img.shape[2] == 1:
        return img[:, :, 0]
    return to_grayscale(img)[:, :, 0]


def clip_intensity(data) -> np.ndarray:
    arr = np.asarray(data, dtype=np.float64)
    if np.any(np.isnan(arr)):
        raise ValueError("cannot clip NaN intensities")
    return np.clip(arr, 0.0, 1.0)


def quantize(img: np.ndarray) -> np.ndarray:
    """Round to the nearest 8-bit level, as a save/load cycle would."""
    return np.round(np.asarray(img) * 255.0) / 255.0


def mask_to_image(mask) -> np.ndarray:
    return as_mask(mask).astype(np.float64)[:, :, None]


def image_to_mask(img, threshold: float = 0.5) -> np.ndarray:
    if not 0.0 < threshold < 1.0:
        raise ValueError("threshold must lie in (0, 1)")
    return (luma(img) >= threshold).astype(np.uint8)


# --- file I/O -----------------------------------------------------------

def _to_bytes(img: np.ndarray) -> np.ndarray:
    return np.round(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)


def _read_token(buf: bytes, pos: int) -> tuple[bytes, int]:
    n = len(buf)
    while pos < n:
        c = buf[pos:pos + 1]
        if c == b"#":
            while pos < n and buf[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
        elif c.isspace():
            pos += 1
        else:
            break
    start = pos
    while pos < n and not buf[pos:pos + 1].isspace() and buf[pos:pos + 1] != b"#":
        pos += 1
    if start == pos:
        raise ImageFormatError("truncated PNM header")
    return buf[start:pos], pos


def _read_pnm(path: Path) -> np.ndarray:
    buf = path.read_bytes()
    magic = buf[:2]
    if magic not in (b"P5", b"P6"):
        raise ImageFormatError(f"{path}: not a binary PGM/PPM file (magic {magic!r})")
    pos = 2
    fields = []
    try:
        for _ in range(3):
            tok, pos = _read_token(buf, pos)
            fields.append(int(tok))
    except ValueError as exc:
        raise ImageFormatError(f"{path}: malformed PNM header") from exc
    width, height, maxval = fields
    if width < 1 or height < 1:
        raise ImageFormatError(f"{path}: invalid dimensions {width}x{height}")
    if maxval != 255:
        raise ImageFormatError(f"{path}: unsupported maxval {maxval} (only 8-bit supported)")
    pos += 1  # single whitespace byte after maxval
    channels = 1 if magic == b"P5" else 3
    count = width * height * channels
    raw = buf[pos:pos + count]
    if len(raw) != count:
        raise ImageFormatError(f"{path}: expected {count} data bytes, found {len(raw)}")
    data = np.frombuffer(raw, dtype=np.uint8).reshape(height, width, channels)
    return data.astype(np.float64) / 255.0


def _write_pnm(img: np.ndarray, path: Path) -> None:
    h, w, c = img.shape
    magic = b"P5" if c == 1 else b"P6"
    header = magic + f"\n{w} {h}\n255\n".encode("ascii")
    path.write_bytes(header + _to_bytes(img).tobytes())


def load_image(path) -> np.ndarray:
    """Read an 8-bit PGM/PPM or PNG file into an (H, W, C) float image."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"no such image: {path}")
    if path.suffix.lower() in (".pgm", ".ppm", ".pnm"):
        return _read_pnm(path)
    from PIL import Image as PILImage, UnidentifiedImageError

    try:
        with PILImage.open(path) as im:
            if im.mode not in ("L", "RGB", "RGBA", "P", "1"):
                raise ImageFormatError(f"{path}: unsupported image mode {im.mode}")
            im = im.convert("L" if im.mode in ("L", "1") else "RGB")
            data = np.asarray(im, dtype=np.float64) / 255.0
    except (UnidentifiedImageError, OSError) as exc:
        raise ImageFormatError(f"{path}: cannot decode image ({exc})") from exc
    return as_image(data)


def save_image(img, path) -> None:
    """Write an image as 8-bit PGM/PPM (by extension) or PNG."""
    img = as_image(img)
    path = Path(path)
    suffix = path.suffix.lower()
    if suffix in (".pgm", ".ppm", ".pnm"):
        if suffix == ".pgm" and img.shape[2] != 1:
            raise ValueError("PGM output requires a single-channel image")
        if suffix == ".ppm" and img.shape[2] != 3:
            raise ValueError("PPM output requires an RGB image")
        _write_pnm(img, path)
    elif suffix == ".png":
        from PIL import Image as PILImage

        data = _to_bytes(img)
        # uint8 (H, W) maps to mode L and (H, W, 3) to RGB
        PILImage.fromarray(data[:, :, 0] if img.shape[2] == 1 else data).save(path)
    else:
        raise ValueError(f"unsupported image extension: {path.suffix}")


def load_mask(path) -> np.ndarray:
    img = load_image(path)
    if img.shape[2] != 1:
        raise ImageFormatError(f"{path}: mask files must be single-channel")
    return (img[:, :, 0] >= 0.5).astype(np.uint8)


def save_mask(mask, path) -> None:
    """Masks serialize as PGM with values {0, 255}."""
    save_image(mask_to_image(mask), os.fspath(path))
