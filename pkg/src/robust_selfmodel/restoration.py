"""Restoration filters matched to each corruption: Wiener deconvolution for
blur, median filtering for impulse noise, non-local means (optionally steered
by a twin-SVM patch classifier) for Gaussian noise.

Every filter runs per channel and returns an image clipped to [0, 1].
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .ift_svm import TwinModel, classify_many, feature_map
from .image_core import as_image, clip_intensity


# --- frequency domain -----------------------------------------------------

def fft2(img) -> np.ndarray:
    """Unnormalised forward 2-D DFT of a single-channel image."""
    arr = np.asarray(img, dtype=np.float64)
    if arr.ndim == 3:
        if arr.shape[2] != 1:
            raise ValueError("fft2 takes a single-channel image")
        arr = arr[:, :, 0]
    return np.fft.fft2(arr)


def ifft2(spectrum) -> np.ndarray:
    """Inverse of :func:`fft2` (1/HW normalisation); returns the real part as
    an (H, W, 1) array. No clipping is applied."""
    return np.real(np.fft.ifft2(np.asarray(spectrum)))[:, :, None]


def embed_kernel(kernel: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    """Place a centred (2k+1)^2 kernel into an array of ``shape`` with its
    centre at the origin, wrapping negative offsets (circular convention)."""
    kernel = np.asarray(kernel, dtype=np.float64)
    kh, kw = kernel.shape
    h, w = shape
    if kh > h or kw > w:
        raise ValueError(f"kernel {kernel.shape} larger than image {shape}")
    psf = np.zeros(shape)
    psf[:kh, :kw] = kernel
    return np.roll(psf, (-(kh // 2), -(kw // 2)), axis=(0, 1))


def transfer_function(kernel: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    return np.fft.fft2(embed_kernel(kernel, shape))


def circular_blur(img, kernel: np.ndarray) -> np.ndarray:
    """Blur with periodic borders; the forward model Wiener inverts exactly."""
    img = as_image(img)
    H = transfer_function(kernel, img.shape[:2])
    out = np.empty_like(img)
    for c in range(img.shape[2]):
        out[:, :, c] = np.real(np.fft.ifft2(np.fft.fft2(img[:, :, c]) * H))
    return clip_intensity(out)


@dataclass(frozen=True)
class WienerConfig:
    kernel: np.ndarray
    nsr: float = 1e-3

    def __post_init__(self):
        if self.nsr < 0:
            raise ValueError("nsr must be >= 0")
        k = np.asarray(self.kernel)
        if k.ndim != 2 or k.shape[0] % 2 == 0 or k.shape[1] % 2 == 0:
            raise ValueError("kernel must be a 2-D array with odd side lengths")


def wiener_deblur(img, cfg: WienerConfig) -> np.ndarray:
    """Frequency-domain Wiener filter with a scalar noise-to-signal ratio:
    ``conj(H) / (|H|^2 + nsr) * I``."""
    img = as_image(img)
    kernel = np.asarray(cfg.kernel, dtype=np.float64)
    kernel = kernel / kernel.sum()
    H = transfer_function(kernel, img.shape[:2])
    power = np.abs(H) ** 2
    if cfg.nsr == 0 and np.any(np.abs(H) < 1e-12):
        raise ValueError("ill-posed inverse: transfer function vanishes and nsr = 0")
    gain = np.conj(H) / (power + cfg.nsr)
    out = np.empty_like(img)
    for c in range(img.shape[2]):
        out[:, :, c] = np.real(np.fft.ifft2(np.fft.fft2(img[:, :, c]) * gain))
    return clip_intensity(out)


# --- median ---------------------------------------------------------------

def median_filter(img, k: int = 1) -> np.ndarray:
    """Exact median over the (2k+1)^2 reflect-101 neighbourhood, per channel."""
    if k < 1:
        raise ValueError("median window halfwidth must be >= 1")
    img = as_image(img)
    out = np.empty_like(img)
    for c in range(img.shape[2]):
        out[:, :, c] = ndimage.median_filter(img[:, :, c], size=2 * k + 1, mode="mirror")
    return out


# --- non-local means ------------------------------------------------------

@dataclass(frozen=True)
class NlmConfig:
    """``h`` is on the [0, 1] intensity scale; patch distances are mean
    squared differences, so ``h`` does not depend on the patch size."""

    h: float = 0.04
    patch_halfwidth: int = 3
    window_halfwidth: int = 10

    def __post_init__(self):
        if not self.h > 0:
            raise ValueError("h must be > 0")
        if self.patch_halfwidth < 1:
            raise ValueError("patch halfwidth must be >= 1")
        if self.window_halfwidth < self.patch_halfwidth:
            raise ValueError("window halfwidth must be >= patch halfwidth")

    @classmethod
    def for_noise(cls, sigma_255: float, **kw) -> "NlmConfig":
        """Default ``h``: 0.04 per 10/255 of noise standard deviation."""
        return cls(h=max(0.04 * sigma_255 / 10.0, 1e-3), **kw)


def _offsets(w: int):
    for di in range(-w, w + 1):
        for dj in range(-w, w + 1):
            yield di, dj


def _nlm_channel(plane: np.ndarray, inv_h2: np.ndarray, p: int, w: int):
    """Weighted average of one channel; ``inv_h2`` is a per-pixel 1/h^2 map.

    Returns the filtered plane and the normaliser Z for every pixel.
    """
    h, wd = plane.shape
    pad = p + w
    padded = np.pad(plane, pad, mode="reflect")
    core = padded[w:w + h + 2 * p, w:w + wd + 2 * p]
    acc = np.zeros_like(plane)
    z = np.zeros_like(plane)
    size = 2 * p + 1
    for di, dj in _offsets(w):
        shifted = padded[w + di:w + di + h + 2 * p, w + dj:w + dj + wd + 2 * p]
        diff2 = (core - shifted) ** 2
        # mean over the patch; "constant" is safe because the padding already covers it
        dist = ndimage.uniform_filter(diff2, size=size, mode="constant")[p:p + h, p:p + wd]
        weight = np.exp(-dist * inv_h2)
        acc += weight * shifted[p:p + h, p:p + wd]
        z += weight
    return acc / z, z


def _nlm(img: np.ndarray, h_map: np.ndarray, cfg: NlmConfig) -> np.ndarray:
    inv_h2 = 1.0 / (h_map ** 2)
    out = np.empty_like(img)
    for c in range(img.shape[2]):
        out[:, :, c], _ = _nlm_channel(img[:, :, c], inv_h2, cfg.patch_halfwidth,
                                       cfg.window_halfwidth)
    return clip_intensity(out)


def nlm_denoise(img, cfg: NlmConfig = NlmConfig()) -> np.ndarray:
    """Non-local means: each pixel becomes the average of its search window,
    weighted by ``exp(-d^2 / h^2)`` of the patch distance ``d^2``."""
    img = as_image(img)
    return _nlm(img, np.full(img.shape[:2], cfg.h), cfg)


def nlm_weights(img, cfg: NlmConfig, row: int, col: int, channel: int = 0) -> np.ndarray:
    """Normalised weights over the search window of one pixel, shaped
    (2w+1, 2w+1) with the pixel itself at the centre. Slow; for inspection."""
    img = as_image(img)
    p, w = cfg.patch_halfwidth, cfg.window_halfwidth
    padded = np.pad(img[:, :, channel], p + w, mode="reflect")
    r, c = row + p + w, col + p + w
    ref = padded[r - p:r + p + 1, c - p:c + p + 1]
    out = np.empty((2 * w + 1, 2 * w + 1))
    for di, dj in _offsets(w):
        cand = padded[r + di - p:r + di + p + 1, c + dj - p:c + dj + p + 1]
        out[di + w, dj + w] = np.exp(-np.mean((ref - cand) ** 2) / cfg.h ** 2)
    return out / out.sum()


def nlm_weight_sums(img, cfg: NlmConfig) -> np.ndarray:
    """Per-pixel sum of normalised NLM weights, accumulated in the same order
    as the filter itself. Should be 1 everywhere."""
    img = as_image(img)
    p, w = cfg.patch_halfwidth, cfg.window_halfwidth
    plane = img[:, :, 0]
    inv_h2 = np.full(plane.shape, 1.0 / cfg.h ** 2)
    _, z = _nlm_channel(plane, inv_h2, p, w)
    h, wd = plane.shape
    padded = np.pad(plane, p + w, mode="reflect")
    core = padded[w:w + h + 2 * p, w:w + wd + 2 * p]
    total = np.zeros_like(plane)
    for di, dj in _offsets(w):
        shifted = padded[w + di:w + di + h + 2 * p, w + dj:w + dj + wd + 2 * p]
        dist = ndimage.uniform_filter((core - shifted) ** 2, size=2 * p + 1,
                                      mode="constant")[p:p + h, p:p + wd]
        total += np.exp(-dist * inv_h2) / z
    return total


@dataclass(frozen=True)
class RefineConfig:
    """Bandwidth multipliers for patches classed as structure / smooth."""

    alpha_edge: float = 0.6
    alpha_smooth: float = 1.4

    def __post_init__(self):
        if not (0 < self.alpha_edge <= 1 <= self.alpha_smooth):
            raise ValueError("need 0 < alpha_edge <= 1 <= alpha_smooth")


def structure_map(img, cfg: NlmConfig, model: TwinModel) -> np.ndarray:
    """Boolean map of pixels whose patch the model labels as structure.

    Features come from a plain NLM pass, so the classifier sees patches with
    most of the noise already removed.
    """
    model.check()
    prefiltered = nlm_denoise(img, cfg)
    feats = feature_map(prefiltered, cfg.patch_halfwidth)
    h, w, d = feats.shape
    if d != model.dim:
        raise ValueError(f"model expects {model.dim} features, patch features have {d}")
    labels, _ = classify_many(model, feats.reshape(-1, d))
    return labels.reshape(h, w) == 1


def nlm_iftsvm_denoise(img, cfg: NlmConfig, model: TwinModel,
                       refine: RefineConfig = RefineConfig()) -> np.ndarray:
    """NLM with a per-pixel bandwidth: ``h * alpha_edge`` where the pixel's
    patch is classed as structure, ``h * alpha_smooth`` elsewhere."""
    img = as_image(img)
    model.check()
    if refine.alpha_edge == 1 and refine.alpha_smooth == 1:
        return nlm_denoise(img, cfg)
    edges = structure_map(img, cfg, model)
    h_map = np.where(edges, cfg.h * refine.alpha_edge, cfg.h * refine.alpha_smooth)
    return _nlm(img, h_map, cfg)
