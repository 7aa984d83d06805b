"""Seeded corruption models: Gaussian blur, salt-and-pepper and additive
Gaussian noise.

Intensities live in [0, 1]; the Gaussian noise level is given on the familiar
0-255 scale and rescaled by 1/255 internally.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .image_core import as_image, clip_intensity
from .seeding import make_rng

KINDS = ("blur", "sp", "gauss")


@dataclass(frozen=True)
class NoiseSpec:
    """One corruption. Only the fields relevant to ``kind`` are used."""

    kind: str
    sigma_blur: float = 0.0
    k: int | None = None
    p: float = 0.0
    sigma_noise: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown noise kind {self.kind!r}; expected one of {KINDS}")
        if self.kind == "blur":
            if not self.sigma_blur > 0:
                raise ValueError("blur requires sigma > 0")
            if self.k is not None and self.k < 1:
                raise ValueError("blur requires kernel halfwidth k >= 1")
        elif self.kind == "sp":
            if not 0.0 <= self.p <= 1.0:
                raise ValueError(f"salt-and-pepper density must lie in [0, 1], got {self.p}")
        elif self.sigma_noise < 0:
            raise ValueError("Gaussian noise sigma must be >= 0")

    @property
    def halfwidth(self) -> int:
        """Kernel halfwidth; ceil(3 sigma) unless given explicitly."""
        if self.k is not None:
            return int(self.k)
        return max(1, math.ceil(3.0 * self.sigma_blur))

    def with_seed(self, seed: int) -> "NoiseSpec":
        return NoiseSpec(self.kind, self.sigma_blur, self.k, self.p, self.sigma_noise, int(seed))

    @property
    def label(self) -> str:
        """Short condition name without the seed, e.g. ``blur:sigma=3,k=9``."""
        if self.kind == "blur":
            return f"blur:sigma={self.sigma_blur:g},k={self.halfwidth}"
        if self.kind == "sp":
            return f"sp:p={self.p:g}"
        return f"gauss:sigma={self.sigma_noise:g}"

    def __str__(self) -> str:
        return f"{self.label},seed={self.seed}"

    @classmethod
    def parse(cls, text: str, default_seed: int = 0) -> "NoiseSpec":
        """Parse ``blur:sigma=3,k=9``, ``sp:p=0.1`` or ``gauss:sigma=25``,
        each optionally followed by ``,seed=N``."""
        kind, _, rest = text.strip().partition(":")
        kind = kind.strip().lower()
        params = {}
        for item in filter(None, (s.strip() for s in rest.split(","))):
            key, eq, value = item.partition("=")
            if not eq:
                raise ValueError(f"malformed noise parameter {item!r} in {text!r}")
            params[key.strip().lower()] = value.strip()
        seed = int(params.pop("seed", default_seed))
        allowed = {"blur": {"sigma", "k"}, "sp": {"p"}, "gauss": {"sigma"}}
        if kind not in allowed:
            raise ValueError(f"unknown noise kind {kind!r} in {text!r}")
        extra = set(params) - allowed[kind]
        if extra:
            raise ValueError(f"unexpected parameters {sorted(extra)} for {kind}")
        if kind == "blur":
            if "sigma" not in params:
                raise ValueError("blur requires sigma=")
            k = int(params["k"]) if "k" in params else None
            return cls("blur", sigma_blur=float(params["sigma"]), k=k, seed=seed)
        if kind == "sp":
            if "p" not in params:
                raise ValueError("sp requires p=")
            return cls("sp", p=float(params["p"]), seed=seed)
        if "sigma" not in params:
            raise ValueError("gauss requires sigma=")
        return cls("gauss", sigma_noise=float(params["sigma"]), seed=seed)


def gaussian_kernel(sigma: float, k: int) -> np.ndarray:
    """(2k+1) x (2k+1) Gaussian weights renormalised to sum to one."""
    if not sigma > 0:
        raise ValueError("sigma must be > 0")
    if k < 0:
        raise ValueError("k must be >= 0")
    r = np.arange(-k, k + 1, dtype=np.float64)
    ii, jj = np.meshgrid(r, r, indexing="ij")
    w = np.exp(-(ii ** 2 + jj ** 2) / (2.0 * sigma ** 2))
    return w / w.sum()


def convolve(img: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """Per-channel 2-D convolution with reflect-101 borders."""
    img = as_image(img)
    out = np.empty_like(img)
    for c in range(img.shape[2]):
        # scipy's "mirror" mode is reflect-101 (edge pixel not repeated)
        out[:, :, c] = ndimage.convolve(img[:, :, c], kernel, mode="mirror")
    return out


def apply_blur(img, spec: NoiseSpec) -> np.ndarray:
    if spec.kind != "blur":
        raise ValueError("apply_blur needs a blur spec")
    kernel = gaussian_kernel(spec.sigma_blur, spec.halfwidth)
    return clip_intensity(convolve(img, kernel))


def salt_pepper_draws(shape: tuple[int, int], seed: int) -> np.ndarray:
    """The per-pixel uniform draws used by :func:`add_salt_pepper`."""
    return make_rng(seed).random(shape)


def add_salt_pepper(img, spec: NoiseSpec) -> np.ndarray:
    if spec.kind != "sp":
        raise ValueError("add_salt_pepper needs an sp spec")
    img = as_image(img)
    u = salt_pepper_draws(img.shape[:2], spec.seed)
    out = img.copy()
    out[u < spec.p / 2.0] = 0.0
    out[(u >= spec.p / 2.0) & (u < spec.p)] = 1.0
    return out


def add_gaussian_noise(img, spec: NoiseSpec) -> np.ndarray:
    if spec.kind != "gauss":
        raise ValueError("add_gaussian_noise needs a gauss spec")
    img = as_image(img)
    if spec.sigma_noise == 0:
        return img.copy()
    noise = make_rng(spec.seed).normal(0.0, spec.sigma_noise / 255.0, size=img.shape)
    return clip_intensity(img + noise)


def corrupt(img, spec: NoiseSpec) -> np.ndarray:
    """Dispatch on ``spec.kind``."""
    if spec.kind == "blur":
        return apply_blur(img, spec)
    if spec.kind == "sp":
        return add_salt_pepper(img, spec)
    return add_gaussian_noise(img, spec)
