"""Intuitionistic fuzzy twin SVM (linear) and the patch features it classifies.

Each class gets its own hyperplane, fitted to lie close to that class and at
unit distance from the other one. Slack on the opposite class is penalised in
proportion to the fuzzy score ``s = mu * (1 - nu)`` of the sample, so outliers
(far from their own centroid, surrounded by the other class) barely pull on
the planes.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy import ndimage

from .image_core import luma
from .seeding import make_rng

MARGIN_CAP = 1e12
FORMAT_VERSION = "iftsvm-model v1"


@dataclass
class FuzzySet:
    """Labelled samples with intuitionistic fuzzy degrees (mu + nu <= 1)."""

    X: np.ndarray
    y: np.ndarray
    mu: np.ndarray
    nu: np.ndarray

    @property
    def score(self) -> np.ndarray:
        return self.mu * (1.0 - self.nu)

    def __len__(self) -> int:
        return len(self.y)


@dataclass
class TwinModel:
    w_pos: np.ndarray
    b_pos: float
    w_neg: np.ndarray
    b_neg: float
    feature_mean: np.ndarray
    feature_scale: np.ndarray
    info: dict = field(default_factory=dict, compare=False, repr=False)

    @property
    def dim(self) -> int:
        return len(self.feature_mean)

    def check(self) -> None:
        """Reject models that cannot classify (zero or non-finite planes)."""
        for name in ("w_pos", "w_neg", "feature_mean", "feature_scale"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise ValueError(f"degenerate model: non-finite {name}")
        if not (np.isfinite(self.b_pos) and np.isfinite(self.b_neg)):
            raise ValueError("degenerate model: non-finite bias")
        if np.linalg.norm(self.w_pos) == 0 or np.linalg.norm(self.w_neg) == 0:
            raise ValueError("degenerate model: zero hyperplane normal")
        if np.any(self.feature_scale <= 0):
            raise ValueError("degenerate model: non-positive feature scale")


# --- fuzzy degrees --------------------------------------------------------

def assign_fuzzy_degrees(X, y, k_nn: int = 5, delta: float = 1e-6) -> FuzzySet:
    """Membership from distance to the class centroid, non-membership from the
    share of opposite-label points among the ``k_nn`` nearest neighbours."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y).astype(int)
    if X.ndim != 2 or len(X) != len(y):
        raise ValueError("X must be (n, d) with one label per row")
    if not set(np.unique(y)) <= {-1, 1}:
        raise ValueError("labels must be +1 / -1")
    if k_nn < 1:
        raise ValueError("k_nn must be >= 1")
    mu = np.empty(len(y))
    for label in (1, -1):
        idx = np.flatnonzero(y == label)
        if len(idx) < 2:
            raise ValueError(f"class {label:+d} needs at least 2 samples, got {len(idx)}")
        dist = np.linalg.norm(X[idx] - X[idx].mean(axis=0), axis=1)
        mu[idx] = 1.0 - dist / (dist.max() + delta)

    k = min(k_nn, len(y) - 1)
    d2 = ((X[:, None, :] - X[None, :, :]) ** 2).sum(axis=2)
    np.fill_diagonal(d2, np.inf)
    # stable sort keeps neighbour choice deterministic under distance ties
    nn = np.argsort(d2, axis=1, kind="stable")[:, :k]
    opposite = (y[nn] != y[:, None]).mean(axis=1)
    nu = opposite * (1.0 - mu)
    return FuzzySet(X=X, y=y, mu=mu, nu=nu)


# --- training -------------------------------------------------------------

def solve_box_qp(Q: np.ndarray, upper: np.ndarray, tol: float = 1e-8,
                 max_sweeps: int = 10_000) -> tuple[np.ndarray, int]:
    """Maximise ``sum(a) - a'Qa/2`` subject to ``0 <= a <= upper`` by cyclic
    projected coordinate ascent.

    Stops once a full sweep changes no coordinate by more than ``tol``.
    Returns the dual vector and the number of sweeps run.
    """
    n = len(upper)
    alpha = np.zeros(n)
    Qa = np.zeros(n)
    diag = np.diag(Q).copy()
    if np.any(diag <= 0):
        raise ValueError("dual Hessian has a non-positive diagonal")
    sweeps = 0
    for sweeps in range(1, max_sweeps + 1):
        biggest = 0.0
        for j in range(n):
            new = alpha[j] + (1.0 - Qa[j]) / diag[j]
            new = min(max(new, 0.0), upper[j])
            step = new - alpha[j]
            if step != 0.0:
                alpha[j] = new
                Qa += step * Q[:, j]
                biggest = max(biggest, abs(step))
        if biggest < tol:
            break
    return alpha, sweeps


def _plane(own: np.ndarray, other: np.ndarray, upper: np.ndarray, eps: float,
           sign: float, tol: float, max_sweeps: int):
    H = np.hstack([own, np.ones((len(own), 1))])
    G = np.hstack([other, np.ones((len(other), 1))])
    M = H.T @ H + eps * np.eye(H.shape[1])
    MinvGt = np.linalg.solve(M, G.T)
    Q = G @ MinvGt
    alpha, sweeps = solve_box_qp(Q, upper, tol=tol, max_sweeps=max_sweeps)
    u = sign * (MinvGt @ alpha)
    return u[:-1], float(u[-1]), alpha, sweeps


def train_iftsvm(samples: FuzzySet, c1: float = 1.0, c2: float = 1.0,
                 eps: float = 1e-6, tol: float = 1e-8,
                 max_sweeps: int = 10_000) -> TwinModel:
    """Fit the two fuzzy-weighted twin hyperplanes.

    Plane +1 minimises ``||A w + b||^2 / 2 + c1 * sum(s_j xi_j)`` subject to
    ``-(B w + b) + xi >= 1``, where A holds class +1 rows and B class -1 rows;
    plane -1 is the mirror problem with ``c2``. Both are solved through their
    box-constrained duals on standardised features.
    """
    if c1 <= 0 or c2 <= 0:
        raise ValueError("regularisation constants must be positive")
    X = np.asarray(samples.X, dtype=np.float64)
    y = np.asarray(samples.y).astype(int)
    s = np.asarray(samples.score, dtype=np.float64)
    if not (np.any(y == 1) and np.any(y == -1)):
        raise ValueError("both classes must be present")
    if np.all(X == X[0]):
        raise ValueError("degenerate training data: all feature vectors identical")
    mean = X.mean(axis=0)
    scale = X.std(axis=0)
    scale[scale == 0] = 1.0
    Z = (X - mean) / scale
    A, B = Z[y == 1], Z[y == -1]
    w1, b1, a1, n1 = _plane(A, B, c1 * s[y == -1], eps, -1.0, tol, max_sweeps)
    w2, b2, a2, n2 = _plane(B, A, c2 * s[y == 1], eps, 1.0, tol, max_sweeps)
    model = TwinModel(w1, b1, w2, b2, mean, scale)
    model.info = {
        "dual_pos": a1, "upper_pos": c1 * s[y == -1], "sweeps_pos": n1,
        "dual_neg": a2, "upper_neg": c2 * s[y == 1], "sweeps_neg": n2,
    }
    model.check()
    return model


# --- classification -------------------------------------------------------

def plane_distances(model: TwinModel, X) -> tuple[np.ndarray, np.ndarray]:
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if X.shape[1] != model.dim:
        raise ValueError(f"expected {model.dim} features, got {X.shape[1]}")
    Z = (X - model.feature_mean) / model.feature_scale
    d_pos = np.abs(Z @ model.w_pos + model.b_pos) / np.linalg.norm(model.w_pos)
    d_neg = np.abs(Z @ model.w_neg + model.b_neg) / np.linalg.norm(model.w_neg)
    return d_pos, d_neg


def classify_many(model: TwinModel, X) -> tuple[np.ndarray, np.ndarray]:
    """Vectorised :func:`classify`; returns (labels, margin ratios)."""
    d_pos, d_neg = plane_distances(model, X)
    labels = np.where(d_pos <= d_neg, 1, -1)
    near = np.minimum(d_pos, d_neg)
    far = np.maximum(d_pos, d_neg)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(near > 0, far / np.where(near > 0, near, 1.0),
                         np.where(far > 0, MARGIN_CAP, 1.0))
    return labels, np.minimum(ratio, MARGIN_CAP)


def classify(model: TwinModel, x) -> tuple[int, float]:
    """Label of the nearer plane (ties go to +1) and the far/near distance ratio."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError("classify takes a single feature vector")
    labels, ratio = classify_many(model, x[None, :])
    return int(labels[0]), float(ratio[0])


# --- persistence ----------------------------------------------------------

def _fmt(values) -> str:
    return " ".join(repr(float(v)) for v in np.ravel(values))


def save_model(model: TwinModel, path) -> None:
    lines = [
        FORMAT_VERSION,
        f"d {model.dim}",
        f"feature_mean {_fmt(model.feature_mean)}",
        f"feature_scale {_fmt(model.feature_scale)}",
        f"w_pos {_fmt(model.w_pos)}",
        f"b_pos {_fmt([model.b_pos])}",
        f"w_neg {_fmt(model.w_neg)}",
        f"b_neg {_fmt([model.b_neg])}",
    ]
    Path(path).write_text("\n".join(lines) + "\n")


def load_model(path) -> TwinModel:
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0].strip() != FORMAT_VERSION:
        raise ValueError(f"{path}: not an IFT-SVM model file")
    fields = {}
    for line in lines[1:]:
        if line.strip():
            key, *vals = line.split()
            fields[key] = np.array([float(v) for v in vals])
    try:
        d = int(fields["d"][0])
        model = TwinModel(fields["w_pos"], float(fields["b_pos"][0]),
                          fields["w_neg"], float(fields["b_neg"][0]),
                          fields["feature_mean"], fields["feature_scale"])
    except KeyError as exc:
        raise ValueError(f"{path}: missing field {exc}") from None
    if any(len(v) != d for v in (model.w_pos, model.w_neg, model.feature_mean, model.feature_scale)):
        raise ValueError(f"{path}: vector lengths disagree with d={d}")
    model.check()
    return model


# --- patch features -------------------------------------------------------

FEATURE_NAMES = ("mean", "variance", "gradient", "laplacian", "range")


def _window_features(windows: np.ndarray) -> np.ndarray:
    """Features of patches stacked on the last two axes."""
    mean = windows.mean(axis=(-2, -1))
    var = windows.var(axis=(-2, -1))
    gy, gx = np.gradient(windows, axis=(-2, -1))
    grad = np.hypot(gx, gy).mean(axis=(-2, -1))
    gyy = np.gradient(gy, axis=-2)
    gxx = np.gradient(gx, axis=-1)
    lap = np.abs(gxx + gyy).mean(axis=(-2, -1))
    rng = windows.max(axis=(-2, -1)) - windows.min(axis=(-2, -1))
    return np.stack([mean, var, grad, lap, rng], axis=-1)


def patch_features(img, center: tuple[int, int], patch_halfwidth: int) -> np.ndarray:
    """Five statistics of the luma patch around ``center`` (row, col).

    Gradients are finite differences taken inside the patch (central in the
    interior, one-sided on its rim); the Laplacian is the sum of the repeated
    first differences along each axis.
    """
    plane = luma(img)
    p = int(patch_halfwidth)
    if p < 1:
        raise ValueError("patch halfwidth must be >= 1")
    padded = np.pad(plane, p, mode="reflect")
    r, c = center
    if not (0 <= r < plane.shape[0] and 0 <= c < plane.shape[1]):
        raise ValueError(f"center {center} outside the image")
    patch = padded[r:r + 2 * p + 1, c:c + 2 * p + 1]
    return _window_features(patch)


def feature_map(img, patch_halfwidth: int) -> np.ndarray:
    """Patch features for every pixel, shape (H, W, 5)."""
    plane = luma(img)
    p = int(patch_halfwidth)
    padded = np.pad(plane, p, mode="reflect")
    windows = sliding_window_view(padded, (2 * p + 1, 2 * p + 1))
    return _window_features(windows)


def structure_labels(img, percentile: float = 90.0) -> np.ndarray:
    """+1 where the Sobel gradient magnitude of the luma exceeds the given
    percentile of the image, -1 elsewhere."""
    plane = luma(img)
    mag = np.hypot(ndimage.sobel(plane, axis=0, mode="mirror"),
                   ndimage.sobel(plane, axis=1, mode="mirror"))
    thr = np.percentile(mag, percentile)
    return np.where(mag > thr, 1, -1)


def train_patch_model(images, patch_halfwidth: int = 3, samples_per_class: int = 200,
                      seed: int = 0, k_nn: int = 7, c1: float = 1.0,
                      c2: float = 1.0) -> TwinModel:
    """Structure-vs-smooth patch classifier trained on clean images."""
    feats, labels = [], []
    for img in images:
        feats.append(feature_map(img, patch_halfwidth).reshape(-1, len(FEATURE_NAMES)))
        labels.append(structure_labels(img).ravel())
    F = np.concatenate(feats)
    L = np.concatenate(labels)
    rng = make_rng(seed)
    chosen = []
    for label in (1, -1):
        idx = np.flatnonzero(L == label)
        if len(idx) < 2:
            raise ValueError("training images contain too few structure or smooth pixels")
        take = min(samples_per_class, len(idx))
        chosen.append(np.sort(rng.choice(idx, size=take, replace=False)))
    idx = np.concatenate(chosen)
    X, y = F[idx], L[idx]
    scale = X.std(axis=0)
    scale[scale == 0] = 1.0
    fuzzy = assign_fuzzy_degrees((X - X.mean(axis=0)) / scale, y, k_nn=k_nn)
    fuzzy.X = X
    return train_iftsvm(fuzzy, c1=c1, c2=c2)
