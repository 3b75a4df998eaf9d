"""Sample-quality metrics: Laplace sharpness and Frechet distance of Gaussian fits."""

from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError

METRIC_COLUMNS = ["run_id", "epoch", "recon_train", "recon_test", "penalty",
                  "sharpness_samples", "fd_features", "wall_clock_s"]

EIG_FLOOR = 1e-8


def as_images(batch, image_shape=None) -> np.ndarray:
    """Coerce to ``count x H x W`` grayscale (channels averaged)."""
    x = np.asarray(batch, dtype=np.float64)
    if x.ndim == 2:
        if image_shape is None:
            side = int(round(math.sqrt(x.shape[1])))
            if side * side != x.shape[1]:
                raise ConfigError(f"cannot infer a square image from {x.shape[1]} values")
            image_shape = (side, side)
        x = x.reshape(len(x), *image_shape)
    if x.ndim == 4:
        x = x.mean(axis=-1)
    if x.ndim != 3:
        raise ConfigError(f"expected count x H x W (x C) images, got shape {x.shape}")
    return x


def laplace(images: np.ndarray) -> np.ndarray:
    """Valid-region convolution with [[0,1,0],[1,-4,1],[0,1,0]]."""
    return (images[:, :-2, 1:-1] + images[:, 2:, 1:-1] + images[:, 1:-1, :-2] + images[:, 1:-1, 2:]
            - 4.0 * images[:, 1:-1, 1:-1])


def sharpness(batch, image_shape=None) -> float:
    """Mean over images of the variance of Laplace-filtered activations."""
    images = as_images(batch, image_shape)
    if images.shape[1] < 3 or images.shape[2] < 3:
        raise ConfigError(f"images of size {images.shape[1:]} are smaller than the 3x3 filter")
    if len(images) == 0:
        raise ConfigError("empty image batch")
    per_image = laplace(images).reshape(len(images), -1).var(axis=1)
    return math.fsum(per_image) / len(per_image)


def box_blur(batch, image_shape=None) -> np.ndarray:
    """2x2 box average (valid region), the blur used by the ordinal check."""
    images = as_images(batch, image_shape)
    return 0.25 * (images[:, :-1, :-1] + images[:, 1:, :-1] + images[:, :-1, 1:] + images[:, 1:, 1:])


@dataclass
class GaussianFit:
    mean: np.ndarray
    covariance: np.ndarray

    def __post_init__(self):
        self.mean = np.atleast_1d(np.asarray(self.mean, dtype=np.float64))
        cov = np.atleast_2d(np.asarray(self.covariance, dtype=np.float64))
        if cov.shape != (len(self.mean), len(self.mean)):
            raise ConfigError(f"covariance {cov.shape} does not match mean of length {len(self.mean)}")
        if np.max(np.abs(cov - cov.T), initial=0.0) > 1e-10:
            raise ConfigError("covariance is not symmetric")
        self.covariance = 0.5 * (cov + cov.T)


def fit_gaussian(features) -> GaussianFit:
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2 or len(x) < 2:
        raise ConfigError(f"need at least two feature rows, got shape {x.shape}")
    cov = np.cov(x, rowvar=False, ddof=1).reshape(x.shape[1], x.shape[1])
    return GaussianFit(x.mean(axis=0), 0.5 * (cov + cov.T))


def _psd_sqrt(mat: np.ndarray) -> np.ndarray:
    w, v = np.linalg.eigh(0.5 * (mat + mat.T))
    w = np.where(w < EIG_FLOOR, np.maximum(w, 0.0), w)
    return (v * np.sqrt(w)) @ v.T


def frechet_distance(a: GaussianFit, b: GaussianFit) -> float:
    """|mu_a - mu_b|^2 + Tr(S_a + S_b - 2 (S_a S_b)^{1/2}).

    The trace of (S_a S_b)^{1/2} is taken from the symmetric similar matrix
    S_a^{1/2} S_b S_a^{1/2}, which shares its eigenvalues with S_a S_b.
    """
    if a.mean.shape != b.mean.shape:
        raise ConfigError(f"dimension mismatch: {a.mean.shape} vs {b.mean.shape}")
    root_a = _psd_sqrt(a.covariance)
    inner = root_a @ b.covariance @ root_a
    w = np.linalg.eigvalsh(0.5 * (inner + inner.T))
    w = np.clip(w, 0.0, None)
    diff = a.mean - b.mean
    value = float(diff @ diff + np.trace(a.covariance) + np.trace(b.covariance) - 2.0 * np.sum(np.sqrt(w)))
    return max(value, 0.0)


def feature_map(batch, kind: str = "pooled_pixels", image_shape=None) -> np.ndarray:
    """``raw_pixels`` flattens; ``pooled_pixels`` averages 4x4 blocks.

    Images whose sides are not multiples of 4 are reflection-padded first.
    """
    if kind == "raw_pixels":
        x = np.asarray(batch, dtype=np.float64)
        return x.reshape(len(x), -1)
    if kind != "pooled_pixels":
        raise ConfigError(f"unknown feature map {kind!r}; valid: ['pooled_pixels', 'raw_pixels']")
    images = as_images(batch, image_shape)
    _, h, w = images.shape
    ph, pw = (-h) % 4, (-w) % 4
    if ph or pw:
        images = np.pad(images, ((0, 0), (0, ph), (0, pw)), mode="reflect" if min(h, w) > 1 else "edge")
    c, h, w = images.shape
    pooled = images.reshape(c, h // 4, 4, w // 4, 4).mean(axis=(2, 4))
    return pooled.reshape(c, -1)


def fd_features(generated, reference, kind: str = "pooled_pixels", image_shape=None) -> float:
    return frechet_distance(fit_gaussian(feature_map(generated, kind, image_shape)),
                            fit_gaussian(feature_map(reference, kind, image_shape)))


def mean_squared_cost(x, x_hat) -> float:
    """Mean over rows of the per-example squared Euclidean distance."""
    d = np.asarray(x, dtype=np.float64) - np.asarray(x_hat, dtype=np.float64)
    return float(np.mean(np.sum(d * d, axis=1)))


def _cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def append_metrics(path, row: dict) -> None:
    """Append one row to a metrics CSV, writing the header on first use."""
    unknown = set(row) - set(METRIC_COLUMNS)
    if unknown:
        raise ConfigError(f"unknown metric columns {sorted(unknown)}")
    new = not os.path.exists(path) or os.path.getsize(path) == 0
    with open(path, "a", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        if new:
            writer.writerow(METRIC_COLUMNS)
        writer.writerow([_cell(row.get(col)) for col in METRIC_COLUMNS])


def read_metrics(path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))
