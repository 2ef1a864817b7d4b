"""Image-quality metrics: PSNR, SSIM and Fréchet distance of feature statistics.

Metric inputs live in [0, 1]; remap model-space images with
:func:`bmapdiff.core.to_unit` first.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .core import DimensionError, ParameterError

PSNR_CAP = 99.0

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03

EMBED_GRID = 8


def _same_shape(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionError(f"shape mismatch: {a.shape} vs {b.shape}")
    return a, b


def psnr(a, b, max_value: float = 1.0) -> float:
    """Peak signal-to-noise ratio in dB, capped at 99 dB for identical images."""
    a, b = _same_shape(a, b)
    if max_value <= 0:
        raise ParameterError("max_value must be positive")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return PSNR_CAP
    return min(10.0 * math.log10(max_value**2 / mse), PSNR_CAP)


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    x = np.arange(size, dtype=np.float64) - (size - 1) / 2
    g = np.exp(-(x**2) / (2 * sigma**2))
    return g / g.sum()


def _filter_valid(img, g):
    # separable correlation over valid positions only
    rows = sliding_window_view(img, g.size, axis=0) @ g
    return sliding_window_view(rows, g.size, axis=1) @ g


def ssim(a, b) -> float:
    """Single-scale SSIM with an 11x11 Gaussian window (sigma 1.5), data range 1.

    Averaged over window positions that fit entirely inside the image.
    """
    a, b = _same_shape(a, b)
    if a.ndim != 2:
        raise DimensionError("ssim expects 2-D grids")
    if min(a.shape) < SSIM_WINDOW:
        raise DimensionError(f"image {a.shape} smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window")
    g = gaussian_window()
    c1 = SSIM_K1**2
    c2 = SSIM_K2**2
    mu_a = _filter_valid(a, g)
    mu_b = _filter_valid(b, g)
    var_a = _filter_valid(a * a, g) - mu_a * mu_a
    var_b = _filter_valid(b * b, g) - mu_b * mu_b
    cov = _filter_valid(a * b, g) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))


@dataclass(frozen=True)
class FeatureStats:
    mean: np.ndarray
    cov: np.ndarray
    n: int

    @property
    def dim(self) -> int:
        return self.mean.size


def feature_stats(features) -> FeatureStats:
    """Sample mean and unbiased covariance of an ``(n, dim)`` feature matrix."""
    f = np.asarray(features, dtype=np.float64)
    if f.ndim != 2:
        raise DimensionError("features must be an (n, dim) matrix")
    if f.shape[0] < 2:
        raise ValueError("need at least two samples for a covariance")
    mean = f.mean(axis=0)
    dev = f - mean
    cov = dev.T @ dev / (f.shape[0] - 1)
    return FeatureStats(mean, 0.5 * (cov + cov.T), f.shape[0])


def block_means(img, grid: int = EMBED_GRID) -> np.ndarray:
    """Downsample to ``grid x grid`` by averaging (near-)equal blocks."""
    img = np.asarray(img, dtype=np.float64)
    h, w = img.shape
    if h < grid or w < grid:
        raise DimensionError(f"image {img.shape} smaller than the {grid}x{grid} embedding grid")
    re = np.arange(grid) * h // grid
    ce = np.arange(grid) * w // grid
    sums = np.add.reduceat(np.add.reduceat(img, re, axis=0), ce, axis=1)
    counts = np.outer(np.diff(np.append(re, h)), np.diff(np.append(ce, w)))
    return sums / counts


def pixel_stat_features(images) -> np.ndarray:
    return np.stack([block_means(im).ravel() for im in images])


def feature_embed(images, embedder: str = "pixel-stat", features_path=None) -> FeatureStats:
    """Gaussian statistics of an image set's embedding.

    ``pixel-stat`` flattens 8x8 block means (dim 64). ``external-file``
    reads an ``(n_images, dim)`` tensor file exported by any feature
    extractor, e.g. the pooling layers of a pretrained classifier.
    """
    if len(images) < 2:
        raise ValueError("need at least two images")
    if embedder == "pixel-stat":
        return feature_stats(pixel_stat_features(images))
    if embedder == "external-file":
        from .io import read_tensor

        f = read_tensor(features_path).astype(np.float64)
        if f.ndim != 2 or f.shape[0] != len(images):
            raise DimensionError(f"feature file has shape {f.shape}, expected ({len(images)}, dim)")
        return feature_stats(f)
    raise ParameterError(f"unknown embedder {embedder!r}")


def jacobi_eigh(m, tol: float = 1e-12, max_sweeps: int = 100) -> tuple[np.ndarray, np.ndarray]:
    """Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.

    Sweeps stop once the off-diagonal Frobenius norm drops below ``tol``
    times the matrix norm. Returns ``(eigenvalues, eigenvectors)`` with
    eigenvectors in the columns.
    """
    a = np.array(m, dtype=np.float64)
    n = a.shape[0]
    v = np.eye(n)
    scale = max(np.linalg.norm(a), np.finfo(float).tiny)
    off_diag = ~np.eye(n, dtype=bool)
    for _ in range(max_sweeps):
        # summing the off-diagonal entries directly; subtracting the diagonal
        # from the full norm cancels down to ~1e-8 relative and never converges
        off = float(np.linalg.norm(a[off_diag]))
        if off <= tol * scale:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if apq == 0.0:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                if abs(theta) > 1e150:
                    t = 0.5 / theta
                else:
                    t = math.copysign(1.0, theta) / (abs(theta) + math.sqrt(theta * theta + 1.0))
                c = 1.0 / math.sqrt(t * t + 1.0)
                s = t * c
                cp, cq = a[:, p].copy(), a[:, q]
                a[:, p] = c * cp - s * cq
                a[:, q] = s * cp + c * cq
                rp, rq = a[p, :].copy(), a[q, :]
                a[p, :] = c * rp - s * rq
                a[q, :] = s * rp + c * rq
                a[p, q] = a[q, p] = 0.0
                vp, vq = v[:, p].copy(), v[:, q]
                v[:, p] = c * vp - s * vq
                v[:, q] = s * vp + c * vq
    else:
        raise ArithmeticError("Jacobi iteration did not converge")
    return np.diag(a).copy(), v


def _psd_eig(m):
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise DimensionError(f"expected a square matrix, got {m.shape}")
    scale = max(1.0, float(np.abs(m).max(initial=0.0)))
    if np.abs(m - m.T).max(initial=0.0) > 1e-8 * scale:
        raise ParameterError("matrix is not symmetric")
    lam, q = jacobi_eigh(0.5 * (m + m.T))
    if lam.min(initial=0.0) < -1e-8 * scale:
        raise ParameterError(f"matrix is not positive semi-definite (eigenvalue {lam.min():.3g})")
    return np.clip(lam, 0.0, None), q


def matrix_sqrt_psd(m) -> np.ndarray:
    """Symmetric PSD square root ``Q sqrt(L) Q^T``."""
    lam, q = _psd_eig(m)
    root = (q * np.sqrt(lam)) @ q.T
    return 0.5 * (root + root.T)


def frechet_distance(s1: FeatureStats, s2: FeatureStats) -> float:
    """Squared Fréchet distance between two Gaussians (the FID convention).

    ``|mu1 - mu2|^2 + tr(S1) + tr(S2) - 2 tr((S1^1/2 S2 S1^1/2)^1/2)``,
    clipped at zero.
    """
    if s1.dim != s2.dim:
        raise DimensionError(f"feature dims differ: {s1.dim} vs {s2.dim}")
    root1 = matrix_sqrt_psd(s1.cov)
    inner = root1 @ s2.cov @ root1
    lam, _ = _psd_eig(0.5 * (inner + inner.T))
    diff = s1.mean - s2.mean
    d2 = float(diff @ diff + np.trace(s1.cov) + np.trace(s2.cov) - 2.0 * np.sqrt(lam).sum())
    return max(d2, 0.0)
