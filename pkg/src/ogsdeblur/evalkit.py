"""Benchmark metrics and seeded synthetic data.

The quality protocol: restore the observation twice, once with the estimated
kernel and once with the ground-truth kernel, and report the ratio of their
squared errors against the sharp image. A ratio of 1 means the estimated
kernel restores as well as the truth.

All randomness goes through numpy's counter-based Philox generator so
observations are bit-reproducible across platforms for a given seed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .ops import check_image, check_kernel, conv2_same

RNG_IDENTITY = "numpy.random.Philox(4x64-10)"

RATIO_FLOOR = 1e-20


@dataclass
class EvalRecord:
    image_id: str
    kernel_id: str
    ssd: float
    ssd_ratio: float
    kernel_similarity: float


def ssd(a, b, crop_border: int = 0) -> float:
    """Sum of squared differences over the interior after cropping the border."""
    a = check_image(a)
    b = check_image(b)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    if crop_border < 0:
        raise ValueError("crop_border must be non-negative")
    if 2 * crop_border >= min(a.shape):
        raise ValueError(f"crop {crop_border} leaves no interior for {a.shape}")
    sl = slice(crop_border, -crop_border) if crop_border else slice(None)
    d = a[sl, sl] - b[sl, sl]
    return float(np.sum(d * d))


def ssd_ratio(x_blind, x_gt_kernel, x_truth, crop_border: int = 0) -> float:
    """SSD of the blind restoration over SSD of the known-kernel restoration."""
    num = ssd(x_blind, x_truth, crop_border)
    den = ssd(x_gt_kernel, x_truth, crop_border)
    return num / max(den, RATIO_FLOOR)


def cumulative_histogram(ratios, bin_edges):
    """Fraction of ratios at or below each edge."""
    ratios = np.asarray(ratios, dtype=np.float64)
    edges = np.asarray(bin_edges, dtype=np.float64)
    if ratios.size == 0:
        raise ValueError("no ratios to histogram")
    if edges.size == 0 or np.any(np.diff(edges) <= 0):
        raise ValueError("bin edges must be non-empty and increasing")
    return [float(np.mean(ratios <= e)) for e in edges]


def psnr(a, b, peak: float = 1.0) -> float:
    """Peak signal-to-noise ratio in dB."""
    a = check_image(a)
    b = check_image(b)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0:
        return float("inf")
    return 10.0 * np.log10(peak * peak / mse)


def synth_blur(x, h, noise_sigma: float = 0.0, seed: int = 0, mode: str = "circular") -> np.ndarray:
    """Blur an image and add seeded i.i.d. Gaussian noise."""
    if noise_sigma < 0:
        raise ValueError("noise_sigma must be non-negative")
    y = conv2_same(x, h, mode)
    if noise_sigma > 0:
        rng = np.random.Generator(np.random.Philox(seed))
        y = y + noise_sigma * rng.standard_normal(y.shape)
    return y


def kernel_similarity(h_est, h_true) -> float:
    """Best normalized cross-correlation over all circular shifts, in [-1, 1].

    Kernels of different sizes are zero-padded to the larger support with
    centers aligned, so the score is invariant to the translation ambiguity
    of blind estimation.
    """
    h_est = check_kernel(h_est)
    h_true = check_kernel(h_true)
    k = max(h_est.shape[0], h_est.shape[1], h_true.shape[0], h_true.shape[1])

    def embed(h):
        out = np.zeros((k, k))
        r0 = (k - h.shape[0]) // 2
        c0 = (k - h.shape[1]) // 2
        out[r0 : r0 + h.shape[0], c0 : c0 + h.shape[1]] = h
        return out

    a, b = embed(h_est), embed(h_true)
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        raise ValueError("kernel_similarity is undefined for an all-zero kernel")
    xc = np.fft.ifft2(np.fft.fft2(a) * np.conj(np.fft.fft2(b))).real
    return float(xc.max() / (na * nb))


# ---------------------------------------------------------------------------
# built-in synthetic images and kernels
# ---------------------------------------------------------------------------

BUILTIN_IMAGES = ("blocks", "disks", "stripes", "mosaic")
BUILTIN_KERNELS = ("motion-diag", "disk", "gauss")


def _rng(tag: str, seed: int):
    mix = np.frombuffer(tag.encode(), dtype=np.uint8).sum()
    return np.random.Generator(np.random.Philox(key=seed * 7919 + int(mix)))


def builtin_image(name: str, size: int = 64, seed: int = 0) -> np.ndarray:
    """Deterministic piecewise-constant test image with values in [0, 1]."""
    if name not in BUILTIN_IMAGES:
        raise ValueError(f"unknown builtin image {name!r}; choose from {BUILTIN_IMAGES}")
    rng = _rng(name, seed)
    img = np.full((size, size), 0.45)
    ii, jj = np.mgrid[0:size, 0:size]
    if name == "blocks":
        for _ in range(12):
            r0, c0 = rng.integers(0, size - 6, size=2)
            rh, cw = rng.integers(5, size // 2, size=2)
            img[r0 : min(size, r0 + rh), c0 : min(size, c0 + cw)] = rng.uniform(0.05, 0.95)
    elif name == "disks":
        for _ in range(10):
            cy, cx = rng.uniform(4, size - 4, size=2)
            rad = rng.uniform(3, size / 4)
            img[(ii - cy) ** 2 + (jj - cx) ** 2 <= rad * rad] = rng.uniform(0.05, 0.95)
    elif name == "stripes":
        for _ in range(9):
            theta = rng.uniform(0, np.pi)
            offset = rng.uniform(-size, size)
            width = rng.uniform(2.5, 7.0)
            dist = ii * np.cos(theta) + jj * np.sin(theta) - offset
            img[np.abs(dist) <= width] = rng.uniform(0.05, 0.95)
        for _ in range(4):
            r0, c0 = rng.integers(0, size - 8, size=2)
            rh, cw = rng.integers(6, size // 3, size=2)
            img[r0 : r0 + rh, c0 : c0 + cw] = rng.uniform(0.05, 0.95)
    elif name == "mosaic":
        tile = max(4, size // 8)
        for r0 in range(0, size, tile):
            for c0 in range(0, size, tile):
                img[r0 : r0 + tile, c0 : c0 + tile] = rng.uniform(0.1, 0.9)
        for _ in range(5):
            cy, cx = rng.uniform(6, size - 6, size=2)
            rad = rng.uniform(4, size / 6)
            img[(ii - cy) ** 2 + (jj - cx) ** 2 <= rad * rad] = rng.uniform(0.05, 0.95)
    return np.clip(img, 0.0, 1.0)


def builtin_kernel(name: str, size: int) -> np.ndarray:
    """Deterministic blur kernel: diagonal motion streak, disk, or Gaussian."""
    if size < 3 or size % 2 == 0:
        raise ValueError(f"kernel size must be odd and >= 3, got {size}")
    c = size // 2
    off = np.arange(size) - c
    dy, dx = np.meshgrid(off, off, indexing="ij")
    if name == "motion-diag":
        # anti-aliased 45-degree streak through the center
        along = (dy + dx) / np.sqrt(2.0)
        across = (dy - dx) / np.sqrt(2.0)
        half = 0.75 * c
        h = np.clip(1.0 - np.abs(across), 0.0, 1.0) * np.clip(half + 1.0 - np.abs(along), 0.0, 1.0)
    elif name == "disk":
        r = np.hypot(dy, dx)
        h = np.clip(0.72 * c + 0.5 - r, 0.0, 1.0)
    elif name == "gauss":
        sigma = max(0.8, size / 5.0)
        h = np.exp(-(dy * dy + dx * dx) / (2.0 * sigma * sigma))
    else:
        raise ValueError(f"unknown builtin kernel {name!r}; choose from {BUILTIN_KERNELS}")
    return h / h.sum()
