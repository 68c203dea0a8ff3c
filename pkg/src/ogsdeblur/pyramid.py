"""Coarse-to-fine controller around the single-scale blind solver.

The observation is solved on a pyramid whose scales shrink by sqrt(2) per
level until the kernel support reaches 3 pixels. Image and kernel estimates
propagate upward as initializations; the regularization weights are halved
at each coarser level.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .ops import check_image, check_kernel
from .solver import SolverConfig, SolverState, blind_deconv_level, project_kernel

_SQRT2 = math.sqrt(2.0)


@dataclass(frozen=True)
class PyramidLevel:
    height: int
    width: int
    kernel_size: int
    lambda1: float
    lambda2: float


@dataclass(frozen=True)
class PyramidSchedule:
    levels: tuple  # PyramidLevel entries, coarsest first


def _nearest_odd(t: float, floor: int = 3) -> int:
    # ties between two odd candidates round up
    k = 2 * int(math.floor((t - 1.0) / 2.0 + 0.5)) + 1
    return max(k, floor)


def plan_schedule(image_h: int, image_w: int, kernel_k: int, base_cfg: SolverConfig) -> PyramidSchedule:
    """Plan dimensions, kernel sizes and weights for every pyramid level.

    The level count is the smallest L with kernel_k / sqrt(2)^(L-1) <= 3;
    the finest level keeps the requested size and the base weights, and each
    step toward the coarse end halves lambda1 and lambda2.
    """
    if kernel_k < 3 or kernel_k % 2 == 0:
        raise ValueError(f"kernel size must be odd and >= 3, got {kernel_k}")
    if kernel_k > min(image_h, image_w):
        raise ValueError(f"kernel {kernel_k} larger than image ({image_h}, {image_w})")
    n_levels = max(1, math.ceil(2.0 * math.log2(kernel_k / 3.0)) + 1)
    levels = []
    for lev in range(n_levels):
        shrink = _SQRT2 ** (n_levels - 1 - lev)
        halving = 2.0 ** (n_levels - 1 - lev)
        levels.append(PyramidLevel(
            height=max(1, int(math.floor(image_h / shrink + 0.5))),
            width=max(1, int(math.floor(image_w / shrink + 0.5))),
            kernel_size=kernel_k if lev == n_levels - 1 else _nearest_odd(kernel_k / shrink),
            lambda1=base_cfg.lambda1 / halving,
            lambda2=base_cfg.lambda2 / halving,
        ))
    return PyramidSchedule(levels=tuple(levels))


def _resample_axis(a: np.ndarray, new_n: int, axis: int) -> np.ndarray:
    old_n = a.shape[axis]
    if new_n == old_n:
        return a
    if new_n < 1:
        raise ValueError("target size must be positive")
    a = np.moveaxis(a, axis, 0)
    if old_n == 1:
        out = np.repeat(a, new_n, axis=0)
        return np.moveaxis(out, 0, axis)
    # pixel-center mapping; edge queries clamp to the border sample
    src = (np.arange(new_n) + 0.5) * (old_n / new_n) - 0.5
    src = np.clip(src, 0.0, old_n - 1.0)
    i0 = np.minimum(src.astype(int), old_n - 2)
    frac = (src - i0).reshape((-1,) + (1,) * (a.ndim - 1))
    out = a[i0] * (1.0 - frac) + a[i0 + 1] * frac
    return np.moveaxis(out, 0, axis)


def resample_image(img, new_h: int, new_w: int) -> np.ndarray:
    """Separable bilinear resampling on the pixel-center grid."""
    img = check_image(img)
    return _resample_axis(_resample_axis(img, new_h, 0), new_w, 1)


def resample_kernel(h, new_k: int) -> np.ndarray:
    """Rescale a kernel to a new support, conserving its mass.

    Each entry is treated as a point mass at its offset from the center; the
    offsets are scaled by new_k / k and the masses deposited on the new grid
    with linear (tent) splatting, so an impulse stays an impulse and symmetric
    kernels stay symmetric. The result is reprojected onto the constraint set.
    """
    h = check_kernel(h)
    if h.shape[0] != h.shape[1]:
        raise ValueError("kernel must be square")
    if new_k < 1 or new_k % 2 == 0:
        raise ValueError(f"target kernel size must be odd, got {new_k}")
    k = h.shape[0]
    if new_k == k:
        out, _ = project_kernel(h, threshold=0.0)
        return out
    f = new_k / k
    c_src, c_dst = k // 2, new_k // 2
    pos = (np.arange(k) - c_src) * f + c_dst
    lo = np.floor(pos).astype(int)
    w_hi = pos - lo
    out = np.zeros((new_k, new_k))
    for (da, wa) in ((0, 1.0 - w_hi), (1, w_hi)):
        ia = np.clip(lo + da, 0, new_k - 1)
        for (db, wb) in ((0, 1.0 - w_hi), (1, w_hi)):
            ib = np.clip(lo + db, 0, new_k - 1)
            np.add.at(out, (ia[:, None], ib[None, :]), h * wa[:, None] * wb[None, :])
    out, _ = project_kernel(out, threshold=0.0)
    return out


def recenter_kernel(h, x=None):
    """Shift the kernel's center of mass onto the grid center (integer shift).

    Estimation leaves the latent image / kernel pair determined only up to a
    common translation; recentering fixes that gauge. If an image is given it
    is counter-rolled so the pair keeps producing the same blurred prediction.
    Returns (kernel, image).
    """
    h = check_kernel(h)
    total = h.sum()
    if total <= 0:
        return h, x
    c0, c1 = h.shape[0] // 2, h.shape[1] // 2
    rows = np.arange(h.shape[0], dtype=np.float64)
    cols = np.arange(h.shape[1], dtype=np.float64)
    com0 = float((h.sum(axis=1) * rows).sum() / total)
    com1 = float((h.sum(axis=0) * cols).sum() / total)
    s0, s1 = c0 - int(np.rint(com0)), c1 - int(np.rint(com1))
    if s0 == 0 and s1 == 0:
        return h, x
    shifted = np.zeros_like(h)
    src0 = slice(max(0, -s0), h.shape[0] - max(0, s0))
    src1 = slice(max(0, -s1), h.shape[1] - max(0, s1))
    dst0 = slice(max(0, s0), h.shape[0] - max(0, -s0))
    dst1 = slice(max(0, s1), h.shape[1] - max(0, -s1))
    shifted[dst0, dst1] = h[src0, src1]
    shifted, _ = project_kernel(shifted, threshold=0.0)
    if x is not None:
        x = np.roll(x, (-s0, -s1), axis=(0, 1))
    return shifted, x


def initial_kernel() -> np.ndarray:
    """Coarsest-level kernel guess: uniform 3x3 (no bias toward an impulse)."""
    return np.full((3, 3), 1.0 / 9.0)


def multiscale_blind_deconv(y, kernel_k: int, base_cfg: SolverConfig,
                            callback=None, on_level=None):
    """Blind deconvolution over the full pyramid.

    Returns the finest-scale (image, kernel) pair. ``callback`` is forwarded
    to every single-scale solve; ``on_level`` receives a summary dict after
    each level finishes.
    """
    y = check_image(y)
    schedule = plan_schedule(y.shape[0], y.shape[1], kernel_k, base_cfg)
    x = None
    h = initial_kernel()
    state: SolverState | None = None
    for lev, level in enumerate(schedule.levels):
        y_l = resample_image(y, level.height, level.width)
        cfg_l = replace(base_cfg, lambda1=level.lambda1, lambda2=level.lambda2)
        if x is not None:
            x = resample_image(x, level.height, level.width)
        h = resample_kernel(h, level.kernel_size)
        state = blind_deconv_level(y_l, h, cfg_l, x0=x, callback=callback)
        x, h = state.x, state.h
        if base_cfg.recenter_kernel:
            h, x = recenter_kernel(h, x)
        if on_level is not None:
            on_level({
                "level": lev,
                "height": level.height,
                "width": level.width,
                "kernel_size": level.kernel_size,
                "objective": state.objective_trace[-1] if state.objective_trace
                             else state.initial_objective,
                "cg_failures": state.cg_failures,
                "kernel_degenerate": state.kernel_degenerate,
            })
    return x, h
