"""Dense 2-D convolution operators and the derivative filter bank.

Images are float64 arrays of shape (H, W); blur kernels are small odd-sized
arrays. Every forward operator has an adjoint that is its exact matrix
transpose under the active boundary mode, so ``<A u, v> == <u, At v>`` holds
to rounding error. Two boundary modes are supported:

* ``"circular"``  periodic extension; the operator matrix is
  circulant-block-circulant and applications go through the FFT.
* ``"symmetric"`` half-sample mirror extension; applications use padded
  spatial convolution and the adjoint folds pad contributions back.
"""

from __future__ import annotations

import numpy as np
from scipy.signal import convolve2d

BOUNDARY_MODES = ("circular", "symmetric")

# numpy.pad mode implementing each boundary rule
_PAD_MODE = {"circular": "wrap", "symmetric": "symmetric"}

# kernels with at most this many nonzeros are applied by shift-accumulation,
# which is cheaper than an FFT round trip for difference stencils
_SMALL_NNZ = 12


def check_mode(mode: str) -> str:
    if mode not in BOUNDARY_MODES:
        raise ValueError(f"unknown boundary mode {mode!r}; expected one of {BOUNDARY_MODES}")
    return mode


def check_image(img) -> np.ndarray:
    """Coerce to a finite 2-D float64 array."""
    arr = np.asarray(img, dtype=np.float64)
    if arr.ndim != 2 or arr.size == 0:
        raise ValueError(f"expected a non-empty 2-D image, got shape {arr.shape}")
    if not np.isfinite(arr).all():
        raise ValueError("image contains NaN or Inf")
    return arr


def check_kernel(ker, image_shape=None) -> np.ndarray:
    """Coerce to a 2-D odd-sized float64 kernel, optionally bounded by an image."""
    arr = np.asarray(ker, dtype=np.float64)
    if arr.ndim != 2 or arr.size == 0:
        raise ValueError(f"expected a 2-D kernel, got shape {arr.shape}")
    if arr.shape[0] % 2 == 0 or arr.shape[1] % 2 == 0:
        raise ValueError(f"kernel dimensions must be odd, got {arr.shape}")
    if not np.isfinite(arr).all():
        raise ValueError("kernel contains NaN or Inf")
    if image_shape is not None:
        if arr.shape[0] > image_shape[0] or arr.shape[1] > image_shape[1]:
            raise ValueError(f"kernel {arr.shape} larger than image {tuple(image_shape)}")
    return arr


def delta_kernel(size: int) -> np.ndarray:
    """Centered unit impulse (the identity blur)."""
    if size < 1 or size % 2 == 0:
        raise ValueError(f"kernel size must be odd and positive, got {size}")
    h = np.zeros((size, size))
    h[size // 2, size // 2] = 1.0
    return h


# ---------------------------------------------------------------------------
# forward / adjoint convolution
# ---------------------------------------------------------------------------

def _embed_otf(ker, shape):
    """FFT of the kernel zero-embedded on the image grid, centered at (0,0)."""
    kp = np.zeros(shape)
    kh, kw = ker.shape
    kp[:kh, :kw] = ker
    kp = np.roll(kp, (-(kh // 2), -(kw // 2)), axis=(0, 1))
    return np.fft.rfft2(kp)


def _apply_small(img, ker, mode, adjoint):
    # accumulate shifted copies; one term per nonzero kernel entry
    c0, c1 = ker.shape[0] // 2, ker.shape[1] // 2
    rows, cols = np.nonzero(ker)
    out = np.zeros_like(img)
    if mode == "circular":
        for a, b in zip(rows, cols):
            s = (a - c0, b - c1)
            if adjoint:
                s = (-s[0], -s[1])
            out += ker[a, b] * np.roll(img, s, axis=(0, 1))
        return out
    if adjoint:
        return _fold_full(convolve2d(img, ker[::-1, ::-1], mode="full"), c0, c1, mode)
    n0, n1 = img.shape
    pad = np.pad(img, ((c0, c0), (c1, c1)), mode=_PAD_MODE[mode])
    for a, b in zip(rows, cols):
        out += ker[a, b] * pad[2 * c0 - a : 2 * c0 - a + n0, 2 * c1 - b : 2 * c1 - b + n1]
    return out


def _fold_axis(arr, pad, mode, axis):
    """Transpose of np.pad along one axis: add pad rows back onto their sources."""
    if pad == 0:
        return arr
    arr = np.moveaxis(arr, axis, 0)
    core = arr[pad:-pad].copy()
    head, tail = arr[:pad], arr[-pad:]
    if mode == "circular":
        core[-pad:] += head
        core[:pad] += tail
    else:  # symmetric: xp[j] = x[pad-1-j], xp[n+pad+j] = x[n-1-j]
        core[:pad] += head[::-1]
        core[-pad:] += tail[::-1]
    return np.moveaxis(core, 0, axis)


def _fold_full(canvas, c0, c1, mode):
    return _fold_axis(_fold_axis(canvas, c0, mode, 0), c1, mode, 1)


def conv2_same(img, ker, mode: str = "circular") -> np.ndarray:
    """Convolve an image with a centered kernel, same-size output.

    ``out[i, j] = sum_{a, b} ker[a, b] * x[i - a + c0, j - b + c1]`` with the
    out-of-range samples of ``x`` resolved by the boundary mode.
    """
    check_mode(mode)
    img = check_image(img)
    ker = check_kernel(ker, img.shape)
    if np.count_nonzero(ker) <= _SMALL_NNZ:
        return _apply_small(img, ker, mode, adjoint=False)
    if mode == "circular":
        otf = _embed_otf(ker, img.shape)
        return np.fft.irfft2(np.fft.rfft2(img) * otf, s=img.shape)
    c0, c1 = ker.shape[0] // 2, ker.shape[1] // 2
    pad = np.pad(img, ((c0, c0), (c1, c1)), mode="symmetric")
    return convolve2d(pad, ker, mode="valid")


def conv2_adjoint(img, ker, mode: str = "circular") -> np.ndarray:
    """Apply the exact transpose of :func:`conv2_same` for the same kernel/mode."""
    check_mode(mode)
    img = check_image(img)
    ker = check_kernel(ker, img.shape)
    if np.count_nonzero(ker) <= _SMALL_NNZ:
        return _apply_small(img, ker, mode, adjoint=True)
    if mode == "circular":
        otf = _embed_otf(ker, img.shape)
        return np.fft.irfft2(np.fft.rfft2(img) * np.conj(otf), s=img.shape)
    c0, c1 = ker.shape[0] // 2, ker.shape[1] // 2
    canvas = convolve2d(img, ker[::-1, ::-1], mode="full")
    return _fold_full(canvas, c0, c1, mode)


def make_conv_pair(ker, shape, mode: str = "circular"):
    """Build ``(apply, apply_t)`` closures for repeated application of one kernel.

    Precomputes the transfer function once so solver inner loops avoid the
    per-call kernel FFT. Results match conv2_same / conv2_adjoint.
    """
    check_mode(mode)
    ker = check_kernel(ker, shape)
    if np.count_nonzero(ker) <= _SMALL_NNZ or mode == "symmetric":
        return (lambda p: conv2_same(p, ker, mode),
                lambda p: conv2_adjoint(p, ker, mode))
    otf = _embed_otf(ker, shape)
    otf_c = np.conj(otf)

    def apply(p):
        return np.fft.irfft2(np.fft.rfft2(p) * otf, s=shape)

    def apply_t(p):
        return np.fft.irfft2(np.fft.rfft2(p) * otf_c, s=shape)

    return apply, apply_t


# ---------------------------------------------------------------------------
# filter bank
# ---------------------------------------------------------------------------

def stencil_to_kernel(stencil) -> np.ndarray:
    """Embed a small stencil into an odd-sized kernel.

    The stencil is interpreted in convolution orientation; even dimensions are
    padded with a trailing zero row/column so the kernel center is defined.
    A 1x2 stencil [s0, s1] therefore produces ``s0*x[i, j+1] + s1*x[i, j]``.
    """
    st = np.asarray(stencil, dtype=np.float64)
    if st.ndim == 1:
        st = st[None, :]
    if st.ndim != 2 or st.size == 0:
        raise ValueError(f"bad stencil shape {st.shape}")
    p0 = st.shape[0] + (st.shape[0] % 2 == 0)
    p1 = st.shape[1] + (st.shape[1] % 2 == 0)
    out = np.zeros((p0, p1))
    out[: st.shape[0], : st.shape[1]] = st
    return out


def default_filter_bank(count: int = 2) -> tuple[np.ndarray, ...]:
    """First-order difference filters: 2 oriented, or 4 directional.

    The 2-filter bank holds the forward differences to the right and bottom
    neighbor; the 4-filter bank adds the left/top differences (negated,
    shifted copies that double the effective prior weight).
    """
    right = stencil_to_kernel([[1.0, -1.0]])
    down = stencil_to_kernel([[1.0], [-1.0]])
    if count == 2:
        return (right, down)
    if count == 4:
        left = stencil_to_kernel([[0.0, -1.0, 1.0]])
        up = stencil_to_kernel([[0.0], [-1.0], [1.0]])
        return (right, down, left, up)
    raise ValueError(f"filter bank size must be 2 or 4, got {count}")


def check_filter_bank(bank) -> tuple[np.ndarray, ...]:
    kers = tuple(stencil_to_kernel(f) for f in bank)
    if not kers:
        raise ValueError("filter bank is empty")
    for f in kers:
        if abs(f.sum()) > 1e-12:
            raise ValueError("filter stencils must sum to zero (high-pass)")
    return kers


def apply_filter_bank(x, bank, mode: str = "circular") -> list[np.ndarray]:
    """Filtered maps [f_1 * x, ..., f_M * x], each the same shape as x."""
    x = check_image(x)
    return [conv2_same(x, f, mode) for f in check_filter_bank(bank)]


def filter_bank_adjoint(gs, bank, mode: str = "circular") -> np.ndarray:
    """Sum of the filter adjoints applied to the maps: sum_m Ft_m g_m."""
    kers = check_filter_bank(bank)
    if len(gs) != len(kers):
        raise ValueError(f"expected {len(kers)} filtered maps, got {len(gs)}")
    out = np.zeros_like(check_image(gs[0]))
    for g, f in zip(gs, kers):
        out += conv2_adjoint(g, f, mode)
    return out
