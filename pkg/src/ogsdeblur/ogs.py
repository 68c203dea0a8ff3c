"""Overlapping group sparsity: functional, majorizer, and IRLS-style weights.

A group is the W x W patch of a signal centered at a pixel (asymmetric for
even W: m1 = (W-1)//2 samples before the center, m2 = W//2 after). Groups are
taken at every pixel, overlapping, with zero padding where a patch overhangs
the signal. The functional is the sum of the Euclidean norms of all groups;
for W = 1 it reduces to the anisotropic total-variation penalty.

Group norms that appear in reciprocals carry an epsilon floor
``sqrt(||.||^2 + eps)`` so the weights stay finite on flat regions.
"""

from __future__ import annotations

import numpy as np

from .ops import apply_filter_bank, check_image

# floor added to squared group norms wherever they are inverted
GROUP_EPS = 1e-12


def group_extents(window: int) -> tuple[int, int]:
    """(m1, m2): samples covered before/after the center along each axis."""
    if window < 1:
        raise ValueError(f"window must be >= 1, got {window}")
    return (window - 1) // 2, window // 2


def _window_sum(a, lo, hi):
    """sum_{d0, d1 in [lo, hi]} a[i + d0, j + d1] with zeros outside."""
    n0, n1 = a.shape
    pad = np.pad(a, ((-lo, hi), (-lo, hi)))
    out = np.zeros_like(a)
    for d0 in range(hi - lo + 1):
        for d1 in range(hi - lo + 1):
            out += pad[d0 : d0 + n0, d1 : d1 + n1]
    return out


def group_energy(s, window: int) -> np.ndarray:
    """Squared Euclidean norm of the group centered at every pixel."""
    s = check_image(s)
    m1, m2 = group_extents(window)
    return _window_sum(s * s, -m1, m2)


def group_vector(s, i: int, j: int, window: int) -> np.ndarray:
    """The stacked W*W patch centered at (i, j), zero padded at the borders."""
    s = check_image(s)
    if not (0 <= i < s.shape[0] and 0 <= j < s.shape[1]):
        raise ValueError(f"group center ({i}, {j}) outside image {s.shape}")
    m1, m2 = group_extents(window)
    out = np.zeros((window, window))
    for a in range(-m1, m2 + 1):
        for b in range(-m1, m2 + 1):
            if 0 <= i + a < s.shape[0] and 0 <= j + b < s.shape[1]:
                out[a + m1, b + m1] = s[i + a, j + b]
    return out.ravel()


def ogs_functional(s, window: int, eps: float = 0.0) -> float:
    """Sum over all group centers of the (optionally floored) group norm."""
    return float(np.sqrt(group_energy(s, window) + eps).sum())


def ogs_regularizer(x, bank, window: int, mode: str = "circular", eps: float = 0.0) -> float:
    """OGS applied to every filtered map of the image: sum_m ogs(f_m * x)."""
    return sum(ogs_functional(g, window, eps) for g in apply_filter_bank(x, bank, mode))


def lambda_weights(u, window: int, eps: float = GROUP_EPS) -> np.ndarray:
    """Per-pixel diagonal weight: sum of inverse norms of the containing groups.

    Pixel (r, t) belongs to the groups centered at offsets [-m2, m1] around
    it (the mirror of the group extent); centers outside the signal do not
    exist and contribute nothing.
    """
    m1, m2 = group_extents(window)
    d = 1.0 / np.sqrt(group_energy(u, window) + eps)
    return _window_sum(d, -m2, m1)


def majorizer_value(v, u, window: int, eps: float = GROUP_EPS) -> float:
    """Quadratic-in-v upper bound of the OGS functional, tight at v = u.

    Per group: (||v_g||^2 / n_g + n_g) / 2 with n_g the floored norm of u's
    group. By AM-GM this dominates the floored group norm of v, with equality
    when the group energies coincide, so

        majorizer_value(v, u) >= ogs_functional(v, eps) >= ogs_functional(v)
        majorizer_value(u, u) == ogs_functional(u, eps)

    and the v-dependence is exactly (1/2) sum_pixels lambda_weights(u) * v^2.
    """
    ev = group_energy(v, window) + eps
    nu = np.sqrt(group_energy(u, window) + eps)
    return float(0.5 * (ev / nu + nu).sum())
