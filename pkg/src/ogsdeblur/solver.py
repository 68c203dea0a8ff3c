"""Single-scale blind deconvolution by alternating coordinate updates.

One iteration, given the observation y and the current (x, h, gamma):

1. filtered maps g_m of x and their group-sparsity weights
2. closed-form precision update for gamma
3. x-update: conjugate-gradient solve of the regularized normal equations
4. h-update: dense least squares on the kernel followed by projection onto
   the non-negative, unit-sum constraint set

The recorded objective is

    R = ||h * x - y||^2 + lambda1 * psi(x, gamma) + lambda2 * phi(x)

with psi the hierarchical prior term and phi the overlapping group sparsity
regularizer; each update is an exact or majorizer-based coordinate step, so R
is non-increasing up to the CG tolerance and the kernel projection.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.linalg

from . import ogs, studentt
from .ops import (apply_filter_bank, check_image, check_kernel, check_mode,
                  conv2_adjoint, conv2_same, default_filter_bank, delta_kernel,
                  make_conv_pair)

# least-squares kernel solves with a worse condition number are flagged degenerate
_KERNEL_COND_LIMIT = 1e12


@dataclass
class SolverConfig:
    """Hyperparameters for one blind deconvolution solve."""

    lambda1: float = 4.5e-5          # weight of the hierarchical prior
    lambda2: float = 5e-6            # weight of the group sparsity term
    alpha: float = 1e-18             # precision hyperprior shape
    beta: float = 1.0 / 1700.0       # precision hyperprior scale
    window: int = 3                  # group window W
    iterations: int = 4500           # alternating iterations per solve
    cg_tol: float = 1e-5             # relative residual target of the x-solve
    cg_max_iter: int = 100
    boundary: str = "circular"
    kernel_threshold: float = 0.02   # clip kernel entries below this fraction of the max
    filters: int = 2                 # 2 oriented or 4 directional difference filters
    kernel_from_gradients: bool = False  # fit h on filtered maps instead of intensities
    recenter_kernel: bool = True     # recenter kernel mass between pyramid levels

    def __post_init__(self):
        check_mode(self.boundary)
        if self.lambda1 <= 0 or self.lambda2 < 0:
            raise ValueError("lambda1 must be positive and lambda2 non-negative")
        if self.alpha < 0 or self.beta <= 0:
            raise ValueError("need alpha >= 0 and beta > 0")
        if self.window < 1 or self.iterations < 0 or self.cg_max_iter < 1:
            raise ValueError("window, iterations and cg_max_iter must be positive")
        if not (0 < self.cg_tol < 1):
            raise ValueError("cg_tol must lie in (0, 1)")
        if self.kernel_threshold < 0:
            raise ValueError("kernel_threshold must be non-negative")
        if self.filters not in (2, 4):
            raise ValueError("filters must be 2 or 4")

    def bank(self):
        return default_filter_bank(self.filters)


@dataclass
class CGResult:
    converged: bool
    iterations: int
    rel_residual: float
    rhs_norm: float


@dataclass
class SolverState:
    """Iterates and diagnostics of one single-scale solve."""

    x: np.ndarray
    h: np.ndarray
    gamma: np.ndarray
    iteration: int
    initial_objective: float
    objective_trace: list = field(default_factory=list)
    kernel_change: list = field(default_factory=list)
    slack_trace: list = field(default_factory=list)   # descent slack per iteration
    cg_failures: int = 0
    kernel_degenerate: bool = False


def cg_solve(apply_a, b, tol: float, max_iter: int, x0=None):
    """Conjugate gradients for a symmetric positive definite operator.

    Stops when ||A x - b|| <= tol * ||b||; otherwise returns the best iterate
    after max_iter steps with ``converged=False``.
    """
    b = np.asarray(b, dtype=np.float64)
    bnorm = float(np.linalg.norm(b))
    if bnorm == 0.0:
        return np.zeros_like(b), CGResult(True, 0, 0.0, 0.0)
    x = np.zeros_like(b) if x0 is None else np.array(x0, dtype=np.float64)
    r = b - apply_a(x)
    rs = float(np.dot(r.ravel(), r.ravel()))
    if np.sqrt(rs) <= tol * bnorm:
        return x, CGResult(True, 0, np.sqrt(rs) / bnorm, bnorm)
    p = r.copy()
    for it in range(1, max_iter + 1):
        ap = apply_a(p)
        pap = float(np.dot(p.ravel(), ap.ravel()))
        if pap <= 0:
            # numerically lost positive definiteness; keep the current iterate
            break
        a = rs / pap
        x += a * p
        r -= a * ap
        rs_new = float(np.dot(r.ravel(), r.ravel()))
        if np.sqrt(rs_new) <= tol * bnorm:
            return x, CGResult(True, it, np.sqrt(rs_new) / bnorm, bnorm)
        p = r + (rs_new / rs) * p
        rs = rs_new
    return x, CGResult(False, max_iter, np.sqrt(rs) / bnorm, bnorm)


def objective(x, h, gamma, y, cfg: SolverConfig) -> float:
    """Full objective R at the given iterates."""
    bank = cfg.bank()
    resid = conv2_same(x, h, cfg.boundary) - y
    val = float(np.sum(resid * resid))
    val += cfg.lambda1 * studentt.psi_value(x, gamma, cfg.alpha, cfg.beta, bank, cfg.boundary)
    if cfg.lambda2 > 0:
        val += cfg.lambda2 * ogs.ogs_regularizer(x, bank, cfg.window, cfg.boundary)
    return val


def x_step(y, h, gamma, weights, cfg: SolverConfig, x0=None):
    """Solve the regularized normal equations for the image.

        (Ht H + sum_m Ft_m (lambda1 diag(gamma_m) + lambda2 diag(w_m)) F_m) x = Ht y

    via warm-started CG. ``weights`` is the per-filter list of group weight
    fields (ignored when lambda2 == 0). Returns (x, CGResult).
    """
    y = check_image(y)
    gamma = np.asarray(gamma, dtype=np.float64)
    bank = cfg.bank()
    if gamma.shape != (len(bank),) + y.shape:
        raise ValueError(f"gamma shape {gamma.shape} does not match ({len(bank)},) + {y.shape}")
    if np.any(gamma <= 0):
        raise ValueError("gamma must be strictly positive")
    diag = cfg.lambda1 * gamma
    if cfg.lambda2 > 0:
        if weights is None or len(weights) != len(bank):
            raise ValueError("lambda2 > 0 requires one weight field per filter")
        diag = diag + cfg.lambda2 * np.stack([np.asarray(w, dtype=np.float64) for w in weights])
        if np.any(diag <= 0):
            raise ValueError("weights must be strictly positive")
    h_app, h_adj = make_conv_pair(h, y.shape, cfg.boundary)
    f_ops = [make_conv_pair(f, y.shape, cfg.boundary) for f in bank]

    def apply_a(p):
        out = h_adj(h_app(p))
        for m, (f_app, f_adj) in enumerate(f_ops):
            out += f_adj(diag[m] * f_app(p))
        return out

    b = h_adj(y)
    x, info = cg_solve(apply_a, b, cfg.cg_tol, cfg.cg_max_iter, x0=x0)
    if not info.converged:
        warnings.warn(
            f"x-step CG stopped at relative residual {info.rel_residual:.2e} "
            f"after {info.iterations} iterations", RuntimeWarning)
    return x, info


def kernel_normal_equations(x, y, k: int, mode: str = "circular", use_fft: bool | None = None):
    """Assemble (XtX, Xty) for the least-squares kernel fit y ~ x * h.

    X is the linear map h -> conv2_same(x, h) for a k x k kernel. Circular
    boundaries admit an FFT autocorrelation shortcut; otherwise the Gram
    matrix is accumulated from crops of the padded image.
    """
    x = check_image(x)
    y = check_image(y)
    check_mode(mode)
    if k % 2 == 0 or k < 1 or k > min(x.shape):
        raise ValueError(f"kernel size {k} must be odd and fit inside {x.shape}")
    if use_fft is None:
        use_fft = mode == "circular"
    c = k // 2
    if use_fft:
        if mode != "circular":
            raise ValueError("FFT assembly requires circular boundaries")
        n0, n1 = x.shape
        fx = np.fft.fft2(x)
        acf = np.fft.ifft2(fx * np.conj(fx)).real          # acf[d] = sum_t x[t] x[t+d]
        ccf = np.fft.ifft2(np.fft.fft2(y) * np.conj(fx)).real
        offs = np.arange(k)
        da = (offs[:, None] - offs[None, :]) % n0          # a - a'
        db = (offs[:, None] - offs[None, :]) % n1
        xtx = acf[da[:, None, :, None], db[None, :, None, :]].reshape(k * k, k * k)
        xty = ccf[(offs[:, None] - c) % n0, (offs[None, :] - c) % n1].ravel()
        return xtx, xty
    pad = np.pad(x, c, mode="wrap" if mode == "circular" else "symmetric")
    n0, n1 = x.shape
    xtx = np.zeros((k * k, k * k))
    xty = np.zeros(k * k)
    # accumulate over image-row blocks to bound memory at large sizes
    block = max(1, int(2e6) // max(1, n1 * k * k))
    for r0 in range(0, n0, block):
        r1 = min(n0, r0 + block)
        cols = np.empty(((r1 - r0) * n1, k * k))
        for a in range(k):
            for b in range(k):
                cols[:, a * k + b] = pad[r0 + k - 1 - a : r1 + k - 1 - a,
                                         k - 1 - b : k - 1 - b + n1].ravel()
        xtx += cols.T @ cols
        xty += cols.T @ y[r0:r1].ravel()
    return xtx, xty


def project_kernel(h, threshold: float = 0.02):
    """Project onto the kernel constraint set: non-negative, unit sum.

    Entries below ``threshold * max(h)`` are zeroed as estimation noise. If
    nothing survives, a centered impulse is returned with the degeneracy flag
    set. Returns (kernel, degenerate).
    """
    h = np.asarray(h, dtype=np.float64)
    out = np.where(h > 0, h, 0.0)
    peak = out.max(initial=0.0)
    if peak > 0 and threshold > 0:
        out = np.where(out >= threshold * peak, out, 0.0)
    s = out.sum()
    if not np.isfinite(s) or s <= 0:
        impulse = np.zeros_like(h)
        impulse.flat[impulse.size // 2] = 1.0
        return impulse, True
    return out / s, False


def h_step(y, x, k: int, cfg: SolverConfig, h_prev=None):
    """Least-squares kernel update followed by constraint projection.

    Solves the k^2 x k^2 normal equations assembled from the current image
    (or from its filtered maps when ``cfg.kernel_from_gradients``). An
    ill-conditioned or singular system leaves the kernel unchanged and sets
    the degeneracy flag. Returns (kernel, degenerate).
    """
    fallback = check_kernel(h_prev) if h_prev is not None else delta_kernel(k)
    if cfg.kernel_from_gradients:
        bank = cfg.bank()
        maps = zip(apply_filter_bank(x, bank, cfg.boundary),
                   apply_filter_bank(y, bank, cfg.boundary))
        xtx = np.zeros((k * k, k * k))
        xty = np.zeros(k * k)
        for gx, gy in maps:
            a, b = kernel_normal_equations(gx, gy, k, cfg.boundary)
            xtx += a
            xty += b
    else:
        xtx, xty = kernel_normal_equations(x, y, k, cfg.boundary)
    try:
        cho = scipy.linalg.cho_factor(xtx, check_finite=False)
        h_ls = scipy.linalg.cho_solve(cho, xty, check_finite=False)
        d = np.diag(cho[0])
        if (d.max() / d.min()) ** 2 > _KERNEL_COND_LIMIT:
            raise np.linalg.LinAlgError("ill-conditioned kernel system")
    except (np.linalg.LinAlgError, scipy.linalg.LinAlgError, ValueError):
        warnings.warn("kernel least-squares system is degenerate; keeping previous kernel",
                      RuntimeWarning)
        return fallback, True
    if not np.isfinite(h_ls).all():
        warnings.warn("kernel solve produced non-finite values; keeping previous kernel",
                      RuntimeWarning)
        return fallback, True
    return project_kernel(h_ls.reshape(k, k), cfg.kernel_threshold)


def blind_deconv_level(y, h0, cfg: SolverConfig, x0=None, callback=None) -> SolverState:
    """Run the alternating solver for ``cfg.iterations`` at a single scale.

    x starts at the observation unless ``x0`` is given, gamma at one. The
    callback, if any, receives (iteration, objective, kernel_change_norm)
    after every full iteration.
    """
    y = check_image(y)
    h = check_kernel(h0, y.shape).copy()
    bank = cfg.bank()
    x = y.copy() if x0 is None else check_image(x0).copy()
    gamma = np.ones((len(bank),) + y.shape)
    k = h.shape[0]
    state = SolverState(x=x, h=h, gamma=gamma, iteration=0,
                        initial_objective=objective(x, h, gamma, y, cfg))
    for it in range(cfg.iterations):
        g = np.stack(apply_filter_bank(state.x, bank, cfg.boundary))
        weights = None
        if cfg.lambda2 > 0:
            weights = [ogs.lambda_weights(gm, cfg.window) for gm in g]
        state.gamma = studentt.gamma_update(g, cfg.alpha, cfg.beta)
        state.x, cg_info = x_step(y, state.h, state.gamma, weights, cfg, x0=state.x)
        if not cg_info.converged:
            state.cg_failures += 1
        h_new, degenerate = h_step(y, state.x, k, cfg, h_prev=state.h)
        state.kernel_degenerate |= degenerate
        state.kernel_change.append(float(np.linalg.norm(h_new - state.h)))
        state.h = h_new
        r = objective(state.x, state.h, state.gamma, y, cfg)
        state.objective_trace.append(r)
        state.slack_trace.append(max(1e-8 * abs(r),
                                     cfg.cg_tol * cg_info.rhs_norm * float(np.linalg.norm(state.x))))
        state.iteration = it + 1
        if callback is not None:
            callback(it, r, state.kernel_change[-1])
    return state


def scaled_config(cfg: SolverConfig, factor: float) -> SolverConfig:
    """Copy of the configuration with both regularization weights scaled."""
    return replace(cfg, lambda1=cfg.lambda1 * factor, lambda2=cfg.lambda2 * factor)
