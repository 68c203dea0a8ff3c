"""Blind image deconvolution with a hierarchical heavy-tailed prior coupled
to overlapping group sparsity, solved coarse-to-fine, plus a non-blind
restoration stage and a benchmark harness."""

from .evalkit import (EvalRecord, builtin_image, builtin_kernel, cumulative_histogram,
                      kernel_similarity, psnr, ssd, ssd_ratio, synth_blur)
from .nonblind import NonblindConfig, irls_deconv
from .ogs import group_vector, lambda_weights, majorizer_value, ogs_functional, ogs_regularizer
from .ops import (apply_filter_bank, conv2_adjoint, conv2_same, default_filter_bank,
                  delta_kernel, filter_bank_adjoint)
from .pyramid import (multiscale_blind_deconv, plan_schedule, resample_image,
                      resample_kernel)
from .solver import (SolverConfig, SolverState, blind_deconv_level, cg_solve,
                     h_step, objective, project_kernel, x_step)
from .studentt import gamma_update, psi_value

__version__ = "0.1.0"
