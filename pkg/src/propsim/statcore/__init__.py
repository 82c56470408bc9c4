"""Random streams, t distribution functions and small SPD kernels."""

from .linalg import (
    SingularSystemError,
    check_symmetric,
    cholesky_batch,
    condition_spd,
    inv_spd_batch,
    logdet_spd_batch,
    solve_spd,
    solve_spd_batch,
)
from .rng import RngStream, derive_seed, normal_draws
from .tdist import betainc_reg, t_cdf, t_pdf, t_quantile, t_sf, two_sided_p

__all__ = [
    "RngStream",
    "SingularSystemError",
    "betainc_reg",
    "check_symmetric",
    "cholesky_batch",
    "condition_spd",
    "derive_seed",
    "inv_spd_batch",
    "logdet_spd_batch",
    "normal_draws",
    "solve_spd",
    "solve_spd_batch",
    "t_cdf",
    "t_pdf",
    "t_quantile",
    "t_sf",
    "two_sided_p",
]
