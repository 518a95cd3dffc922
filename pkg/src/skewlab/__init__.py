"""Classical and SDB skew-normal / skew-t distributions, their Mardia
coefficients, finite-mixture clustering and an all-subsets benchmark."""

from .distributions import (
    FAMILIES,
    ClassicalParams,
    DeltaVector,
    SdbParams,
    affine_classical,
    alpha_to_delta,
    classical_sn_pdf,
    classical_st_pdf,
    classical_to_sdb_1d,
    delta_to_alpha,
    logpdf,
    param_count,
    pdf,
    sample,
    sdb_sn_pdf,
    sdb_st_pdf,
    sdb_to_classical_1d,
)
from .exceptions import SkewlabError
from .mixtures import FitConfig, FitResult, MixtureModel, e_step, fit, map_labels, mixture_loglik
from .moments import (
    G1_STAR,
    G2_STAR,
    classical_mardia,
    classical_st_skewness,
    maximize_sdb_mardia,
    sdb_cumulants,
    sdb_mardia,
)
from .special import SpdMatrix, mvn_cdf, mvt_cdf, zeta

__version__ = "0.1.0"
