"""Gaussian-copula models with Poisson margins: exact ML in the low-count regime.

The package provides the distribution primitives, a deterministic randomized-QMC
multivariate-normal engine, tie-aware Kendall's-tau initializers, an
unconstrained log/spherical-Cholesky parameterization with analytic score
functions, a quasi-Newton fitting pipeline, and a seeded simulation benchmark
harness.  The ``gcpoisson`` command-line tool wraps the pipeline.
"""

from .errors import (
    ConfigError,
    DataFormatError,
    DegenerateMarginError,
    DegenerateSampleError,
    DomainError,
    InitializationError,
    InsufficientDataError,
    MatrixError,
    NearSingularError,
    ShapeError,
)
from .special import (
    PoissonMargin,
    SkellamParams,
    bessel_i,
    bessel_i_scaled,
    bvn_cdf,
    bvn_pdf,
    poisson_cdf,
    poisson_pmf,
    poisson_quantile,
    poisson_tie_prob,
    skellam_cdf,
    skellam_pmf,
    std_normal_cdf,
    std_normal_pdf,
    std_normal_quantile,
)

__version__ = "0.1.0"
