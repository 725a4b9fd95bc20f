"""Jackknife test of many weak against many strong instruments."""

from .errors import (
    ConfigurationError,
    DataFormatError,
    DegenerateSubsampleError,
    IVStrengthError,
    RankDeficientError,
    SingularCovarianceError,
    SingularGramError,
)
from .io import CsvSchema, emit_report, load_csv, load_report, write_csv
from .model import (
    Dataset,
    DGPParams,
    ErrorFamily,
    Latent,
    dgp_generate,
    difference_identity,
    estimator_difference,
    fit_both,
    ols_fit,
    paper_sigma,
    tsls_fit,
)
from .procedure import Scaling, TestConfig, TestResult, ThetaSource, chi_square_quantile, p_value, run_spec_test
from .resampling import CovEstimate, SubsamplePlan, delete_d_jackknife_full, draw_subsample_indices, jsve
from .simulate import SimConfig, SimResult, run_jsve_bias_experiment, run_power_experiment, run_size_experiment
from .theory import (
    AsymParams,
    corollary1_variance,
    mc_covariance_oracle,
    null_covariance,
    seven_components,
    sigma_blocks_gaussian,
    theorem1_limits,
)

__all__ = [name for name in dir() if not name.startswith("_")]
__version__ = "0.1.0"
