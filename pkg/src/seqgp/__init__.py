"""Matrix-free Gaussian-process conditioning for staged linear inverse problems."""
from .design import (CampaignState, candidate_set, limiting_distribution, myopic_step, run_campaign,
                     synthetic_volcano, wivr)
from .errors import ConfigError, MemoryBudgetError, NumericalError, SeqGPError, SingularCovarianceError
from .excursion import (CoverageField, ExcursionEstimate, coverage, detection_metrics, expected_volume,
                        plugin_estimate, vorobev_expectation, vorobev_quantile)
from .explicit import (DataStage, ExplicitPosterior, condition_batch, condition_via_representing_sequence,
                       update_stage_explicit)
from .grid import ChunkPlan, Grid, build_grid, plan_chunks
from .hyper import FitResult, concentrated_m0, fit, nmll, predictive_metrics
from .implicit import ImplicitPosterior
from .kernels import Family, Kernel, PriorModel, cross_cov_block, kernel_eval, practical_range, prior_covmul
from .operators import (GravityConfig, Operator, Prism, prism_gz, dft_frequencies, dft_operator,
                        gravity_operator, pointwise_operator, weighted_operator)
from .sampling import Ensemble, residual_update, sample_prior, volume_distribution

__version__ = "0.1.0"

__all__ = [
    "CampaignState",
    "ChunkPlan",
    "ConfigError",
    "CoverageField",
    "DataStage",
    "Ensemble",
    "ExcursionEstimate",
    "ExplicitPosterior",
    "Family",
    "FitResult",
    "GravityConfig",
    "Grid",
    "ImplicitPosterior",
    "Kernel",
    "MemoryBudgetError",
    "NumericalError",
    "Operator",
    "PriorModel",
    "Prism",
    "SeqGPError",
    "SingularCovarianceError",
    "build_grid",
    "candidate_set",
    "concentrated_m0",
    "condition_batch",
    "condition_via_representing_sequence",
    "coverage",
    "cross_cov_block",
    "detection_metrics",
    "dft_frequencies",
    "dft_operator",
    "expected_volume",
    "fit",
    "gravity_operator",
    "kernel_eval",
    "limiting_distribution",
    "myopic_step",
    "nmll",
    "plan_chunks",
    "plugin_estimate",
    "pointwise_operator",
    "practical_range",
    "predictive_metrics",
    "prior_covmul",
    "prism_gz",
    "residual_update",
    "run_campaign",
    "sample_prior",
    "synthetic_volcano",
    "update_stage_explicit",
    "volume_distribution",
    "vorobev_expectation",
    "vorobev_quantile",
    "weighted_operator",
    "wivr",
]
