"""Zeroth-order diffusion Monte Carlo sampling toolkit."""

from .baselines import (
    RejectionProposal,
    UlaConfig,
    diagonal_gaussian_proposal,
    ground_truth_rejection,
    mixture_proposal,
    mueller_proposal,
    run_ula,
)
from .diffuser import SampleBatch, ZodmcConfig, ei_step, run_zodmc
from .errors import (
    ConfigurationError,
    DominationViolation,
    RgoStarved,
    UnsupportedTargetError,
)
from .metrics import (
    MetricsReport,
    compare_batches,
    mean_cov_errors,
    median_bandwidth,
    mmd,
    mmd_permutation_pvalue,
    mode_weights,
    w2_empirical,
)
from .ou import OuMarginal, gmm_log_density_at_time, gmm_score_at_time, ou_decay_bounds, ou_marginal
from .rgo import (
    MinTracker,
    RgoRequest,
    RgoResult,
    expected_proposals,
    find_potential_min,
    rgo_sample,
    rgo_sample_many,
)
from .schedule import Schedule, build_schedule, validate_schedule
from .score import (
    SampleCountPolicy,
    ScoreEstimate,
    estimate_score,
    sample_count,
    score_from_samples,
    score_l2_error,
)
from .targets import (
    GmmSpec,
    QueryLedger,
    Target,
    annulus_penalty,
    apply_annulus_penalty,
    benchmark_gmm_2d,
    eval_potential,
    gmm_5d_3modes,
    locate_mueller_center,
    make_gmm,
    make_mueller_brown,
    make_randomized_gmm,
    target_from_config,
)

__version__ = "0.1.0"
