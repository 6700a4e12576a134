"""Latent Gaussian trajectories for continuous-time interaction networks.

Fits per-node piecewise-linear trajectories of isotropic Gaussians to a
timestamped interaction history by variational inference on a Poisson-process
likelihood, and evaluates reconstruction quality and positional uncertainty.
"""

from .events import (
    CountTensor,
    EdgeSplit,
    EventList,
    EventParseError,
    IntervalPartition,
    interval_counts,
    node_degree,
    normalize_times,
    parse_events,
    sample_negative_pairs,
    split_edges,
)
from .model import (
    DOT,
    EUCLIDEAN,
    LatentConfiguration,
    RateModel,
    SamplingPlan,
    cumulative_rate_closed,
    cumulative_rate_riemann,
    log_rate,
    normal_cdf,
    pair_interval_nll,
    position_at,
    total_nll,
)
from .prior import PriorConfig, kl_monte_carlo, kl_to_prior, prior_log_density, sample_prior
from .inference import (
    Adam,
    FitDivergedError,
    FittedModel,
    Hyperparams,
    VariationalState,
    adam_step,
    elbo_loss,
    empirical_beta,
    fit,
    init_state,
    load_model,
    loss_gradient,
    mean_frame_displacement,
    reparam_sample,
    save_model,
)
from .simulate import SbmSample, SbmSpec, default_sbm_spec, sbm_generate
from .evaluation import (
    LsdmModel,
    LsdmOpts,
    ScoredInstance,
    auc,
    auc_from_scores,
    build_instances,
    edge_uncertainty,
    fit_lsdm,
    lsdm_score,
    neighbor_distance,
    node_uncertainty,
    rate_vs_uncertainty_table,
    regression_slope_from_points,
    restrict_counts,
    score_pa,
    score_random,
    score_tgne,
    score_tgne_predictive,
    uncertainty_regression,
)

__version__ = "0.1.0"
