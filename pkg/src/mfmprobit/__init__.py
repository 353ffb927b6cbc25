"""Clustered probit graphical models for ordinal data with an MFM prior.

Fits heterogeneous conditional-dependence graphs to multivariate ordinal
data: observations are clustered nonparametrically (mixture of finite
mixtures), each cluster carries its own latent-Gaussian mean, sparse
precision matrix, and graph, and a collapsed Gibbs sampler recovers the
number of clusters, memberships, and per-cluster structure.
"""

from .gibbs import (
    ChainConfig,
    GewekeReport,
    PosteriorSamples,
    geweke_joint_test,
    run_chain,
    update_cluster_params,
    update_label,
)
from .gwishart import (
    GWishartParams,
    SufficientStats,
    sample_gwishart,
    sample_mean_posterior,
    sample_precision_posterior,
    update_graph,
)
from .latent import (
    Thresholds,
    TruncationBracket,
    sample_truncated_normal,
    update_latent_row,
    update_thresholds,
)
from .mfm import LogVnTable, compute_log_vn, urn_weight_existing, urn_weight_new
from .simgen import (
    BenchmarkReport,
    SimDesign,
    gen_cluster_means,
    gen_thresholds,
    make_structure,
    run_replicates,
    simulate_dataset,
    to_covariance,
)
from .summary import (
    CoMembershipMatrix,
    ari,
    comembership,
    dahl_select,
    edge_posterior,
    graph_stats,
    rmse_graph,
)
from .types import (
    ClusterParams,
    GibbsState,
    Graph,
    Hyperparams,
    OrdinalDataset,
    validate_dataset,
    validate_state,
)

__version__ = "0.1.0"
