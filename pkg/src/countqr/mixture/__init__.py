from .model import BaseMeasure, ClusterAtom, Dataset, PYParams, default_hyperparameters
from .pitman_yor import (
    cluster_count_moments,
    cluster_count_pmf,
    sample_fresh_atoms,
    sample_mixture_weights,
    simulate_cluster_counts,
    solve_py_params,
)
from .sampler import (
    ChainResult,
    PosteriorDraw,
    SamplerState,
    Schedule,
    assign_clusters,
    init_state,
    run_chain,
)
from .updates import (
    update_eta,
    update_latent,
    update_mu_sigma_y,
    update_mu_x,
    update_sigma_c,
)

__all__ = [
    "BaseMeasure", "ClusterAtom", "Dataset", "PYParams", "default_hyperparameters",
    "cluster_count_moments", "cluster_count_pmf", "sample_fresh_atoms",
    "sample_mixture_weights", "simulate_cluster_counts", "solve_py_params",
    "ChainResult", "PosteriorDraw", "SamplerState", "Schedule", "assign_clusters",
    "init_state", "run_chain", "update_eta", "update_latent", "update_mu_sigma_y",
    "update_mu_x", "update_sigma_c",
]
