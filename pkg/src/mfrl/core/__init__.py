"""Mean-field model data types and exact dynamics."""
from .distances import gaussian_hellinger, hellinger_distance, tv_distance
from .dynamics import (
    FLOW_CACHE,
    FlowCache,
    LipschitzReport,
    Trajectories,
    batch_density_flows,
    batch_policy_values,
    categorical,
    contraction_upper_bound,
    density_flow,
    density_propagate,
    lipschitz_constants,
    occupancy_flow,
    policy_value,
    q_values,
    sample_trajectories,
    sample_trajectory,
    transition_lipschitz,
)
from .families import (
    ConvexMixture,
    DensityFree,
    GaussianMean,
    Interpolated,
    LowRank,
    RewardFamily,
    TransitionFamily,
    family_from_dict,
)
from .model import (
    SCHEMA_VERSION,
    MeanFieldModel,
    as_policy,
    canonical_json,
    deterministic_policy,
    policy_fingerprint,
    random_policy,
    uniform_policy,
)
from .simplex import as_density, as_row_stochastic, project_simplex

__all__ = [name for name in dir() if not name.startswith("_")]
