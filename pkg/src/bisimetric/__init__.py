"""Bisimulation metrics for finite MDPs and metric-driven state aggregation."""

from .aggregate import (
    AggregationResult,
    aggregate_epsilon,
    aggregate_to_k,
    build_aggregate_mdp,
    linf_error,
)
from .bisim import Partition, bisimulation_partition, class_tv
from .mdp import (
    Mdp,
    MdpError,
    ValueFunction,
    load_mdp,
    make_coffee_robot,
    make_gridworld,
    save_mdp,
    validate_mdp,
    value_iteration,
)
from .metrics import (
    DistanceMatrix,
    MetricRunConfig,
    apply_F,
    bisim_tv_metric,
    compute_metric,
    fixed_point_metric,
    sampled_metric,
    tv_metric,
)
from .transport import (
    TransportPlan,
    empirical_kantorovich,
    hungarian,
    kantorovich,
    kantorovich_warm,
    sample_empirical,
    total_variation,
)

__version__ = "0.1.0"
