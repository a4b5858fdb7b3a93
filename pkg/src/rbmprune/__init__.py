"""Binary RBMs with a KLD-preserving hidden-unit removal procedure."""

from .core import (
    DiscreteDistribution,
    RbmParams,
    convert_spin_parameterization,
    energy,
    exact_log_partition,
    exact_visible_distribution,
    hidden_conditional,
    log_unnormalized_marginal,
    remove_hidden_unit,
    visible_conditional,
)
from .objective import (
    GradientSet,
    GradientStats,
    d_tilde,
    exact_kld,
    exact_kld_gradient,
    learning_step,
    reconstruction_error,
    stochastic_kld_gradient,
)
from .pruning import (
    PruneConfig,
    PruneTrace,
    RemovalCostEstimate,
    effective_removal_cost,
    multi_removal_cost_exact,
    naive_update,
    prune_run,
    removal_cost_exact,
    removal_cost_gradient_estimate,
    removal_cost_gradient_exact,
    removal_criterion,
    stochastic_update,
)
from .sampling import (
    AisConfig,
    ChainPool,
    ChainState,
    TemperedSchedule,
    ais_log_partition,
    gibbs_sweep,
    pcd_draw,
    tempered_transition,
)

__all__ = [name for name in dir() if not name.startswith("_")]
__version__ = "0.1.0"
