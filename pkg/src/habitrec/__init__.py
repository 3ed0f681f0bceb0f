"""Lifetime-value recommendation toolkit on a simulated listening platform.

The package splits into the layers a production system would have: observable
domain state (core), a ground-truth simulator standing in for the platform,
trainable short- and long-term models, promotion scores built from them,
offline value estimators, exact dynamic-programming oracles, logged policy
improvement, and the experiment harness plus CLI that tie them together.
"""

from .core import (
    RECENCY_CAP,
    ConfigError,
    DataError,
    DayContext,
    DayOutcome,
    RewardSpec,
    Trajectory,
    UserState,
    lifetime_reward,
    successor_states,
    update_relationship_state,
    zero_state,
)
from .simulator import (
    Catalogue,
    LoggingPolicy,
    SimConfig,
    read_config,
    run_user,
    simulate_cohort,
    spawn_catalogue,
)
from .models import (
    ClickinessModel,
    DiscoveryRecord,
    MissingCellError,
    ResurfacingTables,
    StickinessModel,
    build_resurfacing_tables,
    iter_discoveries,
    train_clickiness,
    train_stickiness,
    train_stickiness_models,
)
from .qvalue import (
    ARMS,
    ScoreModels,
    ScorePolicy,
    q_discovery,
    q_general_decomposed,
    q_resurfacing,
)
from .estimators import (
    Estimate,
    q_holistic,
    q_local,
    q_product,
    sample_complexity_sweep,
)
from .mdp import EnumerableMDP, ToyWorld, build_toy
from .policy_improve import direct_pi, greedy_from_aggregated
from .harness import ExperimentSpec, MetricReport, emit_figures_data, run_ab

__version__ = "0.1.0"
