"""Stationary randomized scheduling for minimum version-age in uplink NOMA
under average power and general distortion constraints."""

from .analytics import (
    StationaryMetrics,
    average_distortion,
    average_power,
    average_vaoi,
    delivery_probability,
    lower_bound,
    queue_occupancy,
    stationary_metrics,
    weighted_objective,
)
from .dual_solver import (
    DualDecomposition,
    DualVariables,
    RandomizedPolicy,
    SolverConfig,
    extract_policy,
    policy_from_mu,
    solve,
)
from .model import (
    ChannelModel,
    Discretization,
    DistortionFunction,
    JointChannelState,
    RateFunction,
    SystemConfig,
    config_from_dict,
    config_to_dict,
    default_rate_function,
    enumerate_joint_states,
    enumerate_rate_vectors,
    g_inverse,
    load_config,
    make_distortion,
    uniform_channel,
)
from .policies import (
    GreedyPolicy,
    MaxVaoiFirstPolicy,
    RoundRobinPolicy,
    RunningAverages,
    SlotDecision,
    SrpSlotPolicy,
    make_heuristic,
    srp_adapter,
)
from .sic import (
    brute_force_decoding_order,
    mac_feasible,
    optimal_decoding_order,
    sic_power_allocation,
    weighted_sum_power,
)
from .simulator import SimState, SimulationSummary, SimulationTrace, run, step

__version__ = "0.1.0"
