"""Throughput capacity of two-hop relay MANETs with finite relay buffers."""

__version__ = "0.1.0"

from .analytic import (  # noqa: E402
    CapacityResult,
    ContactProbabilities,
    FixedPointSolution,
    NetworkConfig,
    RelayQueueModel,
    contact_probabilities,
    limiting_distribution,
    local_queue_delay,
    service_rate_relay,
    solve_fixed_point,
    throughput_capacity,
)
from .combinatorics import OccupancyDistribution, log_binomial, occupancy_distribution  # noqa: E402
from .errors import ConfigError, SolverError, SpecFileError, UnstableLoadError  # noqa: E402
from .simulator import MobilityModel, SimConfig, SimStats, run  # noqa: E402
