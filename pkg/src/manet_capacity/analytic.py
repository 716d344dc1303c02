"""
Closed-form throughput capacity of a cell-partitioned MANET running the
two-hop relay algorithm with a handshake, when every relay buffer holds at
most ``B`` packets.

The chain of computations is

    contact probabilities -> relay service rates mu_R(k)
    -> relay occupancy distribution pi(k) for a relay arrival rate
    -> fixed point P_B = pi(B) for an exogenous rate lambda
    -> local service rate mu_S(lambda) -> capacity T_c solving mu_S(T) = T.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.optimize import bisect

from .combinatorics import occupancy_distribution
from .errors import ConfigError, SolverError, UnstableLoadError

FIXED_POINT_TOL = 1e-12
FIXED_POINT_MAXITER = 200
CAPACITY_TOL = 1e-9

# Per-node capacity of the same network with unbounded relay buffers, quoted
# from Neely & Modiano (2005) for comparison only; never computed here.
INFINITE_BUFFER_CAPACITY = 0.14


@dataclass(frozen=True)
class NetworkConfig:
    """N nodes paired 0<->1, 2<->3, ... over C cells, relay buffers of B packets."""

    n_nodes: int
    n_cells: int
    buffer_size: int

    def __post_init__(self):
        for name in ("n_nodes", "n_cells", "buffer_size"):
            v = getattr(self, name)
            if isinstance(v, bool) or not isinstance(v, (int, np.integer)):
                raise ConfigError(f"{name} must be an integer, got {v!r}")
            object.__setattr__(self, name, int(v))
        if self.n_nodes < 4 or self.n_nodes % 2:
            raise ConfigError(f"n_nodes must be even and >= 4, got {self.n_nodes}")
        if self.n_cells < 1:
            raise ConfigError(f"n_cells must be >= 1, got {self.n_cells}")
        if self.buffer_size < 1:
            raise ConfigError(f"buffer_size must be >= 1, got {self.buffer_size}")

    @property
    def n_relays(self) -> int:
        """Number of potential relays (and of foreign destinations) per node."""
        return self.n_nodes - 2


@dataclass(frozen=True)
class ContactProbabilities:
    p: float
    q: float
    p_sd: float
    p_sr: float
    p_rd: float


@dataclass(frozen=True)
class RelayQueueModel:
    service_rates: tuple[float, ...]
    arrival_rate: float
    limiting_distribution: tuple[float, ...]

    @property
    def buffer_size(self) -> int:
        return len(self.service_rates)

    @property
    def p_full(self) -> float:
        return self.limiting_distribution[-1]

    def mean_occupancy(self) -> float:
        return float(np.dot(np.arange(len(self.limiting_distribution)), self.limiting_distribution))

    def transition_matrix(self) -> np.ndarray:
        """Explicit one-step (B+1)x(B+1) birth-death matrix of the occupancy chain."""
        return birth_death_matrix(self.arrival_rate, self.service_rates)


@dataclass(frozen=True)
class FixedPointSolution:
    lam: float
    p_full: float
    mu_s: float
    lambda_tilde: float
    relay_model: RelayQueueModel
    residual: float

    @property
    def stable(self) -> bool:
        return self.lam < self.mu_s


@dataclass(frozen=True)
class CapacityResult:
    throughput_capacity: float
    solution_at_capacity: FixedPointSolution
    config: NetworkConfig
    contacts: ContactProbabilities


def _check_rate(name, value, upper=1.0, closed=True):
    value = float(value)
    ok = 0.0 <= value <= upper if closed else 0.0 <= value < upper
    if not ok or math.isnan(value):
        bracket = "]" if closed else ")"
        raise ValueError(f"{name} must lie in [0, {upper}{bracket}, got {value}")
    return value


@lru_cache(maxsize=None)
def contact_probabilities(config: NetworkConfig) -> ContactProbabilities:
    n, c = config.n_nodes, config.n_cells
    stay = 1.0 - 1.0 / c
    p = 1.0 - stay**n - (n / c) * stay ** (n - 1)
    q = 1.0 - (1.0 - 1.0 / c**2) ** (n / 2)
    p_sd = c * q / n
    p_sr = c * (p - q) / (2 * n)
    # rounding can push p - q to -1e-17 when both are 1
    p_sr = max(p_sr, 0.0)
    return ContactProbabilities(p=p, q=q, p_sd=p_sd, p_sr=p_sr, p_rd=p_sr)


@lru_cache(maxsize=None)
def _relay_service_rates(config: NetworkConfig) -> tuple[float, ...]:
    p_rd = contact_probabilities(config).p_rd
    n_dest = config.n_relays
    rates = []
    for k in range(1, config.buffer_size + 1):
        occ = occupancy_distribution(n_dest, k)
        rates.append(p_rd * occ.mean_distinct() / n_dest)
    return tuple(rates)


def relay_service_rates(config: NetworkConfig) -> np.ndarray:
    """mu_R(k) for k = 1..B. Independent of the load, so cached per config."""
    return np.array(_relay_service_rates(config))


def service_rate_relay(config: NetworkConfig, k: int) -> float:
    """Probability a relay holding ``k`` packets gets a delivery opportunity.

    Each of the N-2 foreign destinations meets the relay with probability
    p_rd / (N-2), so mu_R(k) = p_rd * E[#distinct destinations] / (N-2).
    """
    if isinstance(k, bool) or int(k) != k or not 1 <= k <= config.buffer_size:
        raise ValueError(f"k must be an integer in 1..{config.buffer_size}, got {k!r}")
    return _relay_service_rates(config)[int(k) - 1]


def birth_death_matrix(arrival_rate, service_rates) -> np.ndarray:
    mu = np.asarray(service_rates, dtype=float)
    b = len(mu)
    P = np.zeros((b + 1, b + 1))
    for k in range(b + 1):
        up = arrival_rate if k < b else 0.0
        down = mu[k - 1] if k > 0 else 0.0
        if k < b:
            P[k, k + 1] = up
        if k > 0:
            P[k, k - 1] = down
        P[k, k] = 1.0 - up - down
    return P


def _occupancy_probs(arrival_rate: float, service_rates: np.ndarray) -> np.ndarray:
    # pi(k)/pi(k-1) = arrival/mu_R(k), accumulated in log space
    b = len(service_rates)
    if arrival_rate == 0.0:
        pi = np.zeros(b + 1)
        pi[0] = 1.0
        return pi
    if np.any(service_rates <= 0.0):
        raise ValueError("relay service rates must be positive when arrivals occur")
    logr = np.concatenate(([0.0], np.cumsum(math.log(arrival_rate) - np.log(service_rates))))
    w = np.exp(logr - logr.max())
    return w / w.sum()


def limiting_distribution(config: NetworkConfig, lambda_tilde: float) -> RelayQueueModel:
    """Stationary occupancy distribution of one relay queue fed at ``lambda_tilde``."""
    lambda_tilde = _check_rate("lambda_tilde", lambda_tilde, closed=False)
    return _relay_model(config, lambda_tilde)


def _relay_model(config, lambda_tilde):
    rates = relay_service_rates(config)
    pi = _occupancy_probs(lambda_tilde, rates)
    return RelayQueueModel(tuple(rates.tolist()), float(lambda_tilde), tuple(pi.tolist()))


def _relay_arrival_rate(lam, p_full, contacts):
    mu_s = contacts.p_sd + contacts.p_sr * (1.0 - p_full)
    return lam * contacts.p_sr / mu_s if mu_s > 0 else 0.0


def solve_fixed_point(config: NetworkConfig, lam: float) -> FixedPointSolution:
    """Self-consistent relay-full probability for exogenous rate ``lam``.

    Solves x = pi_B(lambda_tilde(x)) by bisection on [0, 1]. The map is
    non-decreasing in x, so h(x) = F(x) - x changes sign at most once from
    h(0) >= 0 to h(1) <= 0. When the implied relay arrival rate exceeds 1
    (only possible far above capacity) the balance-equation solution is still
    returned; it has no queueing interpretation there.
    """
    lam = _check_rate("lambda", lam)
    contacts = contact_probabilities(config)
    rates = relay_service_rates(config)

    def h(x):
        return _occupancy_probs(_relay_arrival_rate(lam, x, contacts), rates)[-1] - x

    h0, h1 = h(0.0), h(1.0)
    if h0 < 0 or h1 > 0:
        raise SolverError("fixed-point map does not bracket a root on [0, 1]", residual=min(abs(h0), abs(h1)))
    if h0 == 0.0:
        x = 0.0
    elif h1 == 0.0:
        x = 1.0
    else:
        try:
            x = bisect(h, 0.0, 1.0, xtol=FIXED_POINT_TOL, rtol=4 * np.finfo(float).eps,
                       maxiter=FIXED_POINT_MAXITER)
        except RuntimeError as exc:
            raise SolverError(f"fixed-point bisection failed: {exc}") from exc
    return _solution(config, lam, x, contacts)


def _solution(config, lam, x, contacts):
    mu_s = contacts.p_sd + contacts.p_sr * (1.0 - x)
    lt = lam * contacts.p_sr / mu_s if mu_s > 0 else 0.0
    model = _relay_model(config, lt)
    return FixedPointSolution(lam=lam, p_full=float(x), mu_s=float(mu_s), lambda_tilde=float(lt),
                              relay_model=model, residual=float(abs(model.p_full - x)))


def iterate_fixed_point(config: NetworkConfig, lam: float, tol=1e-13, maxiter=100_000) -> FixedPointSolution:
    """Plain successive substitution x <- F(x) from x = 0.

    Monotone from below, so it converges to the least fixed point. Slow near
    capacity; kept as an independent check on the bisection solver.
    """
    lam = _check_rate("lambda", lam)
    contacts = contact_probabilities(config)
    rates = relay_service_rates(config)
    x = 0.0
    for _ in range(maxiter):
        nxt = _occupancy_probs(_relay_arrival_rate(lam, x, contacts), rates)[-1]
        if abs(nxt - x) <= tol:
            return _solution(config, lam, nxt, contacts)
        x = nxt
    raise SolverError("successive substitution did not converge", residual=abs(nxt - x))


def local_service_rate(config: NetworkConfig, lam: float) -> float:
    """mu_S(lambda) at the fixed point."""
    return solve_fixed_point(config, lam).mu_s


@lru_cache(maxsize=4096)
def throughput_capacity(config: NetworkConfig, tol: float = CAPACITY_TOL) -> CapacityResult:
    """Largest sustainable per-node rate: the root of mu_S(lambda) = lambda."""
    contacts = contact_probabilities(config)
    hi = contacts.p_sd + contacts.p_sr

    def g(lam):
        return solve_fixed_point(config, lam).mu_s - lam

    g_hi = g(hi)
    if g_hi >= 0:
        # only when p_sr = 0: relay path absent, mu_S is constant p_sd
        t_c = hi
    else:
        t_c = bisect(g, 0.0, hi, xtol=tol, maxiter=FIXED_POINT_MAXITER)
    t_c = float(t_c)
    return CapacityResult(t_c, solve_fixed_point(config, t_c), config, contacts)


def local_queue_delay(config: NetworkConfig, lam: float) -> float:
    """Mean sojourn time (slots) of a packet in its source's local queue.

    Bernoulli/Bernoulli queue: E[D] = (1 - lambda) / (mu_S - lambda). A packet
    served in the slot it arrives counts as delay 1.
    """
    sol = solve_fixed_point(config, lam)
    if sol.mu_s <= sol.lam:
        raise UnstableLoadError(
            f"unstable load: lambda={sol.lam:.6g} >= mu_S={sol.mu_s:.6g} "
            f"(capacity {throughput_capacity(config).throughput_capacity:.6g})")
    return (1.0 - sol.lam) / (sol.mu_s - sol.lam)
