"""
Binomial coefficients in log space and the classical occupancy distribution
used to derive the relay-queue service rates.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

# Below this many factors ln C(n, k) is summed term by term; lgamma
# differences lose ~1e-11 relative accuracy for small k and n near 1e6.
_DIRECT_TERMS = 1024


def _check_pair(n, k):
    if isinstance(n, bool) or isinstance(k, bool):
        raise TypeError("n and k must be integers")
    if int(n) != n or int(k) != k:
        raise ValueError(f"n and k must be integers, got n={n!r}, k={k!r}")
    n, k = int(n), int(k)
    if n < 0 or k < 0:
        raise ValueError(f"n and k must be non-negative, got n={n}, k={k}")
    if k > n:
        raise ValueError(f"k={k} exceeds n={n}")
    return n, k


def log_binomial(n: int, k: int) -> float:
    """Natural log of C(n, k).

    Symmetric by construction: the evaluation always uses min(k, n - k).
    """
    n, k = _check_pair(n, k)
    k = min(k, n - k)
    if k == 0:
        return 0.0
    if k <= _DIRECT_TERMS:
        m = n - k
        return math.fsum(math.log((m + j) / j) for j in range(1, k + 1))
    return math.lgamma(n + 1) - math.lgamma(k + 1) - math.lgamma(n - k + 1)


@dataclass(frozen=True)
class OccupancyDistribution:
    """Probability that ``k`` packets cover exactly ``i`` of ``n_destinations``
    destinations, for i = 1..min(k, n_destinations).

    ``probs[i - 1]`` holds the probability for ``i`` distinct destinations.
    """

    n_destinations: int
    k: int
    probs: tuple[float, ...]

    def __post_init__(self):
        if len(self.probs) != min(self.k, self.n_destinations):
            raise ValueError("probs must have min(k, n_destinations) entries")

    @property
    def support(self) -> np.ndarray:
        return np.arange(1, len(self.probs) + 1)

    def mean_distinct(self) -> float:
        """Expected number of distinct destinations."""
        return float(np.dot(self.support, self.probs))

    def log_configurations(self) -> float:
        """ln of the number of star/bar arrangements, C(n + k - 1, k)."""
        return log_binomial(self.n_destinations + self.k - 1, self.k)

    def log_configurations_with(self, i: int) -> float:
        """ln of the number of arrangements hitting exactly ``i`` destinations."""
        if not 1 <= i <= len(self.probs):
            raise ValueError(f"i={i} outside 1..{len(self.probs)}")
        return log_binomial(self.n_destinations, i) + log_binomial(self.k - 1, self.k - i)


def occupancy_distribution(n_destinations: int, k: int) -> OccupancyDistribution:
    """Distribution of the number of distinct destinations among ``k`` packets.

    Every arrangement of ``k`` indistinguishable packets over ``n_destinations``
    boxes (stars and bars) is taken as equally likely, so

        P(i) = C(n, i) C(k - 1, k - i) / C(n + k - 1, k).
    """
    for name, v in (("n_destinations", n_destinations), ("k", k)):
        if isinstance(v, bool) or int(v) != v:
            raise TypeError(f"{name} must be an integer")
        if v < 1:
            raise ValueError(f"{name} must be >= 1, got {v}")
    n, k = int(n_destinations), int(k)
    # exact integer terms C(n, i) C(k - 1, k - i), built up one i at a time;
    # their sum is C(n + k - 1, k) (Vandermonde) and int / int rounds correctly
    terms = []
    a, b = n, 1  # C(n, 1), C(k - 1, k - 1)
    for i in range(1, min(k, n) + 1):
        terms.append(a * b)
        a = a * (n - i) // (i + 1)
        b = b * (k - i) // i
    total = sum(terms)
    return OccupancyDistribution(n, k, tuple(t / total for t in terms))
