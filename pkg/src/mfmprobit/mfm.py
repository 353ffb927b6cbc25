"""Partition-prior coefficients and urn weights for mixture-of-finite-mixtures sampling.

The coefficient series

    V_n(t) = sum_{k >= 1} k_(t) / (gamma*k)^(n) * p(k)

(with k_(t) the falling and (gamma*k)^(n) the rising factorial) is what slows
the creation of new clusters relative to a Dirichlet-process urn; its
successive ratios V_n(t+1)/V_n(t) multiply the new-cluster weight.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy.special import gammaln

from .types import default_k_log_pmf

# A term is negligible once it falls 40 nats below the running sum; requiring
# 10 consecutive negligible terms guards against non-monotone onset (k < t
# terms vanish, early terms can grow before the prior tail takes over).
_LOG_TAIL_CUTOFF = 40.0
_CONSECUTIVE_SMALL = 10
_MAX_TERMS = 1_000_000


@dataclass(frozen=True)
class LogVnTable:
    """Precomputed log V_n(t) for t = 1..t_max (stored at index t-1)."""

    n: int
    gamma: float
    log_vn: np.ndarray

    @property
    def t_max(self) -> int:
        return self.log_vn.shape[0]

    def value(self, t: int) -> float:
        if not 1 <= t <= self.t_max:
            raise ValueError(f"t={t} outside table range 1..{self.t_max}")
        return float(self.log_vn[t - 1])

    def log_ratio(self, t: int) -> float:
        """log V_n(t+1) - log V_n(t)."""
        return self.value(t + 1) - self.value(t)


def _log_term(k: int, n: int, t: int, gamma: float, log_pk: float) -> float:
    # falling factorial k_(t) vanishes for k < t
    if k < t:
        return -np.inf
    log_falling = gammaln(k + 1.0) - gammaln(k - t + 1.0)
    log_rising = gammaln(gamma * k + n) - gammaln(gamma * k)
    return log_falling - log_rising + log_pk


def compute_log_vn(
    n: int,
    gamma: float,
    k_prior: Optional[Callable[[np.ndarray], np.ndarray]] = None,
    t_max: Optional[int] = None,
) -> LogVnTable:
    """Sum the coefficient series in log space for every t up to t_max.

    The sum over k is accumulated with log-sum-exp and truncated once the
    additive increment stays below exp(log_sum - 40) for 10 consecutive k;
    for priors with superexponential tails (the default truncated Poisson)
    the discarded tail is far below 1e-15 relative error.
    """
    if n < 1:
        raise ValueError("n must be a positive integer")
    if gamma <= 0:
        raise ValueError("gamma must be positive")
    if k_prior is None:
        k_prior = default_k_log_pmf
    if t_max is None:
        t_max = min(n, 50)
    if not 1 <= t_max <= n:
        raise ValueError("t_max must satisfy 1 <= t_max <= n")

    log_vn = np.empty(t_max)
    for t in range(1, t_max + 1):
        log_sum = -np.inf
        small_streak = 0
        k = t
        while True:
            log_pk = float(k_prior(np.array([k]))[0])
            term = _log_term(k, n, t, gamma, log_pk)
            if np.isfinite(term):
                log_sum = np.logaddexp(log_sum, term)
            if np.isfinite(log_sum) and term < log_sum - _LOG_TAIL_CUTOFF:
                small_streak += 1
                if small_streak >= _CONSECUTIVE_SMALL:
                    break
            else:
                small_streak = 0
            k += 1
            if k - t > _MAX_TERMS:
                if not np.isfinite(log_sum):
                    raise ValueError("k_prior assigns no mass to any k >= 1")
                break
        log_vn[t - 1] = log_sum
    if not np.all(np.isfinite(log_vn)):
        raise ValueError("k_prior assigns no mass to any k >= 1")
    return LogVnTable(n=n, gamma=gamma, log_vn=log_vn)


def urn_weight_existing(cluster_size: int, gamma: float) -> float:
    """Unnormalized urn weight of joining an existing cluster."""
    if cluster_size < 1:
        raise ValueError("cluster_size must be at least 1")
    return cluster_size + gamma


def urn_weight_new(table: LogVnTable, t: int, gamma: float) -> float:
    """Unnormalized urn weight of opening a new cluster given t current ones."""
    return gamma * np.exp(table.log_ratio(t))
