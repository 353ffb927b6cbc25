"""Truncated-normal updates for the latent matrix and data-driven threshold moves."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.special import log_ndtr, ndtr, ndtri

from .types import ClusterParams, OrdinalDataset, Thresholds

# Beyond this many standard deviations, the inverse-CDF loses precision and
# the sampler switches to one-sided exponential rejection.
TAIL_CUTOFF = 6.0

# A threshold bracket narrower than this is treated as a transient collision
# and the cut is left unchanged for the iteration.
BRACKET_COLLAPSE = 1e-12


@dataclass(frozen=True)
class TruncationBracket:
    """Half-open latent interval [lo, hi); either end may be infinite."""

    lo: float
    hi: float

    def __post_init__(self):
        if not self.lo < self.hi:
            raise ValueError(f"empty bracket [{self.lo}, {self.hi})")


def _tail_rejection(a: np.ndarray, b: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Standard normal conditioned to (a, b) with a deep in the right tail.

    One-sided exponential proposal (rate chosen at the mode of the acceptance
    ratio), with draws past b rejected.
    """
    out = np.empty_like(a)
    pending = np.ones(a.shape[0], dtype=bool)
    lam = 0.5 * (a + np.sqrt(a * a + 4.0))
    while np.any(pending):
        idx = np.nonzero(pending)[0]
        prop = a[idx] + rng.standard_exponential(idx.shape[0]) / lam[idx]
        accept = np.log(rng.random(idx.shape[0])) < -0.5 * (prop - lam[idx]) ** 2
        accept &= prop < b[idx]
        hit = idx[accept]
        out[hit] = prop[accept]
        pending[hit] = False
    return out


def _central_inverse_cdf(a: np.ndarray, b: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Inverse-CDF draw on (a, b), worked in whichever tail keeps precision."""
    out = np.empty_like(a)
    u = rng.random(a.shape[0])

    right = a >= 0.0  # both bounds in the right half: use survival function
    if np.any(right):
        sa = ndtr(-a[right])
        sb = ndtr(-b[right])
        out[right] = -ndtri(sb + u[right] * (sa - sb))
    left = ~right & (b <= 0.0)
    if np.any(left):
        fa = ndtr(a[left])
        fb = ndtr(b[left])
        out[left] = ndtri(fa + u[left] * (fb - fa))
    mid = ~right & ~left
    if np.any(mid):
        fa = ndtr(a[mid])
        fb = ndtr(b[mid])
        out[mid] = ndtri(fa + u[mid] * (fb - fa))
    return out


def _sample_std_truncated(a: np.ndarray, b: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Standard normal conditioned to (a, b), elementwise over arrays."""
    out = np.empty_like(a)
    upper_tail = a >= TAIL_CUTOFF
    lower_tail = b <= -TAIL_CUTOFF
    central = ~upper_tail & ~lower_tail
    if np.any(upper_tail):
        out[upper_tail] = _tail_rejection(a[upper_tail], b[upper_tail], rng)
    if np.any(lower_tail):
        out[lower_tail] = -_tail_rejection(-b[lower_tail], -a[lower_tail], rng)
    if np.any(central):
        out[central] = _central_inverse_cdf(a[central], b[central], rng)
    # float rounding can land exactly on a bound; the bracket is closed at lo
    # and open at hi, so nudge only the upper side
    np.maximum(out, a, out=out)
    hit_hi = out >= b
    if np.any(hit_hi):
        out[hit_hi] = np.nextafter(b[hit_hi], -np.inf)
    return out


def sample_truncated_normal_array(
    mean: np.ndarray,
    sd: float,
    lo: np.ndarray,
    hi: np.ndarray,
    rng: np.random.Generator,
) -> np.ndarray:
    """Vector of independent N(mean_i, sd^2) draws conditioned to [lo_i, hi_i)."""
    if sd <= 0:
        raise ValueError("sd must be positive")
    a = (lo - mean) / sd
    b = (hi - mean) / sd
    if np.any(a >= b):
        raise ValueError("empty truncation bracket")
    return mean + sd * _sample_std_truncated(a, b, rng)


def sample_truncated_normal(
    mean: float, sd: float, bracket: TruncationBracket, rng: np.random.Generator
) -> float:
    """One draw from N(mean, sd^2) conditioned to the bracket."""
    draw = sample_truncated_normal_array(
        np.array([float(mean)]), sd, np.array([bracket.lo]), np.array([bracket.hi]), rng
    )
    return float(draw[0])


def update_latent_rows(
    levels: np.ndarray,
    latent: np.ndarray,
    params: ClusterParams,
    thresholds: Thresholds,
    rng: np.random.Generator,
) -> np.ndarray:
    """One coordinate-wise Gibbs sweep over a block of rows sharing parameters.

    Rows are conditionally independent given the cluster parameters, so each
    coordinate is refreshed for the whole block at once; the conditional of
    coordinate j has mean mu_j - sum_k omega_jk (z_k - mu_k) / omega_jj over
    k != j and variance 1 / omega_jj, truncated to each row's level bracket.
    """
    z = np.array(latent, dtype=np.float64, copy=True)
    omega = params.precision
    mu = params.mean
    for j in range(z.shape[1]):
        ojj = omega[j, j]
        resid = (z - mu) @ omega[:, j]
        cond_mean = mu[j] - (resid - (z[:, j] - mu[j]) * ojj) / ojj
        padded = thresholds.padded(j)
        lo = padded[levels[:, j] - 1]
        hi = padded[levels[:, j]]
        z[:, j] = sample_truncated_normal_array(cond_mean, 1.0 / np.sqrt(ojj), lo, hi, rng)
    return z


def update_latent_row(
    x_i: np.ndarray,
    z_i: np.ndarray,
    params: ClusterParams,
    thresholds: Thresholds,
    rng: np.random.Generator,
) -> np.ndarray:
    """Coordinate-wise Gibbs sweep of a single observation's latent row."""
    return update_latent_rows(
        np.atleast_2d(np.asarray(x_i, dtype=np.int64)),
        np.atleast_2d(np.asarray(z_i, dtype=np.float64)),
        params,
        thresholds,
        rng,
    )[0]


def update_thresholds(
    latent: np.ndarray,
    dataset: OrdinalDataset,
    thresholds: Thresholds,
    rng: np.random.Generator,
    prior_brackets: Optional[Sequence[np.ndarray]] = None,
) -> Thresholds:
    """Uniform draws of every interior cut inside its data-determined bracket.

    Cut k of variable j moves uniformly between the largest latent value at
    level k (or the previous cut when the level is unobserved) and the
    smallest latent value at level k+1 (or the next cut).  `prior_brackets`
    optionally intersects each cut's bracket with a fixed interval; the
    default diffuse prior imposes none.  A bracket narrower than 1e-12 leaves
    the cut unchanged; an inverted bracket signals a corrupted state.
    """
    new_cuts = []
    for j in range(dataset.p):
        padded = thresholds.padded(j)
        levels_j = dataset.values[:, j]
        z_j = latent[:, j]
        k_j = int(dataset.level_counts[j])
        for k in range(1, k_j):
            lo = padded[k - 1]
            hi = padded[k + 1]
            at_k = z_j[levels_j == k]
            if at_k.size:
                lo = max(lo, float(at_k.max()))
            above = z_j[levels_j == k + 1]
            if above.size:
                hi = min(hi, float(above.min()))
            if prior_brackets is not None:
                lo = max(lo, float(prior_brackets[j][k - 1, 0]))
                hi = min(hi, float(prior_brackets[j][k - 1, 1]))
            if hi - lo < BRACKET_COLLAPSE:
                if hi < lo - 1e-9:
                    raise RuntimeError(
                        f"inverted threshold bracket for variable {j}, cut {k}"
                    )
                continue
            padded[k] = rng.uniform(lo, hi)
        new_cuts.append(padded[1:-1].copy())
    return Thresholds(tuple(new_cuts))


def _log_interval_mass(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """log(Phi(b) - Phi(a)) computed in whichever tail keeps precision."""
    out = np.empty_like(a)
    right = a >= 0.0
    if np.any(right):  # Phi(b) - Phi(a) = Phi(-a) - Phi(-b)
        hi = log_ndtr(-a[right])
        lo = log_ndtr(-b[right])
        out[right] = hi + np.log1p(-np.exp(lo - hi))
    rest = ~right
    if np.any(rest):
        hi = log_ndtr(b[rest])
        lo = log_ndtr(a[rest])
        out[rest] = hi + np.log1p(-np.exp(lo - hi))
    return out


def truncated_normal_logpdf(
    x: np.ndarray, mean: np.ndarray, sd: float, lo: np.ndarray, hi: np.ndarray
) -> np.ndarray:
    """Log density of N(mean, sd^2) conditioned to [lo, hi), elementwise."""
    u = (x - mean) / sd
    a = (lo - mean) / sd
    b = (hi - mean) / sd
    return -0.5 * u * u - 0.5 * np.log(2.0 * np.pi) - np.log(sd) - _log_interval_mass(a, b)


def sequential_cell_transform(
    mean: np.ndarray,
    chol_cov: np.ndarray,
    lo: np.ndarray,
    hi: np.ndarray,
    rng: Optional[np.random.Generator] = None,
    values: Optional[np.ndarray] = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Coordinate-sequential truncated proposal for whole latent rows.

    Coordinates are visited in fixed order; coordinate j is drawn from the
    Gaussian conditional given coordinates before j (via the covariance
    Cholesky factor), truncated to that cell.  Returns (rows, log density).
    With `values` given, evaluates the scheme's log density at those rows
    instead of sampling.  This is a proposal law, not the Gaussian
    conditioned to the cell box, but its density is exactly computable.
    """
    sample = values is None
    n = (lo if sample else values).shape[0]
    p = mean.shape[0]
    rows = np.empty((n, p)) if sample else np.asarray(values, dtype=np.float64)
    eps = np.empty((n, p))
    log_q = np.zeros(n)
    for j in range(p):
        cond_mean = mean[j] + eps[:, :j] @ chol_cov[j, :j]
        sd = chol_cov[j, j]
        if sample:
            rows[:, j] = sample_truncated_normal_array(cond_mean, sd, lo[:, j], hi[:, j], rng)
        log_q += truncated_normal_logpdf(rows[:, j], cond_mean, sd, lo[:, j], hi[:, j])
        eps[:, j] = (rows[:, j] - cond_mean) / sd
    return rows, log_q


def discretize_latent(latent: np.ndarray, cuts: Sequence[np.ndarray]) -> np.ndarray:
    """Map latent values to 1-based ordinal levels: 1 + #{cuts at or below}."""
    latent = np.atleast_2d(latent)
    levels = np.ones(latent.shape, dtype=np.int64)
    for j, c in enumerate(cuts):
        levels[:, j] += (latent[:, j : j + 1] >= np.asarray(c)[None, :]).sum(axis=1)
    return levels


def quantile_bracket_bounds(n_levels: int) -> np.ndarray:
    """Disjoint standard-normal quantile brackets, one per interior cut.

    Cut l's bracket is [ndtri((l-0.5)/K), ndtri((l+0.5)/K)]; adjacent brackets
    share endpoints, so draws are strictly ordered by construction.
    """
    cuts = np.arange(1, n_levels)
    lo = ndtri((cuts - 0.5) / n_levels)
    hi = ndtri((cuts + 0.5) / n_levels)
    return np.column_stack((lo, hi))
