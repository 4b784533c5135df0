"""Subsampled log-likelihood and likelihood estimators.

Everything stays in the log domain: with n in the millions the total
log-likelihood has magnitudes that overflow exp(), so likelihood values
are only ever exponentiated inside toy-scale test oracles.

Estimators are deterministic functions of (theta, SubsampleState); the
randomness lives entirely in the state constructors, which take an
explicit numpy Generator.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtr

from .control_variates import differences
from .errors import DomainError
from .models import Dataset, ModelSpec

KIND_SRS = "independent_srs_wr"
KIND_CPM = "cpm_gaussian"
KIND_BPM = "bpm_blocks"
KIND_BLOCK_POISSON = "block_poisson"


@dataclass
class SubsampleState:
    """The auxiliary variable u: which observations a likelihood estimate saw.

    kind selects the layout: plain with-replacement indices, a Gaussian
    code vector (correlated proposals), indices partitioned into blocks
    (block-wise refresh), or nested mini-batches (product estimator).
    `cursor` tracks which block a cyclic refresh touches next.
    """

    kind: str
    n: int
    indices: np.ndarray | None = None
    gaussians: np.ndarray | None = None
    block_bounds: np.ndarray | None = None
    batches: list[list[np.ndarray]] | None = field(default=None)
    batch_size: int | None = None
    cursor: int = 0

    @property
    def m(self) -> int:
        if self.indices is not None:
            return int(self.indices.shape[0])
        return sum(b.shape[0] for block in self.batches for b in block)


def gaussian_to_index(g: np.ndarray, n: int) -> np.ndarray:
    """Map standard normals to uniform observation indices via the normal CDF."""
    return np.minimum((n * ndtr(g)).astype(int), n - 1)


def draw_srs(n: int, m: int, rng: np.random.Generator) -> SubsampleState:
    if m < 1:
        raise DomainError("subsample size must be >= 1")
    return SubsampleState(kind=KIND_SRS, n=n, indices=rng.integers(0, n, size=m))


def draw_cpm(n: int, m: int, rng: np.random.Generator) -> SubsampleState:
    if m < 1:
        raise DomainError("subsample size must be >= 1")
    g = rng.standard_normal(m)
    return SubsampleState(kind=KIND_CPM, n=n, indices=gaussian_to_index(g, n), gaussians=g)


def draw_bpm(n: int, m: int, n_blocks: int, rng: np.random.Generator) -> SubsampleState:
    if m < 1:
        raise DomainError("subsample size must be >= 1")
    if not 1 <= n_blocks <= m:
        raise DomainError("need 1 <= n_blocks <= m")
    sizes = np.full(n_blocks, m // n_blocks)
    sizes[: m % n_blocks] += 1
    bounds = np.concatenate([[0], np.cumsum(sizes)])
    return SubsampleState(kind=KIND_BPM, n=n, indices=rng.integers(0, n, size=m),
                          block_bounds=bounds)


def draw_block_poisson(n: int, n_products: int, batch_size: int,
                       rng: np.random.Generator) -> SubsampleState:
    """lambda outer products, each holding Pois(1)-many mini-batches of indices."""
    if n_products < 1 or batch_size < 1:
        raise DomainError("need n_products >= 1 and batch_size >= 1")
    batches = []
    for _ in range(n_products):
        count = rng.poisson(1.0)
        batches.append([rng.integers(0, n, size=batch_size) for _ in range(count)])
    return SubsampleState(kind=KIND_BLOCK_POISSON, n=n, batches=batches,
                          batch_size=batch_size)


@dataclass
class LogLikEstimate:
    """A log-likelihood total estimate with its estimated variance.

    sample_variance estimates Var of the *total* estimator: the raw
    within-sample variance of the summands is scaled by n^2/m, so that the
    bias correction exp(-sample_variance/2) operates on the right scale.
    """

    value: float
    sample_variance: float
    m: int
    theta: np.ndarray


def srs_wr_estimate(model: ModelSpec, dataset: Dataset, theta, indices) -> LogLikEstimate:
    """Plain with-replacement expansion estimator (n/m) * sum ell_{u_k}."""
    indices = np.atleast_1d(np.asarray(indices))
    if indices.size == 0:
        raise DomainError("empty index set")
    n, m = dataset.n, indices.size
    ell = model.loglik(theta, dataset, indices)
    value = n / m * float(np.sum(ell))
    sample_variance = n * n / m * float(np.mean((ell - np.mean(ell)) ** 2))
    return LogLikEstimate(value=value, sample_variance=sample_variance, m=m,
                          theta=np.asarray(theta, dtype=float))


def optimal_m_srs_wor(n: int, sigma2_pop: float, target: float = 3.3) -> int:
    """Without-replacement subsample size hitting a target estimator variance.

    Only used for planning studies; all samplers draw with replacement.
    """
    if n < 1 or sigma2_pop < 0 or target <= 0:
        raise DomainError("need n >= 1, sigma2_pop >= 0, target > 0")
    m = int(np.ceil(n * n * sigma2_pop / (n * sigma2_pop + target)))
    return min(max(m, 1), n)


def wor_sampling_fraction(n: int, sigma2_pop: float, target: float = 3.3) -> float:
    """Exact real-valued m/n from the without-replacement variance formula."""
    return n * sigma2_pop / (n * sigma2_pop + target)


def difference_estimate(model: ModelSpec, cache, dataset: Dataset, theta,
                        sub) -> LogLikEstimate:
    """Survey-sampling difference estimator: sum q_i + (n/m) sum d_{u_k}.

    Unbiased for the log-likelihood total whatever the quality of the
    control variates.  `sub` is a SubsampleState carrying with-replacement
    indices, or a bare index array.
    """
    indices = sub.indices if isinstance(sub, SubsampleState) else np.atleast_1d(np.asarray(sub))
    if indices is None or indices.size == 0:
        raise DomainError("empty index set")
    n, m = dataset.n, indices.size
    d = differences(model, cache, dataset, theta, indices)
    value = cache.sum_values(theta) + n / m * float(np.sum(d))
    sample_variance = n * n / m * float(np.mean((d - np.mean(d)) ** 2))
    return LogLikEstimate(value=value, sample_variance=sample_variance, m=m,
                          theta=np.asarray(theta, dtype=float))


def bias_corrected_likelihood(est: LogLikEstimate) -> float:
    """Log-domain value of the bias-corrected likelihood estimate.

    Exactly unbiased when the log-likelihood estimate is normal with known
    variance; plugging the sample variance makes it approximately unbiased
    (the residual bias vanishes as m grows).
    """
    return est.value - est.sample_variance / 2.0


# ---------------------------------------------------------------------------
# Block-Poisson product estimator
# ---------------------------------------------------------------------------

@dataclass
class BlockPoissonConfig:
    """n_products outer blocks, Pois(1) mini-batches of batch_size each,
    soft lower bound `bound` on the mini-batch difference estimates."""

    n_products: int
    batch_size: int
    bound: float

    def __post_init__(self):
        if self.n_products < 1 or self.batch_size < 1:
            raise DomainError("need n_products >= 1 and batch_size >= 1")


@dataclass
class SignedLogEstimate:
    log_abs: float
    sign: int
    state: SubsampleState


def block_poisson_evaluate(model: ModelSpec, cache, dataset: Dataset, theta,
                           cfg: BlockPoissonConfig, state: SubsampleState) -> tuple[float, int]:
    """Deterministic evaluation of the product estimator on a drawn state.

    Returns (log |estimate|, sign).  Unbiased for the likelihood itself,
    not its log; possibly negative when a mini-batch estimate falls below
    the soft bound.  A mini-batch hitting the bound exactly yields sign 0
    with log_abs = -inf (callers treat it as an invalid proposal).
    """
    if state.kind != KIND_BLOCK_POISSON:
        raise DomainError(f"expected a {KIND_BLOCK_POISSON} state, got {state.kind}")
    n = dataset.n
    lam = cfg.n_products
    log_abs = cache.sum_values(theta) + cfg.bound + lam
    sign = 1
    for block in state.batches:
        for batch in block:
            d = differences(model, cache, dataset, theta, batch)
            dhat = n / cfg.batch_size * float(np.sum(d))
            factor = (dhat - cfg.bound) / lam
            if factor == 0.0:
                return -np.inf, 0
            if factor < 0.0:
                sign = -sign
            log_abs += np.log(abs(factor))
    return float(log_abs), sign


def block_poisson_estimate(model: ModelSpec, cache, dataset: Dataset, theta,
                           cfg: BlockPoissonConfig, rng: np.random.Generator) -> SignedLogEstimate:
    state = draw_block_poisson(dataset.n, cfg.n_products, cfg.batch_size, rng)
    log_abs, sign = block_poisson_evaluate(model, cache, dataset, theta, cfg, state)
    return SignedLogEstimate(log_abs=log_abs, sign=sign, state=state)


def default_soft_bound(model: ModelSpec, cache, dataset: Dataset, theta,
                       cfg_n_products: int, pilot_m: int, rng: np.random.Generator) -> float:
    """bound = dhat_pilot - n_products, the variance-minimizing choice with
    the unknown total of differences replaced by a pilot estimate."""
    pilot = draw_srs(dataset.n, pilot_m, rng)
    est = difference_estimate(model, cache, dataset, theta, pilot)
    dhat = est.value - cache.sum_values(theta)
    return dhat - cfg_n_products


# ---------------------------------------------------------------------------
# Subsample-size planning
# ---------------------------------------------------------------------------

@dataclass
class PlanningInputs:
    n: int
    sigma2_pop: float
    target: float = 1.0

    def __post_init__(self):
        if self.n < 1 or self.sigma2_pop < 0 or self.target <= 0:
            raise DomainError("need n >= 1, sigma2_pop >= 0, target > 0")


def estimate_sigma2_pilot(model: ModelSpec, cache, dataset: Dataset, thetas,
                          pilot_size: int, rng: np.random.Generator) -> float:
    """Population variance of the differences, estimated from a pilot
    with-replacement subsample and averaged over the supplied evaluation
    points (the variance of parameter-expanded differences depends
    strongly on where theta sits)."""
    if pilot_size < 30:
        raise DomainError("pilot size must be >= 30")
    thetas = np.atleast_2d(np.asarray(thetas, dtype=float))
    out = []
    for theta in thetas:
        idx = rng.integers(0, dataset.n, size=pilot_size)
        d = differences(model, cache, dataset, theta, idx)
        out.append(float(np.var(d, ddof=1)))
    return float(np.mean(out))


def plan_subsample_size(plan: PlanningInputs) -> tuple[int, bool]:
    """m = ceil(n^2 sigma2 / target) for with-replacement sampling.

    Returns (m, degenerate) where degenerate flags a zero pilot variance
    (m falls back to 1; the estimator is exact in that case anyway).
    """
    if plan.sigma2_pop == 0.0:
        return 1, True
    return int(np.ceil(plan.n**2 * plan.sigma2_pop / plan.target)), False
