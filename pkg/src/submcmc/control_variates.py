"""Cheap per-observation approximations q_i(theta) and their precomputation.

Two families: Taylor expansion in parameter space around a fixed expansion
point (cheap total: O(d^2) per theta, independent of n) and Taylor
expansion in data space around cluster centroids (cheap total: O(K) per
theta).  Both support per-index evaluation for sampled observations, which
is what the difference estimator needs.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import CacheBuildError, DomainError
from .models import Dataset, ModelSpec


def _first_bad_index(*arrays) -> int | None:
    for arr in arrays:
        if arr is None:
            continue
        flat_ok = np.isfinite(arr.reshape(arr.shape[0], -1)).all(axis=1)
        if not flat_ok.all():
            return int(np.argmin(flat_ok))
    return None


@dataclass
class ParamExpandedCache:
    """Taylor-in-theta control variates anchored at `expansion_point`.

    Stored per-observation ingredients cost about 8*n*(1 + d + d^2) bytes
    at order 2; pass store_per_obs=False to trade that for recomputation
    on every per-index evaluation (the cheap total-sum path is unaffected).
    """

    expansion_point: np.ndarray
    order: int
    sum_ell: float
    sum_grad: np.ndarray
    sum_hess: np.ndarray
    ell: np.ndarray | None
    grad: np.ndarray | None
    hess: np.ndarray | None
    n: int
    d: int
    _model: ModelSpec | None = field(default=None, repr=False)
    _dataset: Dataset | None = field(default=None, repr=False)

    def _per_obs(self, idx):
        if self.ell is not None:
            ell = self.ell[idx]
            grad = self.grad[idx] if self.order >= 1 else None
            hess = self.hess[idx] if self.order >= 2 else None
            return ell, grad, hess
        t0 = self.expansion_point
        ell = self._model.loglik(t0, self._dataset, idx)
        grad = self._model.grad_theta(t0, self._dataset, idx) if self.order >= 1 else None
        hess = self._model.hess_theta(t0, self._dataset, idx) if self.order >= 2 else None
        return ell, grad, hess

    def values_at(self, theta, idx) -> np.ndarray:
        idx = _check_indices(idx, self.n)
        ell, grad, hess = self._per_obs(idx)
        q = ell.copy()
        if self.order >= 1:
            delta = np.asarray(theta, dtype=float) - self.expansion_point
            q += grad @ delta
            if self.order >= 2:
                q += 0.5 * np.einsum("kij,i,j->k", hess, delta, delta)
        return q

    def sum_values(self, theta) -> float:
        total = self.sum_ell
        if self.order >= 1:
            delta = np.asarray(theta, dtype=float) - self.expansion_point
            total += float(self.sum_grad @ delta)
            if self.order >= 2:
                total += 0.5 * float(delta @ self.sum_hess @ delta)
        return total

    # theta-gradients of the q_i, needed by the subsampled HMC potential
    def grads_at(self, theta, idx) -> np.ndarray:
        idx = _check_indices(idx, self.n)
        _, grad, hess = self._per_obs(idx)
        if self.order == 0:
            return np.zeros((len(idx), self.d))
        out = grad.copy()
        if self.order >= 2:
            delta = np.asarray(theta, dtype=float) - self.expansion_point
            out += hess @ delta
        return out

    def grad_sum(self, theta) -> np.ndarray:
        if self.order == 0:
            return np.zeros(self.d)
        out = self.sum_grad.copy()
        if self.order >= 2:
            delta = np.asarray(theta, dtype=float) - self.expansion_point
            out += self.sum_hess @ delta
        return out


def build_param_expanded(model: ModelSpec, dataset: Dataset, expansion_point,
                         order: int = 2, store_per_obs: bool = True) -> ParamExpandedCache:
    """One full pass over the data; afterwards sum_values() is O(d^2) per theta."""
    if order not in (0, 1, 2):
        raise DomainError("order must be 0, 1 or 2")
    t0 = np.asarray(expansion_point, dtype=float)
    d = model.dim(dataset)
    ell = model.loglik(t0, dataset)
    grad = model.grad_theta(t0, dataset) if order >= 1 else None
    hess = model.hess_theta(t0, dataset) if order >= 2 else None
    bad = _first_bad_index(ell[:, None], grad, hess)
    if bad is not None:
        raise CacheBuildError(f"non-finite expansion quantity at observation {bad}")
    cache = ParamExpandedCache(
        expansion_point=t0,
        order=order,
        sum_ell=float(np.sum(ell)),
        sum_grad=np.sum(grad, axis=0) if order >= 1 else np.zeros(d),
        sum_hess=np.sum(hess, axis=0) if order >= 2 else np.zeros((d, d)),
        ell=ell if store_per_obs else None,
        grad=grad if (store_per_obs and order >= 1) else None,
        hess=hess if (store_per_obs and order >= 2) else None,
        n=dataset.n,
        d=d,
    )
    if not store_per_obs:
        cache._model = model
        cache._dataset = dataset
    return cache


@dataclass
class ClusteringResult:
    """k-means output: centroids in original scale, per-point assignment,
    the per-coordinate scales used for distances, and the within-cluster
    sum of squares recorded after every assignment step."""

    centroids: np.ndarray
    assignment: np.ndarray
    scales: np.ndarray
    objective_path: list[float]


def kmeans_cluster(dataset: Dataset, n_clusters: int, seed: int = 0,
                   max_iter: int = 100) -> ClusteringResult:
    """Lloyd's algorithm with k-means++ seeding on standardized (y, x) rows.

    Each coordinate is scaled to unit sample variance before distance
    computation so the count coordinate cannot dominate; centroids are
    mapped back to the original scale.  Deterministic for a fixed seed;
    ties in the nearest-centroid assignment go to the lowest centroid
    index; an empty cluster is re-seeded at the point farthest from its
    assigned centroid.
    """
    Z = dataset.points()
    n = Z.shape[0]
    if not 1 <= n_clusters <= n:
        raise DomainError(f"need 1 <= n_clusters <= n, got K={n_clusters}, n={n}")
    scales = np.std(Z, axis=0, ddof=1) if n > 1 else np.ones(Z.shape[1])
    scales = np.where(scales > 0, scales, 1.0)
    S = Z / scales

    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))
    centers = np.empty((n_clusters, S.shape[1]))
    centers[0] = S[rng.integers(n)]
    d2 = np.sum((S - centers[0]) ** 2, axis=1)
    for j in range(1, n_clusters):
        total = d2.sum()
        if total > 0:
            pick = rng.choice(n, p=d2 / total)
        else:
            pick = rng.integers(n)
        centers[j] = S[pick]
        d2 = np.minimum(d2, np.sum((S - centers[j]) ** 2, axis=1))

    assignment = np.full(n, -1, dtype=int)
    objective_path: list[float] = []
    for _ in range(max_iter):
        dist2 = np.sum((S[:, None, :] - centers[None, :, :]) ** 2, axis=2)
        new_assignment = np.argmin(dist2, axis=1)
        point_d2 = dist2[np.arange(n), new_assignment]
        objective_path.append(float(point_d2.sum()))
        if np.array_equal(new_assignment, assignment):
            break
        assignment = new_assignment
        for j in range(n_clusters):
            member = assignment == j
            if member.any():
                centers[j] = S[member].mean(axis=0)
            else:
                centers[j] = S[np.argmax(point_d2)]
                point_d2[np.argmax(point_d2)] = 0.0
    return ClusteringResult(
        centroids=centers * scales,
        assignment=assignment,
        scales=scales,
        objective_path=objective_path,
    )


@dataclass
class DataExpandedCache:
    """Taylor-in-data-space control variates around cluster centroids.

    Stores per-centroid aggregates (member count, summed deviations,
    summed deviation outer products) so that sum_values() costs
    O(K * dim(z)^2) per theta; per-observation deviations are kept for
    sampled-index evaluation.
    """

    centroids: np.ndarray
    assignment: np.ndarray
    dev: np.ndarray
    counts: np.ndarray
    sum_dev: np.ndarray
    sum_outer: np.ndarray
    order: int
    n: int
    n_clusters: int
    _model: ModelSpec = field(default=None, repr=False)

    def _centroid_eval(self, theta):
        base = self._model.loglik_at(theta, self.centroids)
        g = self._model.grad_data(theta, self.centroids) if self.order >= 1 else None
        H = self._model.hess_data(theta, self.centroids) if self.order >= 2 else None
        return base, g, H

    def values_at(self, theta, idx) -> np.ndarray:
        idx = _check_indices(idx, self.n)
        base, g, H = self._centroid_eval(theta)
        c = self.assignment[idx]
        q = base[c].copy()
        if self.order >= 1:
            dv = self.dev[idx]
            q += np.einsum("ki,ki->k", dv, g[c])
            if self.order >= 2:
                q += 0.5 * np.einsum("ki,kij,kj->k", dv, H[c], dv)
        return q

    def sum_values(self, theta) -> float:
        base, g, H = self._centroid_eval(theta)
        total = float(self.counts @ base)
        if self.order >= 1:
            total += float(np.einsum("ci,ci->", self.sum_dev, g))
            if self.order >= 2:
                total += 0.5 * float(np.einsum("cij,cij->", self.sum_outer, H))
        return total

    def grads_at(self, theta, idx):
        raise NotImplementedError(
            "theta-gradients of data-expanded control variates need mixed "
            "theta/data derivatives; use a parameter-expanded or exact cache"
        )

    def grad_sum(self, theta):
        raise NotImplementedError(
            "theta-gradients of data-expanded control variates need mixed "
            "theta/data derivatives; use a parameter-expanded or exact cache"
        )


def build_data_expanded(model: ModelSpec, dataset: Dataset, clustering,
                        order: int = 2) -> DataExpandedCache:
    """Aggregate deviation moments per centroid; `clustering` is a
    ClusteringResult or a (centroids, assignment) pair."""
    if order not in (0, 1, 2):
        raise DomainError("order must be 0, 1 or 2")
    if isinstance(clustering, ClusteringResult):
        centroids, assignment = clustering.centroids, clustering.assignment
    else:
        centroids, assignment = clustering
    centroids = np.asarray(centroids, dtype=float)
    assignment = np.asarray(assignment, dtype=int)
    Z = dataset.points()
    n, dz = Z.shape
    K = centroids.shape[0]
    dev = Z - centroids[assignment]
    bad = _first_bad_index(dev)
    if bad is not None:
        raise CacheBuildError(f"non-finite deviation at observation {bad}")
    counts = np.bincount(assignment, minlength=K).astype(float)
    sum_dev = np.zeros((K, dz))
    np.add.at(sum_dev, assignment, dev)
    sum_outer = np.zeros((K, dz, dz))
    np.add.at(sum_outer, assignment, dev[:, :, None] * dev[:, None, :])
    return DataExpandedCache(
        centroids=centroids,
        assignment=assignment,
        dev=dev,
        counts=counts,
        sum_dev=sum_dev,
        sum_outer=sum_outer,
        order=order,
        n=n,
        n_clusters=K,
        _model=model,
    )


class ExactControlVariate:
    """q_i(theta) = ell_i(theta) exactly: zero-variance differences.

    Defeats the purpose of subsampling (every evaluation is O(n)) but turns
    any pseudo-marginal kernel into its exact counterpart, which is what
    the equivalence oracles in the test-suite need.
    """

    def __init__(self, model: ModelSpec, dataset: Dataset):
        self._model = model
        self._dataset = dataset
        self.n = dataset.n
        self.d = model.dim(dataset)
        self.order = 2

    def values_at(self, theta, idx):
        idx = _check_indices(idx, self.n)
        return self._model.loglik(theta, self._dataset, idx)

    def sum_values(self, theta):
        return self._model.loglik_sum(theta, self._dataset)

    def grads_at(self, theta, idx):
        idx = _check_indices(idx, self.n)
        return self._model.grad_theta(theta, self._dataset, idx)

    def grad_sum(self, theta):
        return np.sum(self._model.grad_theta(theta, self._dataset), axis=0)


def differences(model: ModelSpec, cache, dataset: Dataset, theta, idx) -> np.ndarray:
    """d_i(theta) = ell_i(theta) - q_i(theta) at the given indices."""
    idx = _check_indices(idx, dataset.n)
    return model.loglik(theta, dataset, idx) - cache.values_at(theta, idx)


def _check_indices(idx, n: int) -> np.ndarray:
    idx = np.atleast_1d(np.asarray(idx))
    if idx.size and (idx.min() < 0 or idx.max() >= n):
        raise DomainError("index out of range")
    return idx


# ---------------------------------------------------------------------------
# Expansion-point selection
# ---------------------------------------------------------------------------

def select_expansion_point(model: ModelSpec, dataset: Dataset, seed: int = 0,
                           pilot_size: int | None = None, newton_steps: int = 50,
                           exact: bool = False) -> np.ndarray:
    """Posterior mode of a pilot subset, found by Newton iteration.

    Default pilot size is ceil(10 * sqrt(n)); `exact=True` optimizes over
    the full dataset instead (used by tests and small problems).
    """
    n = dataset.n
    d = model.dim(dataset)
    if exact:
        idx = None
    else:
        if pilot_size is None:
            pilot_size = min(n, int(np.ceil(10.0 * np.sqrt(n))))
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))
        idx = rng.choice(n, size=pilot_size, replace=False)
    theta = np.zeros(d)
    prior_hess = -np.eye(d) / model.prior.sd**2
    for _ in range(newton_steps):
        g = np.sum(model.grad_theta(theta, dataset, idx), axis=0) + model.grad_log_prior(theta)
        H = np.sum(model.hess_theta(theta, dataset, idx), axis=0) + prior_hess
        try:
            step = np.linalg.solve(H, g)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(H, g, rcond=None)[0]
        new = theta - step
        if not np.all(np.isfinite(new)):
            break
        if np.max(np.abs(new - theta)) < 1e-12:
            theta = new
            break
        theta = new
    return theta


# ---------------------------------------------------------------------------
# Cache serialization (versioned binary: magic, version, kind, shape, payload)
# ---------------------------------------------------------------------------

_MAGIC = b"SMCV"
_VERSION = 1
_KIND_PARAM = 1
_KIND_DATA = 2
_HEADER = struct.Struct("<4sIBQQQB")


def save_cache(cache, path):
    """Persist a built cache so expensive passes are reusable across runs."""
    if isinstance(cache, ParamExpandedCache):
        if cache.ell is None:
            raise DomainError("recompute-on-demand caches hold model references; rebuild to save")
        header = _HEADER.pack(_MAGIC, _VERSION, _KIND_PARAM, cache.n, cache.d, 0, cache.order)
        arrays = [cache.expansion_point, np.asarray(cache.sum_ell), cache.sum_grad,
                  cache.sum_hess, cache.ell,
                  cache.grad if cache.grad is not None else np.zeros(0),
                  cache.hess if cache.hess is not None else np.zeros(0)]
    elif isinstance(cache, DataExpandedCache):
        header = _HEADER.pack(_MAGIC, _VERSION, _KIND_DATA, cache.n,
                              cache.centroids.shape[1], cache.n_clusters, cache.order)
        arrays = [cache.centroids, cache.assignment, cache.dev, cache.counts,
                  cache.sum_dev, cache.sum_outer]
    else:
        raise DomainError(f"cannot serialize cache of type {type(cache).__name__}")
    with open(path, "wb") as fh:
        fh.write(header)
        for arr in arrays:
            np.save(fh, np.asarray(arr), allow_pickle=False)


def load_cache(path, model: ModelSpec | None = None):
    """Load a cache written by save_cache.

    Data-expanded caches evaluate through the model at read time, so
    `model` is required for them.
    """
    with open(path, "rb") as fh:
        raw = fh.read(_HEADER.size)
        if len(raw) < _HEADER.size:
            raise DomainError(f"{path}: truncated cache file")
        magic, version, kind, n, dim, K, order = _HEADER.unpack(raw)
        if magic != _MAGIC:
            raise DomainError(f"{path}: not a cache file (bad magic)")
        if version != _VERSION:
            raise DomainError(f"{path}: unsupported cache version {version}")
        expected = 7 if kind == _KIND_PARAM else 6
        arrays = []
        for _ in range(expected):
            try:
                arrays.append(np.load(fh, allow_pickle=False))
            except (EOFError, ValueError, OSError):
                raise DomainError(f"{path}: truncated cache payload") from None
    if kind == _KIND_PARAM:
        point, sum_ell, sum_grad, sum_hess, ell, grad, hess = arrays
        return ParamExpandedCache(
            expansion_point=point, order=int(order), sum_ell=float(sum_ell),
            sum_grad=sum_grad, sum_hess=sum_hess, ell=ell,
            grad=grad if grad.size else None, hess=hess if hess.size else None,
            n=int(n), d=int(dim),
        )
    if kind == _KIND_DATA:
        if model is None:
            raise DomainError("loading a data-expanded cache requires the model")
        centroids, assignment, dev, counts, sum_dev, sum_outer = arrays
        return DataExpandedCache(
            centroids=centroids, assignment=assignment.astype(int), dev=dev,
            counts=counts, sum_dev=sum_dev, sum_outer=sum_outer,
            order=int(order), n=int(n), n_clusters=int(K), _model=model,
        )
    raise DomainError(f"{path}: unknown cache kind {kind}")
