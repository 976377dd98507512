"""Cluster partitions of a point set: equal grid squares and spectral clustering."""

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from . import _rng
from .geometry import bounding_region

MAX_SPECTRAL_N = 5000
MAX_KMEANS_ITER = 300
DEGREE_FLOOR = 1e-300


@dataclass(frozen=True, eq=False)
class Partition:
    """Assignment of units to clusters ``0..m-1``.

    Attributes
    ----------
    membership : ndarray of int
        Cluster id of each unit.
    m : int
        Number of clusters, including empty grid cells.
    r_n : float
        Cluster radius used to set the exposure radius.
    source : str
        ``"grid"`` or ``"spectral"``.
    depth : int or None
        Quadrisection depth for grid partitions.
    seed : int or None
        Seed used by spectral k-means, when known.
    """

    membership: np.ndarray
    m: int
    r_n: float
    source: str
    depth: int = None
    seed: int = None
    cluster_units: list = field(init=False, repr=False)

    def __post_init__(self):
        membership = np.asarray(self.membership, dtype=np.int64)
        if self.m < 1:
            raise ValueError("a partition needs at least one cluster")
        if len(membership) and (membership.min() < 0 or membership.max() >= self.m):
            raise ValueError("membership ids must lie in 0..m-1")
        membership.setflags(write=False)
        object.__setattr__(self, "membership", membership)
        order = np.argsort(membership, kind="stable")
        bounds = np.searchsorted(membership[order], np.arange(self.m + 1))
        units = [order[bounds[k]:bounds[k + 1]] for k in range(self.m)]
        object.__setattr__(self, "cluster_units", units)

    @property
    def n(self):
        return len(self.membership)

    @property
    def sizes(self):
        return np.bincount(self.membership, minlength=self.m)

    @property
    def empty_clusters(self):
        return np.flatnonzero(self.sizes == 0)


def grid_partition(ps, region, depth):
    """Split ``region`` into ``4**depth`` congruent squares.

    Cells are half-open ``[lo, hi)`` in each coordinate except along the
    region's upper edges, which are closed. Cluster ids run row-major with
    ``id = iy * 2**depth + ix``.
    """
    if depth < 0:
        raise ValueError("depth must be non-negative")
    m = 4**depth
    if m > ps.n:
        raise ValueError(f"4**{depth} = {m} clusters exceeds n = {ps.n}")
    if not np.all(region.contains(ps.coords)):
        raise ValueError("region does not contain every unit")
    side_count = 2**depth
    side = 2.0 * region.radius / side_count
    cell = np.floor((ps.coords - region.lo) / side).astype(np.int64)
    cell = np.clip(cell, 0, side_count - 1)
    membership = cell[:, 1] * side_count + cell[:, 0]
    return Partition(membership, m, region.radius / side_count, "grid", depth=depth)


def kmeans(x, k, rng, max_iter=MAX_KMEANS_ITER):
    """Lloyd's algorithm with k-means++ seeding.

    Assignment ties go to the lower cluster id. A cluster that empties out
    is reseeded with the point farthest from its current centroid.

    Returns
    -------
    labels : ndarray of int
    centers : ndarray, shape (k, d)
    """
    x = np.asarray(x, dtype=float)
    n = len(x)
    if not 1 <= k <= n:
        raise ValueError(f"need 1 <= k <= n, got k={k}, n={n}")
    sq = np.einsum("ij,ij->i", x, x)

    def sqdist(centers):
        d = sq[:, None] - 2.0 * x @ centers.T + np.einsum("ij,ij->i", centers, centers)[None, :]
        return np.maximum(d, 0.0)

    chosen = [int(rng.integers(n))]
    closest = sqdist(x[chosen])[:, 0]
    for _ in range(1, k):
        total = closest.sum()
        if total > 0:
            nxt = int(rng.choice(n, p=closest / total))
        else:
            # all remaining points coincide with a center
            free = np.setdiff1d(np.arange(n), chosen)
            nxt = int(rng.choice(free))
        chosen.append(nxt)
        closest = np.minimum(closest, sqdist(x[[nxt]])[:, 0])
    centers = x[chosen].copy()

    labels = None
    for _ in range(max_iter):
        d = sqdist(centers)
        new = np.argmin(d, axis=1)
        counts = np.bincount(new, minlength=k)
        for c in np.flatnonzero(counts == 0):
            own = d[np.arange(n), new]
            far = int(np.argmax(own))
            counts[new[far]] -= 1
            new[far] = c
            counts[c] = 1
            d[far] = np.inf
            d[far, c] = 0.0
        if labels is not None and np.array_equal(new, labels):
            break
        labels = new
        for c in range(k):
            centers[c] = x[labels == c].mean(axis=0)
    return labels, centers


def relabel_by_min_member(labels):
    """Renumber clusters so ids ascend with each cluster's smallest unit id."""
    labels = np.asarray(labels)
    _, first = np.unique(labels, return_index=True)
    order = np.argsort(first)
    old_ids = labels[first[order]]
    mapping = np.empty(labels.max() + 1, dtype=np.int64)
    mapping[old_ids] = np.arange(len(old_ids))
    return mapping[labels]


def spectral_embedding(ps, m):
    """Row-normalized ``m`` bottom eigenvectors of the normalized Laplacian
    built from the Gaussian affinity ``exp(-dist**2)``."""
    dist = ps.distances()
    affinity = np.exp(-dist * dist)
    np.fill_diagonal(affinity, 0.0)
    degree = np.maximum(affinity.sum(axis=1), DEGREE_FLOOR)
    s = 1.0 / np.sqrt(degree)
    laplacian = np.eye(ps.n) - s[:, None] * affinity * s[None, :]
    try:
        _, vecs = scipy.linalg.eigh(laplacian, subset_by_index=[0, m - 1], check_finite=False)
    except np.linalg.LinAlgError as exc:
        raise ArithmeticError(f"eigensolver failed: {exc}") from exc
    norms = np.linalg.norm(vecs, axis=1)
    norms[norms == 0] = 1.0
    return vecs / norms[:, None]


def spectral_partition(ps, m, seed, region=None):
    """Spectral clustering of ``ps`` into ``m`` non-empty clusters."""
    if not 1 <= m <= ps.n:
        raise ValueError(f"need 1 <= m <= n, got m={m}, n={ps.n}")
    if ps.n > MAX_SPECTRAL_N:
        raise ValueError(f"spectral partitions are capped at n = {MAX_SPECTRAL_N}")
    region = region or bounding_region(ps)
    r_n = region.radius / math.sqrt(m)
    if m == 1:
        return Partition(np.zeros(ps.n, dtype=np.int64), 1, r_n, "spectral", seed=_seed_value(seed))
    embedding = spectral_embedding(ps, m)
    labels, _ = kmeans(embedding, m, _rng.as_generator(seed, "partition"))
    return Partition(relabel_by_min_member(labels), m, r_n, "spectral", seed=_seed_value(seed))


def _seed_value(seed):
    return None if isinstance(seed, np.random.Generator) else int(seed)


def nearest_grid_depth(target_m):
    """Depth ``s`` minimizing ``|4**s - target_m|``; ties go to the smaller ``s``."""
    if target_m < 1:
        raise ValueError("target cluster count must be at least 1")
    best = 0
    s = 0
    while 4**s <= 4 * target_m:
        if abs(4**s - target_m) < abs(4**best - target_m):
            best = s
        s += 1
    return best


@dataclass(frozen=True)
class WorstCase:
    """Polynomial decay at the slowest admissible rate: ``m = n**(2/3)``."""


@dataclass(frozen=True)
class KnownExposure:
    """Known exposure radius ``K`` inside a region of radius ``R``: ``m = R**2 / (2K)**2``."""

    K: float
    R: float


@dataclass(frozen=True)
class UnknownExposure:
    """Exposure mapping of unknown radius: ``m = n / ln n``."""


@dataclass(frozen=True)
class ExponentialDecay:
    """Exponential decay of unknown rate: ``m = n**(1 - eps)``."""

    eps: float


def _round_half_up(x):
    return int(math.floor(x + 0.5))


def choose_num_clusters(n, regime=WorstCase()):
    if n < 1:
        raise ValueError("n must be at least 1")
    if isinstance(regime, WorstCase):
        raw = n ** (2.0 / 3.0)
    elif isinstance(regime, KnownExposure):
        if regime.K <= 0:
            raise ValueError("exposure radius K must be positive")
        raw = regime.R**2 / (2.0 * regime.K) ** 2
    elif isinstance(regime, UnknownExposure):
        raw = n / math.log(n) if n >= 3 else n
    elif isinstance(regime, ExponentialDecay):
        if not 0 < regime.eps < 1:
            raise ValueError("eps must lie in (0, 1)")
        raw = n ** (1.0 - regime.eps)
    else:
        raise TypeError(f"unknown decay regime {regime!r}")
    return min(max(_round_half_up(raw), 1), n)


def parse_regime(name, **params):
    """Build a regime from a CLI/config name such as ``"worst_case"``."""
    name = name.lower().replace("-", "_")
    if name == "worst_case":
        return WorstCase()
    if name == "known_exposure":
        return KnownExposure(float(params["K"]), float(params["R"]))
    if name == "unknown_exposure":
        return UnknownExposure()
    if name == "exponential":
        return ExponentialDecay(float(params["eps"]))
    raise ValueError(f"unknown cluster-count rule {name!r}")
