"""Spatial primitives: metrics, point sets, radius neighborhoods, regions."""

import enum
import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from . import _rng


class Metric(str, enum.Enum):
    CHEBYSHEV = "chebyshev"
    EUCLIDEAN = "euclidean"


def pairwise(a, b, metric):
    """Distance matrix between the rows of ``a`` (p x 2) and ``b`` (q x 2)."""
    a = np.asarray(a, dtype=float).reshape(-1, 2)
    b = np.asarray(b, dtype=float).reshape(-1, 2)
    dx = np.abs(a[:, None, 0] - b[None, :, 0])
    dy = np.abs(a[:, None, 1] - b[None, :, 1])
    if Metric(metric) is Metric.CHEBYSHEV:
        return np.maximum(dx, dy)
    return np.sqrt(dx * dx + dy * dy)


def distance(a, b, metric=Metric.CHEBYSHEV):
    """Distance between two points under ``metric``.

    >>> distance((0, 0), (1, 2))
    2.0
    >>> distance((0, 0), (3, 4), Metric.EUCLIDEAN)
    5.0
    """
    return float(pairwise(a, b, metric)[0, 0])


class GridIndex:
    """Uniform grid of square buckets over a fixed coordinate array.

    Only occupied cells are stored. A query of radius ``r`` scans the
    ``(2k+1)^2`` block of cells around the query cell, ``k = ceil(r / cell)``,
    then filters candidates by exact distance.
    """

    def __init__(self, coords, cell):
        if not cell > 0 or not math.isfinite(cell):
            raise ValueError(f"cell side must be positive and finite, got {cell}")
        self.coords = coords
        self.cell = float(cell)
        self.origin = coords.min(axis=0) if len(coords) else np.zeros(2)
        keys = np.floor((coords - self.origin) / self.cell).astype(np.int64)
        order = np.lexsort((keys[:, 1], keys[:, 0]))
        sorted_keys = keys[order]
        if len(order):
            breaks = np.flatnonzero(np.any(np.diff(sorted_keys, axis=0) != 0, axis=1)) + 1
        else:
            breaks = np.array([], dtype=np.int64)
        self.buckets = {}
        start = 0
        for g in np.split(order, breaks):
            if len(g) == 0:
                continue
            kx, ky = sorted_keys[start]
            self.buckets[(int(kx), int(ky))] = np.sort(g)
            start += len(g)

    def _block(self, kx, ky, rings):
        found = []
        for dx in range(-rings, rings + 1):
            for dy in range(-rings, rings + 1):
                ids = self.buckets.get((kx + dx, ky + dy))
                if ids is not None:
                    found.append(ids)
        if not found:
            return np.empty(0, dtype=np.int64)
        return np.concatenate(found)

    def rings(self, r):
        return max(1, int(math.ceil(r / self.cell)))

    def query(self, point, r, metric):
        point = np.asarray(point, dtype=float)
        kx, ky = np.floor((point - self.origin) / self.cell).astype(np.int64)
        cand = self._block(int(kx), int(ky), self.rings(r))
        d = pairwise(point, self.coords[cand], metric)[0]
        return np.sort(cand[d <= r])

    def pairs(self, r, metric):
        """All ordered pairs ``(i, j)`` with ``dist(i, j) <= r``, self-pairs included."""
        rows, cols = [], []
        k = self.rings(r)
        for (kx, ky), members in self.buckets.items():
            cand = self._block(kx, ky, k)
            d = pairwise(self.coords[members], self.coords[cand], metric)
            ii, jj = np.nonzero(d <= r)
            rows.append(members[ii])
            cols.append(cand[jj])
        if not rows:
            return np.empty(0, dtype=np.int64), np.empty(0, dtype=np.int64)
        return np.concatenate(rows), np.concatenate(cols)


class PointSet:
    """Unit locations in the plane, indexed ``0..n-1``, under a fixed metric.

    The bucket index is built lazily. Its cell side is the first query radius
    and it is rebuilt when a later radius differs from the cell side by more
    than a factor of 4.
    """

    REBUILD_FACTOR = 4.0

    def __init__(self, coords, metric=Metric.CHEBYSHEV):
        coords = np.array(coords, dtype=float).reshape(-1, 2)
        if not np.all(np.isfinite(coords)):
            raise ValueError("coordinates must be finite")
        coords.setflags(write=False)
        self.coords = coords
        self.metric = Metric(metric)
        self._index = None

    def __len__(self):
        return len(self.coords)

    @property
    def n(self):
        return len(self.coords)

    def with_metric(self, metric):
        return PointSet(self.coords, metric)

    def _fallback_cell(self):
        extent = float(np.ptp(self.coords, axis=0).max()) if self.n > 1 else 0.0
        return max(extent / math.sqrt(max(self.n, 1)), 1e-9)

    def index(self, r):
        # cells far smaller than the point spacing only cost memory (and can
        # overflow the integer keys), so the side is floored at that scale
        target = max(r, self._fallback_cell())
        cell = self._index.cell if self._index is not None else None
        if cell is None or target > self.REBUILD_FACTOR * cell or target < cell / self.REBUILD_FACTOR:
            self._index = GridIndex(self.coords, target)
        return self._index

    def neighborhood(self, i, r):
        """Sorted ids ``j`` with ``dist(i, j) <= r`` (always includes ``i``)."""
        if not 0 <= i < self.n:
            raise IndexError(f"unit id {i} outside 0..{self.n - 1}")
        if r < 0:
            raise ValueError("radius must be non-negative")
        return self.index(r).query(self.coords[i], r, self.metric)

    def neighborhood_brute(self, i, r):
        d = pairwise(self.coords[i], self.coords, self.metric)[0]
        return np.flatnonzero(d <= r)

    def neighbor_pairs(self, r):
        if r < 0:
            raise ValueError("radius must be non-negative")
        return self.index(r).pairs(r, self.metric)

    def adjacency(self, r, include_self=True):
        """Boolean CSR matrix with entry ``(i, j)`` set iff ``dist(i, j) <= r``."""
        rows, cols = self.neighbor_pairs(r)
        if not include_self:
            keep = rows != cols
            rows, cols = rows[keep], cols[keep]
        data = np.ones(len(rows), dtype=bool)
        adj = sp.csr_array((data, (rows, cols)), shape=(self.n, self.n))
        adj.sort_indices()
        return adj

    def distances(self):
        return pairwise(self.coords, self.coords, self.metric)


def neighborhood(ps, i, r):
    return ps.neighborhood(i, r)


@dataclass(frozen=True)
class Region:
    """Square ``{z : chebyshev(z, center) <= radius}``."""

    center: tuple
    radius: float

    def __post_init__(self):
        if not self.radius > 0:
            raise ValueError("region radius must be positive")

    @property
    def lo(self):
        return np.asarray(self.center, dtype=float) - self.radius

    def contains(self, coords):
        coords = np.asarray(coords, dtype=float).reshape(-1, 2)
        return np.all(np.abs(coords - np.asarray(self.center)) <= self.radius, axis=1)


def bounding_region(ps, min_radius=1.0):
    """Smallest centered square around the coordinate box of ``ps``.

    The radius is floored at ``min_radius`` so cluster and exposure radii
    stay positive for degenerate inputs.
    """
    if ps.n == 0:
        raise ValueError("cannot bound an empty point set")
    lo = ps.coords.min(axis=0)
    hi = ps.coords.max(axis=0)
    center = (lo + hi) / 2.0
    radius = float(np.abs(ps.coords - center).max())
    return Region((float(center[0]), float(center[1])), max(radius, float(min_radius)))


def generate_uniform_locations(n, seed, metric=Metric.CHEBYSHEV):
    """``n`` i.i.d. uniform points on ``[-sqrt(n), sqrt(n)]^2``."""
    if n < 1:
        raise ValueError("n must be at least 1")
    rng = _rng.as_generator(seed, "locations")
    return PointSet(math.sqrt(n) * rng.uniform(-1.0, 1.0, size=(n, 2)), metric)


def population_region(n):
    """The square ``Q(0, sqrt(n))`` that ``generate_uniform_locations`` samples from."""
    return Region((0.0, 0.0), math.sqrt(n))


def min_separation(ps):
    """Smallest pairwise distance (``inf`` for a single unit)."""
    if ps.n < 2:
        return math.inf
    d = ps.distances()
    np.fill_diagonal(d, np.inf)
    return float(d.min())
