"""Cluster randomization, neighborhood exposure indicators and their exact probabilities."""

import itertools
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
import scipy.sparse as sp

from . import _rng

MAX_ENUMERATION_M = 20


@dataclass(frozen=True, eq=False)
class Design:
    p: float
    cluster_treatments: np.ndarray
    unit_treatments: np.ndarray
    seed: int = None


def exposure_radius(part):
    return part.r_n / 2.0


def _check_p(p):
    if not 0.0 < p < 1.0:
        raise ValueError(f"treatment probability must lie in (0, 1), got {p}")


def design_from_clusters(part, p, cluster_treatments, seed=None):
    _check_p(p)
    cluster_treatments = np.asarray(cluster_treatments, dtype=np.int8)
    if cluster_treatments.shape != (part.m,):
        raise ValueError(f"expected {part.m} cluster treatments, got {cluster_treatments.shape}")
    units = cluster_treatments[part.membership]
    cluster_treatments.setflags(write=False)
    units.setflags(write=False)
    return Design(float(p), cluster_treatments, units, seed)


def assign_treatments(part, p, seed):
    """Independent Bernoulli(``p``) draw per cluster, in cluster-id order."""
    _check_p(p)
    rng = _rng.as_generator(seed, "treatment")
    draws = (rng.random(part.m) < p).astype(np.int8)
    return design_from_clusters(part, p, draws, None if isinstance(seed, np.random.Generator) else int(seed))


def touch_matrix(ps, part, kappa):
    """Sparse 0/1 matrix ``B`` with ``B[i, k] = 1`` iff some member of cluster
    ``k`` lies within ``kappa`` of unit ``i``."""
    if not kappa > 0:
        raise ValueError("exposure radius must be positive")
    rows, cols = ps.neighbor_pairs(kappa)
    touch = sp.csr_array(
        (np.ones(len(rows), dtype=np.int32), (rows, part.membership[cols])),
        shape=(ps.n, part.m),
    )
    touch.sum_duplicates()
    touch.data[:] = 1
    touch.sort_indices()
    return touch


class ExposureRecord(NamedTuple):
    t1: int
    t0: int
    c: int
    p1: float
    p0: float


@dataclass(frozen=True, eq=False)
class Exposures:
    """Per-unit exposure indicators and probabilities, stored column-wise.

    ``c`` counts distinct clusters touching each unit's exposure
    neighborhood; ``p1 = p**c`` and ``p0 = (1 - p)**c`` are exact because
    clusters are randomized independently.
    """

    t1: np.ndarray
    t0: np.ndarray
    c: np.ndarray
    p1: np.ndarray
    p0: np.ndarray

    def __len__(self):
        return len(self.t1)

    def __getitem__(self, i):
        return ExposureRecord(int(self.t1[i]), int(self.t0[i]), int(self.c[i]), float(self.p1[i]), float(self.p0[i]))

    def __iter__(self):
        return (self[i] for i in range(len(self)))


def exposures_from_touch(touch, p, cluster_treatments):
    c = np.diff(touch.indptr).astype(np.int64)
    treated = touch @ np.asarray(cluster_treatments, dtype=np.int64)
    t1 = (treated == c).astype(np.int8)
    t0 = (treated == 0).astype(np.int8)
    return Exposures(t1, t0, c, p**c, (1.0 - p) ** c)


def compute_exposures(ps, part, design, kappa):
    return exposures_from_touch(touch_matrix(ps, part, kappa), design.p, design.cluster_treatments)


def enumerate_designs(part, p):
    """Every cluster assignment vector with its probability under the design."""
    _check_p(p)
    if part.m > MAX_ENUMERATION_M:
        raise ValueError(f"enumeration limited to m <= {MAX_ENUMERATION_M}, got {part.m}")
    for bits in itertools.product((0, 1), repeat=part.m):
        vec = np.array(bits, dtype=np.int8)
        k = int(vec.sum())
        yield vec, p**k * (1.0 - p) ** (part.m - k)
