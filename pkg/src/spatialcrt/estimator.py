"""Horvitz-Thompson estimate, dependency graph, variance estimate and confidence intervals."""

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.stats import norm

from .design import exposures_from_touch, touch_matrix

NEGATIVE_VARIANCE = "NegativeVariance"


def horvitz_thompson(y, exposures):
    """Return ``(theta_hat, z)`` with ``z_i = (t1_i / p1_i - t0_i / p0_i) * y_i``."""
    y = np.asarray(y, dtype=float)
    if len(y) != len(exposures):
        raise ValueError(f"{len(y)} outcomes but {len(exposures)} exposure records")
    z = (exposures.t1 / exposures.p1 - exposures.t0 / exposures.p0) * y
    return float(z.mean()), z


@dataclass(frozen=True, eq=False)
class DependencyGraph:
    """Symmetric, reflexive 0/1 adjacency stored as a sorted CSR matrix.

    Units ``i`` and ``j`` are linked when their exposure neighborhoods touch
    a common cluster.
    """

    matrix: sp.csr_array

    @property
    def n(self):
        return self.matrix.shape[0]

    def neighbors(self, i):
        m = self.matrix
        return m.indices[m.indptr[i]:m.indptr[i + 1]]

    def quadratic_form(self, x):
        return float(x @ (self.matrix @ x))

    def to_dense(self):
        return self.matrix.toarray().astype(bool)


def graph_from_touch(touch):
    links = touch @ touch.T
    links = sp.csr_array(links)
    links.data[:] = 1
    links.eliminate_zeros()
    links.sort_indices()
    return DependencyGraph(links.astype(np.float64))


def dependency_graph(ps, part, kappa):
    return graph_from_touch(touch_matrix(ps, part, kappa))


def variance_estimate(z, graph, m):
    """``(m / n**2) * sum over linked pairs of centered z_i * z_j``.

    The raw value is returned and may be negative.
    """
    z = np.asarray(z, dtype=float)
    n = len(z)
    if n < 2:
        raise ValueError("variance estimate needs at least two units")
    e = z - z.mean()
    return m / n**2 * graph.quadratic_form(e)


def critical_value(level):
    if not 0.0 < level < 1.0:
        raise ValueError(f"confidence level must lie in (0, 1), got {level}")
    return float(norm.ppf(0.5 + level / 2.0))


def confidence_interval(theta_hat, sigma2_hat, m, level=0.95):
    if m < 1:
        raise ValueError("m must be at least 1")
    half = critical_value(level) * math.sqrt(max(sigma2_hat, 0.0) / m)
    return theta_hat - half, theta_hat + half


def naive_iid_se(z):
    z = np.asarray(z, dtype=float)
    if len(z) < 2:
        raise ValueError("need at least two units")
    return float(np.std(z, ddof=1) / math.sqrt(len(z)))


@dataclass(frozen=True, eq=False)
class EstimateReport:
    theta_hat: float
    z: np.ndarray
    sigma2_hat: float
    se: float
    ci_lo: float
    ci_hi: float
    se_naive: float
    n: int
    m: int
    kappa: float
    level: float = 0.95
    flags: frozenset = field(default_factory=frozenset)

    def to_dict(self):
        return {
            "theta_hat": self.theta_hat,
            "sigma2_hat": self.sigma2_hat,
            "se": self.se,
            "ci": [self.ci_lo, self.ci_hi],
            "se_naive": self.se_naive,
            "n": self.n,
            "m": self.m,
            "kappa": self.kappa,
            "level": self.level,
            "flags": sorted(self.flags),
        }


def estimate(y, exposures, graph, m, kappa, level=0.95):
    """Point estimate, variance, standard errors and CI in one report."""
    theta_hat, z = horvitz_thompson(y, exposures)
    sigma2 = variance_estimate(z, graph, m)
    lo, hi = confidence_interval(theta_hat, sigma2, m, level)
    flags = frozenset({NEGATIVE_VARIANCE}) if sigma2 < 0 else frozenset()
    return EstimateReport(
        theta_hat=theta_hat,
        z=z,
        sigma2_hat=sigma2,
        se=math.sqrt(max(sigma2, 0.0) / m),
        ci_lo=lo,
        ci_hi=hi,
        se_naive=naive_iid_se(z),
        n=len(z),
        m=m,
        kappa=kappa,
        level=level,
        flags=flags,
    )


def analyze(ps, part, design, y, kappa, level=0.95):
    """Recompute exposures and the dependency graph, then estimate."""
    touch = touch_matrix(ps, part, kappa)
    exposures = exposures_from_touch(touch, design.p, design.cluster_treatments)
    return estimate(y, exposures, graph_from_touch(touch), part.m, kappa, level)

