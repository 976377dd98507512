"""Counterfactual outcome models with frozen noise.

Each model maps a treatment vector ``d`` to the outcome vector ``Y(d)``
deterministically; the noise vector is drawn once when the model is built.
"""

import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg
import scipy.sparse as sp

from . import _rng

NEUMANN_TOL = 1e-10
DENSE_CROSSCHECK_MAX_N = 500


class ConvergenceError(ArithmeticError):
    pass


def draw_noise(n, seed):
    return _rng.as_generator(seed, "noise").standard_normal(n)


def cliff_ord_weights(ps):
    """Row-normalized adjacency at distance 1, excluding self-loops.

    Units with no neighbor within distance 1 get an all-zero row.
    """
    adj = ps.adjacency(1.0, include_self=False).astype(float)
    counts = np.asarray(adj.sum(axis=1)).ravel()
    scale = np.divide(1.0, counts, out=np.zeros_like(counts), where=counts > 0)
    return sp.csr_array(sp.diags_array(scale) @ adj)


@dataclass(frozen=True, eq=False)
class CliffOrdModel:
    """Spatial autoregression ``Y = alpha + lam W Y + delta W d + beta d + eps``."""

    alpha: float
    lam: float
    delta: float
    beta: float
    W: sp.csr_array
    eps: np.ndarray

    def __post_init__(self):
        row_abs = np.asarray(abs(self.W).sum(axis=1)).ravel()
        bound = abs(self.lam) * (row_abs.max() if len(row_abs) else 0.0)
        if not bound < 1.0:
            raise ValueError(f"|lam| * max row sum of |W| must be < 1, got {bound}")

    @property
    def n(self):
        return len(self.eps)

    def rhs(self, d):
        d = np.asarray(d, dtype=float)
        return self.alpha + self.delta * (self.W @ d) + self.beta * d + self.eps

    def max_iter(self):
        if self.lam == 0:
            return 1
        return 10 * math.ceil(math.log(NEUMANN_TOL) / math.log(abs(self.lam)))

    def evaluate(self, d):
        """Fixed-point (Jacobi/Neumann) solve of ``(I - lam W) Y = rhs``.

        Stops once the sup-norm residual is at most ``NEUMANN_TOL``.
        """
        b = self.rhs(d)
        if self.lam == 0:
            return b
        y = b
        for _ in range(self.max_iter()):
            nxt = b + self.lam * (self.W @ y)
            if np.max(np.abs(nxt - y), initial=0.0) <= NEUMANN_TOL:
                return nxt
            y = nxt
        raise ConvergenceError(f"Neumann iteration did not converge in {self.max_iter()} steps")

    def residual(self, y, d):
        return float(np.max(np.abs(y - self.lam * (self.W @ y) - self.rhs(d)), initial=0.0))

    def solve_dense(self, d):
        """Direct LU solve, used to cross-check the iterative solver."""
        a = np.eye(self.n) - self.lam * self.W.toarray()
        return scipy.linalg.solve(a, self.rhs(d))


def ma_weights(ps, eta, cap=1.0):
    """``V[i, j] = min(dist(i, j) ** -eta, cap)`` off the diagonal, ``V[i, i] = 1``.

    Uniformly drawn locations have no minimum separation, so without the cap
    a single near-coincident pair dominates every outcome. ``cap=None``
    returns the raw power weights.
    """
    if not eta > 0:
        raise ValueError("decay exponent must be positive")
    dist = ps.distances()
    np.fill_diagonal(dist, 1.0)
    if np.any(dist == 0):
        raise ValueError("moving-average weights need distinct locations")
    V = dist ** (-float(eta))
    if cap is not None:
        np.minimum(V, cap, out=V)
    np.fill_diagonal(V, 1.0)
    return V


@dataclass(frozen=True, eq=False)
class MovingAverageModel:
    """``Y = V (alpha + beta d + eps)``."""

    alpha: float
    beta: float
    eta: float
    V: np.ndarray
    eps: np.ndarray

    @property
    def n(self):
        return len(self.eps)

    def evaluate(self, d):
        return self.V @ (self.alpha + self.beta * np.asarray(d, dtype=float) + self.eps)


@dataclass(frozen=True, eq=False)
class KExposureModel:
    """``Y_i = base + direct d_i + spill 1{some other unit within K is treated} + eps_i``."""

    K: float
    direct: float
    spill: float
    base: float
    neighbors: sp.csr_array
    eps: np.ndarray

    @property
    def n(self):
        return len(self.eps)

    def evaluate(self, d):
        d = np.asarray(d, dtype=float)
        exposed = (self.neighbors @ d) > 0
        return self.base + self.direct * d + self.spill * exposed + self.eps


def cliff_ord_model(ps, alpha=-1.0, lam=0.8, delta=1.0, beta=1.0, noise=0):
    return CliffOrdModel(alpha, lam, delta, beta, cliff_ord_weights(ps), draw_noise(ps.n, noise))


def moving_average_model(ps, eta, alpha=-1.0, beta=1.0, cap=1.0, noise=0):
    return MovingAverageModel(alpha, beta, float(eta), ma_weights(ps, eta, cap), draw_noise(ps.n, noise))


def k_exposure_model(ps, K, direct=1.0, spill=1.0, base=0.0, noise=0):
    if K < 0:
        raise ValueError("K must be non-negative")
    nbrs = ps.adjacency(K, include_self=False).astype(np.int64)
    return KExposureModel(float(K), direct, spill, base, nbrs, draw_noise(ps.n, noise))


def evaluate_cliff_ord(model, d):
    return model.evaluate(d)


def evaluate_moving_average(model, d):
    return model.evaluate(d)


def evaluate_k_exposure(model, ps, d):
    return model.evaluate(d)


def global_ate(model):
    """Average of ``Y_i(1) - Y_i(0)`` under the model's frozen noise."""
    ones = np.ones(model.n)
    return float(np.mean(model.evaluate(ones) - model.evaluate(np.zeros(model.n))))


def measure_interference_decay(model, ps, i, s, trials, seed):
    """Monte Carlo lower bound on the interference envelope at radius ``s``.

    Each trial draws ``d`` at random, copies it on the ``s``-neighborhood of
    ``i`` and redraws it elsewhere; the bound is the largest observed
    ``|Y_i(d) - Y_i(d')|``.
    """
    if trials < 1:
        raise ValueError("trials must be at least 1")
    rng = _rng.as_generator(seed, "decay")
    inside = np.zeros(ps.n, dtype=bool)
    inside[ps.neighborhood(i, s)] = True
    best = 0.0
    for _ in range(trials):
        d = rng.integers(0, 2, size=ps.n)
        other = rng.integers(0, 2, size=ps.n)
        d2 = np.where(inside, d, other)
        best = max(best, abs(float(model.evaluate(d)[i] - model.evaluate(d2)[i])))
    return best


def decay_envelope(model, ps, i, s):
    """``|beta| * sum of V[i, j]`` over units farther than ``s``; caps the
    measured decay for moving-average models."""
    far = np.ones(ps.n, dtype=bool)
    far[ps.neighborhood(i, s)] = False
    return abs(model.beta) * float(np.abs(model.V[i, far]).sum())


MODEL_KINDS = ("cliff_ord", "moving_average", "k_exposure")


def build_model(config, ps, noise=None):
    """Build a model from a config mapping ``{kind, params, eta?, K?, noise_seed}``.

    ``noise`` (seed or Generator) overrides ``noise_seed`` when given.
    """
    kind = config.get("kind")
    params = dict(config.get("params", {}))
    noise = config.get("noise_seed", 0) if noise is None else noise
    if kind == "cliff_ord":
        return cliff_ord_model(ps, noise=noise, **params)
    if kind == "moving_average":
        eta = config.get("eta", params.pop("eta", None))
        if eta is None:
            raise ValueError("moving_average model needs eta")
        params.pop("eta", None)
        return moving_average_model(ps, eta, noise=noise, **params)
    if kind == "k_exposure":
        K = config.get("K", params.pop("K", None))
        if K is None:
            raise ValueError("k_exposure model needs K")
        params.pop("K", None)
        return k_exposure_model(ps, K, noise=noise, **params)
    raise ValueError(f"unknown model kind {kind!r}; expected one of {MODEL_KINDS}")
