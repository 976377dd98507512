"""Replication engine for simulation studies of the cluster-randomized design.

Each replication owns private random streams derived from ``(seed, rep)``,
and results are reduced in replication order, so a study's output does not
depend on how many worker processes ran it.
"""

import csv
import dataclasses
import hashlib
import io
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import partial

import numpy as np
from scipy import stats

from . import _rng
from .design import MAX_ENUMERATION_M, assign_treatments, exposures_from_touch, touch_matrix
from .estimator import critical_value, estimate, graph_from_touch
from .geometry import Metric, generate_uniform_locations, population_region
from .outcomes import build_model, global_ate
from .partition import choose_num_clusters, grid_partition, nearest_grid_depth, parse_regime, spectral_partition

ORACLE_Z = critical_value(0.95)


class ReplicationError(RuntimeError):
    def __init__(self, rep, seed, cause):
        super().__init__(f"replication {rep} (seed {seed}) failed: {cause}")
        self.rep = rep
        self.seed = seed


@dataclass
class StudyConfig:
    n: int
    reps: int
    model: dict
    partition: dict = field(default_factory=lambda: {"method": "spectral", "rule": "worst_case"})
    p: float = 0.5
    kappa: float = None
    metric: str = "euclidean"
    seed: int = 0
    redraw_locations: bool = True
    threads: int = 1
    level: float = 0.95
    label: str = ""

    def __post_init__(self):
        if self.n < 2:
            raise ValueError("n must be at least 2")
        if self.reps < 1:
            raise ValueError("reps must be at least 1")
        if not 0 < self.p < 1:
            raise ValueError("p must lie in (0, 1)")
        if self.kappa is not None and not self.kappa > 0:
            raise ValueError("kappa override must be positive")
        if self.threads < 1:
            raise ValueError("threads must be at least 1")
        self.metric = Metric(self.metric).value
        method = self.partition.get("method", "spectral")
        if method not in ("spectral", "grid"):
            raise ValueError(f"unknown partition method {method!r}")

    @classmethod
    def from_dict(cls, data):
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - names
        if unknown:
            raise ValueError(f"unknown study config keys: {sorted(unknown)}")
        return cls(**data)

    def to_dict(self):
        return dataclasses.asdict(self)

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)

    def digest(self):
        """Short hash of the settings that determine results (threads excluded)."""
        data = self.to_dict()
        data.pop("threads")
        blob = json.dumps(data, sort_keys=True, default=str).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def resolve_clusters(self):
        """Return ``("spectral", m)`` or ``("grid", depth)`` for this config."""
        opts = self.partition
        method = opts.get("method", "spectral")
        m = opts.get("m")
        if method == "grid":
            if opts.get("depth") is not None:
                return "grid", int(opts["depth"])
            if m is None:
                m = choose_num_clusters(self.n, parse_regime(opts.get("rule", "worst_case"), **opts.get("rule_params", {})))
            return "grid", nearest_grid_depth(int(m))
        if m is None:
            m = choose_num_clusters(self.n, parse_regime(opts.get("rule", "worst_case"), **opts.get("rule_params", {})))
        return "spectral", int(m)


@dataclass(frozen=True)
class RepResult:
    rep: int
    theta_hat: float
    theta_n: float
    sigma2_hat: float
    se_ours: float
    se_naive: float
    ci_lo: float
    ci_hi: float
    m: int
    covered_ours: bool
    covered_naive: bool
    negative_variance: bool


def _build_population(cfg, key):
    ps = generate_uniform_locations(cfg.n, _rng.stream(cfg.seed, "locations", *key), cfg.metric)
    method, value = cfg.resolve_clusters()
    if method == "grid":
        part = grid_partition(ps, population_region(cfg.n), value)
    else:
        part = spectral_partition(ps, value, _rng.stream(cfg.seed, "partition", *key))
    return ps, part


def frozen_population(cfg):
    """Locations and partition shared by all replications when ``redraw_locations`` is off."""
    return _build_population(cfg, ())


def _population(cfg, rep, frozen):
    if cfg.redraw_locations:
        return _build_population(cfg, (rep,))
    return frozen if frozen is not None else frozen_population(cfg)


def _kappa(cfg, part):
    return cfg.kappa if cfg.kappa is not None else part.r_n / 2.0


def run_replication(cfg, rep, frozen=None):
    try:
        ps, part = _population(cfg, rep, frozen)
        model = build_model(cfg.model, ps, noise=_rng.stream(cfg.seed, "noise", rep))
        design = assign_treatments(part, cfg.p, _rng.stream(cfg.seed, "treatment", rep))
        kappa = _kappa(cfg, part)
        touch = touch_matrix(ps, part, kappa)
        exposures = exposures_from_touch(touch, design.p, design.cluster_treatments)
        y = model.evaluate(design.unit_treatments)
        theta_n = global_ate(model)
        rpt = estimate(y, exposures, graph_from_touch(touch), part.m, kappa, cfg.level)
    except (ArithmeticError, ValueError, np.linalg.LinAlgError) as exc:
        raise ReplicationError(rep, cfg.seed, exc) from exc
    half_naive = critical_value(cfg.level) * rpt.se_naive
    return RepResult(
        rep=rep,
        theta_hat=rpt.theta_hat,
        theta_n=theta_n,
        sigma2_hat=rpt.sigma2_hat,
        se_ours=rpt.se,
        se_naive=rpt.se_naive,
        ci_lo=rpt.ci_lo,
        ci_hi=rpt.ci_hi,
        m=part.m,
        covered_ours=bool(rpt.ci_lo <= theta_n <= rpt.ci_hi),
        covered_naive=bool(rpt.theta_hat - half_naive <= theta_n <= rpt.theta_hat + half_naive),
        negative_variance=bool(rpt.sigma2_hat < 0),
    )


@dataclass(frozen=True, eq=False)
class ExactDistribution:
    """Randomization distribution of the estimator over all ``2**m`` designs.

    Row ``k`` of ``designs`` holds the cluster treatments of design ``k``;
    ``z`` (when kept) holds the per-unit terms of each estimate.
    """

    designs: np.ndarray
    probs: np.ndarray
    theta_hat: np.ndarray
    z: np.ndarray = None

    def mean(self):
        return float(self.probs @ self.theta_hat)

    def variance(self):
        dev = self.theta_hat - self.mean()
        return float(self.probs @ (dev * dev))


def exact_distribution(ps, part, model, p, kappa, keep_z=False, batch=4096):
    """Evaluate the estimator under every cluster assignment."""
    if part.m > MAX_ENUMERATION_M:
        raise ValueError(f"enumeration limited to m <= {MAX_ENUMERATION_M}, got {part.m}")
    if not 0 < p < 1:
        raise ValueError("p must lie in (0, 1)")
    touch = touch_matrix(ps, part, kappa)
    c = np.diff(touch.indptr)
    w1, w0 = 1.0 / p**c, 1.0 / (1.0 - p) ** c
    codes = np.arange(2**part.m)
    designs = ((codes[:, None] >> np.arange(part.m)) & 1).astype(np.int8)
    k = designs.sum(axis=1)
    probs = p**k * (1.0 - p) ** (part.m - k)
    theta = np.empty(len(codes))
    z_all = np.empty((len(codes), ps.n)) if keep_z else None
    for lo in range(0, len(codes), batch):
        block = designs[lo:lo + batch]
        treated = (touch @ block.T.astype(np.int64)).T
        y = np.stack([model.evaluate(d) for d in block[:, part.membership]])
        z = ((treated == c) * w1 - (treated == 0) * w0) * y
        theta[lo:lo + batch] = z.mean(axis=1)
        if keep_z:
            z_all[lo:lo + batch] = z
    return ExactDistribution(designs, probs, theta, z_all)


def enumerate_replication(cfg, rep=0, frozen=None):
    """Replace the random treatment draw with every cluster assignment.

    Returns ``(theta_n, ExactDistribution)``.
    """
    ps, part = _population(cfg, rep, frozen)
    model = build_model(cfg.model, ps, noise=_rng.stream(cfg.seed, "noise", rep))
    return global_ate(model), exact_distribution(ps, part, model, cfg.p, _kappa(cfg, part))


@dataclass(frozen=True)
class MCReport:
    reps: int
    m_used: float
    coverage_ours: float
    coverage_naive: float
    coverage_oracle: float
    bias: float
    bias_se: float
    variance: float
    mean_se: float
    mean_theta_hat: float
    mean_theta_n: float
    skewness: float
    excess_kurtosis: float
    negative_variance_rate: float
    results: tuple = field(repr=False, compare=False)

    TABLE_ROWS = ("m_n", "Our CI", "Naive CI", "Oracle CI", "Bias", "Var", "SE", "θ̂")

    def table_values(self):
        return dict(
            zip(
                self.TABLE_ROWS,
                (
                    self.m_used,
                    self.coverage_ours,
                    self.coverage_naive,
                    self.coverage_oracle,
                    self.bias,
                    self.variance,
                    self.mean_se,
                    self.mean_theta_hat,
                ),
            )
        )

    def summary(self):
        out = {f.name: getattr(self, f.name) for f in dataclasses.fields(self) if f.name != "results"}
        return out


def summarize(results):
    """Reduce replication results, in the order given, to an ``MCReport``."""
    reps = len(results)
    if reps < 1:
        raise ValueError("nothing to aggregate")
    # a single replication (smoke runs) reports zero spread
    ddof = 1 if reps > 1 else 0
    theta_hat = np.array([r.theta_hat for r in results])
    theta_n = np.array([r.theta_n for r in results])
    diff = theta_hat - theta_n
    sd = float(np.std(theta_hat, ddof=ddof))
    ms = np.array([r.m for r in results])
    m_used = int(ms[0]) if np.all(ms == ms[0]) else float(ms.mean())
    if sd > 0:
        standardized = (theta_hat - theta_hat.mean()) / sd
        skew = float(stats.skew(standardized))
        kurt = float(stats.kurtosis(standardized))
    else:
        skew = kurt = 0.0
    return MCReport(
        reps=reps,
        m_used=m_used,
        coverage_ours=float(np.mean([r.covered_ours for r in results])),
        coverage_naive=float(np.mean([r.covered_naive for r in results])),
        coverage_oracle=float(np.mean(np.abs(diff) <= ORACLE_Z * sd)),
        bias=abs(float(diff.mean())),
        bias_se=float(np.std(diff, ddof=ddof) / math.sqrt(reps)),
        variance=sd**2,
        mean_se=float(np.mean([r.se_ours for r in results])),
        mean_theta_hat=float(theta_hat.mean()),
        mean_theta_n=float(theta_n.mean()),
        skewness=skew,
        excess_kurtosis=kurt,
        negative_variance_rate=float(np.mean([r.negative_variance for r in results])),
        results=tuple(results),
    )


def run_replications(cfg):
    frozen = None if cfg.redraw_locations else frozen_population(cfg)
    work = partial(run_replication, cfg, frozen=frozen)
    if cfg.threads == 1:
        return [work(rep) for rep in range(cfg.reps)]
    chunk = max(1, cfg.reps // (4 * cfg.threads))
    with ProcessPoolExecutor(max_workers=cfg.threads) as pool:
        return list(pool.map(work, range(cfg.reps), chunksize=chunk))


def run_study(cfg):
    if cfg.reps < 2:
        raise ValueError("a study needs at least two replications")
    return summarize(run_replications(cfg))


@dataclass(frozen=True)
class ScalingRow:
    depth: int
    m: int
    variance: float

    @property
    def scaled(self):
        return self.m * self.variance


def variance_scaling_study(cfg, depths):
    """Empirical ``Var(theta_hat)`` for grid designs at each quadrisection depth.

    The same seed is used at every depth, so arms share locations and noise.
    """
    depths = list(depths)
    if not depths:
        raise ValueError("need at least one depth")
    rows = []
    for depth in depths:
        sub = cfg.replace(partition={"method": "grid", "depth": depth})
        rpt = run_study(sub)
        rows.append(ScalingRow(depth, 4**depth, rpt.variance))
    return rows


@dataclass(frozen=True)
class BiasComparison:
    bias_small_m: float
    bias_recommended_m: float
    se_small_m: float
    se_recommended_m: float
    m_small: int
    m_recommended: float

    @property
    def gap_in_se(self):
        return (self.bias_small_m - self.bias_recommended_m) / math.hypot(self.se_small_m, self.se_recommended_m)


def small_cluster_depth(n, radius=2.0):
    """Grid depth whose cells have radius closest to ``radius`` (bounded clusters)."""
    return max(0, int(round(math.log2(math.sqrt(n) / radius))))


def small_cluster_bias_demo(cfg, small_depth=None, recommended=None):
    """Bias under a bounded-cluster grid versus the ``n**(2/3)`` design."""
    small_depth = small_cluster_depth(cfg.n) if small_depth is None else small_depth
    recommended = recommended or {"method": "spectral", "rule": "worst_case"}
    small = run_study(cfg.replace(partition={"method": "grid", "depth": small_depth}))
    rec = run_study(cfg.replace(partition=dict(recommended)))
    return BiasComparison(small.bias, rec.bias, small.bias_se, rec.bias_se, small.m_used, rec.m_used)


def _fmt(value):
    return repr(float(value)) if not isinstance(value, int) else str(value)


def report_csv(reports):
    """Table-shaped CSV: one row per metric, one column per labelled study."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["metric"] + [label for label, _ in reports])
    for row in MCReport.TABLE_ROWS:
        writer.writerow([row] + [_fmt(rpt.table_values()[row]) for _, rpt in reports])
    return buf.getvalue()


def report_markdown(reports, digits=3):
    lines = ["| | " + " | ".join(label for label, _ in reports) + " |"]
    lines.append("|---|" + "---:|" * len(reports))
    for row in MCReport.TABLE_ROWS:
        cells = []
        for _, rpt in reports:
            v = rpt.table_values()[row]
            cells.append(str(v) if isinstance(v, int) else f"{v:.{digits}f}")
        lines.append(f"| {row} | " + " | ".join(cells) + " |")
    return "\n".join(lines) + "\n"
