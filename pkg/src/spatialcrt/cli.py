"""Command-line entry point.

Exit codes: 0 success, 2 input error, 3 numeric failure.
"""

import argparse
import json
import os
import sys
from importlib import resources
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from . import __version__
from .design import assign_treatments, design_from_clusters, exposure_radius
from .estimator import analyze as run_analysis
from .geometry import Metric, bounding_region, generate_uniform_locations
from .io import (
    InputError,
    read_assignment,
    read_json,
    read_locations,
    read_outcomes,
    sidecar_path,
    write_assignment,
    write_json,
    write_locations,
    write_outcomes,
    write_partition,
)
from .montecarlo import StudyConfig, report_csv, report_markdown, run_replications, summarize
from .outcomes import build_model, global_ate, measure_interference_decay
from .partition import (
    Partition,
    choose_num_clusters,
    grid_partition,
    nearest_grid_depth,
    parse_regime,
    spectral_partition,
)

EXIT_OK, EXIT_INPUT, EXIT_NUMERIC = 0, 2, 3


def _resolve_seed(seed):
    if seed is None:
        seed = int(np.random.SeedSequence().entropy % 2**63)
    print(f"seed: {seed}")
    return seed


def _cluster_count(args, ps):
    if args.m is not None:
        return args.m
    params = {}
    if args.rule == "known_exposure":
        if args.K is None:
            raise InputError("--rule known_exposure needs --K")
        params = {"K": args.K, "R": bounding_region(ps).radius}
    elif args.rule == "exponential":
        if args.eps is None:
            raise InputError("--rule exponential needs --eps")
        params = {"eps": args.eps}
    return choose_num_clusters(ps.n, parse_regime(args.rule, **params))


def _build_partition(args, ps, seed):
    m = _cluster_count(args, ps)
    if args.method == "grid":
        depth = args.depth if args.depth is not None else nearest_grid_depth(m)
        return grid_partition(ps, bounding_region(ps), depth)
    return spectral_partition(ps, m, seed)


def _partition_meta(part, seed):
    return {"m": part.m, "r_n": part.r_n, "source": part.source, "depth": part.depth, "seed": seed}


def cmd_locations(args):
    seed = _resolve_seed(args.seed)
    ps = generate_uniform_locations(args.n, seed)
    write_locations(args.out, ps)
    return EXIT_OK


def cmd_partition(args):
    seed = _resolve_seed(args.seed)
    ps = read_locations(args.locations, args.metric)
    part = _build_partition(args, ps, seed)
    write_partition(args.out, part)
    meta = _partition_meta(part, seed)
    meta["metric"] = ps.metric.value
    write_json(sidecar_path(args.out), meta)
    print(f"m: {part.m}  r_n: {part.r_n:.6g}")
    return EXIT_OK


def cmd_design(args):
    seed = _resolve_seed(args.seed)
    ps = read_locations(args.locations, args.metric)
    part = _build_partition(args, ps, seed)
    design = assign_treatments(part, args.p, seed)
    kappa = args.kappa if args.kappa is not None else exposure_radius(part)
    write_assignment(args.out, part, design)
    meta = _partition_meta(part, seed)
    meta.update({"p": args.p, "kappa": kappa, "metric": ps.metric.value})
    write_json(sidecar_path(args.out), meta)
    print(f"m: {part.m}  r_n: {part.r_n:.6g}  kappa: {kappa:.6g}")
    return EXIT_OK


def _load_design(args):
    """Locations, partition, design and kappa recovered from files and flags."""
    meta_path = Path(args.design) if args.design else sidecar_path(args.assignment)
    meta = read_json(meta_path) if meta_path.exists() else {}
    metric = args.metric or meta.get("metric", Metric.CHEBYSHEV.value)
    ps = read_locations(args.locations, metric)
    membership, treatments = read_assignment(args.assignment)
    if len(membership) != ps.n:
        raise InputError(f"assignment has {len(membership)} units, locations have {ps.n}")
    m = int(meta.get("m", membership.max() + 1))
    if membership.max() >= m:
        raise InputError("assignment uses cluster ids beyond the recorded m")
    kappa = args.kappa if args.kappa is not None else meta.get("kappa")
    if kappa is None:
        raise InputError("no exposure radius: pass --kappa or provide the design sidecar")
    p = args.p if args.p is not None else meta.get("p")
    if p is None:
        raise InputError("no treatment probability: pass --p or provide the design sidecar")
    part = Partition(membership, m, float(meta.get("r_n", 2.0 * float(kappa))), meta.get("source", "file"))
    clusters = np.zeros(m, dtype=np.int8)
    clusters[membership] = treatments
    if not np.array_equal(clusters[membership], treatments):
        raise InputError("units in the same cluster have different treatments")
    return ps, part, design_from_clusters(part, float(p), clusters), float(kappa)


def cmd_outcomes(args):
    ps, part, design, _ = _load_design(args)
    config = read_json(args.model)
    noise = args.noise_seed if args.noise_seed is not None else config.get("noise_seed", 0)
    model = build_model(config, ps, noise=noise)
    write_outcomes(args.out, model.evaluate(design.unit_treatments))
    print(f"theta_n: {global_ate(model)!r}")
    return EXIT_OK


def cmd_analyze(args):
    ps, part, design, kappa = _load_design(args)
    y = read_outcomes(args.outcomes)
    if len(y) != ps.n:
        raise InputError(f"outcomes have {len(y)} units, locations have {ps.n}")
    report = run_analysis(ps, part, design, y, kappa, args.level)
    text = json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    sys.stdout.write(text)
    return EXIT_OK


def cmd_decay(args):
    seed = _resolve_seed(args.seed)
    config = read_json(args.model)
    ps = read_locations(args.locations, args.metric)
    model = build_model(config, ps)
    if not 0 <= args.unit < ps.n:
        raise InputError(f"unit {args.unit} outside 0..{ps.n - 1}")
    print("radius,bound")
    for r in args.radii:
        print(f"{r!r},{measure_interference_decay(model, ps, args.unit, r, args.trials, seed)!r}")
    return EXIT_OK


def load_study_configs(path):
    """Parse a study TOML/JSON file into ``(label, StudyConfig)`` cells.

    Top-level keys are shared defaults; an optional ``[[cells]]`` array
    overrides them per cell.
    """
    path = _config_path(path)
    text = path.read_text()
    try:
        data = json.loads(text) if path.suffix == ".json" else tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise InputError(f"{path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}: line {exc.lineno}, column {exc.colno}: {exc.msg}") from exc
    cells = data.pop("cells", None) or [{}]
    out = []
    for i, cell in enumerate(cells):
        merged = {**data, **cell}
        try:
            cfg = StudyConfig.from_dict(merged)
        except (TypeError, ValueError) as exc:
            raise InputError(f"{path}: cell {i}: {exc}") from exc
        out.append((cfg.label or f"cell{i}", cfg))
    return path, out


def _config_path(name):
    path = Path(name)
    if path.exists():
        return path
    bundled = resources.files("spatialcrt") / "configs" / Path(name).name
    if bundled.is_file():
        return Path(str(bundled))
    raise InputError(f"config {name} not found")


def cmd_simulate(args):
    path, cells = load_study_configs(args.config)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    reports = []
    for label, cfg in cells:
        changes = {"threads": args.threads}
        if args.seed is not None:
            changes["seed"] = args.seed
        if args.reps is not None:
            changes["reps"] = args.reps
        cfg = cfg.replace(**changes)
        print(f"{label}: seed {cfg.seed}, config hash {cfg.digest()}")
        reports.append((label, cfg, summarize(run_replications(cfg))))
    stem = out_dir / path.stem
    table = [(label, rpt) for label, _, rpt in reports]
    Path(f"{stem}.csv").write_text(report_csv(table))
    Path(f"{stem}.md").write_text(report_markdown(table))
    summary = [{"label": label, "config": cfg.to_dict() | {"threads": None}, "config_hash": cfg.digest(), "report": rpt.summary()} for label, cfg, rpt in reports]
    write_json(f"{stem}.json", summary)
    sys.stdout.write(report_markdown(table))
    return EXIT_OK


def _add_partition_args(p):
    p.add_argument("locations", help="locations CSV with header id,x,y")
    p.add_argument("--method", choices=("spectral", "grid"), default="spectral")
    p.add_argument("--m", type=int, help="number of clusters (overrides --rule)")
    p.add_argument("--rule", default="worst_case", choices=("worst_case", "known_exposure", "unknown_exposure", "exponential"))
    p.add_argument("--K", type=float, help="exposure radius for --rule known_exposure")
    p.add_argument("--eps", type=float, help="exponent slack for --rule exponential")
    p.add_argument("--depth", type=int, help="grid quadrisection depth")
    p.add_argument("--metric", choices=[m.value for m in Metric], default=Metric.CHEBYSHEV.value)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)


def _add_design_file_args(p):
    p.add_argument("--locations", required=True)
    p.add_argument("--assignment", required=True)
    p.add_argument("--design", help="design sidecar JSON (default: assignment path with .json)")
    p.add_argument("--kappa", type=float)
    p.add_argument("--p", type=float)
    p.add_argument("--metric", choices=[m.value for m in Metric])


def build_parser():
    parser = argparse.ArgumentParser(prog="spatialcrt", description="Cluster-randomized experiments under spatial interference.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="run a simulation study from a TOML/JSON config")
    p.add_argument("config", help="config path, or the name of a bundled config")
    p.add_argument("--out", default=".", help="output directory")
    p.add_argument("--threads", type=int, default=os.cpu_count() or 1)
    p.add_argument("--seed", type=int)
    p.add_argument("--reps", type=int)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("locations", help="draw uniform locations on [-sqrt(n), sqrt(n)]^2")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_locations)

    p = sub.add_parser("partition", help="cluster locations")
    _add_partition_args(p)
    p.set_defaults(func=cmd_partition)

    p = sub.add_parser("design", help="cluster locations and randomize clusters")
    _add_partition_args(p)
    p.add_argument("--p", type=float, default=0.5)
    p.add_argument("--kappa", type=float, help="exposure radius override (default r_n/2)")
    p.set_defaults(func=cmd_design)

    p = sub.add_parser("outcomes", help="evaluate a model config at a recorded design")
    _add_design_file_args(p)
    p.add_argument("--model", required=True, help="model config JSON")
    p.add_argument("--noise-seed", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_outcomes)

    p = sub.add_parser("analyze", help="estimate the global effect from recorded data")
    _add_design_file_args(p)
    p.add_argument("--outcomes", required=True)
    p.add_argument("--level", type=float, default=0.95)
    p.add_argument("--out")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("decay", help="Monte Carlo interference-decay bounds for one unit")
    p.add_argument("--model", required=True)
    p.add_argument("--locations", required=True)
    p.add_argument("--metric", choices=[m.value for m in Metric], default=Metric.CHEBYSHEV.value)
    p.add_argument("--unit", type=int, required=True)
    p.add_argument("--radii", type=float, nargs="+", required=True)
    p.add_argument("--trials", type=int, default=200)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_decay)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    # LinAlgError subclasses ValueError, so numeric failures are caught first
    except (ArithmeticError, RuntimeError, np.linalg.LinAlgError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ValueError, KeyError, TypeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT

if __name__ == "__main__":
    sys.exit(main())
