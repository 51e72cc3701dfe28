"""Command-line entry point: sampling, simulation, constants, rate experiments and self-checks."""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import math
import sys
import time
from dataclasses import asdict, dataclass

import numpy as np

from .constants import (C2_KINDS, ConstantsReport, c1_lambda, c2_constant, constants_report, kolmogorov_bound,
                        wasserstein_bound)
from .errors import AvoidanceError, DegenerateVarianceError, InvalidArgumentError
from .functionals import (ModelSpec, QuadratureSpec, mean_avoidance, mean_binomial_avoidance,
                          replicate_functional)
from .geometry import Window
from .gof import DistanceRow, DistanceTable, fmt, kolmogorov_distance, rate_fit, standardize, wasserstein1_distance
from .mc import McEstimate
from .parallel import resolve_workers
from .ppp import sample_homogeneous, write_csv
from .rng import RngStream
from .verify import SUITES, run_suite

MIN_DISTANCE_REPS = 100


class UsageError(Exception):
    """Bad flags or configuration (exit code 2)."""


# --- configuration -------------------------------------------------------------

@dataclass
class ExperimentConfig:
    model: ModelSpec
    scales: list
    reps: int
    quad_budget: int = 100_000
    quad_method: str = "auto"
    constant_budget: int = 1_000_000
    pilot_reps: int = 50_000
    master_seed: int = 0
    workers: int | None = None
    output_path: str = "clt_check.csv"

    def __post_init__(self):
        self.scales = [float(s) for s in self.scales]
        if not self.scales:
            raise UsageError("at least one scale is required")
        if any(b <= a for a, b in zip(self.scales, self.scales[1:])):
            raise UsageError("scales must be strictly increasing")
        if any(s <= 0 for s in self.scales):
            raise UsageError("scales must be positive")
        if self.reps < MIN_DISTANCE_REPS:
            raise UsageError(f"reps must be >= {MIN_DISTANCE_REPS} for distance experiments")
        if self.pilot_reps < 2 or self.quad_budget < 1 or self.constant_budget < 2:
            raise UsageError("pilot_reps, quad_budget and constant_budget must be positive")

    def to_dict(self) -> dict:
        """Every field that influences results; the worker count is deliberately absent."""
        out = asdict(self)
        out["model"] = self.model.to_dict()
        out.pop("workers")
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        data = dict(data.get("config", data))
        known = set(cls.__dataclass_fields__)
        unknown = set(data) - known
        if unknown:
            raise UsageError(f"unknown config keys: {sorted(unknown)}")
        try:
            data["model"] = ModelSpec.from_dict(data["model"])
        except (KeyError, TypeError, AvoidanceError) as exc:
            raise UsageError(f"bad model in config: {exc}") from None
        return cls(**data)

    def quad(self) -> QuadratureSpec:
        if self.quad_method == "auto":
            return QuadratureSpec.auto(self.model.dimension, self.quad_budget)
        return QuadratureSpec(self.quad_method, self.quad_budget)


def content_hash(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True, allow_nan=True).encode()).hexdigest()


def _clean(obj):
    """JSON-safe copy: non-finite floats become null."""
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


def dump_json(obj, fh) -> None:
    json.dump(_clean(obj), fh, indent=2, allow_nan=False)
    fh.write("\n")


# --- argument helpers ----------------------------------------------------------

def _count(text: str) -> int:
    """Integer flag that also accepts ``1e6`` style input."""
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None
    if v != int(v):
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}")
    return int(v)


def _positive(text: str) -> float:
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None
    if not v > 0 or not math.isfinite(v):
        raise argparse.ArgumentTypeError(f"must be a positive finite number, got {text!r}")
    return v


def _pair(text: str) -> tuple[float, float]:
    try:
        a, b = (float(x) for x in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a,b got {text!r}") from None
    if not a < b:
        raise argparse.ArgumentTypeError("need a < b")
    return a, b


def _scales(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _add_model_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--model", choices=("germ-grain", "quantization"), default="germ-grain")
    p.add_argument("--dim", type=int, default=1)
    p.add_argument("--radius", type=float, default=0.5, help="grain radius t (germ-grain)")
    p.add_argument("--power", type=float, default=1.0, help="distance exponent p (quantization)")
    p.add_argument("--process", choices=("poisson", "binomial"), default="poisson")
    p.add_argument("--domain", type=_pair, default=(0.0, 1.0), help="cube side a,b (germ-grain only)")


def _model_from(args) -> ModelSpec:
    if args.dim < 1:
        raise UsageError("--dim must be >= 1")
    if args.model == "germ-grain":
        if not args.radius >= 0:
            raise UsageError("--radius must be >= 0")
        return ModelSpec.germ_grain(args.dim, args.radius, args.process, Window.cube(args.dim, *args.domain))
    if not args.power > 0:
        raise UsageError("--power must be > 0")
    if tuple(args.domain) != (0.0, 1.0):
        raise UsageError("quantization is defined on the unit cube")
    return ModelSpec.quantization(args.dim, args.power, args.process)


# --- subcommands ---------------------------------------------------------------

def cmd_sample_ppp(args) -> int:
    if args.dim < 1:
        raise UsageError("--dim must be >= 1")
    window = Window.cube(args.dim, *args.window)
    pattern = sample_homogeneous(window, args.intensity, RngStream(args.seed))
    write_csv(pattern, args.out, args.seed)
    return 0


def cmd_simulate(args) -> int:
    model = _model_from(args)
    workers = resolve_workers(args.workers)
    quad = QuadratureSpec.auto(model.dimension, args.quad_budget) if args.quad_method == "auto" \
        else QuadratureSpec(args.quad_method, args.quad_budget)
    values = replicate_functional(model, args.scale, args.reps, args.seed, quad, workers)
    with open(args.out, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("replicate", "value"))
        for i, v in enumerate(values):
            w.writerow((i, fmt(float(v))))
    est = McEstimate.from_samples(values, args.seed)
    var = float(np.var(values, ddof=1)) if len(values) > 1 else float("nan")
    dump_json({"model": model.to_dict(), "lambda": args.scale, "reps": args.reps, "seed": args.seed,
               "mean": est.value, "se": est.se, "variance": var}, sys.stdout)
    return 0


def cmd_constants(args) -> int:
    model = _model_from(args)
    workers = resolve_workers(args.workers)
    n = args.n if args.n is not None else max(1, int(round(args.scale)))
    report = constants_report(model, args.scale, args.budget, RngStream(args.seed), n=n, workers=workers)
    out = report.to_dict()
    if args.out:
        with open(args.out, "w") as fh:
            dump_json(out, fh)
    else:
        dump_json(out, sys.stdout)
    return 0


def analytic_mean(model: ModelSpec, scale: float) -> float:
    if model.process == "binomial":
        return model.natural_value(mean_binomial_avoidance(model, int(scale)), scale)
    return model.natural_value(mean_avoidance(model), scale)


def run_clt_check(cfg: ExperimentConfig, workers: int = 1) -> tuple[DistanceTable, dict]:
    """Distances to the normal at every scale plus a manifest of the run."""
    model = cfg.model
    quad = cfg.quad()
    root = RngStream(cfg.master_seed)
    table = DistanceTable()
    stages = []
    poisson = model.process == "poisson"
    c2 = None
    if poisson:
        cstream = root.child(1 << 16)
        c2 = {k: c2_constant(k, model, cfg.constant_budget, cstream.child(i), workers)
              for i, k in enumerate(C2_KINDS)}
    for j, scale in enumerate(cfg.scales):
        if model.process == "binomial" and scale != int(scale):
            raise UsageError("binomial scales must be integers")
        seed = root.child(j).child(0).derive_seed()
        pilot_seed = root.child(j).child(1).derive_seed()
        values = np.asarray(replicate_functional(model, scale, cfg.reps, seed, quad, workers))
        pilot = np.asarray(replicate_functional(model, scale, cfg.pilot_reps, pilot_seed, quad, workers))
        mean = analytic_mean(model, scale)
        sd = float(np.std(pilot, ddof=1))
        if not sd > 0:
            raise DegenerateVarianceError(f"pilot variance is zero at scale {scale}")
        z = standardize(values, mean, sd)
        bw = bk = float("nan")
        if poisson:
            c1 = c1_lambda(model, scale, cfg.constant_budget, root.child(j).child(2), workers)
            rep = ConstantsReport(model, scale, c1, c1, dict(c2))
            bw, bk = wasserstein_bound(rep, scale), kolmogorov_bound(rep, scale)
        table.append(DistanceRow(scale, wasserstein1_distance(z), kolmogorov_distance(z), bw, bk, cfg.reps, seed))
        stages.append({"scale": scale, "replicate_seed": seed, "pilot_seed": pilot_seed,
                       "analytic_mean": mean, "pilot_sd": sd})
    fits = {}
    if len(table.rows) >= 2:
        for col in ("d_w", "d_k"):
            try:
                slope, intercept = rate_fit(table, col)
            except InvalidArgumentError:
                slope = intercept = float("nan")
            fits[col] = {"slope": slope, "intercept": intercept}
    config = cfg.to_dict()
    manifest = {
        "config": config,
        "input_hash": content_hash({k: v for k, v in config.items() if k != "output_path"}),
        "stages": stages,
        "rate_fit": fits,
    }
    if c2 is not None:
        manifest["constants"] = {f"c2_{k}": v.to_dict() for k, v in c2.items()}
    return table, manifest


def cmd_clt_check(args) -> int:
    if args.config:
        try:
            with open(args.config) as fh:
                data = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config: {exc}") from None
        cfg = ExperimentConfig.from_dict(data)
        if args.out:
            cfg.output_path = args.out
    else:
        if not args.scales:
            raise UsageError("--scales or --config is required")
        cfg = ExperimentConfig(
            model=_model_from(args), scales=args.scales, reps=args.reps, quad_budget=args.quad_budget,
            quad_method=args.quad_method, constant_budget=args.constant_budget, pilot_reps=args.pilot_reps,
            master_seed=args.seed, output_path=args.out or "clt_check.csv",
        )
    workers = resolve_workers(args.workers if args.workers is not None else cfg.workers)
    start = time.perf_counter()
    table, manifest = run_clt_check(cfg, workers)
    table.write_csv(cfg.output_path)
    manifest["runtime"] = {"wall_seconds": time.perf_counter() - start, "workers": workers}
    with open(args.manifest or cfg.output_path + ".manifest.json", "w") as fh:
        dump_json(manifest, fh)
    for col, fit in manifest["rate_fit"].items():
        print(f"rate_fit {col} slope={fmt(fit['slope'])} intercept={fmt(fit['intercept'])}")
    return 0


def cmd_verify(args) -> int:
    records = run_suite(args.suite, args.seed)
    failed = [r for r in records if not r["pass"]]
    for r in records:
        print(json.dumps(_clean(r), allow_nan=False))
    for r in failed:
        print("FAILED " + json.dumps(_clean(r), allow_nan=False), file=sys.stderr)
    return 1 if failed else 0


# --- parser --------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="avoidance-clt", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("sample-ppp", help="sample a homogeneous Poisson pattern on a cube")
    p.add_argument("--dim", type=int, required=True)
    p.add_argument("--intensity", type=_positive, required=True)
    p.add_argument("--window", type=_pair, default=(0.0, 1.0))
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sample_ppp)

    p = sub.add_parser("simulate", help="replicate a functional and dump the values")
    _add_model_flags(p)
    p.add_argument("--lambda", dest="scale", type=_positive, required=True)
    p.add_argument("--reps", type=_count, default=1000)
    p.add_argument("--quad-budget", type=_count, default=100_000)
    p.add_argument("--quad-method", choices=("auto", "monte-carlo", "lattice", "exact"), default="auto")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--workers", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("constants", help="estimate the variance and bound constants")
    _add_model_flags(p)
    p.add_argument("--lambda", dest="scale", type=_positive, default=100.0)
    p.add_argument("--n", type=_count, help="sample size for alpha_n (default: lambda)")
    p.add_argument("--budget", type=_count, default=1_000_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--workers", type=int)
    p.add_argument("--out")
    p.set_defaults(func=cmd_constants)

    p = sub.add_parser("clt-check", help="distances to the normal along a ladder of scales")
    _add_model_flags(p)
    p.add_argument("--scales", type=_scales)
    p.add_argument("--reps", type=_count, default=5000)
    p.add_argument("--pilot-reps", type=_count, default=50_000)
    p.add_argument("--quad-budget", type=_count, default=100_000)
    p.add_argument("--quad-method", choices=("auto", "monte-carlo", "lattice", "exact"), default="auto")
    p.add_argument("--constant-budget", type=_count, default=1_000_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--workers", type=int)
    p.add_argument("--config")
    p.add_argument("--out")
    p.add_argument("--manifest")
    p.set_defaults(func=cmd_clt_check)

    p = sub.add_parser("verify", help="run self-check suites")
    p.add_argument("--suite", choices=SUITES + ("all",), default="all")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_verify)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (UsageError, InvalidArgumentError) as exc:
        parser.error(str(exc))
    except DegenerateVarianceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except AvoidanceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
