#!/usr/bin/env python3
"""
Command-line front end for the lifetime toolkit.

    python lifetime_cli.py sample --n 100 --window cube --seed 7 --out c.csv
    python lifetime_cli.py persist --in c.csv --filtration alpha
    python lifetime_cli.py threshold --k 3 --m 3 --filtration cech --lifetime add --n 1000 --rn-exp 0.7 --alpha 1
    python lifetime_cli.py experiment deathcorr --config deathcorr.json --seed 11

Exit codes: 0 success, 1 runtime error, 2 bad input, 3 unresolvable threshold,
4 experiment ran but failed its statistical acceptance.
"""

import argparse
import json
import logging
import math
import os
import sys
from typing import Any, Dict, List, Optional

from artifacts import RunManifest, manifest_path_for
from errors import InvalidInputError, LifetimeToolkitError
from experiments import EXPERIMENTS, run_experiment
from filtration import ALPHA, CECH, VR, build_filtration
from persistence import diagram_to_csv, features, features_on_torus, reduce
from pointprocess import TORUS, DensitySpec, Window, read_cloud_csv, sample_inhomogeneous, write_cloud_csv
from regime import RegimeConfig, analytic_g_curve, estimate_g, lmax, threshold_u
from settings import MASTER_SEED, MC_SAMPLES, OUT_DIR, WORKERS, setup_logging

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_USAGE = 2
EXIT_STAT_FAIL = 4


def _count(text: str) -> int:
    """Integer flag that also accepts scientific notation such as 1e7."""
    try:
        value = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text}")
    if not value.is_integer():
        raise argparse.ArgumentTypeError(f"not an integer: {text}")
    return int(value)


def _resolve_output(path: str, out_dir: str) -> str:
    return path if os.path.isabs(path) else os.path.join(out_dir, path)


def _resolve_input(path: str, out_dir: str) -> str:
    if os.path.isabs(path) or os.path.exists(path):
        return path
    return os.path.join(out_dir, path)


def _load_manifest(path: str) -> Dict[str, Any]:
    manifest = manifest_path_for(path)
    if not os.path.exists(manifest):
        return {}
    with open(manifest, encoding="utf-8") as f:
        return json.load(f)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=_count, default=None, help="Master seed (default: PE_SEED).")
    common.add_argument("--workers", type=_count, default=WORKERS, help="Parallel workers; results do not depend on it.")
    common.add_argument("--out-dir", default=OUT_DIR, help="Directory all relative paths are resolved against.")
    common.add_argument("--log-level", default=None, help="Logging level (default: PE_LOG_LEVEL).")

    parser = argparse.ArgumentParser(description="Persistent homology of Poisson clouds: large-lifetime cycles")
    sub = parser.add_subparsers(dest="command", required=True)

    sample = sub.add_parser("sample", parents=[common], help="Sample a Poisson point cloud.")
    sample.add_argument("--n", type=float, required=True, help="Intensity.")
    sample.add_argument("--window", default="cube", help="cube | torus | box:lo,hi")
    sample.add_argument("--density", default="const", help="const | const:level | gauss:scale | grid:path")
    sample.add_argument("--dim", type=_count, default=2, help="Ambient dimension (default: 2).")
    sample.add_argument("--out", required=True, help="Cloud CSV path.")

    persist = sub.add_parser("persist", parents=[common], help="Persistence diagram of a cloud.")
    persist.add_argument("--in", dest="input", required=True, help="Cloud CSV path.")
    persist.add_argument("--filtration", choices=[CECH, ALPHA, VR], default=ALPHA)
    persist.add_argument("--maxdim", type=_count, default=2, help="Largest simplex dimension built.")
    persist.add_argument("--rmax", type=float, default=math.inf, help="Truncation radius.")
    persist.add_argument("--out", default="diagram.csv", help="Diagram CSV path.")

    threshold = sub.add_parser("threshold", parents=[common], help="Threshold curve g and u_{n,alpha}.")
    threshold.add_argument("--k", type=_count, default=3)
    threshold.add_argument("--m", type=_count, default=3)
    threshold.add_argument("--filtration", choices=[CECH, VR], default=CECH)
    threshold.add_argument("--lifetime", default="add", help="add | mult")
    threshold.add_argument("--n", type=float, required=True)
    scale = threshold.add_mutually_exclusive_group(required=True)
    scale.add_argument("--rn", type=float, help="Deathtime bound r_n.")
    scale.add_argument("--rn-exp", type=float, help="Exponent beta in r_n = n^-beta.")
    threshold.add_argument("--alpha", type=float, default=1.0)
    threshold.add_argument("--mc-samples", type=_count, default=MC_SAMPLES)
    threshold.add_argument("--analytic", action="store_true", help="Use the analytic g (Čech, m = k = 3, additive).")
    threshold.add_argument("--out", default="threshold.csv", help="Curve CSV path.")

    experiment = sub.add_parser("experiment", parents=[common], help="Run an experiment.")
    experiment.add_argument("name", choices=sorted(EXPERIMENTS))
    experiment.add_argument("--config", default=None, help="JSON config file.")

    return parser


def cmd_sample(args: argparse.Namespace, seed: int) -> int:
    window = Window.parse(args.window, args.dim)
    spec = DensitySpec.parse(args.density, window)
    manifest = RunManifest("sample", {"n": args.n, "window": window.to_text(), "density": spec.to_text()}, seed)
    logger.info(f"🚀 Sampling n={args.n} on {window.to_text()} with density {spec.to_text()}")
    cloud = sample_inhomogeneous(args.n, spec, seed, 0)
    path = write_cloud_csv(cloud, _resolve_output(args.out, args.out_dir))
    manifest.outputs.append(path)
    manifest.results = {"points": len(cloud)}
    manifest.finish().write(manifest_path_for(path))
    print(f"✅ Sampled {len(cloud)} points -> {path}")
    return EXIT_OK


def cmd_persist(args: argparse.Namespace, seed: int) -> int:
    source = _resolve_input(args.input, args.out_dir)
    if not os.path.exists(source):
        raise InvalidInputError(f"❌ Cloud file not found: {source}")
    torus = _load_manifest(source).get("config", {}).get("window") == TORUS
    cloud = read_cloud_csv(source, torus=torus)
    manifest = RunManifest("persist", {"filtration": args.filtration, "maxdim": args.maxdim, "rmax": args.rmax,
                                       "torus": torus}, seed, inputs=[source])

    if args.filtration == ALPHA and torus:
        records = [r for r in features_on_torus(cloud) if r.death <= args.rmax]
    else:
        fc = build_filtration(cloud, args.filtration, args.maxdim, args.rmax)
        pairing = reduce(fc)
        records = [r for p in range(1, max(fc.max_dimension, 1)) for r in features(pairing, fc, p)]

    path = diagram_to_csv(records, _resolve_output(args.out, args.out_dir), cloud.dimension)
    manifest.outputs.append(path)
    manifest.results = {"features": len(records)}
    manifest.finish().write(manifest_path_for(path))
    print(f"✅ {len(records)} features -> {path}")
    return EXIT_OK


def cmd_threshold(args: argparse.Namespace, seed: int) -> int:
    if args.rn is not None:
        cfg = RegimeConfig(args.n, args.rn, args.alpha, 2, args.k, args.m, args.filtration, args.lifetime)
    else:
        cfg = RegimeConfig.from_exponent(args.n, args.rn_exp, alpha=args.alpha, k=args.k, m=args.m,
                                         filtration=args.filtration, lifetime=args.lifetime)
    warnings = cfg.sparsity_warnings()
    ell_max = lmax(cfg.k, cfg.m, cfg.filtration, cfg.lifetime, cfg.d)
    manifest = RunManifest("threshold", dict(cfg.to_dict(), mc_samples=args.mc_samples, analytic=args.analytic,
                                             workers=args.workers), seed)

    if args.analytic:
        if not (cfg.filtration == CECH and cfg.k == 3 and cfg.m == 3 and cfg.lifetime == "additive"):
            raise InvalidInputError("❌ --analytic is available for Čech with m = k = 3 and additive lifetimes")
        curve = analytic_g_curve()
    else:
        curve = estimate_g(cfg, args.mc_samples, seed, workers=args.workers)

    path = curve.to_csv(_resolve_output(args.out, args.out_dir))
    manifest.outputs.append(path)
    manifest.results = {"lmax": ell_max.value, "lmax_provenance": ell_max.provenance,
                        "rho_m": cfg.rho_m, "rho_next": cfg.rho_next, "warnings": warnings,
                        "slope": curve.slope, "flags": curve.flags}

    result = threshold_u(curve, cfg)
    manifest.results.update({"u": result.value, "u_lower": result.lower, "u_upper": result.upper,
                             "target": result.target, "extrapolated": result.extrapolated, "flags": curve.flags})
    manifest.finish().write(manifest_path_for(path))
    ci = f" [{result.lower:.6g}, {result.upper:.6g}]" if result.lower is not None else ""
    print(f"✅ u_(n,alpha) = {result.value:.6g}{ci} -> {path}")
    return EXIT_OK


def cmd_experiment(args: argparse.Namespace, seed: int) -> int:
    config: Dict[str, Any] = {}
    inputs: List[str] = []
    if args.config:
        source = _resolve_input(args.config, args.out_dir)
        if not os.path.exists(source):
            raise InvalidInputError(f"❌ Config file not found: {source}")
        with open(source, encoding="utf-8") as f:
            try:
                config = json.load(f)
            except json.JSONDecodeError as e:
                raise InvalidInputError(f"❌ Malformed config {source}: {e}")
        inputs.append(source)

    manifest = RunManifest("experiment", dict(config, name=args.name, workers=args.workers), seed, inputs=inputs)
    report = run_experiment(args.name, config, seed, args.workers)
    target = os.path.join(args.out_dir, args.name)
    manifest.outputs.extend(report.write(target))
    manifest.results = {"passed": report.passed, "metrics": report.metrics, "runs": report.runs, "flags": report.flags}
    manifest.finish().write(os.path.join(target, "report.manifest.json"))

    if report.passed is False:
        print(f"❌ Experiment {args.name} failed its acceptance check")
        return EXIT_STAT_FAIL
    print(f"✅ Experiment {args.name} finished -> {target}")
    return EXIT_OK


COMMANDS = {
    "sample": cmd_sample,
    "persist": cmd_persist,
    "threshold": cmd_threshold,
    "experiment": cmd_experiment,
}


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code) if isinstance(e.code, int) else EXIT_USAGE

    setup_logging(args.log_level)
    seed = args.seed if args.seed is not None else MASTER_SEED
    try:
        return COMMANDS[args.command](args, seed)
    except LifetimeToolkitError as e:
        logger.error(str(e))
        print(f"{e}", file=sys.stderr)
        return e.exit_code
    except OSError as e:
        logger.error(f"❌ I/O failure: {e}")
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
