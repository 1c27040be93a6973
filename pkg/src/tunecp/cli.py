"""Command-line entry point: ``tunecp detect | calibrate | infer | simulate``."""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import sys
from datetime import datetime, timezone
from pathlib import Path

from . import __version__
from .calibrate import COMPATIBILITY, IncompatibleThresholdError, ThresholdSpec, calibrate, check_compatible, set_threads
from .core import ChangepointSet, InvalidInputError, dumps_json, read_series_csv
from .detect import DetectorSpec, detect
from .estimate import equation_by_name
from .simlab import SCENARIOS, ScenarioConfig, h_sweep
from .stats import FAMILIES, StatisticSpec
from .tune import TuneConfig, tune_infer


class UsageError(Exception):
    """Bad flag combination detected after argument parsing."""


DETECT_ALGOS = {"bs": "bs_threshold", "bs-k": "bs_ksteps", "pelt": "pelt", "mosum": "mosum"}
SIM_DETECTORS = ("bs-k", "bs", "bs-bic", "bs-k-bic", "pelt", "pelt-bic", "mosum")


def _default_method(family: str) -> str:
    return COMPATIBILITY[family][0]


def _float_list(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _int_list(text: str) -> list[int]:
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tunecp", description="Changepoint detection and post-detection inference.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--threads", type=int, default=None, help="worker threads (default: all cores)")

    p = sub.add_parser("detect", parents=[common], help="run a changepoint detector on a CSV series")
    p.add_argument("--input", required=True)
    p.add_argument("--algo", required=True, choices=sorted(DETECT_ALGOS))
    p.add_argument("--k", type=int)
    p.add_argument("--lambda", dest="lam", type=float)
    p.add_argument("--gamma", type=float)
    p.add_argument("--bic", action="store_true")
    p.add_argument("--h", type=int, help="MOSUM bandwidth")
    p.add_argument("--mosum-threshold", type=float)
    p.add_argument("--eta", type=float, default=0.4)
    p.add_argument("--sigma", type=float, help="noise scale (default: robust estimate)")
    p.add_argument("--coordinate", type=int, help="detect on one column only")
    p.add_argument("--output", required=True)

    p = sub.add_parser("calibrate", parents=[common], help="compute a universal threshold")
    p.add_argument("--n", type=int)
    p.add_argument("--h", type=int, required=True)
    p.add_argument("--family", required=True, choices=FAMILIES)
    p.add_argument("--method", help="threshold method (default: first compatible one)")
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--B", type=int)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--d", type=int, default=1)
    p.add_argument("--input", help="CSV series for data-dependent engines")
    p.add_argument("--horizon", type=float)
    p.add_argument("--mesh", type=int)
    p.add_argument("--g", default="l2", choices=("l2", "linf"))
    p.add_argument("--score-map", default="identity", choices=("identity", "regression"))
    p.add_argument("--threshold-cache")
    p.add_argument("--output", help="write the calibration record here")

    p = sub.add_parser("infer", parents=[common], help="assess detected changepoints")
    p.add_argument("--input", required=True)
    p.add_argument("--changepoints", required=True)
    p.add_argument("--h", type=int, required=True)
    p.add_argument("--family", required=True, choices=FAMILIES)
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--threshold-method")
    p.add_argument("--B", type=int)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--null-mode", choices=("window", "segment"))
    p.add_argument("--sigma", type=float)
    p.add_argument("--g", default="l2", choices=("l2", "linf"))
    p.add_argument("--score-map", default="identity", choices=("identity", "regression"))
    p.add_argument("--equation", default="mean", choices=("mean", "poisson", "ols"))
    p.add_argument("--unbiased-diff", action="store_true",
                   help="divide difference-based variances by twice the number of terms")
    p.add_argument("--horizon", type=float)
    p.add_argument("--mesh", type=int)
    p.add_argument("--threshold-cache")
    p.add_argument("--output", required=True)

    p = sub.add_parser("simulate", parents=[common], help="Monte Carlo FWER / power study")
    p.add_argument("--scenario", required=True, choices=SCENARIOS)
    p.add_argument("--delta-grid", type=_float_list, default=[0.0])
    p.add_argument("--reps", type=int, default=200)
    p.add_argument("--detector", default="bs-k-bic", choices=SIM_DETECTORS)
    p.add_argument("--k", type=int)
    p.add_argument("--family", default="mean", choices=FAMILIES)
    p.add_argument("--threshold-method")
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--h", type=_int_list, default=[10])
    p.add_argument("--n", type=int)
    p.add_argument("--d", type=int)
    p.add_argument("--K", type=int, default=4)
    p.add_argument("--B", type=int)
    p.add_argument("--g", default="l2", choices=("l2", "linf"))
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--threshold-cache")
    p.add_argument("--output", required=True)
    return parser


# ----------------------------------------------------------------------------
# subcommands


def _load_series(path):
    try:
        return read_series_csv(path)
    except OSError as exc:
        raise RuntimeError(f"cannot read {path}: {exc}") from None


def _stat_spec(args, family: str, d: int) -> StatisticSpec:
    eq = None
    if family == "wald":
        eq = equation_by_name(args.equation, d - 1 if args.equation == "ols" else d)
    return StatisticSpec(family, args.h, g=args.g, sigma=getattr(args, "sigma", None), eq=eq,
                         score_map=args.score_map, unbiased_diff=getattr(args, "unbiased_diff", False))


def cmd_detect(args) -> str:
    series = _load_series(args.input)
    algo = DETECT_ALGOS[args.algo]
    if args.algo != "mosum" and (args.h is not None or args.mosum_threshold is not None):
        raise UsageError("--h and --mosum-threshold only apply to --algo mosum")
    try:
        spec = DetectorSpec(
            algo,
            k=args.k,
            lam=args.lam,
            gamma=args.gamma,
            use_bic=args.bic,
            mosum_bandwidth=args.h if algo == "mosum" else None,
            mosum_threshold=args.mosum_threshold,
            mosum_eta=args.eta,
            coordinate=args.coordinate,
        )
    except InvalidInputError as exc:
        raise UsageError(str(exc)) from None
    cps = detect(series, spec, args.sigma)
    return dumps_json(cps.to_dict())


def cmd_calibrate(args) -> str:
    method = args.method or _default_method(args.family)
    check_compatible(args.family, method)
    series = _load_series(args.input) if args.input else None
    n = args.n if args.n is not None else (series.n if series is not None else None)
    if n is None:
        raise UsageError("calibrate needs --n or --input")
    if series is not None and series.n != n:
        raise UsageError(f"--n {n} disagrees with the input length {series.n}")
    d = series.d if series is not None else args.d
    if args.score_map == "regression" and series is not None:
        d = series.d - 1
    stat = StatisticSpec(args.family, args.h, g=args.g, score_map=args.score_map,
                         sigma=1.0 if args.family in ("mean", "max_cusum", "segment_mean") else None)
    tspec = ThresholdSpec(method, args.alpha, args.B, args.seed, args.horizon, args.mesh)
    thr, rec = calibrate(stat, tspec, n, d, series, args.threshold_cache, threads=args.threads)
    print(repr(thr))
    return dumps_json(rec)


def cmd_infer(args) -> str:
    series = _load_series(args.input)
    try:
        data = json.loads(Path(args.changepoints).read_text(encoding="utf-8"))
    except OSError as exc:
        raise RuntimeError(f"cannot read {args.changepoints}: {exc}") from None
    except ValueError as exc:
        raise RuntimeError(f"malformed changepoint JSON: {exc}") from None
    if isinstance(data, list):
        data = {"locations": data}
    detected = ChangepointSet.from_dict(data, series.n)
    method = args.threshold_method or _default_method(args.family)
    check_compatible(args.family, method)
    null_mode = args.null_mode or ("segment" if args.family == "segment_mean" else "window")
    stat = _stat_spec(args, args.family, series.d)
    config = TuneConfig(stat, ThresholdSpec(method, args.alpha, args.B, args.seed, args.horizon, args.mesh), null_mode)
    report = tune_infer(series, detected, config, cache_dir=args.threshold_cache, threads=args.threads)
    return dumps_json(report.to_dict())


def _sim_detector(args, scenario: ScenarioConfig, h: int) -> DetectorSpec:
    name = args.detector
    if name == "bs-k":
        k = args.k if args.k is not None else (2 * scenario.K_star if scenario.scenario == "IV" else scenario.K_star)
        return DetectorSpec("bs_ksteps", k=k)
    if name == "bs":
        return DetectorSpec("bs_threshold")
    if name == "bs-bic":
        return DetectorSpec("bs_threshold", use_bic=True)
    if name == "bs-k-bic":
        return DetectorSpec("bs_ksteps", use_bic=True)
    if name == "pelt":
        return DetectorSpec("pelt")
    if name == "pelt-bic":
        return DetectorSpec("pelt", use_bic=True)
    return DetectorSpec("mosum", mosum_bandwidth=h)


def _fmt(x) -> str:
    return repr(float(x)) if x is not None else ""


def cmd_simulate(args) -> str:
    method = args.threshold_method or _default_method(args.family)
    check_compatible(args.family, method)
    if args.reps < 1:
        raise UsageError("--reps must be positive")
    null_mode = "segment" if args.family == "segment_mean" else "window"
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["scenario", "delta", "h", "reps", "fwer_hat", "power_hat", "power_defined_reps",
                     "hausdorff_mean", "threshold"])
    for delta in args.delta_grid:
        scen = ScenarioConfig(args.scenario, n=args.n, d=args.d, K_star=args.K, delta=delta, seed=args.seed)
        score_map = "regression" if scen.scenario == "IV" else "identity"
        eq = equation_by_name("ols" if scen.scenario == "IV" else "mean", scen.d) if args.family == "wald" else None
        stat = StatisticSpec(args.family, args.h[0], g=args.g, score_map=score_map, eq=eq)
        template = TuneConfig(stat, ThresholdSpec(method, args.alpha, args.B, args.seed), null_mode)
        for h in args.h:
            detector = _sim_detector(args, scen, h)
            (summary,) = h_sweep(scen, detector, template, [h], args.reps, args.seed,
                                 args.threshold_cache, args.threads)
            writer.writerow([scen.scenario, _fmt(delta), h, summary.reps, _fmt(summary.fwer_hat),
                             _fmt(summary.power_hat), summary.power_defined_reps,
                             _fmt(summary.hausdorff_mean), _fmt(summary.config["threshold"])])
    return buf.getvalue()


COMMANDS = {"detect": cmd_detect, "calibrate": cmd_calibrate, "infer": cmd_infer, "simulate": cmd_simulate}


# ----------------------------------------------------------------------------
# manifest and main


def _digest_file(path) -> str | None:
    try:
        return hashlib.sha256(Path(path).read_bytes()).hexdigest()
    except OSError:
        return None


def write_manifest(output: str, args, argv, started: str) -> None:
    inputs = {}
    for attr in ("input", "changepoints"):
        path = getattr(args, attr, None)
        if path:
            inputs[path] = _digest_file(path)
    manifest = {
        "command": args.command,
        "argv": list(argv),
        "seed": getattr(args, "seed", None),
        "version": __version__,
        "input_sha256": inputs,
        "output_sha256": _digest_file(output),
        "started": started,
        "finished": datetime.now(timezone.utc).isoformat(),
    }
    Path(f"{output}.manifest.json").write_text(dumps_json(manifest), encoding="utf-8")


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    started = datetime.now(timezone.utc).isoformat()
    try:
        set_threads(args.threads)
        text = COMMANDS[args.command](args)
        output = getattr(args, "output", None)
        if output:
            Path(output).parent.mkdir(parents=True, exist_ok=True)
            Path(output).write_text(text, encoding="utf-8")
            write_manifest(output, args, argv, started)
        elif args.command != "calibrate":
            sys.stdout.write(text)
    except IncompatibleThresholdError as exc:
        print(f"tunecp {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except UsageError as exc:
        print(f"tunecp {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except (InvalidInputError, RuntimeError, ValueError) as exc:
        print(f"tunecp {args.command}: error: {exc}", file=sys.stderr)
        return 1
    finally:
        set_threads(None)
    return 0


if __name__ == "__main__":
    sys.exit(main())
