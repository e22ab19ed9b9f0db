"""
Command-line front end: bounds, phase, risk, game, chi2 and enumerate

Every option may also come from a JSON file given with --config; explicit
flags win. The resolved configuration travels with every output file.
"""
import argparse
import json
import math
import sys
import traceback
from dataclasses import asdict

from bounds import MATCHING_SM, PROBLEMS, SPCA, normalize_problem
from detectors import MATCHING_MEAN_SETTINGS, SETTINGS
from harness import (AUTO_SETTING, ORACLE_MODES, ExperimentConfig, PhaseGrid,
                     adversary_game, estimate_risk, risk_frame,
                     sweep_empirical_boundary, sweep_phase_diagram, write_game_jsonl,
                     write_phase_csv, write_risk_csv)
from models import SHIFTED_MEAN, SPIKED_COVARIANCE
from reports import (bounds_report, bounds_table, chi2_report, chi2_table,
                     enumerate_report, enumerate_table, game_table, risk_table,
                     write_phase_svg, write_risk_svg)
from structure_classes import PERFECT_MATCHING, SPARSE_SET
from utils import SQPhaseError, log_debug, settings

EXIT_OK, EXIT_USAGE, EXIT_VIOLATION = 0, 2, 3

DEFAULTS = {
    "bounds": {"alpha": 1.0, "xi": 0.05, "T": 0, "delta": None},
    "chi2": {"alpha": 1.0, "n": 1},
    "phase": {"res": 51, "slice": [], "x_axis": "p_beta", "y_axis": "p_n",
              "x_range": "0,1", "y_range": "0,2"},
    "risk": {"alpha": 1.0, "xi": 0.05, "oracle": "data", "trials": 100, "seed": 0, "workers": 1,
             "budget": None, "enumerate_alternatives": False, "sweep": None, "problem": None},
    "game": {"alpha": 1.0, "xi": 0.05, "trials": 2000, "seed": 0, "workers": 1, "T": None,
             "problem": None},
    "enumerate": {"list": False, "s": None},
}

REQUIRED = {
    "bounds": ("problem", "d", "s", "beta", "n"),
    "chi2": ("problem", "d", "s"),
    "phase": ("problem",),
    "risk": ("detector", "d", "s", "beta", "n"),
    "game": ("detector", "d", "s", "beta", "n"),
    "enumerate": ("class_kind", "d"),
}

# Fields excluded from the provenance record; they never change results
_NON_PROVENANCE = ("workers", "config", "command")

_INT_FIELDS = ("d", "s_star", "n", "trials", "budget")


def _add_instance_flags(parser, with_n=True):
    parser.add_argument("--problem", help=f"one of {', '.join(p.replace('_', '-') for p in PROBLEMS)}")
    parser.add_argument("--d", type=int, help="ambient dimension")
    parser.add_argument("--s", type=int, help="sparsity s* (ignored for perfect matchings)")
    parser.add_argument("--beta", type=float, help="signal strength beta*")
    parser.add_argument("--alpha", type=float, help="mixture weight of the shifted-mean alternative")
    if with_n:
        parser.add_argument("--n", type=int, help="sample size")
        parser.add_argument("--xi", type=float, help="oracle tail probability, in (0, 1/4)")


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON file supplying any option")
    common.add_argument("--out", help="output file (.csv, .json or .jsonl); tables go to stdout without it")
    parser = argparse.ArgumentParser(prog="sqphase", description=__doc__.strip().splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("bounds", parents=[common], help="numeric and closed-form oracle lower bounds")
    _add_instance_flags(p)
    p.add_argument("--T", type=int, help="query budget of the detector")
    p.add_argument("--delta", type=float, help="delta of the matching bound")

    p = sub.add_parser("chi2", parents=[common], help="exact chi-square divergence and Le Cam bound")
    _add_instance_flags(p, with_n=False)
    p.add_argument("--beta2", type=float, help="beta*^2, instead of --beta")
    p.add_argument("--n", type=int, help="sample size")

    p = sub.add_parser("phase", parents=[common], help="phase-diagram grid")
    p.add_argument("--problem")
    p.add_argument("--slice", action="append", help="fixed exponent, e.g. p_alpha=0 or p_s=0.25,0.5")
    p.add_argument("--res", type=int, help="grid points per axis")
    p.add_argument("--x-axis", dest="x_axis")
    p.add_argument("--y-axis", dest="y_axis")
    p.add_argument("--x-range", dest="x_range", help="lo,hi")
    p.add_argument("--y-range", dest="y_range", help="lo,hi")
    p.add_argument("--svg", help="also write a heat map")

    for name, helptext in (("risk", "Monte Carlo risk of a detector"),
                           ("game", "detector against the worst-case oracle")):
        p = sub.add_parser(name, parents=[common], help=helptext)
        _add_instance_flags(p)
        p.add_argument("--detector", help=f"one of {', '.join(SETTINGS)}"
                       + (" or auto (with --sweep)" if name == "risk" else ""))
        p.add_argument("--trials", type=int, help="trials per hypothesis")
        p.add_argument("--seed", type=int)
        p.add_argument("--workers", type=int, help="worker processes; results do not depend on it")
        if name == "risk":
            p.add_argument("--oracle", choices=ORACLE_MODES)
            p.add_argument("--budget", type=int, help="truncate the scan schedule")
            p.add_argument("--enumerate-alternatives", dest="enumerate_alternatives",
                           action="store_const", const=True, help="cycle alternatives over all of C")
            p.add_argument("--sweep", help="PARAM=v1,v2,... through d, s_star, beta_star, alpha or n")
            p.add_argument("--svg", help="risk curve (with --sweep)")
        else:
            p.add_argument("--T", type=int, help="declared query budget")

    p = sub.add_parser("enumerate", parents=[common], help="shell tables and class enumerations")
    p.add_argument("--class", dest="class_kind", choices=("sparse", "matching"))
    p.add_argument("--d", type=int)
    p.add_argument("--s", type=int)
    p.add_argument("--list", action="store_const", const=True, help="list every element")
    return parser


def load_config_file(path):
    if not path:
        return {}
    with open(path, encoding="utf-8") as handle:
        values = json.load(handle)
    if not isinstance(values, dict):
        raise ValueError(f"Config file {path} must hold a JSON object")
    return {k.replace("-", "_"): v for k, v in values.items()}


def resolve_options(args, parser):
    """Defaults, then the config file, then explicit flags; required values are checked last."""
    explicit = {k: v for k, v in vars(args).items() if v is not None}
    try:
        from_file = load_config_file(explicit.get("config"))
    except (OSError, ValueError) as e:
        parser.error(str(e))
    resolved = {**DEFAULTS[args.command], **from_file, **explicit}
    if args.command == "chi2" and resolved.get("beta") is None and resolved.get("beta2") is not None:
        resolved["beta"] = math.sqrt(resolved["beta2"])
    if args.command == "chi2" and "beta" not in resolved:
        parser.error("chi2 needs --beta or --beta2")
    matching = resolved.get("detector") in MATCHING_MEAN_SETTINGS
    if resolved.get("problem"):
        try:
            matching = matching or normalize_problem(resolved["problem"]) == MATCHING_SM
        except ValueError as e:
            parser.error(str(e))
    if matching and resolved.get("d"):
        resolved.setdefault("s", math.isqrt(resolved["d"]))
    missing = [name for name in REQUIRED[args.command] if resolved.get(name) is None]
    if missing:
        parser.error(f"{args.command} needs " + ", ".join("--" + m.replace("_", "-") for m in missing))
    return resolved


def provenance(resolved):
    out = {k: v for k, v in resolved.items() if k not in _NON_PROVENANCE}
    out["settings"] = {k: v for k, v in settings.as_dict().items() if k != "debug"}
    return out


def _write_json(payload, path):
    with open(path, "w", encoding="utf-8") as handle:
        json.dump(payload, handle, indent=2, sort_keys=True)
        handle.write("\n")


def _write_sidecar(resolved, path):
    _write_json(provenance(resolved), f"{path}.config.json")


def _emit(resolved, payload, render):
    """JSON to --out when given, otherwise the table built by ``render``."""
    out = resolved.get("out")
    if out:
        _write_json({"config": provenance(resolved), **payload}, out)
    else:
        print(render())


def _model_and_kind(problem):
    if problem is None:
        return None, None
    problem = normalize_problem(problem)
    if problem == SPCA:
        return SPIKED_COVARIANCE, SPARSE_SET
    if problem == MATCHING_SM:
        return SHIFTED_MEAN, PERFECT_MATCHING
    return SHIFTED_MEAN, SPARSE_SET


def experiment_config(resolved, oracle_mode=None, budget=None):
    model, kind = _model_and_kind(resolved.get("problem"))
    return ExperimentConfig(
        setting=resolved["detector"], d=resolved["d"], s_star=resolved["s"],
        beta_star=resolved["beta"], n=resolved["n"], alpha=resolved["alpha"], xi=resolved["xi"],
        oracle_mode=oracle_mode or resolved["oracle"], trials=resolved["trials"],
        seed=resolved["seed"], workers=resolved.get("workers", 1), model=model, kind=kind,
        budget=budget, enumerate_alternatives=bool(resolved.get("enumerate_alternatives")))


def cmd_bounds(resolved):
    report = bounds_report(resolved["problem"], resolved["d"], resolved["s"], resolved["beta"],
                           resolved["n"], resolved["xi"], resolved["T"], resolved["alpha"],
                           resolved["delta"])
    _emit(resolved, report, lambda: bounds_table(report))


def cmd_chi2(resolved):
    report = chi2_report(resolved["problem"], resolved["d"], resolved["s"], resolved["beta"],
                         resolved["n"], resolved["alpha"])
    _emit(resolved, report, lambda: chi2_table(report))


def _parse_pair(text, name):
    lo, hi = (float(v) for v in str(text).split(","))
    if not lo < hi:
        raise ValueError(f"{name} needs lo < hi, got {text}")
    return lo, hi


def _parse_slices(items):
    slices = {"p_s": (0.25, 0.5, 0.75), "p_alpha": (0.0,)}
    for item in items:
        name, _, values = item.partition("=")
        if not values:
            raise ValueError(f"Slice '{item}' must look like NAME=v1,v2")
        slices[name.strip()] = tuple(float(v) for v in values.split(","))
    return tuple(slices.items())


def cmd_phase(resolved):
    grid = PhaseGrid(resolved["x_axis"], _parse_pair(resolved["x_range"], "x-range"),
                     resolved["y_axis"], _parse_pair(resolved["y_range"], "y-range"),
                     int(resolved["res"]), _parse_slices(resolved["slice"]))
    frame = sweep_phase_diagram(grid, resolved["problem"])
    out = resolved.get("out")
    if out:
        write_phase_csv(frame, out)
        _write_sidecar(resolved, out)
    else:
        print(frame.groupby("regime").size().to_string())
    if resolved.get("svg"):
        write_phase_svg(frame, resolved["svg"], resolved["x_axis"], resolved["y_axis"])


def _parse_sweep(text):
    name, _, values = text.partition("=")
    name = {"s": "s_star", "beta": "beta_star"}.get(name.strip(), name.strip())
    cast = int if name in _INT_FIELDS else float
    parsed = [cast(v) for v in values.split(",") if v.strip()]
    if not parsed:
        raise ValueError(f"Sweep '{text}' must look like PARAM=v1,v2,...")
    return name, parsed


def cmd_risk(resolved):
    if resolved.get("sweep"):
        parameter, values = _parse_sweep(resolved["sweep"])
        problem = resolved.get("problem") or "sparse_sm"
        base = experiment_config(resolved, budget=resolved.get("budget"))
        frame = sweep_empirical_boundary(problem, base, parameter, values)
        if resolved.get("out"):
            write_risk_csv(frame, resolved["out"])
            _write_sidecar(resolved, resolved["out"])
        else:
            print(frame.to_string(index=False))
        if resolved.get("svg"):
            write_risk_svg(frame, resolved["svg"], parameter)
        return
    if resolved["detector"] == AUTO_SETTING:
        raise ValueError("--detector auto needs --sweep")
    estimate = estimate_risk(experiment_config(resolved, budget=resolved.get("budget")))
    out = resolved.get("out")
    if out and out.endswith(".csv"):
        write_risk_csv(risk_frame([estimate]), out)
        _write_sidecar(resolved, out)
    else:
        _emit(resolved, {"estimate": asdict(estimate)}, lambda: risk_table(estimate))


def cmd_game(resolved):
    config = experiment_config(resolved, oracle_mode="adversarial", budget=resolved["T"])
    result = adversary_game(config)
    out = resolved.get("out")
    if out:
        write_game_jsonl(result, out, provenance(resolved))
    else:
        print(game_table(result))


def cmd_enumerate(resolved):
    kind = PERFECT_MATCHING if resolved["class_kind"] == "matching" else SPARSE_SET
    if kind == SPARSE_SET and resolved.get("s") is None:
        raise ValueError("enumerate --class sparse needs --s")
    report = enumerate_report(kind, resolved["d"], resolved.get("s"), bool(resolved["list"]))
    _emit(resolved, report, lambda: enumerate_table(report))


COMMANDS = {"bounds": cmd_bounds, "chi2": cmd_chi2, "phase": cmd_phase,
            "risk": cmd_risk, "game": cmd_game, "enumerate": cmd_enumerate}


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    resolved = resolve_options(args, parser)
    log_debug(f"{args.command}: {provenance(resolved)}")
    try:
        COMMANDS[args.command](resolved)
    except SQPhaseError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_VIOLATION
    except ValueError as e:
        if settings.debug:
            traceback.print_exc(file=sys.stderr)
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
