"""Command-line interface: ``landmark-dl {analyze,simulate,plot-simplex}``.

Exit codes: 0 success, 1 usage error, 2 invalid input, 3 estimation failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import sys
import warnings
from dataclasses import asdict, replace
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .config import read_config, scenario_from_config
from .crossfit import crossfit_estimates
from .data import AnalysisConfig, DataError, ingest_csv, write_csv
from .estimators import (EstimationError, FloorWarning, contrast, report_from_se,
                         unadjusted_eta, unadjusted_eta_contrast, unadjusted_surv)
from .inference import (clip_to_simplex, confidence_ellipse, eta_curve, se_ci, simplex_point,
                        utility_test, wald_equality)
from .nuisance import FitError
from .simulate import (SCENARIOS, THREADS_ENV, calibrate, counterexample_scenario, default_workers,
                       make_rng, run_mc, sample_scenario)
from .svg import render_curve, render_simplex

SCHEMA_VERSION = 1
EXIT_OK, EXIT_USAGE, EXIT_INPUT, EXIT_ESTIMATION = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


# ---------------------------------------------------------------------------
# helpers


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 16), b""):
            h.update(block)
    return h.hexdigest()


def _dump(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2, allow_nan=False) + "\n"


def _now():
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def _write_manifest(path, settings, seed, inputs=(), counters=None, extra=None, started=None):
    manifest = {
        "tool": "landmark-dl",
        "tool_version": __version__,
        "config_hash": hashlib.sha256(_dump(settings).encode()).hexdigest(),
        "input_hashes": {str(p): _sha256(p) for p in inputs},
        "seed": seed,
        "started": started or _now(),
        "finished": _now(),
        "warning_counters": counters or {},
    }
    if extra:
        manifest.update(extra)
    Path(path).write_text(_dump(manifest), encoding="utf-8")


def _report(r):
    return {"estimate": r.estimate, "se": r.std_error, "ci": [r.ci_low, r.ci_high], "p": r.p_value}


def _analysis_config(args, file_cfg) -> tuple[AnalysisConfig, dict]:
    settings = dict(file_cfg.get("analysis", {}))
    flag_map = {"t": "landmark_t", "y": "threshold_y", "folds": "folds", "seed": "seed",
                "level": "level", "utility_weight": "utility_weight",
                "known_prob": "known_randomization_prob", "floor": "positivity_floor",
                "survival_form": "survival_form", "bootstrap": "bootstrap"}
    for flag, name in flag_map.items():
        v = getattr(args, flag, None)
        if v is not None:
            settings[name] = v
    if args.mar:
        settings["missingness_mode"] = "mar"
    if args.y_grid is not None:
        settings["y_grid"] = tuple(float(v) for v in args.y_grid.split(","))
    if "landmark_t" not in settings:
        raise UsageError("analyze: --t is required (flag or config file)")
    if "threshold_y" not in settings:
        raise UsageError("analyze: --y is required (flag or config file)")
    extras = {"y_grid": settings.pop("y_grid", None), "bootstrap": settings.pop("bootstrap", 500),
              "utility": "utility_weight" in settings}
    lib = file_cfg.get("learners") or {}
    try:
        cfg = AnalysisConfig(learner_library=lib, **settings)
    except (TypeError, ValueError) as exc:
        raise DataError(f"invalid configuration: {exc}") from None
    return cfg, extras


# ---------------------------------------------------------------------------
# analyze


def analyze_dataset(dataset, cfg: AnalysisConfig, bootstrap=500, y_grid=None, utility=False,
                    ellipse_points=128):
    """Full analysis report (a JSON-ready dict) for one dataset."""
    t, y, level = cfg.landmark_t, cfg.y_grid[0], cfg.level
    res = crossfit_estimates(dataset, cfg, y)
    e = res.onestep
    eta_diff = contrast(e["eta1"], e["eta0"], "eta diff")
    s_diff = contrast(e["S1"], e["S0"], "S diff")
    adjusted = {
        "eta": {"arm0": _report(se_ci(e["eta0"], level)), "arm1": _report(se_ci(e["eta1"], level)),
                "difference": _report(se_ci(eta_diff, level))},
        "survival": {"arm0": _report(se_ci(e["S0"], level)), "arm1": _report(se_ci(e["S1"], level)),
                     "difference": _report(se_ci(s_diff, level))},
    }
    u = [unadjusted_surv(dataset, a, t, level) for a in (0, 1)]
    u_diff = report_from_se(u[1].estimate - u[0].estimate,
                            math.hypot(u[0].std_error, u[1].std_error), level)
    unadjusted = {
        "eta": {f"arm{a}": _report(unadjusted_eta(dataset, a, t, y, bootstrap, cfg.seed + a, level))
                for a in (0, 1)},
        "survival": {"arm0": _report(u[0]), "arm1": _report(u[1]), "difference": _report(u_diff)},
    }
    unadjusted["eta"]["difference"] = _report(
        unadjusted_eta_contrast(dataset, t, y, bootstrap, cfg.seed + 2, level))
    simplex, clips = [], 0
    summaries = {}
    for a in (0, 1):
        s = simplex_point(e[f"eta{a}"], e[f"S{a}"], level, arm=a)
        summaries[a] = s
        region = confidence_ellipse(s, ellipse_points)
        clips += clip_to_simplex(region)[1] + clip_to_simplex(s.point())[1]
        simplex.append({**s.to_dict(), "point": s.point().tolist(), "region": region.tolist()})
    report = {
        "schema_version": SCHEMA_VERSION,
        "settings": {"t": t, "y": y, "folds": cfg.folds, "level": level, "seed": cfg.seed,
                     "positivity_floor": cfg.positivity_floor, "missingness": cfg.missingness_mode,
                     "known_randomization_prob": cfg.known_randomization_prob,
                     "survival_form": cfg.survival_form, "bootstrap": bootstrap,
                     "n": len(dataset)},
        "adjusted": adjusted,
        "unadjusted": unadjusted,
        "simplex": simplex,
        "wald_equality": wald_equality(summaries[1], summaries[0]).to_dict(),
        "nuisance_selection": [b.selected for b in res.bundles],
        "diagnostics": {"positivity_floor_hits": res.floor_hits, "render_clips": clips},
    }
    if utility:
        report["utility"] = utility_test(eta_diff, s_diff, cfg.utility_weight).to_dict()
    if y_grid:
        curve = eta_curve(res.bundles[0], dataset, t, y_grid, level, cfg)
        report["eta_curve"] = [{"y": yy, **_report(r)} for yy, r in curve]
    _check_finite(report)
    return report


def _check_finite(obj, path="report"):
    if isinstance(obj, dict):
        for k, v in obj.items():
            _check_finite(v, f"{path}.{k}")
    elif isinstance(obj, list):
        for i, v in enumerate(obj):
            _check_finite(v, f"{path}[{i}]")
    elif isinstance(obj, float) and not math.isfinite(obj):
        raise EstimationError(f"non-finite value at {path}")


def format_report(report) -> str:
    """Four-block text table: adjusted/unadjusted x joint probability/survival."""
    s = report["settings"]
    lines = [f"Landmark t = {s['t']:g}, threshold y = {s['y']:g}, n = {s['n']}, "
             f"folds = {s['folds']}, level = {s['level']:g}", ""]
    head = f"{'':28s}{'Estimate':>10s}{'SE':>9s}{'CI low':>9s}{'CI high':>9s}{'p':>10s}"
    for block in ("adjusted", "unadjusted"):
        for est, name in (("eta", "P(T>t, Y>y)"), ("survival", "P(T>t)")):
            lines.append(f"{block.capitalize()}: {name}")
            lines.append(head)
            for key, lab in (("arm0", "A = 0"), ("arm1", "A = 1"), ("difference", "Difference")):
                r = report[block][est][key]
                p = f"{r['p']:.2e}" if key == "difference" else ""
                lines.append(f"  {lab:26s}{r['estimate']:10.4f}{r['se']:9.4f}{r['ci'][0]:9.4f}"
                             f"{r['ci'][1]:9.4f}{p:>10s}")
            lines.append("")
    w = report["wald_equality"]
    lines.append(f"Equality of (Q1, QD) across arms: W = {w['statistic']:.3f}, df = {w['df']}, "
                 f"p = {w['p']:.4f}")
    if "utility" in report:
        u = report["utility"]
        lines.append(f"Utility (w = {u['w']:g}): estimate {u['estimate']:.4f}, SE {u['se']:.4f}, "
                     f"one-sided p = {u['p_one_sided']:.4f}")
    return "\n".join(lines) + "\n"


def cmd_analyze(args) -> int:
    started = _now()
    file_cfg = read_config(args.config) if args.config else {}
    cfg, extras = _analysis_config(args, file_cfg)
    dataset = ingest_csv(args.csv)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        report = analyze_dataset(dataset, cfg, extras["bootstrap"], extras["y_grid"],
                                 extras["utility"])
    text = _dump(report)
    out = Path(args.out) if args.out else Path(args.csv).with_suffix(".report.json")
    out.write_text(text, encoding="utf-8")
    counters = {"positivity_floor_hits": report["diagnostics"]["positivity_floor_hits"],
                "render_clips": report["diagnostics"]["render_clips"],
                "warnings": len(caught)}
    if args.plot:
        svg, _ = render_simplex(report["simplex"])
        Path(args.plot).write_text(svg, encoding="utf-8")
    if "eta_curve" in report:
        rows = [(r["y"], r["estimate"], r["ci"][0], r["ci"][1]) for r in report["eta_curve"]]
        with open(out.with_suffix(".curve.csv"), "w", encoding="utf-8") as fh:
            fh.write("y,estimate,se,ci_low,ci_high\n")
            for r in report["eta_curve"]:
                fh.write(f"{r['y']!r},{r['estimate']!r},{r['se']!r},{r['ci'][0]!r},{r['ci'][1]!r}\n")
        out.with_suffix(".curve.svg").write_text(render_curve(rows), encoding="utf-8")
    _write_manifest(str(out) + ".manifest.json", report["settings"], cfg.seed, [args.csv],
                    counters, started=started)
    for w in caught:
        print(f"warning: {w.message}", file=sys.stderr)
    if not args.quiet:
        sys.stdout.write(format_report(report))
    return EXIT_OK


# ---------------------------------------------------------------------------
# simulate


def cmd_simulate(args) -> int:
    started = _now()
    if args.scenario == "counterexample":
        t = 2.0 if args.t is None else args.t
        n = args.n or 100_000
        rep = counterexample_scenario(args.z1, args.z2, t, n, args.seed)
        d = rep.to_dict()
        lines = [f"Counterexample z1={args.z1:g}, z2={args.z2:g}, t={t:g}, n={n}",
                 f"{'':24s}{'analytic':>10s}{'simulated':>11s}{'SE':>9s}"]
        for key in ("survival_ratio", "selection_probability", "joint_factor"):
            sim = d["simulated"][key]
            lines.append(f"{key:24s}{d[key]:10.4f}{sim['estimate']:11.4f}{sim['se']:9.4f}")
        text = "\n".join(lines) + "\n"
        if args.out:
            Path(args.out + ".json").write_text(_dump(d), encoding="utf-8")
            Path(args.out + ".txt").write_text(text, encoding="utf-8")
            _write_manifest(args.out + ".manifest.json", d, args.seed, started=started)
        sys.stdout.write(text)
        return EXIT_OK

    spec_file = args.config or (args.scenario if Path(args.scenario).is_file() else None)
    if spec_file:
        spec = scenario_from_config(read_config(spec_file).get("scenario", {}) or {"base": "1"})
    elif args.scenario in SCENARIOS:
        spec = SCENARIOS[args.scenario]
    else:
        raise UsageError(f"simulate: unknown scenario {args.scenario!r}")
    spec_cal, cal_log = calibrate(spec)
    n = args.n or 1000
    if args.export:
        ds = sample_scenario(spec_cal, n, make_rng(args.seed))
        write_csv(ds, args.export)
        _write_manifest(args.export + ".manifest.json", {"scenario": spec.to_dict(), "n": n},
                        args.seed, extra={"calibration": cal_log}, started=started)
        print(f"wrote {n} simulated subjects to {args.export}")
        return EXIT_OK
    if args.reps is None or args.reps < 2:
        raise UsageError("simulate: --reps must be at least 2")
    report = run_mc(spec, n, args.reps, rng_root=args.seed, workers=args.threads)
    table = report.to_table()
    if args.out:
        report.to_csv(args.out + ".csv")
        Path(args.out + ".txt").write_text(table, encoding="utf-8")
        _write_manifest(args.out + ".manifest.json", {"scenario": spec.to_dict(), "n": n,
                                                       "reps": args.reps}, args.seed,
                        counters={"failed_replicates": report.failures},
                        extra={"calibration": cal_log, "truth": report.truth}, started=started)
    sys.stdout.write(table)
    return EXIT_OK


# ---------------------------------------------------------------------------
# plot-simplex


def cmd_plot_simplex(args) -> int:
    try:
        report = json.loads(Path(args.report).read_text(encoding="utf-8"))
        arms = report["simplex"]
        if not arms:
            raise KeyError("simplex")
        for arm in arms:
            arm["point"] = np.asarray(arm["point"], dtype=float).reshape(3)
            arm["region"] = np.asarray(arm.get("region", []), dtype=float).reshape(-1, 3)
            int(arm["arm"])
    except FileNotFoundError:
        raise DataError(f"no such report: {args.report}") from None
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise DataError(f"malformed report {args.report}: {exc}") from None
    svg, clipped = render_simplex(arms, args.title or "")
    out = args.out or str(Path(args.report).with_suffix(".svg"))
    Path(out).write_text(svg, encoding="utf-8")
    if clipped:
        print(f"warning: {clipped} coordinate(s) clipped into the simplex", file=sys.stderr)
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="landmark-dl", description="Debiased landmark survival and marker estimation")
    p.add_argument("--version", action="version", version=f"landmark-dl {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    a = sub.add_parser("analyze", help="analyze a subject-level CSV file")
    a.add_argument("csv")
    a.add_argument("--t", type=float, help="landmark time")
    a.add_argument("--y", type=float, help="marker threshold")
    a.add_argument("--y-grid", help="comma-separated thresholds for the eta(t, y) curve")
    a.add_argument("--folds", type=int)
    a.add_argument("--seed", type=int)
    a.add_argument("--level", type=float)
    a.add_argument("--config")
    a.add_argument("--mar", action="store_true", help="marker missing at random among survivors")
    a.add_argument("--utility-weight", dest="utility_weight", type=float)
    a.add_argument("--known-prob", dest="known_prob", type=float,
                   help="known randomization probability P(A=1)")
    a.add_argument("--floor", type=float, help="positivity floor")
    a.add_argument("--survival-form", dest="survival_form", choices=("product", "exponential"))
    a.add_argument("--bootstrap", type=int, help="bootstrap resamples for unadjusted SEs")
    a.add_argument("--plot", help="write the simplex SVG here")
    a.add_argument("--out", help="report JSON path")
    a.add_argument("--quiet", action="store_true")
    a.set_defaults(func=cmd_analyze)

    s = sub.add_parser("simulate", help="Monte Carlo study or simulated dataset export")
    s.add_argument("--scenario", default="1", help="1, 2, 3 or counterexample")
    s.add_argument("--config", help="config file with a [scenario] section")
    s.add_argument("--n", type=int)
    s.add_argument("--reps", type=int)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--threads", type=int, default=None,
                   help=f"worker processes (default ${THREADS_ENV} or 1)")
    s.add_argument("--out", help="output prefix for .csv/.txt/.manifest.json")
    s.add_argument("--export", help="write one simulated dataset CSV and exit")
    s.add_argument("--z1", type=float, default=0.5)
    s.add_argument("--z2", type=float, default=1.5)
    s.add_argument("--t", type=float)
    s.set_defaults(func=cmd_simulate)

    q = sub.add_parser("plot-simplex", help="render the simplex SVG of a report")
    q.add_argument("report")
    q.add_argument("--out")
    q.add_argument("--title")
    q.set_defaults(func=cmd_plot_simplex)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if getattr(args, "threads", None) is None and args.command == "simulate":
            args.threads = default_workers()
        return args.func(args)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except DataError as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (FitError, EstimationError, np.linalg.LinAlgError, RuntimeError, ValueError) as exc:
        print(f"estimation failed: {exc}", file=sys.stderr)
        return EXIT_ESTIMATION


if __name__ == "__main__":
    sys.exit(main())
