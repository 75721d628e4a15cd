"""``csb-lab`` command-line front end.

Every command writes a self-describing artifact directory: result tables (CSV),
``summary.json``, and ``manifest.json`` holding the resolved configuration and
root seed. Passing a manifest back as ``--config`` reproduces the run.
"""
from __future__ import annotations

import argparse
import hashlib
import logging
import json
import sys
from dataclasses import replace
from importlib.metadata import PackageNotFoundError, version
from pathlib import Path

import numpy as np
import yaml

from . import artifacts as art
from .config import ConfigError, ProblemConfig, load_config
from .core import Interval, Orthotope, contains, normalize_interval
from .estimation import filter_fits, median_ci, multi_start_fit
from .loss import EVALS, Explorer
from .models import IntegrationError
from .oat import OatResult, promissory_box
from .sampling import monte_carlo, uncertainty_analysis
from .sensitivity import analyse, convergence_analysis
from .shrink import csb_estimate

log = logging.getLogger("csblab")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3
EXIT_NOT_CONVERGED = 4

COMMANDS = ("fit", "oat", "csb", "ua", "sa", "converge", "csb-study")


class NumericFailure(RuntimeError):
    pass


def _package_version() -> str:
    try:
        return version("artifact")
    except PackageNotFoundError:
        return "unknown"


class Run:
    """Bookkeeping for one command invocation inside a locked output directory."""

    def __init__(self, command: str, cfg: ProblemConfig, out: Path, repeats: int | None):
        self.command = command
        self.cfg = cfg
        self.out = Path(out)
        self.repeats = repeats
        self.seeds: dict[str, int] = {}
        self.files: list[str] = []

    def seed(self, name: str) -> int:
        value = art.substream_seed(self.cfg.seed, name)
        self.seeds[name] = value
        return value

    def csv(self, name: str, header, rows) -> None:
        art.write_csv(self.out / name, header, rows)
        self.files.append(name)

    def json(self, name: str, obj) -> None:
        art.write_json(self.out / name, obj)
        self.files.append(name)

    def jsonl(self, name: str, records) -> None:
        art.write_jsonl(self.out / name, records)
        self.files.append(name)

    def finish(self, summary: dict) -> None:
        summary = {"command": self.command, "eval_count": EVALS.count, **summary}
        self.json("summary.json", summary)
        digests = {name: hashlib.sha256((self.out / name).read_bytes()).hexdigest()
                   for name in sorted(set(self.files))}
        manifest = {
            "command": self.command,
            "root_seed": self.cfg.seed,
            "repeats": self.repeats,
            "sub_seeds": self.seeds,
            "config": self.cfg.raw,
            "config_hash": art.sha256_text(art.dumps(self.cfg.raw)),
            "eval_count": EVALS.count,
            "version": _package_version(),
            "files": digests,
        }
        art.write_json(self.out / "manifest.json", manifest)
        (self.out / "config.yaml").write_text(yaml.safe_dump(self.cfg.raw, sort_keys=True))


def _explorer(cfg: ProblemConfig, check_box: bool = True) -> Explorer:
    model = cfg.model()
    x_hat = cfg.nominal()
    if check_box and not contains(cfg.search_box, x_hat):
        raise ConfigError(f"nominal {x_hat.tolist()} lies outside the search box")
    try:
        return Explorer(model, x_hat, cfg.grid, cfg.loss, cfg.integrator)
    except IntegrationError as exc:
        raise NumericFailure(f"nominal point cannot be integrated: {exc}") from None


def _box_rows(box: Orthotope, reference: Orthotope, nominal=None):
    rows = []
    for i, name in enumerate(box.factor_names):
        iv, ref = box[i], reference[i]
        if ref.width > 0:
            norm = normalize_interval(iv, ref)
            nlo, nhi = norm.lower, norm.upper
        else:
            nlo = nhi = float("nan")
        row = [name, iv.lower, iv.upper, nlo, nhi]
        if nominal is not None:
            row.insert(1, nominal[i])
        rows.append(row)
    return rows


BOX_HEADER = ["factor", "lower", "upper", "normalized_lower", "normalized_upper"]


def _read_box(path: str, names) -> Orthotope:
    rows = {r["factor"]: r for r in art.read_csv(Path(path))}
    missing = [n for n in names if n not in rows]
    if missing:
        raise ConfigError(f"box file {path} lacks factors {missing}")
    return Orthotope(tuple(Interval(float(rows[n]["lower"]), float(rows[n]["upper"]))
                           for n in names), tuple(names))


def _oat(run: Run, explorer: Explorer) -> OatResult:
    res = promissory_box(explorer, run.cfg.oat, run.cfg.search_box)
    if len(res.unresolved) == len(res.searches):
        raise NumericFailure("promissory-box search failed for every factor")
    run.json("oat_diagnostics.json", res.diagnostics())
    by_factor = {(s.factor, s.direction): s for s in res.searches}
    rows = []
    for i, row in enumerate(_box_rows(res.box, run.cfg.search_box, explorer.x_hat)):
        name = row[0]
        up, down = by_factor[(name, "up")], by_factor[(name, "down")]
        upper_from_up = up.value >= down.value
        rows.append(row + [(down if upper_from_up else up).resolved,
                           (up if upper_from_up else down).resolved])
    run.csv("promissory.csv", ["factor", "nominal"] + BOX_HEADER[1:] +
            ["lower_resolved", "upper_resolved"], rows)
    return res


def _resolve_box(run: Run, section: dict, explorer: Explorer) -> tuple[Orthotope, str]:
    names = run.cfg.factor_names
    if section.get("box_file"):
        return _read_box(section["box_file"], names), f"file:{Path(section['box_file']).name}"
    kind = section.get("box", "search")
    if kind == "search":
        return run.cfg.search_box, "search"
    if kind == "promissory":
        return promissory_box(explorer, run.cfg.oat, run.cfg.search_box).box, "promissory"
    if kind == "csb":
        prom = promissory_box(explorer, run.cfg.oat, run.cfg.search_box).box
        cfg = replace(run.cfg.shrink, seed=run.seed("shrink"))
        return csb_estimate(explorer, prom, cfg)[0], "csb"
    raise ConfigError(f"unknown box kind {kind!r}; use search, promissory, csb or box_file")


def cmd_fit(run: Run) -> int:
    cfg = run.cfg
    model = cfg.model()
    data = cfg.data_trajectory(model)
    fit = cfg.fit
    results = multi_start_fit(model, data, cfg.search_box, int(fit["n_starts"]), float(fit["tol"]),
                              run.seed("fit"), cfg.loss, cfg.integrator, int(fit["max_evals"]))
    kept = filter_fits(results, float(fit["filter"]))
    names = cfg.factor_names
    kept_ids = {id(r) for r in kept}
    run.csv("fits.csv",
            ["start"] + [f"start_{n}" for n in names] + list(names) +
            ["loss", "evals", "converged", "kept"],
            [[j, *r.start_point, *r.x_star, r.final_loss, r.eval_count, r.converged,
              id(r) in kept_ids] for j, r in enumerate(results)])
    run.csv("data.csv", ["time", "cases"], zip(data.grid.points, data.values))
    summary = {"n_starts": len(results), "n_filtered": len(kept),
               "best_loss": min(r.final_loss for r in results),
               "fit_evals": sum(r.eval_count for r in results)}
    if len(kept) >= 2:
        nominal, ci = median_ci(kept)
        run.csv("median_ci.csv", ["factor", "median", "lower", "upper", "sigma", "n_filtered"],
                [[n, nominal[i], ci.intervals[i].lower, ci.intervals[i].upper, ci.sigma[i],
                  ci.n_filtered] for i, n in enumerate(names)])
    else:
        nominal = kept[0].x_star
        summary["median_ci"] = "needs at least two filtered fits"
    run.json("nominal.json", {"factors": dict(zip(names, nominal))})
    run.finish(summary)
    return EXIT_OK


def cmd_oat(run: Run) -> int:
    explorer = _explorer(run.cfg)
    res = _oat(run, explorer)
    run.finish({"threshold": res.threshold.threshold_value, "lambda": res.threshold.lam,
                "unresolved": [f"{s.factor}:{s.direction}" for s in res.unresolved]})
    return EXIT_OK


def _csb_once(run: Run, explorer: Explorer, promissory: Orthotope, seed: int):
    cfg = replace(run.cfg.shrink, seed=seed)
    return csb_estimate(explorer, promissory, cfg)


def cmd_csb(run: Run) -> int:
    explorer = _explorer(run.cfg)
    before = EVALS.count
    res = _oat(run, explorer)
    oat_evals = EVALS.count - before
    box, trace = _csb_once(run, explorer, res.box, run.seed("shrink"))
    run.csv("csb.csv", ["factor", "nominal"] + BOX_HEADER[1:],
            _box_rows(box, run.cfg.search_box, explorer.x_hat))
    run.jsonl("trace.jsonl", trace.records)
    n = run.cfg.shrink.n
    cert = monte_carlo(explorer, box, n, run.seed("certificate"))
    ua = uncertainty_analysis(cert, res.threshold)
    run.json("ua_certificate.json", {"fraction_below": ua.fraction_below, "n": n,
                                     "delta": run.cfg.shrink.delta,
                                     "threshold": res.threshold.threshold_value})
    run.finish({"termination": trace.reason, "iterations": trace.iterations,
                "threshold": res.threshold.threshold_value, "oat_evals": oat_evals,
                "shrink_evals": trace.eval_count, "csb_evals": oat_evals + trace.eval_count,
                "certificate_fraction": ua.fraction_below,
                "unresolved": [f"{s.factor}:{s.direction}" for s in res.unresolved]})
    return EXIT_OK if trace.converged else EXIT_NOT_CONVERGED


def cmd_csb_study(run: Run) -> int:
    repeats = run.repeats or 10
    if repeats < 2:
        raise ConfigError("--repeats must be at least 2")
    explorer = _explorer(run.cfg)
    before = EVALS.count
    res = _oat(run, explorer)
    oat_evals = EVALS.count - before
    ref = run.cfg.search_box
    names = run.cfg.factor_names
    runs, lows, highs = [], [], []
    for r in range(repeats):
        seed = run.seed(f"csb-study/{r}/shrink")
        box, trace = _csb_once(run, explorer, res.box, seed)
        norm = [normalize_interval(box[i], ref[i]) if ref[i].width > 0 else Interval(np.nan, np.nan)
                for i in range(box.k)]
        lows.append([iv.lower for iv in norm])
        highs.append([iv.upper for iv in norm])
        runs.append([r, seed, trace.iterations, trace.reason, oat_evals + trace.eval_count,
                     *box.lower, *box.upper])
    run.csv("study_runs.csv", ["run", "seed", "iterations", "termination", "evals"] +
            [f"lower_{n}" for n in names] + [f"upper_{n}" for n in names], runs)
    rows = []
    for label, arr in (("lower", np.array(lows)), ("upper", np.array(highs))):
        for i, name in enumerate(names):
            q = np.quantile(arr[:, i], [0.0, 0.25, 0.5, 0.75, 1.0])
            rows.append([name, label, *q, q[3] - q[1]])
    run.csv("study_bounds.csv", ["factor", "bound", "min", "q1", "median", "q3", "max", "iqr"], rows)
    budgets = [row[4] for row in runs]
    run.finish({"repeats": repeats, "converged": sum(row[3] == "converged" for row in runs),
                "evals_per_run_min": min(budgets), "evals_per_run_max": max(budgets)})
    return EXIT_OK


def cmd_ua(run: Run) -> int:
    explorer = _explorer(run.cfg, check_box=False)
    box, label = _resolve_box(run, run.cfg.ua, explorer)
    thr = explorer.threshold(run.cfg.lam)
    mc = monte_carlo(explorer, box, int(run.cfg.ua["n"]), run.seed("ua"))
    ua = uncertainty_analysis(mc, thr, explorer)
    keys = list(ua.envelope)
    run.csv("ua_envelope.csv", ["time", "nominal"] + keys,
            [[t, ua.nominal[j], *(ua.envelope[k][j] for k in keys)]
             for j, t in enumerate(ua.times)])
    run.csv("ua_samples.csv", list(run.cfg.factor_names) + ["dissimilarity"],
            [[*row, y] for row, y in zip(mc.matrix.rows, mc.outputs)])
    run.finish({"box": label, "fraction_below": ua.fraction_below,
                "n_exceeding": int(ua.exceeding.size), "threshold": thr.threshold_value})
    return EXIT_OK


def cmd_sa(run: Run) -> int:
    explorer = _explorer(run.cfg, check_box=False)
    box, label = _resolve_box(run, run.cfg.sa, explorer)
    report = analyse(explorer, box, int(run.cfg.sa["n"]), run.seed("sa"))
    run.csv("sa.csv", ["factor", "S", "ST"],
            zip(run.cfg.factor_names, report.s_first, report.s_total))
    run.finish({"box": label, "status": report.status, "n": report.sample_size,
                "sum_S": report.sum_first, "sum_abs_S": report.sum_abs_first,
                "sum_ST": report.sum_total})
    return EXIT_OK


def cmd_converge(run: Run) -> int:
    explorer = _explorer(run.cfg, check_box=False)
    box, label = _resolve_box(run, run.cfg.converge, explorer)
    series = convergence_analysis(explorer, box, run.cfg.converge["sizes"], run.seed("converge"))
    names = run.cfg.factor_names
    coinc = series.coincidence()
    run.csv("convergence.csv",
            ["size"] + [f"ST_{n}" for n in names] + [f"S_{n}" for n in names] +
            ["sum_ST", "sum_S", "sum_abs_S", "coincidence"],
            [[size, *rep.s_total, *rep.s_first, rep.sum_total, rep.sum_first,
              rep.sum_abs_first, coinc[j]] for j, (size, rep) in
             enumerate(zip(series.sizes, series.reports))])
    run.finish({"box": label, "sizes": series.sizes,
                "statuses": [r.status for r in series.reports]})
    return EXIT_OK


HANDLERS = {"fit": cmd_fit, "oat": cmd_oat, "csb": cmd_csb, "ua": cmd_ua, "sa": cmd_sa,
            "converge": cmd_converge, "csb-study": cmd_csb_study}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="csb-lab",
                                description="Confidence sub-contour box estimation toolkit")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", required=True, help="problem YAML, or a manifest.json to replay")
    p.add_argument("--out", required=True, help="artifact output directory")
    p.add_argument("--seed", type=int, help="root seed (overrides the configuration)")
    p.add_argument("--repeats", type=int, help="number of CSB runs for csb-study")
    p.add_argument("--threads", type=int, help="worker threads for compiled kernels")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.threads:
        import numba
        numba.set_num_threads(max(1, min(args.threads, numba.config.NUMBA_NUM_THREADS)))
    try:
        cfg = load_config(args.config)
        repeats = args.repeats
        if args.config.endswith(".json"):
            blob = json.loads(Path(args.config).read_text())
            if "root_seed" in blob:
                cfg = cfg.with_seed(blob["root_seed"])
                repeats = repeats or blob.get("repeats")
        if args.seed is not None:
            cfg = cfg.with_seed(args.seed)
        with art.locked_output(Path(args.out)) as out:
            EVALS.reset()
            run = Run(args.command, cfg, out, repeats)
            code = HANDLERS[args.command](run)
    except (ConfigError, art.OutputLocked) as exc:
        print(f"csb-lab: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericFailure, IntegrationError) as exc:
        print(f"csb-lab: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    if code == EXIT_NOT_CONVERGED:
        print("csb-lab: shrink loop reached imax before convergence", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
