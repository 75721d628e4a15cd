"""Acceptance suite: one test per primary criterion, each printing a PASS/FAIL line."""
import json
import math
import shutil
import time
from fractions import Fraction
from pathlib import Path

import numpy as np
import pytest

from conftest import ACCEPTANCE
from csblab import artifacts as art
from csblab.cli import main
from csblab.core import Orthotope, TimeGrid, Trajectory, contains
from csblab.estimation import FitResult, filter_fits, median_ci_from_samples, multi_start_fit
from csblab.estimation import synthetic_data
from csblab.loss import EVALS, Explorer, threshold
from csblab.models import (DENGUE_FACTORS, additive_model, dengue_grid, dengue_nominal,
                           identity_model, integrate_batch, interaction_model)
from csblab.oat import OatConfig, promissory_box
from csblab.sampling import latin_hypercube, monte_carlo, uncertainty_analysis
from csblab.sensitivity import analyse
from csblab.shrink import ShrinkConfig, bin_count_candidates, csb_estimate

ROOT = Path(__file__).resolve().parents[1]
DENGUE_CFG = ROOT / "configs" / "dengue.yaml"
IDENTITY_CFG = ROOT / "configs" / "identity.yaml"
ROOT_SEED = 20121209


def record(key: str, checks: list[tuple[bool, str]]):
    ok = all(c for c, _ in checks)
    detail = "; ".join(f"{'ok' if c else 'FAILED'} {d}" for c, d in checks)
    ACCEPTANCE[key] = (ok, detail)
    assert ok, detail


# --------------------------------------------------------------------- shared runs

@pytest.fixture(scope="module")
def dengue_csb_runs(dengue_explorer):
    """Ten independent CSB estimates on the dengue model at default settings."""
    oat = promissory_box(dengue_explorer, OatConfig())
    runs = []
    for r in range(10):
        seed = art.substream_seed(ROOT_SEED, f"acceptance/csb/{r}")
        start = time.perf_counter()
        box, trace = csb_estimate(dengue_explorer, oat.box, ShrinkConfig(seed=seed))
        elapsed = time.perf_counter() - start
        fresh = monte_carlo(dengue_explorer, box, 1000,
                            art.substream_seed(ROOT_SEED, f"acceptance/recheck/{r}"))
        frac = uncertainty_analysis(fresh, oat.threshold).fraction_below
        runs.append({"box": box, "trace": trace, "recheck": frac, "seconds": elapsed})
    return runs


@pytest.fixture(scope="module")
def dengue_cli_csb(tmp_path_factory):
    out = tmp_path_factory.mktemp("crit") / "dengue-csb"
    code = main(["csb", "--config", str(DENGUE_CFG), "--out", str(out)])
    return code, out


# --------------------------------------------------------------------- criteria

def test_criterion_01_closed_form_contour():
    grid = TimeGrid([0.0, 1.0, 2.0])
    # warm the compiled kernels so the timing covers the algorithm only
    promissory_box(Explorer(identity_model(), [1.0], grid), OatConfig())
    start = time.perf_counter()
    ex = Explorer(identity_model(), [1.0], grid)
    oat = promissory_box(ex, OatConfig(lam=1.3))
    cfg = ShrinkConfig(lam=1.3, seed=1)
    box, trace = csb_estimate(ex, oat.box, cfg)
    elapsed = time.perf_counter() - start
    (p,), (c,) = oat.box.intervals, box.intervals
    # coarsest histogram the loop would use on this box
    bin_width = c.width / bin_count_candidates(cfg.n)[0]
    record("1 closed-form contour", [
        (1.3 < p.upper <= 1.0 + math.sqrt(0.099), f"promissory upper {p.upper:.6f} in (1.3, 1.3145]"),
        (1.0 - math.sqrt(0.099) <= p.lower < 0.7, f"promissory lower {p.lower:.6f} in [0.6855, 0.7)"),
        (trace.converged, f"CSB termination {trace.reason}"),
        (0.7 - bin_width <= c.lower and c.upper <= 1.3 + bin_width,
         f"CSB [{c.lower:.4f}, {c.upper:.4f}] within [0.7, 1.3] +- {bin_width:.4f}"),
        (elapsed < 1.0, f"runtime {elapsed:.4f} s < 1 s"),
    ])


def test_criterion_02_threshold_algebra():
    rng = np.random.default_rng(2)
    eps = np.finfo(float).eps
    worst = 0.0
    for _ in range(100):
        n = int(rng.integers(2, 60))
        y_hat = Trajectory(TimeGrid(np.arange(n, dtype=float)), rng.normal(0, 1e3, n))
        exact_m = sum(Fraction(v) ** 2 for v in y_hat.values) / n
        for lam in (1.1, 1.3, 2.0):
            exact = (Fraction(lam) - 1) ** 2 * exact_m
            got = threshold(y_hat, lam).threshold_value
            worst = max(worst, abs(Fraction(got) - exact) / (eps * exact_m))
    record("2 threshold algebra", [(worst <= 8, f"max error {float(worst):.2f} ulps of mean(y^2) <= 8")])


def test_criterion_03_lhs_stratification(estimation_box):
    n = 1000
    divisors = [r for r in range(2, 101) if n % r == 0]
    unit = Orthotope.from_bounds(np.zeros(9), np.ones(9))
    bad = []
    for seed in range(5):
        for box, label in ((unit, "unit"), (estimation_box, "dengue")):
            rows = latin_hypercube(box, n, seed).rows
            u = (rows - box.lower) / box.widths
            for r in divisors:
                for j in range(box.k):
                    counts = np.bincount(np.floor(u[:, j] * r).astype(int), minlength=r)
                    if counts.size != r or np.any(counts != n // r):
                        bad.append((label, seed, r, j))
    record("3 LHS stratification", [
        (not bad, f"{len(divisors)} divisors x 9 factors x 5 seeds x 2 boxes exact "
                  f"({len(bad)} violations)")])


def test_criterion_04_csb_certificate(dengue_csb_runs, dengue_explorer):
    x = dengue_explorer.x_hat
    conv = [r for r in dengue_csb_runs if r["trace"].converged and r["trace"].iterations <= 300]
    iters = [r["trace"].iterations for r in dengue_csb_runs]
    rechecks = [r["recheck"] for r in conv]
    contains_all = all(contains(r["box"], x) for r in dengue_csb_runs)
    slowest = max(r["seconds"] for r in dengue_csb_runs)
    record("4 CSB certificate", [
        (len(conv) >= 8, f"{len(conv)}/10 converged in <= 300 iterations (iterations {iters})"),
        (bool(rechecks) and min(rechecks) >= 0.92,
         f"fresh recheck fractions {[round(v, 3) for v in rechecks]} >= 0.92"),
        (contains_all, "every interval contains the nominal"),
        (slowest <= 900, f"slowest run {slowest:.1f} s <= 900 s"),
    ])


def _observable(model):
    grid = TimeGrid([0.0, 1.0])
    return lambda X: integrate_batch(model, X, grid)[0][:, 0]


def test_criterion_05_sensitivity_oracles():
    add = analyse(_observable(additive_model()), Orthotope.from_bounds([0, 0], [1, 1]), 3000, 5)
    inter = analyse(_observable(interaction_model()), Orthotope.from_bounds([-1, -1], [1, 1]),
                    3000, 5)
    record("5 sensitivity oracles", [
        (bool(np.all(np.abs(add.s_first - [0.2, 0.8]) <= 0.05)),
         f"additive S={np.round(add.s_first, 4).tolist()} vs (0.2, 0.8) +-0.05"),
        (bool(np.all(np.abs(inter.s_total - [0.5, 0.5]) <= 0.07)),
         f"interaction ST={np.round(inter.s_total, 4).tolist()} vs (0.5, 0.5) +-0.07"),
    ])


def test_criterion_06_convergence(dengue_explorer, estimation_box):
    coincidence = {2000: [], 3000: []}
    for seed in range(3):
        for size in coincidence:
            rep = analyse(dengue_explorer, estimation_box, size,
                          np.random.SeedSequence([ROOT_SEED, seed, size]))
            coincidence[size].append(abs(rep.sum_first - rep.sum_abs_first) / rep.sum_abs_first)
    medians = {n: float(np.median(v)) for n, v in coincidence.items()}
    record("6 convergence criterion", [
        (m <= 0.05, f"n={n}: median coincidence {m:.4f} <= 0.05") for n, m in medians.items()])


def test_criterion_07_sa_trend(dengue_explorer, estimation_box, dengue_csb_runs):
    i_bm, i_bh = DENGUE_FACTORS.index("beta_m"), DENGUE_FACTORS.index("beta_h")
    top2_hits, flat_hits, notes = 0, 0, []
    for seed in range(3):
        ss = np.random.SeedSequence([ROOT_SEED, 7, seed])
        wide = analyse(dengue_explorer, estimation_box, 3000, ss)
        csb = analyse(dengue_explorer, dengue_csb_runs[seed]["box"], 3000, ss)
        order = np.argsort(-wide.s_total)
        top = {DENGUE_FACTORS[i] for i in order[:2]}
        top2_hits += {i_bm, i_bh} == set(order[:2].tolist())
        ratio_wide = wide.s_total.max() / np.median(wide.s_total)
        ratio_csb = csb.s_total.max() / np.median(csb.s_total)
        flat_hits += ratio_csb < ratio_wide
        notes.append(f"seed {seed}: top2 {sorted(top)}, max/median {ratio_wide:.2f} -> {ratio_csb:.2f}")
    record("7 SA trend reproduction", [
        (top2_hits >= 2, f"beta_m, beta_h top-2 in {top2_hits}/3 seeds"),
        (flat_hits >= 2, f"flattening in {flat_hits}/3 seeds"),
        (True, " | ".join(notes)),
    ])


def test_criterion_08_budget(dengue_cli_csb, tmp_path, dengue, estimation_box):
    code, out = dengue_cli_csb
    summary = json.loads((out / "summary.json").read_text())
    data = synthetic_data(dengue, dengue_nominal(), dengue_grid(), 0.1, ROOT_SEED)
    EVALS.reset()
    results = multi_start_fit(dengue, data, estimation_box, 100, seed=ROOT_SEED)
    fit_evals = EVALS.count
    record("8 budget claim", [
        (code == 0, f"csb exit code {code}"),
        (5e4 <= summary["eval_count"] <= 2.5e5,
         f"CSB run {summary['eval_count']} evaluations in [5e4, 2.5e5]"),
        (fit_evals <= 1e5 and len(results) == 100, f"100-start fit {fit_evals} evaluations <= 1e5"),
    ])


def test_criterion_09_median_ci():
    rng = np.random.default_rng(9)
    checks = []
    for n in (25, 100, 400):
        X = rng.normal(3.0, 2.0, (n, 3))
        med, ci = median_ci_from_samples(X)
        sym = all(math.isclose(iv.upper - m, m - iv.lower, rel_tol=1e-12, abs_tol=1e-15)
                  for iv, m in zip(ci.intervals, med))
        checks.append((sym, f"n={n} symmetric about the median"))
    # sets sharing median and sample standard deviation, differing only in size
    base = rng.standard_normal(50)
    halves = []
    for n in (50, 200, 800):
        z = np.resize(base, n) + rng.normal(0, 1e-3, n)
        z = (z - np.median(z)) / z.std(ddof=1)
        halves.append(median_ci_from_samples(z[:, None])[1].intervals[0].width / 2)
    ratios = [halves[i] / halves[i + 1] for i in range(2)]
    checks.append((all(math.isclose(r, 2.0, rel_tol=1e-12) for r in ratios),
                   f"half-width ratio on quadrupling {[round(r, 12) for r in ratios]} == 2"))

    def kept(losses):
        res = [FitResult(np.zeros(1), l, np.zeros(1), True, 1) for l in losses]
        return [r.final_loss for r in filter_fits(res, 0.10)]

    lists = [[52.8, 58.0, 60.0], [52.8, 58.08, 58.081], [60.0, 52.8, 58.08, 100.0],
             [1.0, 1.0, 1.0], [5.0], [0.0, 0.0, 1e-300]]
    for losses in lists:
        want = [l for l in losses if l <= 1.1 * min(losses)]
        checks.append((kept(losses) == want, f"filter {losses} -> {kept(losses)}"))
    record("9 median CI properties", checks)


def _replay_identical(command, config, tmp, extra=()):
    first = tmp / f"{command}-1"
    code1 = main([command, "--config", str(config), "--out", str(first), *extra])
    second = tmp / f"{command}-2"
    code2 = main([command, "--config", str(first / "manifest.json"), "--out", str(second)])
    return _compare(first, second, code1, code2)


def _compare(first, second, code1, code2):
    names = sorted(p.name for p in first.iterdir())
    same = (code1 == code2 and names == sorted(p.name for p in second.iterdir())
            and all((first / n).read_bytes() == (second / n).read_bytes() for n in names))
    return same, len(names)


def test_criterion_10_determinism(tmp_path, dengue_cli_csb):
    checks = []
    for command in ("fit", "oat", "csb", "ua", "sa", "converge", "csb-study"):
        extra = ("--repeats", "3") if command == "csb-study" else ()
        same, n = _replay_identical(command, IDENTITY_CFG, tmp_path, extra)
        checks.append((same, f"identity {command}: {n} files byte-identical"))
    for command in ("oat", "sa"):
        same, n = _replay_identical(command, DENGUE_CFG, tmp_path / "dengue")
        checks.append((same, f"dengue {command}: {n} files byte-identical"))
    code, out = dengue_cli_csb
    replay = tmp_path / "dengue-csb-replay"
    code2 = main(["csb", "--config", str(out / "manifest.json"), "--out", str(replay)])
    same, n = _compare(out, replay, code, code2)
    checks.append((same, f"dengue csb: {n} files byte-identical"))
    record("10 determinism", checks)
