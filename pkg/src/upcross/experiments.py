"""Monte Carlo experiments over many independent paths.

Every experiment draws path ``i`` from its own stream keyed by
``(seed, stream, i)`` and gathers per-path statistics in path order, so the
summaries do not depend on the number of worker threads.
"""

from __future__ import annotations

import json
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from . import __version__
from .deviation import SubadditivityReport, normalizer, subadditivity_check
from .engine import EnginePlan, run_path
from .exit_law import fast_law, selftest_exit_law
from .ks import ks_2samp
from .pvariation import pvar_sequence
from .rng import path_stream
from .skeleton import MODES, generate_skeleton

THREADS_ENV = "UPCROSS_THREADS"
DEFAULT_BUDGET = 2e10
CSV_COLUMNS = ("experiment", "k", "T", "statistic", "mean", "stderr", "median",
               "q10", "q90", "n_paths", "seed")

# stream ids keep the experiments' randomness disjoint for a shared seed
STREAMS = {"sup-rate": 1, "lp-rate": 2, "variation": 3, "scaling-a": 4,
           "scaling-b": 5, "subadditivity": 6, "levy": 7, "selftest": 8}


class ExperimentError(ValueError):
    pass


def default_threads() -> int:
    raw = os.environ.get(THREADS_ENV)
    if raw:
        try:
            n = int(raw)
        except ValueError:
            raise ExperimentError(f"{THREADS_ENV}={raw!r} is not an integer") from None
        if n < 1:
            raise ExperimentError(f"{THREADS_ENV} must be >= 1")
        return n
    return 1


@dataclass
class ExperimentConfig:
    seed: int = 20240601
    paths: int = 200
    levels: tuple = (2, 3, 4, 5, 6)
    proxy_offset: int = 6
    horizons: tuple = (1.0,)
    eta: float = 1.0
    delta: float = 1.0
    m: int = 1
    lam: float = 0.5
    threads: int = field(default_factory=default_threads)
    out: str | None = None
    mode: str = "exact"
    log_base: float | None = None
    budget: float = DEFAULT_BUDGET

    def __post_init__(self):
        self.levels = tuple(sorted(set(int(k) for k in self.levels)))
        self.horizons = tuple(sorted(set(float(T) for T in self.horizons)))
        self.validate()

    def validate(self):
        if self.paths < 1:
            raise ExperimentError("paths must be >= 1")
        if not self.levels or min(self.levels) < 1:
            raise ExperimentError("levels must be non-empty and >= 1")
        if not self.horizons or not all(T > 0 and math.isfinite(T) for T in self.horizons):
            raise ExperimentError("horizons must be positive")
        if self.proxy_offset < 0:
            raise ExperimentError("proxy offset must be >= 0")
        if not (self.eta > 0 and self.delta > 0 and self.lam > 0):
            raise ExperimentError("eta, delta and lambda must be positive")
        if self.m < 1:
            raise ExperimentError("m must be >= 1")
        if self.threads < 1:
            raise ExperimentError("threads must be >= 1")
        if self.mode not in MODES:
            raise ExperimentError(f"mode must be one of {MODES}")
        if self.log_base is not None and not (self.log_base > 0 and self.log_base != 1):
            raise ExperimentError("log base must be positive and != 1")
        if not self.budget > 0:
            raise ExperimentError("budget must be positive")

    def echo(self) -> dict:
        d = asdict(self)
        d["levels"] = list(self.levels)
        d["horizons"] = list(self.horizons)
        return d

    @classmethod
    def keys(cls) -> tuple[str, ...]:
        return tuple(f.name for f in fields(cls))


@dataclass(frozen=True)
class Row:
    experiment: str
    k: int
    T: float
    statistic: str
    mean: float
    stderr: float
    median: float
    q10: float
    q90: float
    n_paths: int
    seed: int


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    return str(v)


def summarize(experiment, k, T, statistic, values, seed) -> Row:
    x = np.asarray(values, dtype=float)
    n = x.size
    stderr = float(x.std(ddof=1) / math.sqrt(n)) if n > 1 else math.nan
    q10, med, q90 = (float(v) for v in np.quantile(x, [0.1, 0.5, 0.9]))
    return Row(experiment, int(k), float(T), statistic, float(x.mean()), stderr,
               med, q10, q90, n, int(seed))


def scalar_row(experiment, k, T, statistic, value, n_paths, seed) -> Row:
    v = float(value)
    return Row(experiment, int(k), float(T), statistic, v, math.nan, v, v, v, int(n_paths), int(seed))


@dataclass
class ExperimentReport:
    experiment: str
    rows: list
    checks: list                 # (name, passed, detail)
    config: dict
    wall_time: float = 0.0
    extra: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(ok for _, ok, _ in self.checks)

    def lines(self) -> list[str]:
        return [f"{'PASS' if ok else 'FAIL'} {name}: {detail}" for name, ok, detail in self.checks]

    def to_csv(self) -> str:
        out = [",".join(CSV_COLUMNS)]
        for r in self.rows:
            out.append(",".join(_fmt(getattr(r, c)) for c in CSV_COLUMNS))
        return "\n".join(out) + "\n"

    def to_json(self) -> str:
        def clean(v):
            if isinstance(v, float) and not math.isfinite(v):
                return None if math.isnan(v) else ("inf" if v > 0 else "-inf")
            return v
        doc = {
            "experiment": self.experiment,
            "columns": list(CSV_COLUMNS),
            "rows": [{c: clean(getattr(r, c)) for c in CSV_COLUMNS} for r in self.rows],
            "checks": [{"name": n, "passed": bool(ok), "detail": d} for n, ok, d in self.checks],
            "passed": self.passed,
            "config": self.config,
            "extra": self.extra,
            "metadata": {"version": __version__, "wall_time": self.wall_time},
        }
        return json.dumps(doc, indent=2, sort_keys=False) + "\n"

    def write(self, path: str) -> tuple[str, str]:
        """Write ``path`` (CSV) and its ``.json`` mirror; returns both paths."""
        base, ext = os.path.splitext(path)
        json_path = base + ".json" if ext.lower() == ".csv" else path + ".json"
        with open(path, "w", newline="\n") as fh:
            fh.write(self.to_csv())
        with open(json_path, "w", newline="\n") as fh:
            fh.write(self.to_json())
        return path, json_path


# --- plumbing --------------------------------------------------------------

def map_paths(func, n: int, threads: int) -> list:
    """``[func(i) for i in range(n)]``, optionally on a thread pool."""
    if threads <= 1 or n <= 1:
        return [func(i) for i in range(n)]
    with ThreadPoolExecutor(max_workers=min(threads, n)) as pool:
        return list(pool.map(func, range(n)))


def check_budget(steps_per_path: float, cfg: ExperimentConfig, finest: int):
    total = steps_per_path * cfg.paths
    if total > cfg.budget:
        fit = max(1, int(cfg.budget // steps_per_path))
        raise ExperimentError(
            f"projected {total:.3g} fine steps (level {finest}) exceed the budget {cfg.budget:.3g}; "
            f"use --paths {fit} or fewer, lower --proxy-offset (each level is 4x), "
            f"or raise budget in the config file")


def _run_plan(cfg: ExperimentConfig, plan: EnginePlan, stream: int) -> list:
    law = fast_law()
    check_budget(plan.projected_steps(), cfg, plan.finest)

    def one(i):
        return run_path(path_stream(cfg.seed, i, stream), plan, law)

    return map_paths(one, cfg.paths, cfg.threads)


def _finish(name, rows, checks, cfg, t0, **extra) -> ExperimentReport:
    return ExperimentReport(name, rows, checks, cfg.echo(), time.perf_counter() - t0, extra)


def _deviation_arrays(results, plan: EnginePlan, log_base):
    """Per-pair arrays ``R[path, T]`` and ``lstar[path, T]`` in real units."""
    out = {}
    for p, (k, K) in enumerate(plan.pairs):
        unit = 2.0 * 2.0 ** -K
        dev = np.array([r.dev_counts[p] for r in results], dtype=float) * unit
        lstar = np.array([r.lstar_counts[p] for r in results], dtype=float) * unit
        out[k] = (dev / normalizer(k, log_base), lstar)
    return out


def _strictly_decreasing(xs) -> bool:
    return all(b < a for a, b in zip(xs, xs[1:]))


# --- experiments -----------------------------------------------------------

SUP_RATE_RELATIVE_TOL = 0.35


def run_sup_rate(cfg: ExperimentConfig) -> ExperimentReport:
    """``R = D/nu_k`` against ``2 sqrt(lstar)``; medians of the gap should fall with k."""
    t0 = time.perf_counter()
    plan = EnginePlan.build(cfg.levels, cfg.proxy_offset, cfg.horizons, mode=cfg.mode)
    stats = _deviation_arrays(_run_plan(cfg, plan, STREAMS["sup-rate"]), plan, cfg.log_base)
    rows, checks = [], []
    for ti, T in enumerate(plan.horizons):
        meds, rel = [], math.nan
        for k in cfg.levels:
            R, lstar = stats[k][0][:, ti], stats[k][1][:, ti]
            target = 2.0 * np.sqrt(lstar)
            gap = np.abs(R - target)
            rows += [summarize("sup-rate", k, T, "R", R, cfg.seed),
                     summarize("sup-rate", k, T, "two_sqrt_lstar", target, cfg.seed),
                     summarize("sup-rate", k, T, "abs_centered", gap, cfg.seed)]
            meds.append(float(np.median(gap)))
            med_t = float(np.median(target))
            rel = meds[-1] / med_t if med_t > 0 else math.inf
            rows.append(scalar_row("sup-rate", k, T, "relative_median_gap", rel, cfg.paths, cfg.seed))
        if len(cfg.levels) > 1:
            checks.append((f"median gap decreasing in k at T={T:g}", _strictly_decreasing(meds),
                           " > ".join(f"{m:.4g}" for m in meds)))
        checks.append((f"relative median gap at k={cfg.levels[-1]}, T={T:g}",
                       rel <= SUP_RATE_RELATIVE_TOL, f"{rel:.4g} <= {SUP_RATE_RELATIVE_TOL}"))
    return _finish("sup-rate", rows, checks, cfg, t0)


LP_SPREAD = 2.0
LP_SLOPE_TOL = 0.15


def loglog_slope(T, y) -> float:
    T, y = np.asarray(T, float), np.asarray(y, float)
    if T.size < 2 or np.any(y <= 0):
        return math.nan
    return float(np.polyfit(np.log(T), np.log(y), 1)[0])


def run_lp_rate(cfg: ExperimentConfig) -> ExperimentReport:
    """``E[(D/nu_k)^(2+eta)]`` per (k, T), its ratio to ``T^(1/2+eta/4)``, and the slope in T."""
    t0 = time.perf_counter()
    p = 2.0 + cfg.eta
    expo = 0.5 + cfg.eta / 4.0
    plan = EnginePlan.build(cfg.levels, cfg.proxy_offset, cfg.horizons, mode=cfg.mode)
    stats = _deviation_arrays(_run_plan(cfg, plan, STREAMS["lp-rate"]), plan, cfg.log_base)
    rows, checks = [], []
    est = np.empty((len(cfg.levels), len(plan.horizons)))
    for a, k in enumerate(cfg.levels):
        Rp = stats[k][0] ** p
        for ti, T in enumerate(plan.horizons):
            est[a, ti] = Rp[:, ti].mean()
            rows.append(summarize("lp-rate", k, T, "moment", Rp[:, ti], cfg.seed))
            rows.append(summarize("lp-rate", k, T, "normalized", Rp[:, ti] / T**expo, cfg.seed))
    for ti, T in enumerate(plan.horizons):
        col = est[:, ti]
        ratio = col.max() / col.min() if col.min() > 0 else math.inf
        if len(cfg.levels) > 1:
            checks.append((f"moment spread over k at T={T:g}", ratio <= LP_SPREAD,
                           f"max/min = {ratio:.4g} <= {LP_SPREAD}"))
    cap = expo + LP_SLOPE_TOL
    for a, k in enumerate(cfg.levels):
        slope = loglog_slope(plan.horizons, est[a])
        rows.append(scalar_row("lp-rate", k, math.nan, "loglog_slope", slope, cfg.paths, cfg.seed))
        if len(plan.horizons) > 1:
            checks.append((f"log-log slope in T at k={k}", slope <= cap, f"{slope:.4g} <= {cap:.4g}"))
    return _finish("lp-rate", rows, checks, cfg, t0)


VARIATION_SPREAD = 2.0


def run_variation(cfg: ExperimentConfig) -> ExperimentReport:
    """``E sup_t ||U^k(t)||^(2+delta)`` on ``[-2^m, 2^m]`` per (k, T)."""
    t0 = time.perf_counter()
    q = 2.0 + cfg.delta
    plan = EnginePlan.build(cfg.levels, None, cfg.horizons, pvar_levels=cfg.levels,
                            m=cfg.m, q=q, mode=cfg.mode)
    results = _run_plan(cfg, plan, STREAMS["variation"])
    rows, checks = [], []
    est = np.empty((len(cfg.levels), len(plan.horizons)))
    for a, k in enumerate(cfg.levels):
        unit_q = (2.0 * 2.0 ** -k) ** q
        li = plan.levels.index(k)
        vals = np.array([r.pvar[li] for r in results]) * unit_q
        for ti, T in enumerate(plan.horizons):
            est[a, ti] = vals[:, ti].mean()
            rows.append(summarize("variation", k, T, "sup_variation", vals[:, ti], cfg.seed))
    if len(cfg.levels) > 1:
        for ti, T in enumerate(plan.horizons):
            col = est[:, ti]
            ratio = col.max() / col.min() if col.min() > 0 else math.inf
            checks.append((f"variation spread over k at T={T:g}", ratio <= VARIATION_SPREAD,
                           f"max/min = {ratio:.4g} <= {VARIATION_SPREAD}"))
    return _finish("variation", rows, checks, cfg, t0)


SCALING_ALPHA = 0.01


def _F_sample(cfg, k, T, stream) -> np.ndarray:
    plan = EnginePlan.build([k], cfg.proxy_offset, [T], mode=cfg.mode)
    R, _ = _deviation_arrays(_run_plan(cfg, plan, stream), plan, cfg.log_base)[k]
    return R[:, 0] ** 2


def run_scaling_test(cfg: ExperimentConfig) -> ExperimentReport:
    """KS test of ``F(lambda^2)/lambda`` against ``F(lambda)``, independent samples.

    Uses the first configured level.
    """
    t0 = time.perf_counter()
    k, lam = cfg.levels[0], cfg.lam
    K = k + cfg.proxy_offset
    check_budget((lam * lam + lam) * 4.0**K, cfg, K)
    a = _F_sample(cfg, k, lam * lam, STREAMS["scaling-a"]) / lam
    b = _F_sample(cfg, k, lam, STREAMS["scaling-b"])
    res = ks_2samp(a, b)
    rows = [summarize("scaling-test", k, lam * lam, "F_over_lambda", a, cfg.seed),
            summarize("scaling-test", k, lam, "F", b, cfg.seed),
            scalar_row("scaling-test", k, lam, "ks_D", res.statistic, cfg.paths, cfg.seed),
            scalar_row("scaling-test", k, lam, "ks_p", res.pvalue, cfg.paths, cfg.seed)]
    checks = [(f"KS F(lambda^2)/lambda vs F(lambda), lambda={lam:g}, k={k}",
               res.pvalue > SCALING_ALPHA, f"D={res.statistic:.4g}, p={res.pvalue:.4g} > {SCALING_ALPHA}")]
    return _finish("scaling-test", rows, checks, cfg, t0, ks_D=res.statistic, ks_p=res.pvalue)


def run_subadditivity(cfg: ExperimentConfig) -> ExperimentReport:
    """Triangle subadditivity of the deviation at every coarse crossing time."""
    t0 = time.perf_counter()
    law = fast_law()
    T_max = cfg.horizons[-1]
    K_max = max(cfg.levels) + cfg.proxy_offset
    check_budget(T_max * 4.0**K_max * len(cfg.levels), cfg, K_max)

    def one(i):
        out = {}
        for k in cfg.levels:
            rng = path_stream(cfg.seed, i, STREAMS["subadditivity"] + 100 * k)
            fine = generate_skeleton(rng, k + cfg.proxy_offset, 0.0, T_max, law=law, mode=cfg.mode)
            for T in cfg.horizons:
                out[k, T] = subadditivity_check(fine, k, T)
        return out

    per_path = map_paths(one, cfg.paths, cfg.threads)
    rows, checks = [], []
    for k in cfg.levels:
        for T in cfg.horizons:
            reps = [d[k, T] for d in per_path]
            total = SubadditivityReport()
            for r in reps:
                total = total.merge(r)
            for name in ("violations", "identity_violations", "squared_violations", "n_checked"):
                rows.append(summarize("subadditivity", k, T, name, [getattr(r, name) for r in reps], cfg.seed))
            rows.append(summarize("subadditivity", k, T, "max_excess", [r.max_excess for r in reps], cfg.seed))
            rate = total.squared_violations / total.n_checked if total.n_checked else 0.0
            rows.append(scalar_row("subadditivity", k, T, "squared_violation_rate", rate, cfg.paths, cfg.seed))
            checks.append((f"subadditivity k={k}, T={T:g}", total.violations == 0,
                           f"{total.violations} violations in {total.n_checked} checks"))
            checks.append((f"increment identities k={k}, T={T:g}", total.identity_violations == 0,
                           f"{total.identity_violations} mismatches"))
    return _finish("subadditivity", rows, checks, cfg, t0)


LEVY_TARGET = math.sqrt(2.0 / math.pi)


def run_levy(cfg: ExperimentConfig, allowance: float = 0.0) -> ExperimentReport:
    """Mean of ``U^k(T, 0)`` against ``E L(1, 0) = sqrt(2/pi)`` (T = 1, first level).

    The tolerance is three standard errors plus ``allowance`` for
    discretization bias.
    """
    t0 = time.perf_counter()
    k, T = cfg.levels[0], 1.0
    plan = EnginePlan.build([k], None, [T], mode=cfg.mode)
    results = _run_plan(cfg, plan, STREAMS["levy"])
    U = np.array([r.origin_counts[0, 0] for r in results], dtype=float) * 2.0 * 2.0**-k
    row = summarize("levy", k, T, "U_origin", U, cfg.seed)
    err = abs(row.mean - LEVY_TARGET)
    tol = 3.0 * (row.stderr if cfg.paths > 1 else math.inf) + allowance
    checks = [(f"Levy mean at k={k}", err <= tol, f"|{row.mean:.5g} - {LEVY_TARGET:.5g}| = {err:.4g} <= {tol:.4g}")]
    return _finish("levy", [row], checks, cfg, t0, samples=U.tolist())


def _brute_pvar(y, q) -> float:
    from itertools import combinations
    n = len(y)
    best = 0.0
    for r in range(2, n + 1):
        for idx in combinations(range(n), r):
            best = max(best, sum(abs(y[b] - y[a]) ** q for a, b in zip(idx, idx[1:])))
    return best


def selftest(cfg: ExperimentConfig, exit_samples: int = 200_000, levy_level: int = 8,
             levy_paths: int = 400) -> ExperimentReport:
    """Quick union of the module oracles.

    Deterministic-durations mode skips the checks that depend on the time law.
    """
    t0 = time.perf_counter()
    checks, rows = [], []
    if cfg.mode == "exact":
        rep = selftest_exit_law(exit_samples, seed=cfg.seed)
        checks += [("exit-law " + line.split(" ", 1)[1], line.startswith("PASS"), "")
                   for line in rep.lines()]
        lcfg = ExperimentConfig(**{**cfg.echo(), "levels": (levy_level,), "horizons": (1.0,),
                                   "paths": levy_paths})
        levy = run_levy(lcfg, allowance=4.0 * 2.0**-levy_level)
        checks += levy.checks
        rows += levy.rows

    rng = np.random.default_rng([cfg.seed, STREAMS["selftest"]])
    bad = 0
    for _ in range(200):
        y = rng.integers(-5, 6, size=int(rng.integers(1, 9))).astype(float)
        q = float(rng.choice([1.0, 2.0, 3.0]))
        if abs(pvar_sequence(y, q).value - _brute_pvar(y, q)) > 1e-12:
            bad += 1
    checks.append(("variation DP vs enumeration", bad == 0, f"{bad} mismatches in 200"))

    total = SubadditivityReport()
    for i in range(4):
        fine = generate_skeleton(path_stream(cfg.seed, i, STREAMS["selftest"]), 7, 0.0, 0.25,
                                 law=fast_law(), mode=cfg.mode)
        total = total.merge(subadditivity_check(fine, 3, 0.25))
    checks.append(("increment identities and subadditivity",
                   total.identity_violations == 0 and total.violations == 0,
                   f"{total.identity_violations} identity, {total.violations} triangle violations "
                   f"in {total.n_checked} checks"))
    return _finish("selftest", rows, checks, cfg, t0)


EXPERIMENTS = {
    "sup-rate": run_sup_rate,
    "lp-rate": run_lp_rate,
    "variation": run_variation,
    "scaling-test": run_scaling_test,
    "subadditivity": run_subadditivity,
    "selftest": selftest,
}
