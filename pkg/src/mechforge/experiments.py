"""Study configuration, the full condition sweep and CSV output.

A study config is one JSON document with the sections ``generators``,
``equilibrium``, ``metrics``, ``online`` and ``study``; every key is
optional. All randomness comes from the root ``seed`` through named
streams, and outputs carry the config hash so runs can be matched to their
manifest.
"""
from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import os
import platform
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__, deviation, fitting, generators, metrics, online, rng, stats
from .equilibrium import IterationParams, ShaveProfile, iterate_equilibrium, measure_equilibrium, shaved_values
from .generators import ConfigError, GeneratorConfig
from .rules import CAPPED, TABLE_ORDER, Rule, parse_rule
from .wd import feasible_set

STUDY_RULES = CAPPED  # W, T, R, S, L, F
TARGETS = ("efficiency", "shave")


@dataclass(frozen=True)
class MetricsSettings:
    instances: int = 1000
    n_bins: int = metrics.N_BINS
    pseudo_count: float = metrics.PSEUDO_COUNT

    def __post_init__(self):
        if self.instances < 1:
            raise ConfigError("metrics.instances must be positive")
        if self.n_bins < 2 or self.pseudo_count <= 0:
            raise ConfigError("metrics needs n_bins >= 2 and a positive pseudo_count")


@dataclass(frozen=True)
class OnlineSettings:
    scenarios: tuple[str, ...] = ("decay", "uniform", "super")
    metrics: tuple[str, ...] = ("KLnorm", "L1norm")
    classes: tuple[int, ...] = (1, 3)
    epochs: int = 20
    epoch_size: int = online.EPOCH_SIZE

    def __post_init__(self):
        for m in self.metrics:
            if m not in online.SELECTION_METRICS:
                raise ConfigError(f"online metric must be one of {online.SELECTION_METRICS}")
        if self.epochs < 0 or self.epoch_size < 1:
            raise ConfigError("online epochs must be >= 0 and epoch_size >= 1")


@dataclass(frozen=True)
class StudySettings:
    scenarios: tuple[str, ...] = generators.SCENARIOS
    rules: tuple[Rule, ...] = STUDY_RULES
    table2_rules: tuple[Rule, ...] = TABLE_ORDER + (Rule.VCG,)
    classes: tuple[int, ...] = (1, 2, 3)
    class_samples: int = 1000
    measure_instances: int = 200
    deviation_instances: int = 1000
    deviation_points: int = 41
    fit_instances: int = 1000
    force_vcg: bool = False  # debug control: every condition plays VCG

    def __post_init__(self):
        for s in self.scenarios:
            if s not in generators.SCENARIOS:
                raise ConfigError(f"unknown scenario {s!r}")
        if any(k not in (1, 2, 3) for k in self.classes):
            raise ConfigError("classes must be drawn from 1, 2, 3")


@dataclass(frozen=True)
class StudyConfig:
    seed: int = 0
    generators: dict = field(default_factory=dict)  # scenario -> GeneratorConfig
    equilibrium: IterationParams = IterationParams()
    metrics: MetricsSettings = MetricsSettings()
    online: OnlineSettings = OnlineSettings()
    study: StudySettings = StudySettings()

    def __post_init__(self):
        # every scenario gets an explicit generator so equal configs compare equal
        gens = {s: self.generators.get(s, GeneratorConfig(scenario=s)) for s in generators.SCENARIOS}
        object.__setattr__(self, "generators", gens)

    def generator(self, scenario: str) -> GeneratorConfig:
        return self.generators[scenario]

    @classmethod
    def from_dict(cls, data: dict) -> "StudyConfig":
        known = {"seed", "generators", "equilibrium", "metrics", "online", "study"}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config sections: {sorted(unknown)}")
        try:
            gens = {}
            for scen, spec in (data.get("generators") or {}).items():
                spec = dict(spec)
                spec.setdefault("scenario", scen)
                if spec["scenario"] != scen:
                    raise ConfigError(f"generator entry {scen!r} names scenario {spec['scenario']!r}")
                gens[scen] = GeneratorConfig.from_dict(spec)
            eq = IterationParams.from_dict(data.get("equilibrium") or {})
            met = MetricsSettings(**(data.get("metrics") or {}))
            onl = dict(data.get("online") or {})
            for key in ("scenarios", "metrics", "classes"):
                if key in onl:
                    onl[key] = tuple(onl[key])
            st = dict(data.get("study") or {})
            for key in ("scenarios", "classes"):
                if key in st:
                    st[key] = tuple(st[key])
            for key in ("rules", "table2_rules"):
                if key in st:
                    st[key] = tuple(parse_rule(r) for r in st[key])
            return cls(int(data.get("seed", 0)), gens, eq, met, OnlineSettings(**onl), StudySettings(**st))
        except ConfigError:
            raise
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc

    def to_dict(self) -> dict:
        st = asdict(self.study)
        st["rules"] = [r.value for r in self.study.rules]
        st["table2_rules"] = [r.value for r in self.study.table2_rules]
        return {
            "seed": self.seed,
            "generators": {s: g.to_dict() for s, g in self.generators.items()},
            "equilibrium": asdict(self.equilibrium),
            "metrics": asdict(self.metrics),
            "online": asdict(self.online),
            "study": st,
        }

    def canonical(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    def hash(self) -> str:
        return hashlib.sha256(self.canonical().encode()).hexdigest()[:16]


def load_study_config(path) -> StudyConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON in {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError("config must be a JSON object")
    return StudyConfig.from_dict(data)


# -- output ----------------------------------------------------------------------

def fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (float, np.floating)):
        x = float(x)
        if math.isnan(x):
            return "nan"
        return repr(round(x, 12) + 0.0)
    return str(x)


def write_csv(path, header, rows, tag: str | None = None) -> Path:
    """CSV with an optional ``# manifest=<hash>`` comment line above the header."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    buf = io.StringIO()
    if tag is not None:
        buf.write(f"# manifest={tag}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([fmt(x) for x in row])
    path.write_text(buf.getvalue())
    return path


def versions() -> dict:
    import scipy
    return {"mechforge": __version__, "python": platform.python_version(),
            "numpy": np.__version__, "scipy": scipy.__version__}


def write_manifest(out_dir, command: str, seed: int, config_hash: str, extra: dict | None = None) -> Path:
    data = {"command": command, "seed": seed, "config_hash": config_hash, "versions": versions()}
    if extra:
        data.update(extra)
    path = Path(out_dir) / "manifest.json"
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")
    return path


def worker_count() -> int:
    cap = os.environ.get("MECHFORGE_THREADS")
    n = os.cpu_count() or 1
    if cap:
        try:
            n = min(n, max(1, int(cap)))
        except ValueError as exc:
            raise ConfigError("MECHFORGE_THREADS must be an integer") from exc
    return n


def _map(fn, items, workers: int):
    if workers <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


# -- building blocks -------------------------------------------------------------

def study_instances(cfg: StudyConfig, scenario: str, purpose: str, n: int):
    gen = cfg.generator(scenario)
    for j in range(n):
        yield generators.generate(gen, rng.child_seed(cfg.seed, purpose, scenario, j))


def truth_metrics(cfg: StudyConfig, scenario: str, rules) -> dict:
    """{rule: {metric: value}} at truthful reports."""
    rules = tuple(rules)
    insts = list(study_instances(cfg, scenario, "truth", cfg.metrics.instances))
    data = metrics.collect(insts, None, rules)
    return {r: metrics.all_metrics(data[r], cfg.metrics.n_bins, cfg.metrics.pseudo_count) for r in rules}


def truth_records(cfg: StudyConfig, scenario: str, rules) -> dict:
    insts = list(study_instances(cfg, scenario, "truth", cfg.metrics.instances))
    return metrics.collect(insts, None, tuple(rules))


def equilibrium_metrics(cfg: StudyConfig, scenario: str, rule: Rule, profile: ShaveProfile) -> dict:
    """Metrics at the bids of an equilibrium; the reference is VCG on those bids."""
    insts = list(study_instances(cfg, scenario, "equilibrium-metrics", cfg.metrics.instances))
    bids = [shaved_values(inst, profile.alphas, profile.boundaries) for inst in insts]
    data = metrics.collect(insts, bids, (rule,))
    return metrics.all_metrics(data[rule], cfg.metrics.n_bins, cfg.metrics.pseudo_count)


@dataclass
class ConditionResult:
    scenario: str
    rule: Rule
    k: int
    alphas: tuple
    mean_shave: float  # percent
    efficiency: float  # percent
    converged: bool
    iterations: int
    truth: dict = field(default_factory=dict)
    equilibrium: dict = field(default_factory=dict)
    trace: list = field(default_factory=list)


def run_condition(args) -> ConditionResult:
    cfg, scenario, rule, k, with_metrics = args
    played = Rule.VCG if cfg.study.force_vcg else rule
    gen = cfg.generator(scenario)
    seed = rng.child_seed(cfg.seed, "condition", scenario, rule.value, k)
    res = iterate_equilibrium(gen, played, k, cfg.equilibrium, seed, class_samples=cfg.study.class_samples)
    shave, eff = measure_equilibrium(gen, played, res.profile, cfg.study.measure_instances, seed)
    eq_metrics = equilibrium_metrics(cfg, scenario, rule, res.profile) if with_metrics else {}
    return ConditionResult(scenario, rule, k, res.alphas, shave, eff, res.converged, res.iterations,
                           equilibrium=eq_metrics, trace=res.trace)


def correlations(points, metric_key: str, targets=TARGETS) -> list[tuple]:
    """Rows (metric, target, r, p, significant, n) over converged conditions."""
    rows = []
    for m in metrics.METRICS:
        xs = [getattr(c, metric_key)[m] for c in points]
        for target in targets:
            ys = [c.efficiency if target == "efficiency" else c.mean_shave for c in points]
            pairs = [(x, y) for x, y in zip(xs, ys) if not (math.isnan(x) or math.isnan(y))]
            try:
                cr = stats.compute_correlation([p[0] for p in pairs], [p[1] for p in pairs])
                rows.append((m, target, cr.r, cr.p, cr.significant(), cr.n))
            except stats.StatsError:
                rows.append((m, target, float("nan"), float("nan"), "undefined", len(pairs)))
    return rows


# -- the study ---------------------------------------------------------------------

def run_study(cfg: StudyConfig, out_dir, workers: int | None = None, plot: bool = False) -> dict:
    """Run every condition and write tables 1 to 5, figure data and the manifest.

    Returns a dict of the main in-memory results for callers and tests.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    tag = cfg.hash()
    workers = worker_count() if workers is None else workers
    st = cfg.study
    metric_cols = list(metrics.METRICS)

    # table1.csv: metrics at truth
    truth = {s: truth_metrics(cfg, s, TABLE_ORDER) for s in st.scenarios}
    rows = []
    for s in st.scenarios:
        for r in TABLE_ORDER:
            rows.append([s, r.label] + [truth[s][r][m] for m in metric_cols])
    for r in TABLE_ORDER:
        rows.append(["mean", r.label] + [float(np.mean([truth[s][r][m] for s in st.scenarios])) for m in metric_cols])
    write_csv(out / "table1.csv", ["scenario", "rule"] + metric_cols, rows, tag)

    # equilibria: the study conditions plus any extra table-2 rules
    jobs = []
    for s in st.scenarios:
        for r in dict.fromkeys(tuple(st.rules) + tuple(st.table2_rules)):
            for k in st.classes:
                jobs.append((cfg, s, r, k, r in st.rules))
    results = _map(run_condition, jobs, workers)
    for res in results:
        res.truth = truth[res.scenario].get(res.rule, {})

    rows = [[c.scenario, c.rule.label, c.k, " ".join(fmt(a) for a in c.alphas), c.mean_shave, c.efficiency,
             c.converged, c.iterations] for c in results]
    write_csv(out / "table2.csv", ["scenario", "rule", "classes", "alphas", "mean_shave_pct", "efficiency_pct",
                                   "converged", "iterations"], rows, tag)
    (out / "table2_trace.json").write_text(json.dumps(
        [{"scenario": c.scenario, "rule": c.rule.label, "classes": c.k, "trace": c.trace} for c in results],
        sort_keys=True) + "\n")

    points = [c for c in results if c.rule in st.rules]
    usable = [c for c in points if c.converged]
    excluded = len(points) - len(usable)
    header = ["metric", "target", "r", "p", "significant", "n"]
    write_csv(out / "table3.csv", header, correlations(usable, "truth"), tag)
    write_csv(out / "table4.csv", header, correlations(usable, "equilibrium"), tag)

    rows = []
    for r in st.rules:
        for k in st.classes:
            cell = [c for c in points if c.rule == r and c.k == k]
            rows.append([r.label, k] + [float(np.mean([c.equilibrium[m] for c in cell])) for m in metric_cols])
    write_csv(out / "table5.csv", ["rule", "classes"] + metric_cols, rows, tag)

    figure_data(cfg, out, tag)
    trace_rows = online_figure(cfg, out, tag)

    write_manifest(out, "study", cfg.seed, tag, {
        "config": cfg.to_dict(),
        "conditions": len(points),
        "excluded_from_correlations": excluded,
    })
    if plot:
        from . import plots
        plots.render_study(out)
    return {"truth": truth, "conditions": results, "excluded": excluded, "online": trace_rows}


def figure_data(cfg: StudyConfig, out: Path, tag: str) -> None:
    """Fits (figures 1 and 2), payoff c.d.f.s (3) and deviation curves (4 to 7)."""
    st = cfg.study
    fit_rows, gev_rows, gpd_rows, cdf_rows = [], [], [], []
    for s in st.scenarios:
        insts = list(study_instances(cfg, s, "fit", st.fit_instances))
        data = metrics.collect(insts, None, (Rule.VCG,))[Rule.VCG]
        surplus = np.array([rec.surplus for rec in data])
        payoff = metrics.samples_from(data, "reference", normalized=False)
        payoff = payoff[payoff > 0]
        try:
            gev, ll_gev = fitting.fit_gev(surplus)
            gum, ll_gum = fitting.fit_gumbel(surplus)
            fit_rows.append([s, "surplus", "gev", f"mu={fmt(gev.mu)} sigma={fmt(gev.sigma)} xi={fmt(gev.xi)}",
                             ll_gev, len(surplus)])
            fit_rows.append([s, "surplus", "gumbel", f"mu={fmt(gum.mu)} sigma={fmt(gum.sigma)}", ll_gum,
                             len(surplus)])
            xs, emp, fitted = fitting.density_curve(surplus, lambda x: fitting.gev_pdf(x, gev))
            gev_rows += [[s, x, e, f] for x, e, f in zip(xs, emp, fitted)]
        except fitting.FitError as exc:
            fit_rows.append([s, "surplus", "gev", f"error: {exc}", float("nan"), len(surplus)])
        try:
            gpd, ll_gpd = fitting.fit_gpd(payoff)
            ex, ll_exp = fitting.fit_exponential(payoff)
            fit_rows.append([s, "vcg_payoff", "gpd", f"sigma={fmt(gpd.sigma)} xi={fmt(gpd.xi)}", ll_gpd, len(payoff)])
            fit_rows.append([s, "vcg_payoff", "exponential", f"rate={fmt(ex.rate)}", ll_exp, len(payoff)])
            xs, emp, fitted = fitting.density_curve(payoff, lambda x: fitting.gpd_pdf(x, gpd))
            exp_fit = fitting.exp_pdf(xs, ex)
            gpd_rows += [[s, x, e, f, g] for x, e, f, g in zip(xs, emp, fitted, exp_fit)]
        except fitting.FitError as exc:
            fit_rows.append([s, "vcg_payoff", "gpd", f"error: {exc}", float("nan"), len(payoff)])
        records = truth_records(cfg, s, TABLE_ORDER + (Rule.VCG,))
        grid = np.linspace(0.0, 1.0, 101)
        for r in (Rule.VCG,) + TABLE_ORDER:
            vals = np.sort(metrics.samples_from(records[r], "mechanism"))
            if len(vals) == 0:
                continue
            cdf = np.searchsorted(vals, grid, side="right") / len(vals)
            cdf_rows += [[s, r.label, x, c] for x, c in zip(grid, cdf)]
    write_csv(out / "fig1_2_fit_params.csv", ["scenario", "sample", "model", "params", "loglik", "n"], fit_rows, tag)
    write_csv(out / "fig1_surplus_gev.csv", ["scenario", "x", "empirical", "gev"], gev_rows, tag)
    write_csv(out / "fig2_payoff_gpd.csv", ["scenario", "x", "empirical", "gpd", "exponential"], gpd_rows, tag)
    write_csv(out / "fig3_payoff_cdf.csv", ["scenario", "rule", "normalized_payoff", "cdf"], cdf_rows, tag)

    # deviation curves on the Super scenario when it is part of the study
    scen = "super" if "super" in st.scenarios else st.scenarios[0]
    gen = cfg.generator(scen)
    rho = deviation.default_rho_grid(st.deviation_points)
    rules = (Rule.VCG,) + TABLE_ORDER
    single = representative_curves(cfg, scen, rules, rho)
    write_csv(out / "fig4_single.csv", ["rho"] + [r.label for r in rules],
              [[x] + [single[r][i] for r in rules] for i, x in enumerate(rho)], tag)
    seed = rng.child_seed(cfg.seed, "deviation")
    curves = {r: deviation.expected_curves(gen, r, rho, max(100, st.deviation_instances), seed) for r in rules}
    for fig, variant in (("fig5", "expected"), ("fig6", "conditional-gain"), ("fig7", "conditional-loss")):
        write_csv(out / f"{fig}_{variant.replace('-', '_')}.csv", ["rho"] + [r.label for r in rules],
                  [[x] + [curves[r][variant].values[i] for r in rules] for i, x in enumerate(rho)], tag)


def representative_curves(cfg: StudyConfig, scenario: str, rules, rho) -> dict:
    """Single-agent curves for the eligible agent with the largest VCG discount among a few instances."""
    best = None
    for j, inst in enumerate(study_instances(cfg, scenario, "representative", 50)):
        wd = feasible_set(inst).solve()
        for i in wd.trading:
            d = wd.vcg_discounts[i] / wd.surplus if wd.surplus > 0 else 0.0
            if d > 0 and (best is None or d > best[0]):
                best = (d, inst, i)
    if best is None:
        return {r: [float("nan")] * len(rho) for r in rules}
    _, inst, agent = best
    return {r: deviation.unilateral_curve(inst, agent, r, rho).values for r in rules}


def online_figure(cfg: StudyConfig, out: Path, tag: str) -> list:
    o = cfg.online
    rows = []
    for s in o.scenarios:
        for k in o.classes:
            cache = online.EquilibriumCache(cfg.generator(s), cfg.equilibrium, rng.child_seed(cfg.seed, "online", s))
            for m in o.metrics:
                trace = online.run_online_search(cfg.generator(s), m, o.epochs, k,
                                                 rng.child_seed(cfg.seed, "online", s, k), o.epoch_size,
                                                 cfg.equilibrium, cache)
                rows += [[s, k, m, e, label, frac] for e, label, frac in trace.rows()]
    write_csv(out / "fig8_online.csv", ["scenario", "classes", "metric", "epoch", "rule", "efficiency_fraction"],
              rows, tag)
    return rows
