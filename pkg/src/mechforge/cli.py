"""Command-line entry point: ``mechforge <subcommand> [options]``.

Exit codes: 0 on success, 2 on a usage or configuration error, 1 when the
run itself fails. Every subcommand writes ``manifest.json`` to its output
directory.
"""
from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from . import deviation, equilibrium, experiments, fitting, generators, market, metrics, online, rng, stats
from .experiments import StudyConfig, fmt, load_study_config, write_csv, write_manifest
from .generators import ConfigError
from .rules import TABLE_ORDER, Rule, parse_rule
from .wd import lp_text

SUBCOMMANDS = ("gen", "metrics", "equilibrium", "deviation", "fit", "correlate", "study", "online")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _rule(text: str) -> Rule:
    try:
        return parse_rule(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from exc


def _common(p: argparse.ArgumentParser, scenario: bool = True) -> None:
    p.add_argument("--config", help="study config JSON (sections: generators, equilibrium, metrics, online, study)")
    p.add_argument("--seed", type=int, default=None, help="root seed (overrides the config)")
    p.add_argument("--out-dir", default="out", help="directory for CSV outputs and the manifest")
    p.add_argument("--plot", action="store_true", help="also render PNG figures next to the CSVs")
    if scenario:
        p.add_argument("--scenario", choices=generators.SCENARIOS, default="super")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="mechforge", description="Combinatorial exchange payment-rule laboratory")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen", help="generate instances as JSON")
    _common(p)
    p.add_argument("--count", type=int, default=1)
    p.add_argument("--emit-lp", metavar="PATH",
                   help="write the winner-determination program in LP format (a directory when --count > 1)")

    p = sub.add_parser("metrics", help="payoff-distance metrics at truth (one row per rule)")
    _common(p)
    p.add_argument("--rule", type=_rule, action="append", help="rule name or letter; repeatable")
    p.add_argument("--instances", type=int)
    p.add_argument("--dump-samples", action="store_true", help="also write per-agent payoff samples")

    p = sub.add_parser("equilibrium", help="shave-factor equilibria by iterated best response")
    _common(p)
    p.add_argument("--rule", type=_rule, action="append")
    p.add_argument("--classes", type=int, choices=(1, 2, 3), default=1)
    p.add_argument("--instances-per-iteration", type=int)
    p.add_argument("--max-iterations", type=int)

    p = sub.add_parser("deviation", help="unilateral misreport profit curves")
    _common(p)
    p.add_argument("--rule", type=_rule, action="append")
    p.add_argument("--instances", type=int, default=1000)
    p.add_argument("--points", type=int, default=41, help="grid points on [0, 1], 0 excluded")

    p = sub.add_parser("fit", help="GEV fit of surpluses, GPD and exponential fits of VCG payoffs")
    _common(p)
    p.add_argument("--instances", type=int, default=1000)
    p.add_argument("--samples", help="fit a column of numbers from this CSV instead of generated data")
    p.add_argument("--column", default=None, help="column name in --samples (default: first)")

    p = sub.add_parser("correlate", help="Pearson r and two-sided p for two CSV columns")
    p.add_argument("--input", required=True)
    p.add_argument("--x", required=True)
    p.add_argument("--y", required=True)
    p.add_argument("--out-dir", default="out")

    p = sub.add_parser("study", help="full sweep: tables 1-5 and figure data")
    _common(p, scenario=False)
    p.add_argument("--workers", type=int, default=None, help="worker processes (capped by MECHFORGE_THREADS)")

    p = sub.add_parser("online", help="epoch-based online rule selection")
    _common(p)
    p.set_defaults(scenario="decay")
    p.add_argument("--metric", choices=online.SELECTION_METRICS, default="KLnorm")
    p.add_argument("--epochs", type=int, default=20)
    p.add_argument("--epoch-size", type=int, default=online.EPOCH_SIZE)
    p.add_argument("--classes", type=int, choices=(1, 2, 3), default=1)
    return parser


def _config(args) -> StudyConfig:
    cfg = load_study_config(args.config) if getattr(args, "config", None) else StudyConfig()
    if getattr(args, "seed", None) is not None:
        cfg = StudyConfig(args.seed, cfg.generators, cfg.equilibrium, cfg.metrics, cfg.online, cfg.study)
    return cfg


def _positive(value, name):
    if value is not None and value < 1:
        raise ConfigError(f"{name} must be positive")


def cmd_gen(args, cfg: StudyConfig) -> dict:
    _positive(args.count, "--count")
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    gen = cfg.generator(args.scenario)
    seeds = [cfg.seed + j for j in range(args.count)]
    for s in seeds:
        inst = generators.generate(gen, s)
        market.save(inst, out / f"{args.scenario}_{s}.json")
        if args.emit_lp:
            lp = Path(args.emit_lp)
            target = lp / f"{args.scenario}_{s}.lp" if args.count > 1 else lp
            target.parent.mkdir(parents=True, exist_ok=True)
            target.write_text(lp_text(inst))
    return {"seeds": seeds, "generator": gen.to_dict()}


def cmd_metrics(args, cfg: StudyConfig) -> dict:
    _positive(args.instances, "--instances")
    rules = tuple(args.rule) if args.rule else TABLE_ORDER
    n = args.instances or cfg.metrics.instances
    gen = cfg.generator(args.scenario)
    insts = [generators.generate(gen, rng.child_seed(cfg.seed, "truth", args.scenario, j)) for j in range(n)]
    data = metrics.collect(insts, None, rules)
    cols = list(metrics.METRICS)
    rows = []
    for r in rules:
        vals = metrics.all_metrics(data[r], cfg.metrics.n_bins, cfg.metrics.pseudo_count)
        rows.append([args.scenario, r.label] + [vals[m] for m in cols] + [len(data[r])])
    tag = cfg.hash()
    write_csv(Path(args.out_dir) / "metrics.csv", ["scenario", "rule"] + cols + ["instances"], rows, tag)
    if args.dump_samples:
        sample_rows = []
        for r in rules:
            for rec in data[r]:
                for a, ref, mech in zip(rec.agents, rec.reference, rec.mechanism):
                    sample_rows.append([r.label, rec.instance, a, mech, mech / rec.surplus, ref / rec.surplus])
        write_csv(Path(args.out_dir) / "samples.csv",
                  ["rule", "instance", "agent", "payoff", "normalized", "vcg_normalized"], sample_rows, tag)
    return {"instances": n, "rules": [r.value for r in rules]}


def cmd_equilibrium(args, cfg: StudyConfig) -> dict:
    _positive(args.instances_per_iteration, "--instances-per-iteration")
    _positive(args.max_iterations, "--max-iterations")
    params = cfg.equilibrium
    kw = {}
    if args.instances_per_iteration:
        kw["instances_per_iteration"] = args.instances_per_iteration
    if args.max_iterations:
        kw["max_iterations"] = args.max_iterations
    if kw:
        params = equilibrium.IterationParams(**{**params.__dict__, **kw})
    rules = tuple(args.rule) if args.rule else (Rule.SMALL, Rule.THRESHOLD)
    gen = cfg.generator(args.scenario)
    rows, traces = [], []
    for r in rules:
        seed = rng.child_seed(cfg.seed, "condition", args.scenario, r.value, args.classes)
        res = equilibrium.iterate_equilibrium(gen, r, args.classes, params, seed,
                                              class_samples=cfg.study.class_samples)
        shave, eff = equilibrium.measure_equilibrium(gen, r, res.profile, cfg.study.measure_instances, seed)
        rows.append([args.scenario, r.label, args.classes] + list(res.alphas) + [None] * (3 - args.classes)
                    + [shave, eff, res.converged, res.iterations])
        traces.append({"rule": r.label, "boundaries": list(res.profile.boundaries), "trace": res.trace})
    rows = [["" if x is None else x for x in row] for row in rows]
    out = Path(args.out_dir)
    write_csv(out / "equilibrium.csv", ["scenario", "rule", "classes", "alpha_1", "alpha_2", "alpha_3",
                                        "mean_shave_pct", "efficiency_pct", "converged", "iterations"],
              rows, cfg.hash())
    (out / "equilibrium_trace.json").write_text(json.dumps(traces, sort_keys=True) + "\n")
    return {"rules": [r.value for r in rules], "classes": args.classes}


def cmd_deviation(args, cfg: StudyConfig) -> dict:
    if args.instances < 100:
        raise ConfigError("--instances must be at least 100")
    if args.points < 2:
        raise ConfigError("--points must be at least 2")
    rules = tuple(args.rule) if args.rule else (Rule.VCG,) + TABLE_ORDER
    rho = deviation.default_rho_grid(args.points)
    gen = cfg.generator(args.scenario)
    seed = rng.child_seed(cfg.seed, "deviation")
    curves = {r: deviation.expected_curves(gen, r, rho, args.instances, seed) for r in rules}
    tag = cfg.hash()
    for variant in ("expected", "conditional-gain", "conditional-loss"):
        rows = [[x] + [curves[r][variant].values[i] for r in rules] for i, x in enumerate(rho)]
        write_csv(Path(args.out_dir) / f"deviation_{variant.replace('-', '_')}.csv",
                  ["rho"] + [r.label for r in rules], rows, tag)
    return {"instances": args.instances, "rules": [r.value for r in rules]}


def _read_column(path, column):
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"samples file not found: {p}")
    with open(p, newline="") as fh:
        reader = csv.DictReader(ln for ln in fh if not ln.startswith("#"))
        rows = list(reader)
        if not rows:
            raise ConfigError("samples file has no rows")
        col = column or reader.fieldnames[0]
        if col not in reader.fieldnames:
            raise ConfigError(f"column {col!r} not in {p}")
        return np.array([float(r[col]) for r in rows])


def cmd_fit(args, cfg: StudyConfig) -> dict:
    out = Path(args.out_dir)
    tag = cfg.hash()
    rows, curve_rows = [], []
    if args.samples:
        x = _read_column(args.samples, args.column)
        fits = [("samples", x)]
    else:
        _positive(args.instances, "--instances")
        gen = cfg.generator(args.scenario)
        insts = [generators.generate(gen, rng.child_seed(cfg.seed, "fit", args.scenario, j))
                 for j in range(args.instances)]
        data = metrics.collect(insts, None, (Rule.VCG,))[Rule.VCG]
        payoff = metrics.samples_from(data, "reference", normalized=False)
        fits = [("surplus", np.array([rec.surplus for rec in data])), ("vcg_payoff", payoff[payoff > 0])]
    for name, x in fits:
        gev, ll_gev = fitting.fit_gev(x)
        gum, ll_gum = fitting.fit_gumbel(x)
        rows.append([name, "gev", gev.mu, gev.sigma, gev.xi, ll_gev, len(x)])
        rows.append([name, "gumbel", gum.mu, gum.sigma, 0.0, ll_gum, len(x)])
        xs, emp, fitted = fitting.density_curve(x, lambda t: fitting.gev_pdf(t, gev))
        curve_rows += [[name, a, b, c] for a, b, c in zip(xs, emp, fitted)]
        if (x >= 0).all():
            gpd, ll_gpd = fitting.fit_gpd(x)
            ex, ll_exp = fitting.fit_exponential(x)
            rows.append([name, "gpd", 0.0, gpd.sigma, gpd.xi, ll_gpd, len(x)])
            rows.append([name, "exponential", 0.0, 1.0 / ex.rate, 0.0, ll_exp, len(x)])
    write_csv(out / "fit.csv", ["sample", "model", "location", "scale", "shape", "loglik", "n"], rows, tag)
    write_csv(out / "fit_curves.csv", ["scenario", "x", "empirical", "model"], curve_rows, tag)
    return {"samples": [f[0] for f in fits]}


def cmd_correlate(args) -> dict:
    p = Path(args.input)
    if not p.is_file():
        raise ConfigError(f"input file not found: {p}")
    with open(p, newline="") as fh:
        reader = csv.DictReader(ln for ln in fh if not ln.startswith("#"))
        rows = list(reader)
        for col in (args.x, args.y):
            if col not in (reader.fieldnames or []):
                raise ConfigError(f"column {col!r} not in {p}")
    xs = [float(r[args.x]) for r in rows]
    ys = [float(r[args.y]) for r in rows]
    try:
        c = stats.compute_correlation(xs, ys)
        row = [args.x, args.y, c.r, c.p, c.significant(), c.n]
    except stats.StatsError as exc:
        row = [args.x, args.y, float("nan"), float("nan"), f"undefined: {exc}", len(xs)]
    write_csv(Path(args.out_dir) / "correlation.csv", ["x", "y", "r", "p", "significant", "n"], [row])
    print(",".join(fmt(v) for v in row))
    return {"input": str(p)}


def cmd_study(args, cfg: StudyConfig) -> dict:
    workers = None
    if args.workers is not None:
        _positive(args.workers, "--workers")
        workers = min(args.workers, experiments.worker_count())
    res = experiments.run_study(cfg, args.out_dir, workers)
    return {"conditions": len(res["conditions"])}


def cmd_online(args, cfg: StudyConfig) -> dict:
    if args.epochs < 0:
        raise ConfigError("--epochs must be nonnegative")
    _positive(args.epoch_size, "--epoch-size")
    gen = cfg.generator(args.scenario)
    trace = online.run_online_search(gen, args.metric, args.epochs, args.classes,
                                     rng.child_seed(cfg.seed, "online", args.scenario, args.classes),
                                     args.epoch_size, cfg.equilibrium)
    write_csv(Path(args.out_dir) / "online.csv", ["epoch", "rule", "efficiency_fraction"], trace.rows(), cfg.hash())
    print(" ".join(trace.labels))
    return {"metric": args.metric, "epochs": args.epochs, "labels": trace.labels}


HANDLERS = {
    "gen": cmd_gen, "metrics": cmd_metrics, "equilibrium": cmd_equilibrium, "deviation": cmd_deviation,
    "fit": cmd_fit, "study": cmd_study, "online": cmd_online,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 2
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    try:
        if args.command == "correlate":
            extra = cmd_correlate(args)
            write_manifest(args.out_dir, "correlate", 0, "", {"args": extra})
            return 0
        cfg = _config(args)
        extra = HANDLERS[args.command](args, cfg)
        if args.command != "study":
            write_manifest(args.out_dir, args.command, cfg.seed, cfg.hash(),
                           {"args": extra, "config": cfg.to_dict()})
        if getattr(args, "plot", False):
            from . import plots
            plots.render_dir(args.out_dir)
    except (ConfigError, equilibrium.EquilibriumError) as exc:
        print(f"mechforge: config error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - report and signal a runtime failure
        print(f"mechforge: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
