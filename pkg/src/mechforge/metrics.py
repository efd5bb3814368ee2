"""Payoff distributions and distance metrics between a rule and VCG.

Payoffs are evaluated at the reports handed in (truthful reports for the
at-truth metrics, bids for in-equilibrium ones) and restricted to agents
that trade in the efficient profile of those reports. An agent's payoff at
its reports equals its discount, so VCG payoffs are the VCG discounts.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from . import mechanism
from .rules import Rule

METRICS = ("KLnorm", "KL", "L1", "L1norm", "L2", "L2norm", "Linf", "Linfnorm")
NORMALIZED = ("KLnorm", "L1norm", "L2norm", "Linfnorm")
N_BINS = 50
PSEUDO_COUNT = 1.0


class MetricError(ValueError):
    pass


@dataclass(frozen=True)
class PayoffSample:
    instance: int
    agent: int
    payoff: float
    normalized: float
    active: bool = True


@dataclass(frozen=True)
class InstancePayoffs:
    """Active agents' payoffs in one instance, under VCG and under one rule."""
    instance: int
    surplus: float
    agents: tuple[int, ...]
    reference: tuple[float, ...]
    mechanism: tuple[float, ...]
    residual: bool = False


@dataclass(frozen=True)
class EmpiricalDistribution:
    edges: np.ndarray  # n_bins + 1 regular edges; one overflow bin follows
    probs: np.ndarray
    eps: float
    count: int

    def same_binning(self, other: "EmpiricalDistribution") -> bool:
        return self.eps == other.eps and np.array_equal(self.edges, other.edges)


def instance_payoffs(outcome: mechanism.Outcome, rule: Rule, instance_id: int = 0) -> InstancePayoffs | None:
    wd = outcome.wd
    if not wd.trading or wd.surplus <= 0:
        return None
    ref = tuple(wd.vcg_discounts[i] for i in wd.trading)
    mech = tuple(outcome.discounts(rule)[i] for i in wd.trading)
    return InstancePayoffs(instance_id, wd.surplus, wd.trading, ref, mech, outcome.residual(rule))


def collect(instances, reports_per_instance=None, rules: Iterable[Rule] = tuple(Rule)) -> dict:
    """Per-rule lists of :class:`InstancePayoffs`; instances without trade are skipped."""
    rules = tuple(rules)
    out = {r: [] for r in rules}
    for k, inst in enumerate(instances):
        reports = None if reports_per_instance is None else reports_per_instance[k]
        oc = mechanism.run(inst, reports, rules)
        for r in rules:
            rec = instance_payoffs(oc, r, k)
            if rec is not None:
                out[r].append(rec)
    return out


def collect_payoffs(instances, reports_per_instance, rule: Rule) -> list[PayoffSample]:
    """Payoff samples of active agents under ``rule``."""
    samples = []
    for rec in collect(instances, reports_per_instance, (rule,))[rule]:
        for agent, pay in zip(rec.agents, rec.mechanism):
            samples.append(PayoffSample(rec.instance, agent, pay, pay / rec.surplus))
    return samples


def samples_from(records: Sequence[InstancePayoffs], which: str = "mechanism", normalized: bool = True) -> np.ndarray:
    vals = []
    for rec in records:
        scale = rec.surplus if normalized else 1.0
        vals.extend(x / scale for x in getattr(rec, which))
    return np.asarray(vals, dtype=float)


def build_histogram(values, n_bins: int = N_BINS, eps: float = PSEUDO_COUNT, upper: float = 1.0) -> EmpiricalDistribution:
    """Equal-width bins on [0, upper] plus one overflow bin, smoothed by a pseudo-count per bin."""
    if n_bins < 2:
        raise MetricError("need at least two bins")
    if eps <= 0:
        raise MetricError("smoothing pseudo-count must be positive")
    values = np.asarray(values, dtype=float)
    if values.size == 0:
        raise MetricError("no samples")
    edges = np.linspace(0.0, upper, n_bins + 1)
    counts = np.zeros(n_bins + 1)
    slack = 1e-12 * max(1.0, upper)
    over = values > upper + slack
    inside = np.clip(values[~over], 0.0, upper)
    idx = np.minimum((inside / upper * n_bins).astype(int), n_bins - 1)
    np.add.at(counts, idx, 1.0)
    counts[n_bins] = over.sum()
    smoothed = counts + eps
    return EmpiricalDistribution(edges, smoothed / smoothed.sum(), float(eps), int(values.size))


def kl_divergence(ref: EmpiricalDistribution, other: EmpiricalDistribution) -> float:
    """sum_b ref(b) log(ref(b) / other(b)), natural log."""
    if not ref.same_binning(other):
        raise MetricError("histograms must share edges and smoothing")
    p, q = ref.probs, other.probs
    return float(max(0.0, np.sum(p * np.log(p / q))))


def klnorm_metric(reference, mechanism_values, n_bins: int = N_BINS, eps: float = PSEUDO_COUNT) -> float:
    """KL distance between normalized-payoff histograms (values already divided by surplus)."""
    return kl_divergence(build_histogram(reference, n_bins, eps), build_histogram(mechanism_values, n_bins, eps))


def kl_metric(reference, mechanism_values, n_bins: int = N_BINS, eps: float = PSEUDO_COUNT) -> float:
    """Unnormalized variant: raw payoffs binned over the pooled range."""
    ref = np.asarray(reference, dtype=float)
    mech = np.asarray(mechanism_values, dtype=float)
    if ref.size == 0 or mech.size == 0:
        raise MetricError("no samples")
    upper = float(max(ref.max(), mech.max()))
    if upper <= 0:
        upper = 1.0
    return kl_divergence(build_histogram(ref, n_bins, eps, upper), build_histogram(mech, n_bins, eps, upper))


def _norm(diff: np.ndarray, p) -> float:
    if p in (math.inf, "inf"):
        return float(np.abs(diff).max())
    return float(np.sum(np.abs(diff) ** p) ** (1.0 / p))


def lp_distance(rec: InstancePayoffs, p, normalized: bool) -> float:
    diff = np.asarray(rec.reference) - np.asarray(rec.mechanism)
    if normalized:
        diff = diff / rec.surplus
    return _norm(diff, p)


def lp_metric(p, normalized: bool, records: Sequence[InstancePayoffs]) -> float:
    """Mean over instances of the Lp distance between VCG and rule payoffs of active agents."""
    if not records:
        return float("nan")
    return float(np.mean([lp_distance(r, p, normalized) for r in records]))


def all_metrics(records: Sequence[InstancePayoffs], n_bins: int = N_BINS, eps: float = PSEUDO_COUNT) -> dict:
    if not records:
        return {m: float("nan") for m in METRICS}
    ref_n, mech_n = samples_from(records, "reference"), samples_from(records, "mechanism")
    ref_r = samples_from(records, "reference", False)
    mech_r = samples_from(records, "mechanism", False)
    return {
        "KLnorm": klnorm_metric(ref_n, mech_n, n_bins, eps),
        "KL": kl_metric(ref_r, mech_r, n_bins, eps),
        "L1": lp_metric(1, False, records),
        "L1norm": lp_metric(1, True, records),
        "L2": lp_metric(2, False, records),
        "L2norm": lp_metric(2, True, records),
        "Linf": lp_metric(math.inf, False, records),
        "Linfnorm": lp_metric(math.inf, True, records),
    }


def metric_table(instances, rules: Iterable[Rule], reports_per_instance=None,
                 n_bins: int = N_BINS, eps: float = PSEUDO_COUNT) -> dict:
    """{rule: {metric: value}} evaluated on the given instances and reports."""
    rules = tuple(rules)
    data = collect(instances, reports_per_instance, rules)
    return {r: all_metrics(data[r], n_bins, eps) for r in rules}


def metric_value(name: str, records: Sequence[InstancePayoffs], n_bins: int = N_BINS,
                 eps: float = PSEUDO_COUNT) -> float:
    """One named metric; cheaper than :func:`all_metrics` when only one is needed."""
    if name not in METRICS:
        raise MetricError(f"unknown metric {name!r}")
    if not records:
        return float("nan")
    if name == "KLnorm":
        return klnorm_metric(samples_from(records, "reference"), samples_from(records, "mechanism"), n_bins, eps)
    if name == "KL":
        return kl_metric(samples_from(records, "reference", False), samples_from(records, "mechanism", False),
                         n_bins, eps)
    p = {"L1": 1, "L2": 2, "Linf": math.inf}[name.replace("norm", "")]
    return lp_metric(p, name.endswith("norm"), records)
