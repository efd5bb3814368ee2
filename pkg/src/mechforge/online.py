"""Epoch-based online choice of a payment rule from observed bids.

One rule is deployed per epoch and agents bid at that rule's cached
shave-factor equilibrium. From the bids alone the selector recomputes the
efficient trade and VCG discounts (the reference), applies every candidate
rule counterfactually to the same bids and switches to the candidate with
the lowest metric. Cycles between rules are broken by re-evaluating the
rules on the cycle using all data gathered while any of them was deployed.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import generators, metrics, rng
from .equilibrium import EquilibriumResult, IterationParams, instance_efficiency, iterate_equilibrium, \
    shaved_values
from .mechanism import outcome_from
from .rules import BALANCED, Rule
from .wd import feasible_set, reported_values_at

CANDIDATES = BALANCED + (Rule.NO_DISCOUNT,)
SELECTION_METRICS = ("KLnorm", "L1norm", "L2norm", "Linfnorm")
EPOCH_SIZE = 100


class EquilibriumCache:
    """Equilibria per (rule, K), computed once on first use."""

    def __init__(self, config: generators.GeneratorConfig, params: IterationParams = IterationParams(),
                 seed: int = 0):
        self.config = config
        self.params = params
        self.seed = seed
        self._store: dict = {}

    def get(self, rule: Rule, k: int) -> EquilibriumResult:
        key = (rule, k)
        if key not in self._store:
            self._store[key] = iterate_equilibrium(self.config, rule, k, self.params,
                                                   rng.child_seed(self.seed, "online-equilibrium"))
        return self._store[key]


@dataclass
class EpochRecord:
    epoch: int
    rule: Rule
    # per candidate: InstancePayoffs at the bids (reference = VCG on bids)
    payoffs: dict
    efficiency: float
    ideal_efficiency: float
    selected: Rule | None = None
    scores: dict = field(default_factory=dict)

    @property
    def observed(self) -> list:
        return self.payoffs[self.rule]

    @property
    def efficiency_fraction(self) -> float:
        if self.ideal_efficiency <= 0:
            return float("nan")
        return self.efficiency / self.ideal_efficiency


@dataclass
class SelectorState:
    history: dict = field(default_factory=dict)  # rule -> list of EpochRecord
    visits: list = field(default_factory=list)
    recommendation: dict = field(default_factory=dict)  # rule -> choice its own data made last
    candidates: tuple = CANDIDATES

    def add(self, record: EpochRecord) -> None:
        self.history.setdefault(record.rule, []).append(record)
        self.visits.append(record.rule)

    def data(self, rules) -> dict:
        """Candidate payoff records pooled over every epoch in which one of ``rules`` ran."""
        pooled = {c: [] for c in self.candidates}
        for r in rules:
            for rec in self.history.get(r, []):
                for c in self.candidates:
                    pooled[c].extend(rec.payoffs[c])
        return pooled


def run_epoch(config: generators.GeneratorConfig, rule: Rule, cache: EquilibriumCache, k: int = 1,
              epoch: int = 0, epoch_size: int = EPOCH_SIZE, seed: int = 0,
              candidates=CANDIDATES, ideal: Rule = Rule.SMALL) -> EpochRecord:
    """Deploy ``rule`` for one epoch and record counterfactual payoffs of every candidate."""
    profile = cache.get(rule, k).profile
    ideal_profile = cache.get(ideal, k).profile
    payoffs = {c: [] for c in candidates}
    effs, ideal_effs = [], []
    for j in range(epoch_size):
        inst = generators.generate(config, rng.child_seed(seed, "online", epoch, j))
        bids = shaved_values(inst, profile.alphas, profile.boundaries)
        fs = feasible_set(inst)
        wd = fs.solve_table(fs.table(bids))
        oc = outcome_from(wd, reported_values_at(bids, wd.profile), candidates)
        for c in candidates:
            rec = metrics.instance_payoffs(oc, c, j)
            if rec is not None:
                payoffs[c].append(rec)
        eff = instance_efficiency(inst, bids)
        if eff is not None:
            effs.append(eff)
            ideal_effs.append(instance_efficiency(inst, shaved_values(inst, ideal_profile.alphas,
                                                                      ideal_profile.boundaries)))
        inst._cache.clear()
    mean = float(np.mean(effs)) if effs else 1.0
    ideal_mean = float(np.mean(ideal_effs)) if ideal_effs else 1.0
    return EpochRecord(epoch, rule, payoffs, mean, ideal_mean)


def _argmin(scores: dict, order) -> Rule:
    # nan (no data) never wins; ties go to the earlier rule in ``order``
    best, best_v = None, None
    for r in order:
        v = scores.get(r)
        if v is None or np.isnan(v):
            continue
        if best is None or v < best_v:
            best, best_v = r, v
    return best if best is not None else order[0]


def _score(pooled: dict, rules, metric: str) -> dict:
    return {r: metrics.metric_value(metric, pooled[r]) for r in rules}


def _cycle(state: SelectorState, current: Rule, choice: Rule) -> list | None:
    """Rules on the recommendation chain from ``choice`` back to ``current``, if it closes."""
    chain = [current, choice]
    seen = {current, choice}
    r = choice
    while r in state.recommendation:
        nxt = state.recommendation[r]
        if nxt == current:
            return chain
        if nxt in seen:
            return None
        chain.append(nxt)
        seen.add(nxt)
        r = nxt
    return None


def evaluate_and_select(state: SelectorState, metric: str = "KLnorm") -> Rule:
    """Next rule to deploy given everything observed while the current rule ran."""
    if not state.visits:
        raise ValueError("no epoch recorded yet")
    current = state.visits[-1]
    order = tuple(state.candidates)
    if len(order) == 1:
        return order[0]
    scores = _score(state.data([current]), order, metric)
    choice = _argmin(scores, order)
    state.recommendation[current] = choice
    state.history[current][-1].scores = scores
    if choice != current and choice in state.history:
        cycle = _cycle(state, current, choice)
        if cycle is not None:
            merged = _score(state.data(cycle), cycle, metric)
            choice = _argmin(merged, [r for r in order if r in cycle])
    state.history[current][-1].selected = choice
    return choice


@dataclass
class OnlineTrace:
    metric: str
    k: int
    epochs: list  # EpochRecord per epoch, in order

    @property
    def labels(self) -> list[str]:
        return [rec.rule.label for rec in self.epochs]

    def rows(self) -> list[tuple]:
        return [(rec.epoch, rec.rule.label, rec.efficiency_fraction) for rec in self.epochs]


def run_online_search(config: generators.GeneratorConfig, metric: str = "KLnorm", n_epochs: int = 20,
                      k: int = 1, seed: int = 0, epoch_size: int = EPOCH_SIZE,
                      params: IterationParams = IterationParams(), cache: EquilibriumCache | None = None,
                      start: Rule = Rule.NO_DISCOUNT) -> OnlineTrace:
    """Alternate deployment and selection for ``n_epochs`` epochs starting from No Discount."""
    if metric not in SELECTION_METRICS:
        raise ValueError(f"selection metric must be one of {SELECTION_METRICS}")
    cache = cache or EquilibriumCache(config, params, seed)
    state = SelectorState()
    records = []
    rule = start
    for epoch in range(n_epochs):
        rec = run_epoch(config, rule, cache, k, epoch, epoch_size, seed)
        state.add(rec)
        records.append(rec)
        rule = evaluate_and_select(state, metric)
    return OnlineTrace(metric, k, records)
