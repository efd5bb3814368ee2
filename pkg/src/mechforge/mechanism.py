"""Run the shared allocation rule and any set of payment rules on one instance."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

from .market import NULL, Instance
from .rules import Allocation, Rule, allocate, payments_from_discounts
from .wd import WdResult, feasible_set, report_values, reported_values_at, solve


@dataclass(frozen=True)
class Outcome:
    wd: WdResult
    reported: tuple[float, ...]  # reported value of each agent's assigned trade
    allocations: dict

    def discounts(self, rule: Rule) -> tuple[float, ...]:
        return self.allocations[rule].discounts

    def payments(self, rule: Rule) -> tuple[float, ...]:
        return payments_from_discounts(self.reported, self.discounts(rule))

    def residual(self, rule: Rule) -> bool:
        return self.allocations[rule].residual


def outcome_from(wd: WdResult, reported: Sequence[float], rules: Iterable[Rule]) -> Outcome:
    allocations: dict[Rule, Allocation] = {}
    for rule in rules:
        allocations[rule] = allocate(rule, wd.vcg_discounts, wd.trading, max(wd.surplus, 0.0))
    return Outcome(wd, tuple(reported), allocations)


def run(instance: Instance, reports=None, rules: Iterable[Rule] = tuple(Rule), exact: bool = False) -> Outcome:
    """Efficient trade on ``reports`` plus discounts under each rule.

    ``exact=True`` uses branch and bound; otherwise the cached feasible-set
    evaluator (same tie rule, same answer) is used.
    """
    values = report_values(instance, reports)
    wd = solve(instance, values) if exact else feasible_set(instance).solve(values)
    return outcome_from(wd, reported_values_at(values, wd.profile), rules)


def true_utility(instance: Instance, outcome: Outcome, rule: Rule, agent: int) -> float:
    """Agent's true value for its assigned trade minus what the rule charges it."""
    c = outcome.wd.profile[agent]
    value = 0.0 if c == NULL else instance.agents[agent].valuation.atoms[c].value
    return value - outcome.payments(rule)[agent]
