"""Profit of one agent misreporting the value of its winning trade.

The deviating agent reports ``rho`` times its true value on the atom it wins
at truth and withdraws every other atom; all other agents stay truthful.
Sellers scale their reserve magnitude by ``2 - rho`` so that ``rho < 1``
means shading in the agent's favour for both roles. Profit is normalized
by the agent's VCG discount at truth.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import generators, rng
from .market import BUYER, NULL, Instance
from .rules import Rule, allocate
from .wd import NEG_INF, feasible_set, report_values

VARIANTS = ("single", "expected", "conditional-gain", "conditional-loss")


def default_rho_grid(points: int = 41) -> np.ndarray:
    """``points`` evenly spaced report ratios on (0, 1], excluding 0."""
    return np.linspace(0.0, 1.0, points)[1:] if points > 1 else np.array([1.0])


RHO_GRID = default_rho_grid(41)


@dataclass(frozen=True)
class DeviationCurve:
    rule: Rule
    variant: str
    rho: tuple[float, ...]
    values: tuple[float, ...]  # nan where a conditional cell is empty
    counts: tuple[int, ...] = ()
    trades: tuple[bool, ...] = ()  # single curves: does the agent still trade at rho


def _misreport_factor(role: str, rho: float) -> float:
    return rho if role == BUYER else 2.0 - rho


def eligible(instance: Instance, agent: int) -> bool:
    wd = feasible_set(instance).solve()
    return wd.profile[agent] != NULL and wd.vcg_discounts[agent] > 0


def unilateral_curve(instance: Instance, agent: int, rule: Rule, rho_grid=RHO_GRID) -> DeviationCurve | None:
    """Normalized profit at each report ratio, or None if the agent is ineligible.

    An agent is eligible when it trades at truth with a positive VCG discount.
    """
    fs = feasible_set(instance)
    truth_values = report_values(instance)
    tab = fs.table(truth_values)
    truth = fs.solve_table(tab)
    c = truth.profile[agent]
    if c == NULL or truth.vcg_discounts[agent] <= 0:
        return None
    ag = instance.agents[agent]
    v_true = ag.valuation.atoms[c].value
    rhos = [float(r) for r in rho_grid]
    rows = np.full((len(rhos), tab.shape[1]), NEG_INF)
    rows[:, 0] = 0.0
    for g, rho in enumerate(rhos):
        rows[g, 1 + c] = v_true * _misreport_factor(ag.role, rho)
    values, trades = [], []
    for rho, row, wd in zip(rhos, rows, fs.solve_variants(tab, agent, rows)):
        if wd.profile[agent] == NULL:
            profit = 0.0
            trades.append(False)
        else:
            disc = allocate(rule, wd.vcg_discounts, wd.trading, max(wd.surplus, 0.0)).discounts[agent]
            payment = float(row[1 + c]) - disc
            profit = v_true - payment
            trades.append(True)
        values.append(float(profit / truth.vcg_discounts[agent]))
    return DeviationCurve(rule, "single", tuple(rhos), tuple(values), (), tuple(trades))


def truthful_profit(instance: Instance, agent: int, rule: Rule) -> float:
    """Normalized profit at truth, which equals discount over VCG discount."""
    wd = feasible_set(instance).solve()
    d = allocate(rule, wd.vcg_discounts, wd.trading, max(wd.surplus, 0.0)).discounts[agent]
    return d / wd.vcg_discounts[agent]


def expected_curves(config: generators.GeneratorConfig, rule: Rule, rho_grid=RHO_GRID,
                    n_instances: int = 1000, seed: int = 0) -> dict[str, DeviationCurve]:
    """Averages of single-agent curves over every eligible (instance, agent) pair.

    ``expected`` is the mean normalized profit. The conditional variants
    report the change against truthful profit, split by whether the agent
    still trades at that ratio (gain) or loses its trade (loss).
    """
    if n_instances < 100:
        raise ValueError("expected curves need at least 100 instances")
    rhos = tuple(float(r) for r in rho_grid)
    m = len(rhos)
    total, n_all = np.zeros(m), 0
    gain, n_gain = np.zeros(m), np.zeros(m, dtype=int)
    loss, n_loss = np.zeros(m), np.zeros(m, dtype=int)
    for j in range(n_instances):
        inst = generators.generate(config, rng.child_seed(seed, "deviation", j))
        for agent in range(inst.n_agents):
            curve = unilateral_curve(inst, agent, rule, rhos)
            if curve is None:
                continue
            base = truthful_profit(inst, agent, rule)
            vals = np.asarray(curve.values)
            won = np.asarray(curve.trades)
            total += vals
            n_all += 1
            gain += np.where(won, vals - base, 0.0)
            n_gain += won
            loss += np.where(won, 0.0, vals - base)
            n_loss += ~won

    def mean(acc, n):
        return tuple(float(a / c) if c else float("nan") for a, c in zip(acc, n))

    return {
        "expected": DeviationCurve(rule, "expected", rhos, mean(total, [n_all] * m), (n_all,) * m),
        "conditional-gain": DeviationCurve(rule, "conditional-gain", rhos, mean(gain, n_gain), tuple(int(x) for x in n_gain)),
        "conditional-loss": DeviationCurve(rule, "conditional-loss", rhos, mean(loss, n_loss), tuple(int(x) for x in n_loss)),
    }


def argmax_rho(curve: DeviationCurve) -> float:
    vals = np.asarray(curve.values)
    return curve.rho[int(np.nanargmax(vals))]
