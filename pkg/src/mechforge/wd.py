"""Winner determination: efficient trade, marginal economies, VCG discounts.

Tie rule shared by every solver here: let ``vmax`` be the best total value.
Among profiles whose value (summed in agent order) is at least
``vmax - TOL``, the lexicographically smallest assignment vector wins, with
the null trade ordered before atom 0. The all-null profile therefore wins
whenever nothing beats it by more than ``TOL``.

Reports are normalised to per-agent value lists aligned with the instance's
atoms (see :func:`report_values`); trade vectors always come from the
instance, since misreports only ever change values or withhold atoms.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .market import NULL, TOL, Instance, XorValuation, trading_agents

NEG_INF = float("-inf")


@dataclass(frozen=True)
class WdResult:
    profile: tuple[int, ...]
    surplus: float
    marginals: tuple[float, ...]
    vcg_discounts: tuple[float, ...]

    @property
    def trading(self) -> tuple[int, ...]:
        return trading_agents(self.profile)


def report_values(instance: Instance, reports=None) -> list[list[float]]:
    """Per-agent value lists aligned with the instance's atoms.

    ``reports`` is None (truthful), a sequence of XorValuations whose atoms
    are a subset of each agent's true atoms (matched by trade vector), or a
    sequence of value sequences already aligned. Atoms absent from a report
    get ``-inf`` so no solver will ever select them.
    """
    if reports is None:
        return [list(v.values) for v in instance.valuations]
    reports = list(reports)
    if len(reports) != instance.n_agents:
        raise ValueError("one report per agent required")
    out = []
    for agent, rep in zip(instance.agents, reports):
        atoms = agent.valuation.atoms
        if isinstance(rep, XorValuation):
            if tuple(a.trade for a in rep.atoms) == tuple(a.trade for a in atoms):
                out.append(list(rep.values))
                continue
            vals = [NEG_INF] * len(atoms)
            where = {a.trade: k for k, a in enumerate(atoms)}
            for a in rep.atoms:
                if a.trade not in where:
                    raise ValueError(f"agent {agent.id}: reported trade {a.trade} is not one of its atoms")
                vals[where[a.trade]] = a.value
        else:
            vals = [float(x) for x in rep]
            if len(vals) != len(atoms):
                raise ValueError(f"agent {agent.id}: expected {len(atoms)} values")
        out.append(vals)
    return out


def profile_value(profile: Sequence[int], values: Sequence[Sequence[float]]) -> float:
    # agent order from 0.0, matching market.total_value
    total = 0.0
    for vals, c in zip(values, profile):
        if c != NULL:
            total = total + vals[c]
    return total


class _Search:
    """Depth-first branch and bound over XOR choices."""

    def __init__(self, instance: Instance, values: list[list[float]], excluded: int | None = None):
        self.k = instance.n_goods
        self.n = instance.n_agents
        # per agent: list of (atom index, trade, value) for atoms actually bid
        self.options = []
        for i, agent in enumerate(instance.agents):
            opts = []
            if i != excluded:
                for a, (atom, v) in enumerate(zip(agent.valuation.atoms, values[i])):
                    if v != NEG_INF:
                        opts.append((a, atom.trade, v))
            self.options.append(opts)

    def _tables(self, order):
        n, k = len(order), self.k
        rem_best = [0.0] * (n + 1)
        rem_minflow = [[0] * k for _ in range(n + 1)]
        for d in range(n - 1, -1, -1):
            opts = self.options[order[d]]
            rem_best[d] = rem_best[d + 1] + max([0.0] + [v for _, _, v in opts])
            for j in range(k):
                rem_minflow[d][j] = rem_minflow[d + 1][j] + min([0] + [t[j] for _, t, _ in opts])
        return rem_best, rem_minflow

    def best(self) -> list[int]:
        """A maximising profile, searching agents by descending best atom value."""
        order = sorted(range(self.n), key=lambda i: (-max([0.0] + [v for _, _, v in self.options[i]]), i))
        rem_best, rem_minflow = self._tables(order)
        k = self.k
        best_val = [0.0]
        best_choice = [[NULL] * self.n]
        choice = [NULL] * self.n
        flow = [0] * k

        def dfs(d, partial):
            if partial + rem_best[d] <= best_val[0]:
                return
            minflow = rem_minflow[d]
            for j in range(k):
                if flow[j] + minflow[j] > 0:
                    return
            if d == self.n:
                best_val[0] = partial
                best_choice[0] = choice.copy()
                return
            i = order[d]
            for a, t, v in self.options[i]:
                for j in range(k):
                    flow[j] += t[j]
                choice[i] = a
                dfs(d + 1, partial + v)
                choice[i] = NULL
                for j in range(k):
                    flow[j] -= t[j]
            dfs(d + 1, partial)

        dfs(0, 0.0)
        return best_choice[0]

    def first_at_least(self, threshold: float) -> list[int] | None:
        """Lexicographically first feasible profile with agent-order value >= threshold."""
        rem_best, rem_minflow = self._tables(list(range(self.n)))
        k = self.k
        choice = [NULL] * self.n
        flow = [0] * k
        slack = 1e-12 * (1.0 + abs(threshold))

        def dfs(d, partial):
            if partial + rem_best[d] < threshold - slack:
                return None
            minflow = rem_minflow[d]
            for j in range(k):
                if flow[j] + minflow[j] > 0:
                    return None
            if d == self.n:
                return choice.copy() if partial >= threshold else None
            found = dfs(d + 1, partial)  # null sorts first
            if found is not None:
                return found
            for a, t, v in self.options[d]:
                for j in range(k):
                    flow[j] += t[j]
                choice[d] = a
                found = dfs(d + 1, partial + v)
                choice[d] = NULL
                for j in range(k):
                    flow[j] -= t[j]
                if found is not None:
                    return found
            return None

        return dfs(0, 0.0)


def _efficient(instance: Instance, values) -> tuple[tuple[int, ...], float]:
    search = _Search(instance, values)
    argbest = search.best()
    profile = search.first_at_least(profile_value(argbest, values) - TOL)
    if profile is None:  # rounding pushed the incumbent itself over the line
        profile = argbest
    return tuple(profile), profile_value(profile, values)


def _best_without(instance: Instance, values, i: int) -> float:
    return profile_value(_Search(instance, values, excluded=i).best(), values)


def efficient_trade(instance: Instance, reports=None) -> tuple[tuple[int, ...], float]:
    """Efficient feasible profile for ``reports`` and its total reported value."""
    return _efficient(instance, report_values(instance, reports))


def marginal_surpluses(instance: Instance, reports=None) -> tuple[float, ...]:
    """Optimal surplus of each economy with one agent removed."""
    values = report_values(instance, reports)
    return tuple(_best_without(instance, values, i) for i in range(instance.n_agents))


def _finish(profile, surplus, raw_marginals) -> WdResult:
    marginals = []
    for i, m in enumerate(raw_marginals):
        if profile[i] == NULL or m > surplus:
            # a null trader's removal leaves the optimum alone; m > surplus is tie slack
            m = surplus
        marginals.append(m)
    return WdResult(tuple(profile), surplus, tuple(marginals), tuple(surplus - m for m in marginals))


def solve(instance: Instance, reports=None) -> WdResult:
    """Efficient trade, marginal economies and VCG discounts by branch and bound."""
    values = report_values(instance, reports)
    profile, surplus = _efficient(instance, values)
    raw = [surplus if profile[i] == NULL else _best_without(instance, values, i)
           for i in range(instance.n_agents)]
    return _finish(profile, surplus, raw)


def vcg_discounts(instance: Instance, reports=None) -> tuple[float, ...]:
    return solve(instance, reports).vcg_discounts


def reported_values_at(values: Sequence[Sequence[float]], profile: Sequence[int]) -> tuple[float, ...]:
    return tuple(0.0 if c == NULL else vals[c] for vals, c in zip(values, profile))


def vcg_payments(reported: Sequence[float], discounts: Sequence[float]) -> tuple[float, ...]:
    """``reported[i]`` is agent i's reported value for its assigned trade."""
    return tuple(v - d for v, d in zip(reported, discounts))


# -- exhaustive reference ----------------------------------------------------

def exhaustive_trade(instance: Instance, reports=None) -> tuple[tuple[int, ...], float]:
    """Plain enumeration of every atom/null assignment (reference solver).

    Vectorised over the full cartesian product, so keep instances small.
    """
    values = report_values(instance, reports)
    n, k = instance.n_agents, instance.n_goods
    choices = [range(NULL, len(v)) for v in values]
    grid = np.array(list(itertools.product(*choices)), dtype=np.int64).reshape(-1, n)
    flow = np.zeros((len(grid), k), dtype=np.int64)
    total = np.zeros(len(grid))
    for i, agent in enumerate(instance.agents):
        trades = np.array([[0] * k] + [a.trade for a in agent.valuation.atoms], dtype=np.int64)
        vals = np.array([0.0] + values[i])
        flow += trades[grid[:, i] + 1]
        total = total + vals[grid[:, i] + 1]
    ok = (flow <= 0).all(axis=1) & (total > NEG_INF)
    vmax = total[ok].max()
    idx = int(np.flatnonzero(ok & (total >= vmax - TOL))[0])
    profile = tuple(int(c) for c in grid[idx])
    return profile, profile_value(profile, values)


def exhaustive_solve(instance: Instance, reports=None) -> WdResult:
    values = report_values(instance, reports)
    profile, surplus = exhaustive_trade(instance, values)
    raw = []
    for i in range(instance.n_agents):
        reduced = [v if j != i else [NEG_INF] * len(v) for j, v in enumerate(values)]
        raw.append(exhaustive_trade(instance, reduced)[1])
    return _finish(profile, surplus, raw)


# -- precomputed feasible set --------------------------------------------------

class FeasibleSet:
    """Every feasible profile of an instance, enumerated once in lexicographic order.

    Reports change only atom values, never trade vectors, so a simulation
    that re-solves one instance under many reports scores every feasible
    profile with a single gather-and-sum.
    """

    def __init__(self, instance: Instance):
        self.instance = instance
        n, k = instance.n_agents, instance.n_goods
        trades = [np.array([[0] * k] + [a.trade for a in ag.valuation.atoms], dtype=np.int64).reshape(-1, k)
                  for ag in instance.agents]
        low = np.array([t.min(axis=0) for t in trades]).reshape(n, k)
        # rem[i] = most supply agents i.. can still add
        rem = np.vstack([np.cumsum(low[::-1], axis=0)[::-1], np.zeros((1, k), dtype=np.int64)])
        rows = np.zeros((1, 0), dtype=np.int64)
        flow = np.zeros((1, k), dtype=np.int64)
        for i in range(n):
            m = len(trades[i])
            count = len(rows)
            rows = np.hstack([np.repeat(rows, m, axis=0), np.tile(np.arange(m), count)[:, None]])
            flow = np.repeat(flow, m, axis=0) + np.tile(trades[i], (count, 1))
            keep = ((flow + rem[i + 1]) <= 0).all(axis=1)
            rows, flow = rows[keep], flow[keep]
        self.index = rows.astype(np.int8)  # atom index + 1, with 0 for null
        self.width = max(len(t) for t in trades)
        self.null_masks = [rows[:, i] == 0 for i in range(n)]
        self._null_matrix = rows.T == 0

    def __len__(self):
        return len(self.index)

    def table(self, values) -> np.ndarray:
        tab = np.zeros((len(values), self.width))
        for i, v in enumerate(values):
            tab[i, 1:1 + len(v)] = v
        return tab

    def scores(self, values) -> np.ndarray:
        tab = values if isinstance(values, np.ndarray) else self.table(values)
        acc = np.zeros(len(self.index))
        for i in range(tab.shape[0]):
            acc = acc + tab[i, self.index[:, i]]
        return acc

    def solve(self, reports=None) -> WdResult:
        values = report_values(self.instance, reports)
        return self.solve_table(self.table(values))

    def solve_table(self, tab: np.ndarray) -> WdResult:
        """Solve from an (agents x (1 + atoms)) value table whose column 0 is the null trade."""
        acc = self.scores(tab)
        vmax = acc.max()
        idx = int(np.argmax(acc >= vmax - TOL))
        profile = tuple(int(c) - 1 for c in self.index[idx])
        surplus = float(acc[idx])
        raw = [surplus if c == NULL else float(acc[mask].max())
               for c, mask in zip(profile, self.null_masks)]
        return _finish(profile, surplus, raw)

    def solve_variants(self, tab: np.ndarray, agent: int, rows: np.ndarray) -> list[WdResult]:
        """Solve once per alternative value row of ``agent``, others fixed by ``tab``.

        Sums run in agent order exactly as in :meth:`scores`, so each result
        is bit-identical to ``solve_table`` on the substituted table.
        """
        rows = np.atleast_2d(np.asarray(rows, dtype=float))
        acc = np.zeros(len(self.index))
        for j in range(agent):
            acc = acc + tab[j, self.index[:, j]]
        acc = acc[None, :] + rows[:, self.index[:, agent]]
        for j in range(agent + 1, tab.shape[0]):
            acc = acc + tab[j, self.index[:, j]][None, :]
        vmax = acc.max(axis=1)
        first = np.argmax(acc >= (vmax - TOL)[:, None], axis=1)
        best_null = np.where(self._null_matrix[None, :, :], acc[:, None, :], NEG_INF).max(axis=2)
        out = []
        for g, idx in enumerate(first):
            profile = tuple(int(c) - 1 for c in self.index[idx])
            surplus = float(acc[g, idx])
            raw = [surplus if c == NULL else float(best_null[g, i]) for i, c in enumerate(profile)]
            out.append(_finish(profile, surplus, raw))
        return out

    def efficient_value(self, tab: np.ndarray, profile: Sequence[int]) -> float:
        return profile_value(profile, [row[1:] for row in tab])


def feasible_set(instance: Instance) -> FeasibleSet:
    fs = instance._cache.get("feasible")
    if fs is None:
        fs = FeasibleSet(instance)
        instance._cache["feasible"] = fs
    return fs


def lp_text(instance: Instance, reports=None) -> str:
    """The winner-determination integer program in CPLEX LP format."""
    values = report_values(instance, reports)
    terms, names = [], []
    for i, vals in enumerate(values):
        for a, v in enumerate(vals):
            if math.isfinite(v):
                terms.append(f"{v!r} x_{i}_{a}")
                names.append((i, a))
    lines = ["\\ winner determination with free disposal", "Maximize",
             " surplus: " + (" + ".join(terms).replace("+ -", "- ") or "0"), "Subject To"]
    for j in range(instance.n_goods):
        parts = [f"{instance.agents[i].valuation.atoms[a].trade[j]:+d} x_{i}_{a}"
                 for i, a in names if instance.agents[i].valuation.atoms[a].trade[j]]
        if parts:
            lines.append(f" good_{j}: " + " ".join(parts) + " <= 0")
    for i in range(instance.n_agents):
        own = [f"x_{i}_{a}" for j, a in names if j == i]
        if own:
            lines.append(f" xor_{i}: " + " + ".join(own) + " <= 1")
    lines.append("Binary")
    lines.extend(f" x_{i}_{a}" for i, a in names)
    lines.append("End")
    return "\n".join(lines) + "\n"
