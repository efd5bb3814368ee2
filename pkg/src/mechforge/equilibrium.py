"""Shave-factor equilibria found by damped iterated best response.

Agents report a scaled copy of their valuation: buyers ``(1 - a) v`` and
sellers ``(1 + a) v``. Agents are grouped into K classes by the 95th
percentile of their absolute atom values, and every agent in a class uses
the same shave factor. Each iteration draws fresh instances, computes every
agent's ex-post best response on a grid, averages per class and moves the
class factors part of the way toward that average.
"""
from __future__ import annotations

import bisect
from dataclasses import dataclass, field

import numpy as np

from . import generators, rng
from .market import BUYER, NULL, Instance, XorValuation
from .rules import Rule, allocate
from .wd import WdResult, feasible_set, report_values

MAX_CLASSES = 3
BR_TOL = 1e-9


class EquilibriumError(ValueError):
    pass


@dataclass(frozen=True)
class IterationParams:
    theta: float = 0.5
    kappa: float = 0.001
    grid_points: int = 10
    instances_per_iteration: int = 200
    max_iterations: int = 100
    initial_span: tuple[float, float] = (0.0, 0.9)

    def __post_init__(self):
        if not 0.0 < self.theta < 1.0:
            raise EquilibriumError("theta must lie in (0, 1)")
        if self.kappa <= 0:
            raise EquilibriumError("kappa must be positive")
        if self.grid_points < 2:
            raise EquilibriumError("need at least two grid points")
        if self.instances_per_iteration < 1 or self.max_iterations < 1:
            raise EquilibriumError("instance and iteration counts must be positive")
        lo, hi = self.initial_span
        if not 0.0 <= lo <= hi <= 1.0:
            raise EquilibriumError("initial span must lie inside [0, 1]")

    @classmethod
    def from_dict(cls, data: dict) -> "IterationParams":
        data = dict(data)
        if "initial_span" in data:
            data["initial_span"] = tuple(float(x) for x in data["initial_span"])
        return cls(**data)


@dataclass(frozen=True)
class ShaveProfile:
    alphas: tuple[float, ...]
    boundaries: tuple[float, ...] = ()

    def __post_init__(self):
        if len(self.alphas) != len(self.boundaries) + 1:
            raise EquilibriumError("need one shave factor per class")
        if any(not 0.0 <= a <= 1.0 for a in self.alphas):
            raise EquilibriumError("shave factors must lie in [0, 1]")
        if list(self.boundaries) != sorted(self.boundaries):
            raise EquilibriumError("class boundaries must be sorted")

    @property
    def k(self) -> int:
        return len(self.alphas)

    @property
    def mean(self) -> float:
        return float(np.mean(self.alphas))


@dataclass
class EquilibriumResult:
    rule: Rule
    profile: ShaveProfile
    converged: bool
    iterations: int
    efficiency: float = float("nan")  # fraction in [0, 1]
    trace: list = field(default_factory=list)

    @property
    def alphas(self) -> tuple[float, ...]:
        return self.profile.alphas

    @property
    def mean_shave(self) -> float:
        return self.profile.mean


def apply_shave(valuation: XorValuation, alpha: float) -> XorValuation:
    """Buyers scale values by (1 - alpha), sellers by (1 + alpha)."""
    if not 0.0 <= alpha <= 1.0:
        raise EquilibriumError("alpha must lie in [0, 1]")
    return valuation.scaled(shave_factor(valuation.role, alpha))


def shave_factor(role: str, alpha: float) -> float:
    return 1.0 - alpha if role == BUYER else 1.0 + alpha


def valuation_statistic(valuation: XorValuation) -> float:
    return float(np.percentile(np.abs(valuation.values), 95))


def build_class_reference(config: generators.GeneratorConfig, n_samples: int, k: int, seed: int = 0) -> tuple[float, ...]:
    """Cut points splitting the 95th-percentile statistic of fresh agents into k equal-mass classes."""
    if k < 1 or k > MAX_CLASSES:
        raise EquilibriumError(f"K must be in 1..{MAX_CLASSES}")
    if n_samples < 300:
        raise EquilibriumError("class reference needs at least 300 sampled agents")
    if k == 1:
        return ()
    stats: list[float] = []
    j = 0
    while len(stats) < n_samples:
        inst = generators.generate(config, rng.child_seed(seed, "class-reference", j))
        stats.extend(valuation_statistic(a.valuation) for a in inst.agents)
        j += 1
    return boundaries_from(stats[:n_samples], k)


def boundaries_from(stats, k: int) -> tuple[float, ...]:
    qs = [m / k for m in range(1, k)]
    return tuple(float(x) for x in np.quantile(np.asarray(stats, dtype=float), qs))


def classify_agent(valuation: XorValuation, boundaries) -> int:
    """Class index of the agent; a statistic equal to a boundary goes to the lower class."""
    return bisect.bisect_left(list(boundaries), valuation_statistic(valuation))


def agent_classes(instance: Instance, boundaries) -> list[int]:
    return [classify_agent(a.valuation, boundaries) for a in instance.agents]


def shaved_values(instance: Instance, alphas, boundaries=()) -> list[list[float]]:
    """Per-agent reported value lists when every class plays its shave factor."""
    classes = agent_classes(instance, boundaries)
    return [[v * shave_factor(a.role, alphas[c]) for v in a.valuation.values]
            for a, c in zip(instance.agents, classes)]


def _utility(wd: WdResult, rule: Rule, agent: int, true_values, reported_values) -> float:
    c = wd.profile[agent]
    if c == NULL:
        return 0.0
    d = allocate(rule, wd.vcg_discounts, wd.trading, max(wd.surplus, 0.0)).discounts[agent]
    return true_values[c] - (reported_values[c] - d)


def best_response_alpha(instance: Instance, agent: int, opponents: ShaveProfile, rule: Rule, grid) -> float:
    """Grid shave factor maximizing the agent's realized utility; ties go to the smaller factor.

    Opponents (and the agent's own class, which does not matter here) play
    the class factors of ``opponents``.
    """
    values = shaved_values(instance, opponents.alphas, opponents.boundaries)
    return _best_responses(instance, values, rule, {agent: grid})[agent]


def _best_responses(instance: Instance, values, rule: Rule, grids: dict) -> dict:
    fs = feasible_set(instance)
    tab = fs.table(values)
    out = {}
    for i, grid in grids.items():
        ag = instance.agents[i]
        truth = ag.valuation.values
        grid = sorted(float(a) for a in grid)
        rows = np.repeat(tab[i:i + 1], len(grid), axis=0)
        reported = []
        for g, alpha in enumerate(grid):
            vals = [v * shave_factor(ag.role, alpha) for v in truth]
            rows[g, 1:1 + len(vals)] = vals
            reported.append(vals)
        results = fs.solve_variants(tab, i, rows)
        best_alpha, best_u = grid[0], None
        for alpha, wd, rep in zip(grid, results, reported):
            u = _utility(wd, rule, i, truth, rep)
            if best_u is None or u > best_u + BR_TOL:
                best_alpha, best_u = alpha, u
        out[i] = best_alpha
    return out


def _grid(center: float, half: float, points: int) -> np.ndarray:
    lo, hi = max(0.0, center - half), min(1.0, center + half)
    return np.linspace(lo, hi, points)


def iterate_equilibrium(config: generators.GeneratorConfig, rule: Rule, k: int = 1,
                        params: IterationParams = IterationParams(), seed: int = 0,
                        boundaries=None, class_samples: int = 1000) -> EquilibriumResult:
    """Damped iterated best response over per-class shave factors.

    Args:
        config: generator for the fresh instances drawn each iteration
        rule: payment rule the agents respond to
        k: number of valuation classes (1 to 3)
        params: damping, stopping tolerance, grid size and budgets
        seed: root seed; instance draws use named child streams
        boundaries: class cut points; sampled from the generator when None
        class_samples: agents sampled for the class reference

    Returns:
        EquilibriumResult with the final profile, convergence flag and trace.
        Efficiency is left unset; see :func:`measure_equilibrium`.
    """
    if boundaries is None:
        boundaries = build_class_reference(config, class_samples, k, seed)
    boundaries = tuple(boundaries)
    if len(boundaries) != k - 1:
        raise EquilibriumError("boundary count must be K - 1")
    alpha_hat = np.zeros(k)
    grids = [np.linspace(*params.initial_span, params.grid_points) for _ in range(k)]
    trace = []
    converged = False
    it = 0
    for it in range(1, params.max_iterations + 1):
        sums, counts = np.zeros(k), np.zeros(k)
        for j in range(params.instances_per_iteration):
            inst = generators.generate(config, rng.child_seed(seed, "equilibrium", rule.value, k, it, j))
            classes = agent_classes(inst, boundaries)
            values = [[v * shave_factor(a.role, alpha_hat[c]) for v in a.valuation.values]
                      for a, c in zip(inst.agents, classes)]
            br = _best_responses(inst, values, rule, {i: grids[c] for i, c in enumerate(classes)})
            for i, c in enumerate(classes):
                sums[c] += br[i]
                counts[c] += 1
        alpha_bar = np.where(counts > 0, sums / np.maximum(counts, 1), alpha_hat)
        error = np.abs(alpha_hat - alpha_bar)
        updated = np.clip(params.theta * alpha_hat + (1.0 - params.theta) * alpha_bar, 0.0, 1.0)
        trace.append({
            "iteration": it,
            "alpha_hat": [float(a) for a in alpha_hat],
            "alpha_bar": [float(a) for a in alpha_bar],
            "error": float(error.max()),
            "grids": [[float(x) for x in g] for g in grids],
        })
        alpha_hat = updated
        if error.max() < params.kappa:
            converged = True
            break
        grids = [_grid(alpha_hat[c], error[c], params.grid_points) for c in range(k)]
    profile = ShaveProfile(tuple(float(a) for a in alpha_hat), boundaries)
    return EquilibriumResult(rule, profile, converged, it, trace=trace)


def instance_efficiency(instance: Instance, bids) -> float | None:
    """True value of the trade chosen on ``bids`` over the best true value; None when that is 0."""
    fs = feasible_set(instance)
    truth = fs.solve_table(fs.table(report_values(instance)))
    if truth.surplus <= 0:
        return None
    chosen = fs.solve_table(fs.table(bids)).profile
    realized = fs.efficient_value(fs.table(report_values(instance)), chosen)
    return realized / truth.surplus


def measure_equilibrium(config: generators.GeneratorConfig, rule: Rule, profile: ShaveProfile,
                        n_instances: int = 200, seed: int = 0) -> tuple[float, float]:
    """(mean shave %, efficiency %) of a shave profile on fresh instances."""
    ratios = []
    for j in range(n_instances):
        inst = generators.generate(config, rng.child_seed(seed, "measure", rule.value, profile.k, j))
        eff = instance_efficiency(inst, shaved_values(inst, profile.alphas, profile.boundaries))
        if eff is not None:
            ratios.append(eff)
    efficiency = float(np.mean(ratios)) if ratios else 1.0
    return 100.0 * profile.mean, 100.0 * efficiency


def solve_equilibrium(config: generators.GeneratorConfig, rule: Rule, k: int = 1,
                      params: IterationParams = IterationParams(), seed: int = 0,
                      measure_instances: int | None = None) -> EquilibriumResult:
    """Iterate to an equilibrium and attach its efficiency."""
    result = iterate_equilibrium(config, rule, k, params, seed)
    n = params.instances_per_iteration if measure_instances is None else measure_instances
    _, eff = measure_equilibrium(config, rule, result.profile, n, seed)
    result.efficiency = eff / 100.0
    return result
