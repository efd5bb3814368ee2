"""Random exchange instances for the Decay, Uniform and Super scenarios.

Goods are first handed out to sellers (each seller holds one unit of every
good in its endowment) and, symmetrically, buyers receive demand sets.
Bundles are then drawn inside those sets and priced per scenario. Sellers
get the same magnitudes as buyers, negated into reserve values.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

import numpy as np

from .market import BUYER, SELLER, Agent, Atom, Instance, XorValuation

SCENARIOS = ("decay", "uniform", "super")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class GeneratorConfig:
    scenario: str = "super"
    n_goods: int = 4
    n_buyers: int = 3
    n_sellers: int = 3
    atoms_per_agent: int = 2
    endowment_size: int = 2
    demand_size: int | None = None  # defaults to endowment_size
    common_range: tuple[float, float] = (0.0, 1.0)
    private_range: tuple[float, float] = (0.0, 1.0)
    beta: float = 0.5
    gamma: float = 1.5
    decay_prob: float = 0.75
    v_max: float = 1.0

    def __post_init__(self):
        if self.scenario not in SCENARIOS:
            raise ConfigError(f"unknown scenario {self.scenario!r}")
        for name in ("n_goods", "n_buyers", "n_sellers", "atoms_per_agent", "endowment_size"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        if self.demand_size is not None and not 1 <= self.demand_size <= self.n_goods:
            raise ConfigError("demand_size must lie in [1, n_goods]")
        if self.endowment_size > self.n_goods:
            raise ConfigError("endowment_size exceeds n_goods")
        if self.n_sellers * self.endowment_size < self.n_goods:
            raise ConfigError("seller endowments cannot cover every good")
        if not 0.0 <= self.beta <= 1.0:
            raise ConfigError("beta must lie in [0, 1]")
        if not self.gamma > 1.0:
            raise ConfigError("gamma must exceed 1")
        if not 0.0 <= self.decay_prob < 1.0:
            raise ConfigError("decay_prob must lie in [0, 1)")
        if self.v_max <= 0:
            raise ConfigError("v_max must be positive")
        for name in ("common_range", "private_range"):
            lo, hi = getattr(self, name)
            if lo < 0 or hi < lo:
                raise ConfigError(f"{name} must be a nonempty interval with lo >= 0")

    @property
    def demand(self) -> int:
        return self.endowment_size if self.demand_size is None else self.demand_size

    @classmethod
    def from_dict(cls, data: dict) -> "GeneratorConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown generator keys: {sorted(unknown)}")
        data = dict(data)
        for name in ("common_range", "private_range"):
            if name in data:
                data[name] = tuple(float(x) for x in data[name])
        return cls(**data)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["common_range"] = list(self.common_range)
        d["private_range"] = list(self.private_range)
        return d

    def with_scenario(self, scenario: str) -> "GeneratorConfig":
        return replace(self, scenario=scenario)


def load_config(path) -> GeneratorConfig:
    return GeneratorConfig.from_dict(json.loads(Path(path).read_text()))


def _spread_sets(rng: np.random.Generator, n_goods: int, n_agents: int, size: int) -> list[tuple[int, ...]]:
    """Draw ``size`` distinct goods per agent, covering every good when possible."""
    uncovered = list(rng.permutation(n_goods))
    sets = []
    for _ in range(n_agents):
        chosen = uncovered[:size]
        uncovered = uncovered[size:]
        if len(chosen) < size:
            rest = [g for g in rng.permutation(n_goods) if g not in chosen]
            chosen = chosen + rest[:size - len(chosen)]
        sets.append(tuple(sorted(int(g) for g in chosen)))
    return sets


def _decay_bundle(rng, goods, prob):
    pool = list(rng.permutation(goods))
    bundle = [pool.pop()]
    while pool and rng.random() < prob:
        bundle.append(pool.pop())
    return bundle


def _uniform_bundle(rng, goods):
    size = int(rng.integers(1, len(goods) + 1))
    return list(rng.choice(goods, size=size, replace=False))


def _super_bundle(rng, goods, first):
    if first:
        return list(goods)
    mask = rng.random(len(goods)) < 0.5
    if not mask.any():
        mask[rng.integers(len(goods))] = True
    return [g for g, m in zip(goods, mask) if m]


def _draw_bundles(rng, goods, count, draw) -> list[frozenset]:
    # distinct bundles; a set of size s has only 2^s - 1 of them
    limit = min(count, 2 ** len(goods) - 1)
    found: list[frozenset] = []
    attempts = 0
    while len(found) < limit and attempts < 50 * count:
        b = frozenset(int(g) for g in draw(len(found)))
        attempts += 1
        if b not in found:
            found.append(b)
    return found


def _trade(bundle, n_goods, sign) -> tuple[int, ...]:
    return tuple(sign if g in bundle else 0 for g in range(n_goods))


def _assemble(config, seed, per_agent, rng) -> Instance:
    """``per_agent(rng, agent_index, role, goods)`` returns a list of (bundle, magnitude)."""
    endow = _spread_sets(rng, config.n_goods, config.n_sellers, config.endowment_size)
    demand = _spread_sets(rng, config.n_goods, config.n_buyers, config.demand)
    roles = [SELLER] * config.n_sellers + [BUYER] * config.n_buyers
    sets = endow + demand
    agents = []
    for idx, (role, goods) in enumerate(zip(roles, sets)):
        sign = 1 if role == BUYER else -1
        atoms = tuple(
            Atom(_trade(bundle, config.n_goods, sign), float(sign * mag))
            for bundle, mag in per_agent(rng, idx, role, goods)
        )
        agents.append(Agent(idx, role, goods, XorValuation(role, atoms)))
    return Instance(config.n_goods, tuple(agents), int(seed), config.scenario)


def _positive(x: float) -> float:
    # magnitudes must be strictly positive for the sign invariants
    return max(float(x), 1e-12)


def gen_super(config: GeneratorConfig, seed: int) -> Instance:
    if config.scenario != "super":
        raise ConfigError("gen_super needs scenario 'super'")
    rng = np.random.default_rng(seed)
    common = rng.uniform(*config.common_range, size=config.n_goods)

    def per_agent(rng, idx, role, goods):
        private = rng.uniform(*config.private_range, size=config.n_goods)
        w = config.beta * private + (1.0 - config.beta) * common
        bundles = _draw_bundles(rng, goods, config.atoms_per_agent, lambda k: _super_bundle(rng, goods, k == 0))
        return [(b, _positive(float(sum(w[g] for g in sorted(b))) ** config.gamma)) for b in bundles]

    return _assemble(config, seed, per_agent, rng)


def gen_decay(config: GeneratorConfig, seed: int) -> Instance:
    if config.scenario != "decay":
        raise ConfigError("gen_decay needs scenario 'decay'")
    rng = np.random.default_rng(seed)

    def per_agent(rng, idx, role, goods):
        bundles = _draw_bundles(rng, goods, config.atoms_per_agent,
                                lambda k: _decay_bundle(rng, goods, config.decay_prob))
        return [(b, _positive(len(b) * rng.uniform(0.0, config.v_max))) for b in bundles]

    return _assemble(config, seed, per_agent, rng)


def gen_uniform(config: GeneratorConfig, seed: int) -> Instance:
    if config.scenario != "uniform":
        raise ConfigError("gen_uniform needs scenario 'uniform'")
    rng = np.random.default_rng(seed)

    def per_agent(rng, idx, role, goods):
        bundles = _draw_bundles(rng, goods, config.atoms_per_agent, lambda k: _uniform_bundle(rng, goods))
        return [(b, _positive(rng.uniform(0.0, len(b) * config.v_max))) for b in bundles]

    return _assemble(config, seed, per_agent, rng)


GENERATORS = {"decay": gen_decay, "uniform": gen_uniform, "super": gen_super}


def generate(config: GeneratorConfig, seed: int) -> Instance:
    return GENERATORS[config.scenario](config, seed)


def super_weight(beta: float, common: float, private: float) -> float:
    return beta * private + (1.0 - beta) * common


def super_bundle_value(weights, gamma: float) -> float:
    return float(sum(weights)) ** gamma
