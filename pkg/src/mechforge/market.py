"""Core exchange types: goods, XOR valuations, agents and instances.

A trade vector holds one integer per good. Positive entries are units the
agent receives, negative entries units it gives up. An agent's valuation is
an XOR list of atoms; at most one atom executes, and the null trade is
worth 0.

A trade profile is a tuple with one entry per agent: ``NULL`` (-1) for no
trade, otherwise the index of the executed atom.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

NULL = -1
TOL = 1e-9

BUYER = "buyer"
SELLER = "seller"
ROLES = (BUYER, SELLER)


class MarketError(ValueError):
    """Raised on malformed instances, valuations or profiles."""


@dataclass(frozen=True)
class Atom:
    trade: tuple[int, ...]
    value: float


@dataclass(frozen=True)
class XorValuation:
    role: str
    atoms: tuple[Atom, ...]

    def __post_init__(self):
        if self.role not in ROLES:
            raise MarketError(f"unknown role {self.role!r}")
        seen = set()
        for atom in self.atoms:
            if atom.trade in seen:
                raise MarketError(f"duplicate atom trade {atom.trade}")
            seen.add(atom.trade)
            if not any(atom.trade):
                raise MarketError("an atom cannot be the null trade")
            if self.role == BUYER and (atom.value <= 0 or min(atom.trade) < 0):
                raise MarketError("buyer atoms need positive value and nonnegative trade")
            if self.role == SELLER and (atom.value >= 0 or max(atom.trade) > 0):
                raise MarketError("seller atoms need negative value and nonpositive trade")

    def scaled(self, factor: float) -> "XorValuation":
        """Same atoms with every value multiplied by ``factor`` (> 0)."""
        return replace(self, atoms=tuple(Atom(a.trade, a.value * factor) for a in self.atoms))

    @property
    def values(self) -> tuple[float, ...]:
        return tuple(a.value for a in self.atoms)


@dataclass(frozen=True)
class Agent:
    id: int
    role: str
    demand_set: tuple[int, ...]
    valuation: XorValuation


@dataclass(frozen=True)
class Instance:
    n_goods: int
    agents: tuple[Agent, ...]
    seed: int = 0
    generator: str = "manual"
    _cache: dict = field(default_factory=dict, compare=False, repr=False, hash=False)

    def __post_init__(self):
        for idx, agent in enumerate(self.agents):
            if agent.id != idx:
                raise MarketError("agent ids must be 0..n-1 in order")
            if agent.role != agent.valuation.role:
                raise MarketError(f"agent {idx}: role disagrees with valuation")
            allowed = set(agent.demand_set)
            for atom in agent.valuation.atoms:
                if len(atom.trade) != self.n_goods:
                    raise MarketError(f"agent {idx}: trade length {len(atom.trade)} != {self.n_goods}")
                for good, qty in enumerate(atom.trade):
                    if qty and good not in allowed:
                        raise MarketError(f"agent {idx}: atom touches good {good} outside its set")

    @property
    def n_agents(self) -> int:
        return len(self.agents)

    @property
    def valuations(self) -> tuple[XorValuation, ...]:
        return tuple(a.valuation for a in self.agents)

    def without_agent(self, i: int) -> tuple[XorValuation, ...]:
        """Truthful reports with agent ``i``'s atoms removed."""
        vals = list(self.valuations)
        vals[i] = XorValuation(vals[i].role, ())
        return tuple(vals)


def value_of(valuation: XorValuation, trade) -> float:
    """Value of ``trade`` (an atom index, a trade vector, ``NULL`` or None)."""
    if trade is None or (isinstance(trade, int) and trade == NULL):
        return 0.0
    if isinstance(trade, int):
        if not 0 <= trade < len(valuation.atoms):
            raise MarketError(f"atom index {trade} out of range")
        return valuation.atoms[trade].value
    trade = tuple(trade)
    if not any(trade):
        return 0.0
    for atom in valuation.atoms:
        if atom.trade == trade:
            return atom.value
    raise MarketError(f"trade {trade} is not an atom of this valuation")


def net_flow(instance: Instance, profile: Sequence[int]) -> list[int]:
    flow = [0] * instance.n_goods
    for agent, choice in zip(instance.agents, profile):
        if choice == NULL:
            continue
        for j, q in enumerate(agent.valuation.atoms[choice].trade):
            flow[j] += q
    return flow


def feasible(instance: Instance, profile: Sequence[int]) -> bool:
    """Supply covers demand on every good; excess supply is disposed of."""
    if len(profile) != instance.n_agents:
        raise MarketError("profile length does not match agent count")
    return all(f <= 0 for f in net_flow(instance, profile))


def total_value(profile: Sequence[int], valuations: Sequence[XorValuation]) -> float:
    # summed in agent order from 0.0; every solver reproduces this order exactly
    total = 0.0
    for val, choice in zip(valuations, profile):
        if choice != NULL:
            total = total + val.atoms[choice].value
    return total


def trading_agents(profile: Sequence[int]) -> tuple[int, ...]:
    return tuple(i for i, c in enumerate(profile) if c != NULL)


def null_profile(instance: Instance) -> tuple[int, ...]:
    return (NULL,) * instance.n_agents


# -- serialization -----------------------------------------------------------

def instance_to_dict(instance: Instance) -> dict:
    return {
        "goods": instance.n_goods,
        "agents": [
            {
                "id": a.id,
                "role": a.role,
                "demand_set": list(a.demand_set),
                "atoms": [{"trade": list(at.trade), "value": at.value} for at in a.valuation.atoms],
            }
            for a in instance.agents
        ],
        "seed": instance.seed,
        "generator": instance.generator,
    }


def instance_from_dict(data: dict) -> Instance:
    agents = []
    for a in data["agents"]:
        atoms = tuple(Atom(tuple(int(q) for q in at["trade"]), float(at["value"])) for at in a["atoms"])
        agents.append(Agent(int(a["id"]), a["role"], tuple(a["demand_set"]), XorValuation(a["role"], atoms)))
    return Instance(int(data["goods"]), tuple(agents), int(data.get("seed", 0)), data.get("generator", "manual"))


def dumps(instance: Instance) -> str:
    return json.dumps(instance_to_dict(instance), indent=1)


def loads(text: str) -> Instance:
    return instance_from_dict(json.loads(text))


def save(instance: Instance, path) -> None:
    Path(path).write_text(dumps(instance))


def load(path) -> Instance:
    return loads(Path(path).read_text())


def make_instance(n_goods: int, specs: Iterable[tuple[str, Sequence[tuple[Sequence[int], float]]]],
                  seed: int = 0, generator: str = "manual") -> Instance:
    """Convenience builder: ``specs`` is a list of (role, [(trade, value), ...]).

    The demand set of each agent is inferred from its atoms.
    """
    agents = []
    for idx, (role, atoms) in enumerate(specs):
        atoms = tuple(Atom(tuple(int(q) for q in t), float(v)) for t, v in atoms)
        goods = sorted({j for a in atoms for j, q in enumerate(a.trade) if q})
        agents.append(Agent(idx, role, tuple(goods), XorValuation(role, atoms)))
    return Instance(n_goods, tuple(agents), seed, generator)
