"""Budget-balanced payment rules built on VCG discounts.

Every rule maps the VCG discounts, the set of trading agents and the
available surplus to a discount vector. Payments are the reported value of
the assigned trade minus the discount. All rules except VCG and No Discount
hand out exactly the available surplus.
"""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Sequence

import numpy as np


class Rule(str, Enum):
    VCG = "vcg"
    NO_DISCOUNT = "nodiscount"
    EQUAL = "equal"
    FRACTIONAL = "fractional"
    SMALL = "small"
    LARGE = "large"
    THRESHOLD = "threshold"
    REVERSE = "reverse"
    TWO_TRIANGLE = "twotriangle"

    @property
    def label(self) -> str:
        return LABELS[self]

    @property
    def title(self) -> str:
        return TITLES[self]


LABELS = {
    Rule.VCG: "VCG", Rule.NO_DISCOUNT: "N", Rule.EQUAL: "E", Rule.FRACTIONAL: "F", Rule.SMALL: "S",
    Rule.LARGE: "L", Rule.THRESHOLD: "T", Rule.REVERSE: "R", Rule.TWO_TRIANGLE: "W",
}
TITLES = {
    Rule.VCG: "VCG", Rule.NO_DISCOUNT: "No Discount", Rule.EQUAL: "Equal", Rule.FRACTIONAL: "Fractional",
    Rule.SMALL: "Small", Rule.LARGE: "Large", Rule.THRESHOLD: "Threshold", Rule.REVERSE: "Reverse",
    Rule.TWO_TRIANGLE: "Two Triangle",
}

BALANCED = (Rule.TWO_TRIANGLE, Rule.THRESHOLD, Rule.REVERSE, Rule.SMALL, Rule.LARGE,
            Rule.FRACTIONAL, Rule.EQUAL)
# rules that never give an agent more than its VCG discount and hand out all surplus
CAPPED = (Rule.TWO_TRIANGLE, Rule.THRESHOLD, Rule.REVERSE, Rule.SMALL, Rule.LARGE, Rule.FRACTIONAL)
TABLE_ORDER = BALANCED + (Rule.NO_DISCOUNT,)

_ALIASES = {r.value: r for r in Rule}
_ALIASES.update({LABELS[r].lower(): r for r in Rule})
_ALIASES.update({TITLES[r].lower().replace(" ", ""): r for r in Rule})
_ALIASES.update({"no_discount": Rule.NO_DISCOUNT, "two_triangle": Rule.TWO_TRIANGLE, "nd": Rule.NO_DISCOUNT})


def parse_rule(name: str) -> Rule:
    """Accepts full names (``threshold``), letters (``T``) and titles (``Two Triangle``)."""
    key = name.strip().lower().replace(" ", "").replace("-", "")
    if key not in _ALIASES:
        raise ValueError(f"unknown rule {name!r}")
    return _ALIASES[key]


class RuleError(ValueError):
    pass


@dataclass(frozen=True)
class Allocation:
    discounts: tuple[float, ...]
    residual: bool = False  # VCG discounts could not absorb the surplus


def _check(vcg, surplus):
    d = np.asarray(vcg, dtype=float)
    if (d < 0).any() or surplus < 0:
        raise RuleError("discounts and surplus must be nonnegative")
    return d


def water_fill(caps: Sequence[float], budget: float, order: Sequence[int]) -> np.ndarray:
    """Give each agent in ``order`` as much of ``budget`` as its cap allows."""
    out = np.zeros(len(caps))
    left = float(budget)
    for i in order:
        take = min(float(caps[i]), left)
        out[i] = take
        left -= take
        if left <= 0:
            break
    return out


def ascending(d: Sequence[float]) -> list[int]:
    return sorted(range(len(d)), key=lambda i: (d[i], i))


def descending(d: Sequence[float]) -> list[int]:
    return sorted(range(len(d)), key=lambda i: (-d[i], i))


def threshold_level(d: Sequence[float], budget: float) -> float:
    """The C >= 0 solving sum(max(0, d_i - C)) = budget, exactly piecewise-linear.

    Requires sum(d) >= budget. With budget 0 returns max(d).
    """
    d = sorted((float(x) for x in d), reverse=True)
    if not d:
        return 0.0
    if budget <= 0:
        return d[0]
    prefix = 0.0
    for m, top in enumerate(d, start=1):
        prefix += top
        level = (prefix - budget) / m
        nxt = d[m] if m < len(d) else 0.0
        if level >= nxt:
            return max(level, 0.0)
    return 0.0


def threshold_alloc(d: np.ndarray, budget: float) -> np.ndarray:
    c = threshold_level(d, budget)
    return np.maximum(0.0, d - c)


def reverse_level(d: np.ndarray, budget: float) -> float:
    """Largest r with every positive-discount agent keeping regret >= r."""
    pos = d[d > 0]
    if len(pos) == 0:
        return 0.0
    return max(0.0, min(float(pos.min()), (float(pos.sum()) - budget) / len(pos)))


def reverse_alloc(d: np.ndarray, budget: float) -> np.ndarray:
    r = reverse_level(d, budget)
    caps = np.where(d > 0, np.maximum(0.0, d - r), 0.0)
    return water_fill(caps, budget, descending(d))


def allocate(rule: Rule | str, vcg: Sequence[float], trading: Sequence[int], surplus: float) -> Allocation:
    """Discount vector for ``rule``.

    Args:
        rule: payment rule
        vcg: VCG discounts, one per agent (zero for non-trading agents)
        trading: agents with a nonzero trade in the efficient profile
        surplus: total reported surplus of the efficient trade
    """
    rule = parse_rule(rule) if isinstance(rule, str) else rule
    d = _check(vcg, surplus)
    n = len(d)
    trading = sorted(trading)
    if rule is Rule.VCG:
        return Allocation(tuple(float(x) for x in d))
    if rule is Rule.NO_DISCOUNT or surplus == 0.0 or not trading:
        return Allocation((0.0,) * n)
    if rule is Rule.EQUAL:
        return Allocation(tuple(_equal(n, trading, surplus)))

    total = float(d.sum())
    if total < surplus:
        # capped rules cannot balance: pay full VCG discounts, split the rest equally
        out = d + _equal(n, trading, surplus - total)
        return Allocation(tuple(float(x) for x in out), residual=True)

    if rule is Rule.FRACTIONAL:
        out = surplus * d / total
    elif rule is Rule.SMALL:
        out = water_fill(d, surplus, ascending(d))
    elif rule is Rule.LARGE:
        out = water_fill(d, surplus, descending(d))
    elif rule is Rule.THRESHOLD:
        out = threshold_alloc(d, surplus)
    elif rule is Rule.REVERSE:
        out = reverse_alloc(d, surplus)
    elif rule is Rule.TWO_TRIANGLE:
        half = surplus / 2.0
        first = threshold_alloc(d, half)
        room = np.maximum(0.0, d - first)
        out = first + water_fill(room, surplus - float(first.sum()), ascending(d))
    else:  # pragma: no cover
        raise RuleError(f"unhandled rule {rule}")
    return Allocation(tuple(float(x) for x in out))


def _equal(n, trading, amount) -> np.ndarray:
    out = np.zeros(n)
    out[list(trading)] = amount / len(trading)
    return out


def allocate_discounts(rule, vcg, trading, surplus) -> tuple[float, ...]:
    return allocate(rule, vcg, trading, surplus).discounts


def payments_from_discounts(reported: Sequence[float], discounts: Sequence[float]) -> tuple[float, ...]:
    """p_i = reported value of i's assigned trade minus its discount."""
    return tuple(float(v) - float(x) for v, x in zip(reported, discounts))


def regrets(vcg: Sequence[float], discounts: Sequence[float]) -> tuple[float, ...]:
    return tuple(float(a) - float(b) for a, b in zip(vcg, discounts))
