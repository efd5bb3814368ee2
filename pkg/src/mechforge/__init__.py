"""Simulation laboratory for budget-balanced payment rules in combinatorial exchanges."""

__version__ = "0.1.0"
