"""Numerical laboratory for convex integration of the stochastic SQG momentum equation."""

__version__ = "0.1.0"
