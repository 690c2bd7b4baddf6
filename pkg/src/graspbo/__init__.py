"""Bayesian optimization of grasp poses for a simulated three-finger hand."""

__version__ = "0.1.0"
