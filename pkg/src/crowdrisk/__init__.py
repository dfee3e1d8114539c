"""Crowd-aware traversal risk: Bayesian-network accident probability times
dollar loss, estimated by seeded Monte Carlo simulation."""

__version__ = "0.1.0"
