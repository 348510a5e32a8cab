"""Bayesian neural networks for predicting the social appropriateness of robot actions."""

__version__ = "0.1.0"
