"""Counterfactual trajectory explanations for the Emergency gridworld."""

__version__ = "0.1.0"
