"""Adversarial reinforcement-learning benchmark for collision-avoidance policies."""

__version__ = "0.1.0"
