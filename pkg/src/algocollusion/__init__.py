"""Reinforcement learners in repeated games: simulation, fluid limits and sliding dynamics."""

__version__ = "0.1.0"
