"""Increasing-permanence convergence checks for online learning and learning-based control."""

__version__ = "0.1.0"
