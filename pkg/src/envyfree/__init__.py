"""Envy-free pricing for unit-demand markets with MHR demand and convex costs."""

__version__ = "0.1.0"
