"""Numerical tools for hierarchical (leader/follower) risk-averse control of diffusions."""

__version__ = "0.1.0"
