"""Accessibility and local controllability analysis for analytic control systems q' = f(t, q, w)."""

__version__ = "0.1.0"
