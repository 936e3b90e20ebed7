"""Numerical laboratory for penalized stochastic heat equations with
oblique reflection in a convex domain, with a-priori-estimate diagnostics
and small-noise large-deviation experiments."""

__version__ = "0.1.0"
