"""Contextual meta-learning toolkit.

Self-modulating Taylor candidates over a tape/jet autodiff core, stochastic
and bi-level trainers, differentiable ODE integration, and benchmark task
generators.
"""

__version__ = "0.1.0"
