"""Posterior-regularized control-state induction for table-to-text generation."""

__version__ = "0.1.0"
