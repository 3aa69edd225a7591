"""Generative decoder, training objective, trainer and metrics."""
