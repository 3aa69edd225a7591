"""Semiring chart inference over labelled segmentations and the amortized q network."""
