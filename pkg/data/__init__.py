"""Corpus records, synthetic corpus generation and storage."""
