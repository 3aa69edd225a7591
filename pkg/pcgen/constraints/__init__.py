"""Weak alignment supervision and posterior penalties."""
