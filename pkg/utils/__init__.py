"""Utility modules for posterior-control."""
