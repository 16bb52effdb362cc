"""Cooperative monitoring policy trained over the monitorsim bridge."""

__version__ = "0.1.0"
