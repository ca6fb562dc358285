"""Coordinated control of NFV resource engines with hierarchical Q-learning."""

__version__ = "0.1.0"
