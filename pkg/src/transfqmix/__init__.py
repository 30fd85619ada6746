"""Transformer agents and mixer for cooperative multi-agent Q-learning."""

__version__ = "0.1.0"
