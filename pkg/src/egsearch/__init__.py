"""Gradient-based architecture search over binary-coded DAG cells."""

__version__ = "0.1.0"
