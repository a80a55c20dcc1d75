"""Balanced self-paced AUC maximization with kernel and deep backends."""

__version__ = "0.1.0"
