"""Degree-bias audits and adversarial attribute filtering for graph embeddings."""

__version__ = "0.1.0"
