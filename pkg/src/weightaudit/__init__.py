"""Memorization audits for collections of generated neural-network checkpoints."""

__version__ = "0.1.0"
