"""Deterministic testbed for blockchains and smart contracts used as serverless components."""

__version__ = "0.1.0"
