"""Numerical Wasserstein calculus and chain-rule verification for random fields
along measure flows."""

__version__ = "0.1.0"
