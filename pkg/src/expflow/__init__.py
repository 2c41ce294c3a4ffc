"""Expander decomposition and approximate max-flow toolkit."""
