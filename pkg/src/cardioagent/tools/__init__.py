"""Deterministic local tools and clients for the remote neural tools."""
