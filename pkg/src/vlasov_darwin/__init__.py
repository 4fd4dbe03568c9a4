"""Particle solver for the relativistic Vlasov-Darwin system on free space."""

__version__ = "0.1.0"
