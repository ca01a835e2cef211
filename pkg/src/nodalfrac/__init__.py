"""Least-energy nodal radial solutions of the fractional Brezis-Nirenberg problem on a ball."""
__version__ = "0.1.0"
