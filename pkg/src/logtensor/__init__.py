"""Exact and toleranced verification of logarithmic intertwining operators,
P(z)-intertwining maps and their dual actions on free-boson data."""

__version__ = "0.1.0"
