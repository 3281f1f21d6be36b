"""
AdCell: budgeted and capacitated ad allocation with exact LP relaxations,
offline randomized rounding, online allocators and exact oracles.
"""

__version__ = "0.1.0"
