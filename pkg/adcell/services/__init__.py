"""
Services Package

Exact allocation services: model, LP solver, offline rounding, stochastic
knapsack, online allocators, oracles, Monte Carlo harness and the invariant
suite.
"""
