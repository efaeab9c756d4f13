"""Causal survival effects of stochastic treatment policies under clustered interference."""
