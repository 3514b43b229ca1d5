"""Numerical core: schedules, potentials, proximal network, samplers and oracles."""
