"""Simulation of multivariate self-exciting event processes and recovery of
their summary causal graphs, including latent confounder subprocesses, from
rank tests on lagged cross-covariances."""

__version__ = "0.1.0"
