"""Bayesian quantile regression for counts through a Pitman-Yor mixture of truncated normals."""

__version__ = "0.1.0"
