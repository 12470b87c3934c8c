"""Neural-network surrogates for Petrov-Galerkin localized orthogonal decomposition
on elliptic problems with random lognormal coefficients."""

__version__ = "0.1.0"
