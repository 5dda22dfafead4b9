"""Sequential Monte Carlo samplers with an exact finite-state oracle."""

__version__ = "0.1.0"
