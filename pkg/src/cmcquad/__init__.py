"""CMC surfaces in S^3 and R^3 from Fuchsian loop-group potentials."""

__version__ = "0.1.0"
