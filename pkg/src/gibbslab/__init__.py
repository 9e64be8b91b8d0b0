"""Pattern statistics for the low-temperature Ising plus phase."""

__version__ = "0.1.0"
