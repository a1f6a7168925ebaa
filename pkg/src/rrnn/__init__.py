"""Random recurrent network simulation, dynamic mean-field solvers and diagnostics."""

__version__ = "0.1.0"
