"""Simulation and verification of Markovian maximal couplings of diffusions."""

from .errors import DegenerateInput, InvalidArgument, MMCLabError, NotAdmissible, NumericalFailure

__version__ = "0.1.0"

__all__ = ["DegenerateInput", "InvalidArgument", "MMCLabError", "NotAdmissible", "NumericalFailure", "__version__"]
