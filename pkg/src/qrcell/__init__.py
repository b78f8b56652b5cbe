"""Simulation and analysis toolkit for a two-memory trapped-ion repeater cell."""
from . import entangle, fit, noise, protocol, qcore, rates, tomo

__all__ = ["entangle", "fit", "noise", "protocol", "qcore", "rates", "tomo"]
__version__ = "0.1.0"
