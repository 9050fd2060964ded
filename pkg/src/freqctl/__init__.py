"""Frequency-stability workbench for low-inertia power systems."""

from . import mipc, netmodel, observer, plant, qp, vsm
from .errors import FreqCtlError

__all__ = ["FreqCtlError", "mipc", "netmodel", "observer", "plant", "qp", "vsm"]
__version__ = "0.1.0"
