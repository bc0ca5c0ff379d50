"""Cointegrated two-energy forward-curve model: calibration and simulation."""

from .errors import CoforwardError
from .model import EnergyVol, Measure, ModelParams, ThetaPrime, VolParams, published_params

__version__ = "0.1.0"

__all__ = [
    "CoforwardError",
    "EnergyVol",
    "Measure",
    "ModelParams",
    "ThetaPrime",
    "VolParams",
    "published_params",
]
