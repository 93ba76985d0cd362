"""Fairness-aware PV curtailment on a radial distribution feeder."""

from .fairness import CurtailmentProfile, FairnessCase, gini_index
from .feeder import FeederModel, FeederNetwork, VvcCurve, simulate_timestep
from .tariff import TariffSchedule

__all__ = [
    "CurtailmentProfile",
    "FairnessCase",
    "FeederModel",
    "FeederNetwork",
    "TariffSchedule",
    "VvcCurve",
    "gini_index",
    "simulate_timestep",
]

__version__ = "0.1.0"
