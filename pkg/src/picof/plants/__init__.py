"""Ground-truth environments standing in for plant measurements."""

from .base import Observation
from .fuelcell import DH_RXN, FcStackParams, FuelCellPlant, default_stacks
from .toy import ToyPlant, toy_p1, toy_p2

__all__ = [
    "Observation",
    "ToyPlant",
    "toy_p1",
    "toy_p2",
    "FcStackParams",
    "FuelCellPlant",
    "default_stacks",
    "DH_RXN",
]
