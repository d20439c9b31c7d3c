"""Resonant normal forms, breathers and orbital stability for the FPU-KG chain."""
from .model import ChainParams, ChainState, energy, vector_field
from .normal_form import NormalFormBundle, build_normal_form, constants

__all__ = ["ChainParams", "ChainState", "energy", "vector_field", "NormalFormBundle", "build_normal_form", "constants"]
__version__ = "0.1.0"
