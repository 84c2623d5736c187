"""Traveling waves, curvature relations and wave stability for an intracellular-calcium
reaction-diffusion model, with the FitzHugh-Nagumo system as a reference case."""
from .errors import CawaveError
from .model import DEFAULT_JL, ModelParams
from .fhn import FhnParams

__all__ = ["CawaveError", "DEFAULT_JL", "FhnParams", "ModelParams"]
__version__ = "0.1.0"
