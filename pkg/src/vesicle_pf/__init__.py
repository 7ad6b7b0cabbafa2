"""Phase-field simulation of vesicle membranes with area-difference elasticity."""

__version__ = "0.1.0"
