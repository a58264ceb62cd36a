"""Non-linear satellite channel simulation and iterative data pre-distortion."""

__version__ = "0.1.0"
