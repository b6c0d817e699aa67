"""Two-sensor covariance magnetometry: noise synthesis, spin dynamics,
correlation models, shot simulation and fitting."""

__version__ = "0.1.0"
