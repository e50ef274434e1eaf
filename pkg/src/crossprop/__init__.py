"""Crossprop: online meta-gradient learning of hidden-unit weights, with backprop baselines."""

__version__ = "0.1.0"
