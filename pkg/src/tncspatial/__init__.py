"""Spatial Durbin modelling of ride-hailing demand across areal units."""

__version__ = "0.1.0"
