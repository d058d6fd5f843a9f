"""Funnel control of impedance-passive linear systems: models, checks, simulation and audits."""

__version__ = "1.0.0"
