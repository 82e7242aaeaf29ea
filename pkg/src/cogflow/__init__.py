"""Simulation and density-verification lab for a flow-and-renewal model of
reasoning, plus a switching density-matrix subsystem."""

__version__ = "0.1.0"
