"""Parcel-level urban mapping and synthetic population generation.

Pipeline stages: delineate parcels from a road network, score and select
urban parcels with a vector cellular automaton, identify residential
parcels, allocate sub-district population totals onto them, and synthesize
individual agents from census marginals and cross-tabulations.
"""

__version__ = "0.1.0"
