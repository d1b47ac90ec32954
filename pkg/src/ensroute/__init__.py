"""Ensemble of global and local construction policies for TSP and CVRP."""
__version__ = "0.1.0"
