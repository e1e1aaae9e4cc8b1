"""Exact and Monte Carlo tools for Glauber dynamics of the 2D Ising model at criticality.

The package covers exact enumeration and transfer matrices on small
boxes, Glauber and FK heat-bath chains, the Edwards-Sokal coupling, the
exposure coupling of FK measures with different boundary conditions,
crossing estimates, block dynamics, monotone coupling from the past and
the experiments behind the relaxation-time lower bound.
"""

__version__ = "0.1.0"

from .fk import P_SD, FKChain, FKGraph, Wiring, beta_to_p, count_clusters, fk_exact, fk_graph
from .glauber import (GlauberChain, RateFamily, exact_generator_gap, exact_mixing_time, mixing_time_bound,
                      variational_gap)
from .ising import BETA_C, ExactDistribution, StripTransfer, gibbs_exact, tv_distance
from .lattice import BoundaryCondition, Lattice, build_box, parse_bc
from .rng import RandomSource

__all__ = [
    "BETA_C", "P_SD", "BoundaryCondition", "ExactDistribution", "FKChain", "FKGraph", "GlauberChain", "Lattice",
    "RandomSource", "RateFamily", "StripTransfer", "Wiring", "beta_to_p", "build_box", "count_clusters",
    "exact_generator_gap", "exact_mixing_time", "fk_exact", "fk_graph", "gibbs_exact", "mixing_time_bound",
    "parse_bc", "tv_distance", "variational_gap",
]
