"""Cluster-size statistics for dilute classical gases: pair potentials with
hard core and compact support, geometric cluster decomposition, ground-state
tables, the limiting size-distribution variational problem, computable
free-energy bounds, and a canonical Metropolis sampler, all checked against
small-scale brute-force oracles."""

from .cluster_geometry import ClusterDecomposition, ClusterStats, Configuration, decompose, stats
from .common import ClusterGasError, Estimate
from .ground_state import (GroundStateTable, MinimizeOpts, build_table, compute_nu_star,
                           estimate_e_infty, minimize_cluster)
from .gibbs_mc import MCParams, MCResult, lln_experiment, run_canonical
from .potential import PotentialSpec, default_spec, evaluate, total_energy, validate_assumption_v
from .variational import BULK, QVector, concentration_bound, g_nu, minimizer, mu, profile

__version__ = "0.1.0"
