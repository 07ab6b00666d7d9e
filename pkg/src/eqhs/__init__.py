"""Unified modeling and analysis of active battery equalization systems.

Equalizers are weighted directed hyperedges over the pack's cells; their
incidence matrix drives a discrete-time SOC model, a controllability test,
a spectral bound on balancing time, and seeded Monte Carlo comparisons.
"""

from .hypergraph import (EdgeKind, Hyperedge, Topology, TopologyKind,
                         incidence_matrix, incidence_switched, incidence_vector,
                         make_topology, topology_from_dict, topology_to_dict)
from .linalg import (SymmetricMatrix, eigenvalues_symmetric, eigh_symmetric,
                     laplacian, matrix_rank, second_smallest_eigenvalue)
from .dynamics import (ControlPolicy, PackConfig, PolicyMode, SocState,
                       check_proportional_stability, control_step, imbalance,
                       simulate_batch, step)
from .analysis import (AnalysisReport, SimRun, controllability,
                       difference_matrix, simulate_until_balanced,
                       te_upper_bound)
from .montecarlo import McCombo, McReport, McStudy, draw_initial_soc, histogram, run_study

__all__ = [
    "EdgeKind", "Hyperedge", "Topology", "TopologyKind",
    "incidence_matrix", "incidence_switched", "incidence_vector",
    "make_topology", "topology_from_dict", "topology_to_dict",
    "SymmetricMatrix", "eigenvalues_symmetric", "eigh_symmetric",
    "laplacian", "matrix_rank", "second_smallest_eigenvalue",
    "ControlPolicy", "PackConfig", "PolicyMode", "SocState",
    "check_proportional_stability", "control_step", "imbalance",
    "simulate_batch", "step",
    "AnalysisReport", "SimRun", "controllability", "difference_matrix",
    "simulate_until_balanced", "te_upper_bound",
    "McCombo", "McReport", "McStudy", "draw_initial_soc", "histogram",
    "run_study",
]
