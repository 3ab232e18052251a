"""Candidate-trajectory samplers."""

from .curve import curve_sampler
from .kinematics import estimate_kinematics, kinematic_filter
from .lattice import lattice_sampler
from .retrieval import (ExpertTrajectoryDB, build_expert_db, load_expert_db, retrieval_sampler,
                        save_expert_db)
from .stgraph import ObstacleBand, StGraph, build_st_graph

__all__ = [
    "curve_sampler", "estimate_kinematics", "kinematic_filter", "lattice_sampler",
    "ExpertTrajectoryDB", "build_expert_db", "load_expert_db", "retrieval_sampler", "save_expert_db",
    "ObstacleBand", "StGraph", "build_st_graph",
]
