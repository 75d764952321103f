"""Bipartite tracking over signed digraphs through sub- and super-stochastic matrices."""

from .dynamics import GainParameters, ScenarioSpec, gate, spec_from_json
from .signed_graph import SignedDigraph, gauge_partition, graph_constants, leader_reaches_all
from .sim_engine import monte_carlo, run, verdict, window_contraction_scan
from .stochastic_matrix import analyze, classify

__version__ = "0.1.0"

__all__ = [
    "GainParameters", "ScenarioSpec", "SignedDigraph", "analyze", "classify", "gate",
    "gauge_partition", "graph_constants", "leader_reaches_all", "monte_carlo", "run",
    "spec_from_json", "verdict", "window_contraction_scan",
]
