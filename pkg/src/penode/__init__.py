"""Physics-enhanced neural ODE training by Radau IIA direct collocation."""
from .collocation import CollocationScheme, flgr_nodes, scheme
from .mesh import DecisionLayout, Mesh, build_equidistant
from .model import DynamicModel, FeedForwardNet, RationalChebyshev
from .simulate import SimulationError, ode_solve, simulate
from .solver import Solution, SolverOptions, solve
from .transcription import SparseNLP, TrajectoryData, transcribe

__version__ = "0.1.0"

__all__ = [
    "CollocationScheme", "flgr_nodes", "scheme", "DecisionLayout", "Mesh", "build_equidistant",
    "DynamicModel", "FeedForwardNet", "RationalChebyshev", "SimulationError", "ode_solve",
    "simulate", "Solution", "SolverOptions", "solve", "SparseNLP", "TrajectoryData", "transcribe",
]
