"""Constructive controls for ReLU neural ODEs."""

__version__ = "0.1.0"

from .core import ArchitectureSpec, ControlSchedule, Dataset, Neuron, Piece, complexity, eval_field, kappa_min_report
from .errors import NodeCtlError
from .flow import IntegratorOptions, ParticleMeasure, integrate, integrate_many, push_forward, sample_trajectories

__all__ = [
    "__version__",
    "ArchitectureSpec",
    "ControlSchedule",
    "Dataset",
    "IntegratorOptions",
    "Neuron",
    "NodeCtlError",
    "ParticleMeasure",
    "Piece",
    "complexity",
    "eval_field",
    "integrate",
    "integrate_many",
    "kappa_min_report",
    "push_forward",
    "sample_trajectories",
]
