"""Dirichlet posterior classifiers with normalized class-conditional latent densities."""

from .data import LabeledDataset, generate_three_gaussians, load_csv, save_csv
from .dirichlet import ClassCounts, DirichletParams
from .metrics import EvalReport, evaluate, export_uncertainty_grid
from .training import PosteriorModel, TrainConfig, train

__version__ = "0.1.0"

__all__ = [
    "ClassCounts",
    "DirichletParams",
    "EvalReport",
    "LabeledDataset",
    "PosteriorModel",
    "TrainConfig",
    "evaluate",
    "export_uncertainty_grid",
    "generate_three_gaussians",
    "load_csv",
    "save_csv",
    "train",
]
