"""Operator learning on latent representations of time-dependent PDE fields.

The pipeline: sample random-field initial conditions, integrate them to
snapshot trajectories, reduce the fields to a low-dimensional latent space,
train a branch-trunk operator on latent trajectories, and decode predictions
back to full fields. Full-field branch-trunk and Fourier-operator baselines
share the same data contracts.
"""

from .autodiff import NumericError, Tape, Tensor
from .config import ConfigError, ExperimentConfig, load_config
from .containers import ContainerError, read_container, write_container
from .datagen import FieldDataset, generate_diffusion_dataset, integrate_diffusion
from .dimred import MLAEReducer, PCAReducer, assemble_snapshots, reconstruction_mse
from .model_io import load_model, save_model
from .operators import DeepONet, FNO2d, LatentDeepONet, evaluate_mse
from .random_fields import GrfConfig, KleBasis, build_kle, sample_field, sample_fields
from .reporting import PhaseTimer, RunReport
from .rng import Rng

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "ContainerError",
    "DeepONet",
    "ExperimentConfig",
    "FNO2d",
    "FieldDataset",
    "GrfConfig",
    "KleBasis",
    "LatentDeepONet",
    "MLAEReducer",
    "NumericError",
    "PCAReducer",
    "PhaseTimer",
    "Rng",
    "RunReport",
    "Tape",
    "Tensor",
    "assemble_snapshots",
    "build_kle",
    "evaluate_mse",
    "generate_diffusion_dataset",
    "integrate_diffusion",
    "load_config",
    "load_model",
    "read_container",
    "reconstruction_mse",
    "sample_field",
    "sample_fields",
    "save_model",
    "write_container",
    "__version__",
]
