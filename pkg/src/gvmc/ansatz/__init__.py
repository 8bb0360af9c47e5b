from .config import AnsatzConfig, ParameterLayout, build_layout
from .checkpoint import Checkpoint, config_hash, load_checkpoint, save_checkpoint
from .evaluator import (
    DenseBasisEvaluator,
    NeuralBasisEvaluator,
    basis_matrices,
    basis_matrix,
    initialize_parameters,
    jacobian_traces,
    log_amps,
)

__all__ = [
    "AnsatzConfig",
    "ParameterLayout",
    "build_layout",
    "Checkpoint",
    "config_hash",
    "load_checkpoint",
    "save_checkpoint",
    "DenseBasisEvaluator",
    "NeuralBasisEvaluator",
    "basis_matrices",
    "basis_matrix",
    "initialize_parameters",
    "jacobian_traces",
    "log_amps",
]
