"""Graph neural networks with a supernode warp module, on a small numpy autodiff core."""

from .chem import MolGraph, load_csv, parse_smiles
from .estimator import GraphWarpClassifier, GraphWarpRegressor, SmilesGraphTransformer
from .model import ModelConfig, init_params, load_checkpoint, model_forward, save_checkpoint
from .training import RunRecord, loss_reduction_ratio, roc_auc, train_loop

__version__ = "0.1.0"

__all__ = [
    "GraphWarpClassifier", "GraphWarpRegressor", "ModelConfig", "MolGraph", "RunRecord",
    "SmilesGraphTransformer", "init_params", "load_checkpoint", "load_csv",
    "loss_reduction_ratio", "model_forward", "parse_smiles", "roc_auc", "save_checkpoint",
    "train_loop",
]
