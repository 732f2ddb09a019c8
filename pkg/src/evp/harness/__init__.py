"""Synthetic data, optimizer, training and evaluation plumbing."""

from .config import ABLATION_ROWS, RunConfig, ablation_config
from .data import BoxWorld, SceneDescriptor, gen_boxworld
from .model import EVPModel, build_model, dataset_latent_std, forward
from .optim import AdamState, adam_step
from .train import TrainResult, evaluate, load_checkpoint, save_checkpoint, train

__all__ = [
    "ABLATION_ROWS",
    "AdamState",
    "BoxWorld",
    "EVPModel",
    "RunConfig",
    "SceneDescriptor",
    "TrainResult",
    "ablation_config",
    "adam_step",
    "build_model",
    "dataset_latent_std",
    "evaluate",
    "forward",
    "gen_boxworld",
    "load_checkpoint",
    "save_checkpoint",
    "train",
]
