"""Losses, staged training, evaluation, datasets and checkpoints."""

from .checkpoint import CheckpointError, load_checkpoint, read_header, save_checkpoint
from .config import STAGES, ConfigError, TrainConfig
from .data import DatasetError, load_array, load_dataset, prepare
from .losses import STAGE_WEIGHTS, LossWeights, loss_terms, loss_total
from .loop import StageResult, StepResult, TrainingError, train_stage, train_step
