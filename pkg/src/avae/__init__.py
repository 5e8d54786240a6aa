"""Adversarial variational autoencoder: tensors, models, losses, trainer,
toy-data oracles and a CLI."""

__version__ = "0.1.0"

from .tensor import Tape, Tensor  # noqa: F401
from .trainer import TrainConfig, TrainState, train_run  # noqa: F401
