"""Recursive binary neural networks: train under a fixed weight-storage budget
by freezing sign bits and recycling the rest as new plastic weights."""
from .fixedpoint import FixedValue, QFormat, binarize, narrow, quantize, saturating_update
from .model import BitLedger, RbnnModel, forward, freeze_and_recycle, new_model, predict
from .train import TrainConfig, run_recursive, train_iteration

__version__ = "0.1.0"
