"""Tiny CNN: layer specs, float training, INT8 conversion and integer inference."""

from .int8 import Int8Result, forward_i8, predict_i8, quantize_input, quantize_model, select_calibration
from .layers import AvgPool2D, Conv2D, Dense, Flatten, MaxPool2D, Softmax
from .model import (
    PARAM_BUDGET_BYTES,
    ModelArtifact,
    activation_bytes,
    build_model,
    default_architecture,
    forward_f32,
    load_model,
    param_budget,
    save_model,
)
from .train import BudgetError, TrainConfig, TrainHistory, evaluate, train
