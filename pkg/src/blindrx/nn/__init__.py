from .checkpoint import load_checkpoint, save_checkpoint
from .layers import LSTM, Conv1d, Dense, Module, ResidualBlock
from .optim import Adam
from .tensor import (
    Tensor,
    cfo_mix,
    complex_fir,
    concat,
    conv1d,
    global_avg_pool,
    lstm_scan,
    magnitude,
    minimum2,
    stop_gradient,
)

__all__ = [
    "Adam", "Conv1d", "Dense", "LSTM", "Module", "ResidualBlock", "Tensor",
    "cfo_mix", "complex_fir", "concat", "conv1d", "global_avg_pool",
    "lstm_scan", "magnitude", "minimum2", "stop_gradient",
    "load_checkpoint", "save_checkpoint",
]
