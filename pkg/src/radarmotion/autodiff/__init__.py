"""Minimal float64 tensor library with reverse-mode gradients."""
from .tensor import (
    NumericalError,
    ShapeError,
    Tensor,
    add,
    as_tensor,
    concat,
    div,
    exp,
    film,
    layer_norm,
    linear,
    matmul,
    mean,
    mul,
    relu,
    reshape,
    silu,
    softmax,
    sub,
    sum_squares,
    tanh,
    tmax,
    transpose,
    tsum,
)
from .nn import (
    ConfigError,
    LayerNorm,
    Linear,
    MLP,
    Module,
    MultiHeadAttention,
    Parameter,
    SelfAttentionLayer,
    self_attention,
    sinusoidal_embedding,
)
from .optim import SGD, Adam, OptimizerState, TrainingError
from . import checkpoint

__all__ = [
    "NumericalError", "ShapeError", "Tensor", "add", "as_tensor", "concat", "div", "exp", "film",
    "layer_norm", "linear", "matmul", "mean", "mul", "relu", "reshape", "silu", "softmax", "sub",
    "sum_squares", "tanh", "tmax", "transpose", "tsum", "ConfigError", "LayerNorm", "Linear",
    "MLP", "Module", "MultiHeadAttention", "Parameter", "SelfAttentionLayer", "self_attention",
    "sinusoidal_embedding", "SGD", "Adam", "OptimizerState", "TrainingError", "checkpoint",
]
