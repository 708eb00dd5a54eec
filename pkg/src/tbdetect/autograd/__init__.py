from .gradcheck import GradCheckReport, grad_check, weighted_sum
from .module import Module, Parameter, fan_in_uniform, make_rng
from .ops import (
    activation,
    batchnorm2d,
    conv2d,
    conv_transpose2d,
    dense,
    dropout,
    gelu,
    layernorm,
    maxpool2d,
    relu,
    sigmoid,
    softmax,
)
from .optim import Adam, OptimizerState, optimizer_step
from .tensor import (
    ContractViolation,
    Tape,
    Tensor,
    backward,
    clip,
    concat,
    current_tape,
    exp,
    log,
    matmul,
    no_grad,
    reshape,
    transpose,
)

__all__ = [
    "Adam",
    "ContractViolation",
    "GradCheckReport",
    "Module",
    "OptimizerState",
    "Parameter",
    "Tape",
    "Tensor",
    "activation",
    "backward",
    "batchnorm2d",
    "clip",
    "concat",
    "conv2d",
    "conv_transpose2d",
    "current_tape",
    "dense",
    "dropout",
    "exp",
    "fan_in_uniform",
    "gelu",
    "grad_check",
    "layernorm",
    "log",
    "make_rng",
    "matmul",
    "maxpool2d",
    "no_grad",
    "optimizer_step",
    "relu",
    "reshape",
    "sigmoid",
    "softmax",
    "transpose",
    "weighted_sum",
]
