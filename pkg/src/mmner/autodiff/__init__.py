from .tensor import (Tensor, add, as_tensor, concat, conv1d, cos, div, elementwise,
                     embedding, exp, getitem, is_grad_enabled, log, log_softmax,
                     logsumexp, matmul, maxpool1d, mean, mul, neg, no_grad, power,
                     relu, reshape, sigmoid, sin, softmax, sqrt, stack, sub, tanh,
                     transpose, tsum, where)
from .module import Module, Parameter
from .optim import SGD, Adam, OptimizerState, optimizer_step
from .checkpoint import config_hash, load_checkpoint, save_checkpoint
from .gradcheck import check_gradients, numeric_grad, relative_error

__all__ = [
    "Tensor", "Module", "Parameter", "SGD", "Adam", "OptimizerState", "optimizer_step",
    "add", "as_tensor", "concat", "conv1d", "cos", "div", "elementwise", "embedding",
    "exp", "getitem", "is_grad_enabled", "log", "log_softmax", "logsumexp", "matmul",
    "maxpool1d", "mean", "mul", "neg", "no_grad", "power", "relu", "reshape", "sigmoid",
    "sin", "softmax", "sqrt", "stack", "sub", "tanh", "transpose", "tsum", "where",
    "config_hash", "load_checkpoint", "save_checkpoint",
    "check_gradients", "numeric_grad", "relative_error",
]
