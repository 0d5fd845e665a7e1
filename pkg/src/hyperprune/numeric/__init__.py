"""Tensor arithmetic with reverse-mode differentiation."""

from ..errors import ArgumentError
from .kernels import BACKEND
from .tensor import (
    Graph,
    Tensor,
    add,
    as_tensor,
    backward,
    batch_norm,
    bmv,
    broadcast_to,
    concat,
    conv2d,
    conv_output_size,
    conv_transpose2d,
    conv_transpose_output_size,
    exp,
    finite_diff_grad,
    get_default_dtype,
    getitem,
    instance_norm,
    leaky_relu,
    log,
    log_sigmoid,
    matmul,
    mean,
    mul,
    no_grad,
    outer,
    relu,
    reshape,
    set_default_dtype,
    sgd_step,
    sigmoid,
    square,
    sub,
    tabs,
    tanh,
    transpose,
    tsum,
    upsample_nearest,
)

_ELEMENTWISE = {
    "add": add,
    "sub": sub,
    "mul": mul,
    "relu": relu,
    "leaky_relu": leaky_relu,
    "tanh": tanh,
    "sigmoid": sigmoid,
    "log": log,
    "exp": exp,
    "abs": tabs,
    "square": square,
    "log_sigmoid": log_sigmoid,
}


def elementwise(op: str, *args, **kwargs) -> Tensor:
    """Dispatch a pointwise op by name, e.g. ``elementwise("leaky_relu", x, alpha=0.2)``."""
    try:
        fn = _ELEMENTWISE[op]
    except KeyError:
        raise ArgumentError(f"unknown elementwise op {op!r}") from None
    return fn(*args, **kwargs)


__all__ = [name for name in dir() if not name.startswith("_")]
