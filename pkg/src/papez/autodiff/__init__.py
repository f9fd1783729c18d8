from .tensor import (
    NORM_EPS,
    NonFiniteError,
    Parameter,
    Tensor,
    add,
    as_tensor,
    backward,
    concat,
    conv1d,
    conv_transpose1d,
    default_dtype,
    div,
    exp,
    get_precision,
    getitem,
    instance_norm,
    layer_norm,
    log,
    matmul,
    mean,
    mul,
    neg,
    no_grad,
    ones,
    power,
    precision,
    prelu,
    put_rows,
    relu,
    reshape,
    set_precision,
    sigmoid,
    softmax,
    split,
    stack,
    sub,
    sum_,
    take,
    tanh,
    transpose,
    where,
    zeros,
)
from .checkpoint import CheckpointError, load_arrays, save_arrays
