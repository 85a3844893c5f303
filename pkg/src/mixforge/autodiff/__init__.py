from .ops import (
    add,
    concat_cols,
    div,
    gelu,
    matmul,
    mean,
    merge_rows_strided,
    mul,
    scale,
    slice_cols,
    slice_rows_strided,
    softmax_rows,
    square,
    sub,
    sum,
    transpose,
)
from .tensor import ShapeError, Tape, Tensor, backward

__all__ = [
    "Tape", "Tensor", "ShapeError", "backward",
    "add", "sub", "mul", "div", "scale", "square", "matmul", "transpose",
    "gelu", "softmax_rows", "sum", "mean",
    "slice_rows_strided", "merge_rows_strided", "slice_cols", "concat_cols",
]
