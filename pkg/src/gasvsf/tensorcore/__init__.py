from .tensor import NonFiniteError, ShapeError, Tape, Tensor, active_tape
from .ops import (
    binary_cross_entropy,
    concat,
    conv2d,
    conv3d,
    elementwise_add,
    elementwise_mul,
    elementwise_sub,
    frames_to_volume,
    fully_connected,
    global_avg_pool,
    matmul,
    mean_all,
    permute,
    relu,
    reshape_view,
    scale,
    sigmoid,
    smooth_l1,
    sum_all,
    take,
    volume_to_frames,
)
