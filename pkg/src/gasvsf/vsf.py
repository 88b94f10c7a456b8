"""Voxel shift field: per-voxel spatio-temporal resampling of feature volumes.

Feature volumes are laid out (B, C, H, W, T) with H the row (y) axis, W the
column (x) axis and T time. An offset field stores (dx, dy, dt) in voxel
units per voxel; the shifted volume samples F at (x + dx, y + dy, t + dt)
with trilinear interpolation, and corners that fall outside the volume read
as zero.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensorcore import io as tio
from .tensorcore.ops import (
    conv3d,
    elementwise_add,
    elementwise_mul,
    elementwise_sub,
    frames_to_volume,
    fully_connected,
    global_avg_pool,
    permute,
    reshape_view,
    sigmoid,
    volume_to_frames,
)
from .tensorcore.tensor import ShapeError, Tensor, make_result

SCHEDULES = ("data", "feature", "none")


# -- bias schedules ---------------------------------------------------------

def bias_data(i: int, t: int, T: int) -> int:
    """Temporal offset of input channel ``i`` at frame ``t`` (circular +-1 shift)."""
    if i not in (0, 1, 2):
        raise ValueError(f"data-level bias is defined on channels 0..2, got {i}")
    if not 0 <= t < T:
        raise ValueError(f"frame {t} outside [0, {T})")
    if i == 0:
        return T - 1 if t == 0 else -1
    if i == 1:
        return 0
    return 1 - T if t == T - 1 else 1


def bias_fea(i: int, C: int) -> int:
    """Temporal offset of feature channel ``i``: -2, -1, +1, +2 on the first four eighths, 0 after."""
    if C <= 0 or C % 8:
        raise ValueError(f"channel count must be a positive multiple of 8, got {C}")
    if not 0 <= i < C:
        raise ValueError(f"channel {i} outside [0, {C})")
    e = C // 8
    if i < e:
        return -2
    if i < 2 * e:
        return -1
    if i < 3 * e:
        return 1
    if i < 4 * e:
        return 2
    return 0


@dataclass(frozen=True)
class BiasSchedule:
    kind: str
    channels: int
    frames: int

    def __post_init__(self):
        if self.kind not in SCHEDULES:
            raise ValueError(f"unknown schedule {self.kind!r}; expected one of {SCHEDULES}")
        if self.frames < 1:
            raise ValueError("frame count must be positive")
        if self.kind == "data" and self.channels != 3:
            raise ValueError("data-level schedule needs exactly 3 channels")
        if self.kind == "feature" and (self.channels <= 0 or self.channels % 8):
            raise ValueError("feature-level schedule needs a channel count divisible by 8")

    def table(self) -> np.ndarray:
        """dt bias per (channel, frame)."""
        C, T = self.channels, self.frames
        if self.kind == "data":
            return np.array([[bias_data(i, t, T) for t in range(T)] for i in range(3)], dtype=np.float64)
        if self.kind == "feature":
            return np.repeat(np.array([[bias_fea(i, C)] for i in range(C)], dtype=np.float64), T, axis=1)
        return np.zeros((C, T))

    def offsets(self, dtype=np.float64) -> np.ndarray:
        """Bias as a (1, C, 1, 1, T, 3) offset field; only the dt component is set."""
        o = np.zeros((1, self.channels, 1, 1, self.frames, 3), dtype=dtype)
        o[0, :, 0, 0, :, 2] = self.table()
        return o


# -- offsets ----------------------------------------------------------------

@dataclass
class OffsetField:
    """(dx, dy, dt) per voxel, shape (H, W, T, 3)."""

    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values)
        if self.values.ndim != 4 or self.values.shape[-1] != 3:
            raise ShapeError(f"offset field must be (H, W, T, 3), got {self.values.shape}")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("offset field holds non-finite values")

    def save(self, path) -> None:
        tio.save(path, self.values)

    @classmethod
    def load(cls, path) -> "OffsetField":
        return cls(tio.load(path))


def direction_mask(directions: str) -> np.ndarray:
    bad = set(directions) - set("xyt")
    if bad:
        raise ValueError(f"directions must be drawn from 'xyt', got {directions!r}")
    return np.array([c in directions for c in "xyt"], dtype=np.float64)


def predict_offsets(F: Tensor, weights: Tensor | None, bias: Tensor | None, schedule: BiasSchedule,
                    directions: str = "xyt") -> Tensor:
    """Offsets (B, C, H, W, T, 3): channel-shared conv3d(F) plus the per-channel schedule bias.

    The data-level schedule has no learnable part and ignores ``weights``.
    """
    if F.data.ndim != 5:
        raise ShapeError(f"expected (B, C, H, W, T), got {F.shape}")
    B, C, H, W, T = F.shape
    if (schedule.channels, schedule.frames) != (C, T):
        raise ShapeError(f"schedule is for C={schedule.channels}, T={schedule.frames}; volume has C={C}, T={T}")
    const = Tensor(np.broadcast_to(schedule.offsets(F.dtype), (B, C, H, W, T, 3)).copy())
    if schedule.kind == "data":
        return const
    if weights is None or weights.shape[:2] != (3, C):
        raise ShapeError(f"offset conv weights must be (3, {C}, kh, kw, kt), got {None if weights is None else weights.shape}")
    o = conv3d(F, weights, bias)  # (B, 3, H, W, T)
    o = permute(o, (0, 2, 3, 4, 1))
    mask = direction_mask(directions)
    if not mask.all():
        o = elementwise_mul(o, Tensor(mask.astype(F.dtype)))
    o = reshape_view(o, (B, 1, H, W, T, 3))
    return elementwise_add(o, const)


# -- shift ------------------------------------------------------------------

def shift_volumes(F: Tensor, O: Tensor) -> Tensor:
    """Trilinear resampling of F (B, C, H, W, T) at offsets O (B, C, H, W, T, 3).

    Out-of-volume corners contribute zero, so weights sum to less than one
    near the border. Adjoints are returned for both F and O.
    """
    if F.data.ndim != 5 or O.shape != F.shape + (3,):
        raise ShapeError(f"offsets {O.shape} do not match volume {F.shape} + (3,)")
    B, C, H, W, T = F.shape
    fd = F.data
    od = O.data
    flat = fd.reshape(-1)
    n = fd.size
    bc = np.arange(B * C).reshape(B, C, 1, 1, 1)
    hh = np.arange(H).reshape(1, 1, H, 1, 1)
    ww = np.arange(W).reshape(1, 1, 1, W, 1)
    tt = np.arange(T).reshape(1, 1, 1, 1, T)
    px = ww + od[..., 0]
    py = hh + od[..., 1]
    pt = tt + od[..., 2]
    x0, y0, t0 = np.floor(px), np.floor(py), np.floor(pt)
    rx, ry, rt = px - x0, py - y0, pt - t0
    x0, y0, t0 = x0.astype(np.int64), y0.astype(np.int64), t0.astype(np.int64)

    corners = []
    for a in (0, 1):
        iy = y0 + a
        wy = ry if a else 1.0 - ry
        for b in (0, 1):
            ix = x0 + b
            wx = rx if b else 1.0 - rx
            for c in (0, 1):
                it = t0 + c
                wt = rt if c else 1.0 - rt
                valid = (iy >= 0) & (iy < H) & (ix >= 0) & (ix < W) & (it >= 0) & (it < T)
                idx = (((bc * H + np.clip(iy, 0, H - 1)) * W + np.clip(ix, 0, W - 1)) * T + np.clip(it, 0, T - 1))
                val = np.where(valid, flat[idx], 0.0)
                corners.append((a, b, c, wy, wx, wt, valid, idx, val))

    if not (rx.any() or ry.any() or rt.any()):
        # integer offsets: a plain gather, no interpolation arithmetic
        out = corners[0][8].astype(fd.dtype)
    else:
        out = np.zeros(fd.shape, dtype=np.float64)
        for _, _, _, wy, wx, wt, _, _, val in corners:
            out += wy * wx * wt * val
        out = out.astype(fd.dtype)

    def backward(g):
        dF = np.zeros(n, dtype=np.float64)
        dO = np.zeros(od.shape, dtype=np.float64)
        for a, b, c, wy, wx, wt, valid, idx, val in corners:
            w = wy * wx * wt
            dF += np.bincount(idx[valid], weights=(g * w)[valid], minlength=n)
            gv = g * val
            dO[..., 0] += gv * wy * wt * (1.0 if b else -1.0)
            dO[..., 1] += gv * wx * wt * (1.0 if a else -1.0)
            dO[..., 2] += gv * wy * wx * (1.0 if c else -1.0)
        return [dF.reshape(fd.shape).astype(fd.dtype), dO.astype(od.dtype)]

    return make_result(out, [F, O], backward, "vsf_shift")


def vsf_shift(F_ib: Tensor, O) -> Tensor:
    """Shift a single (H, W, T) volume by an (H, W, T, 3) offset field."""
    if isinstance(O, OffsetField):
        O = Tensor(O.values.astype(F_ib.dtype))
    if F_ib.data.ndim != 3 or O.shape != F_ib.shape + (3,):
        raise ShapeError(f"offsets {O.shape} do not match volume {F_ib.shape} + (3,)")
    H, W, T = F_ib.shape
    out = shift_volumes(reshape_view(F_ib, (1, 1, H, W, T)), reshape_view(O, (1, 1, H, W, T, 3)))
    return reshape_view(out, (H, W, T))


# -- fusion and block -------------------------------------------------------

def differential_attention_fuse(F: Tensor, F_shifted: Tensor, fc_w: Tensor, fc_b: Tensor | None = None) -> Tensor:
    """F' + sigmoid(FC(GAP(F' - F))) * F with one gate per (batch, channel)."""
    if F.shape != F_shifted.shape:
        raise ShapeError(f"fuse: {F.shape} vs {F_shifted.shape}")
    B, C = F.shape[:2]
    if fc_w.shape != (C, C):
        raise ShapeError(f"gate FC must be ({C}, {C}), got {fc_w.shape}")
    gap = global_avg_pool(elementwise_sub(F_shifted, F))
    gate = sigmoid(fully_connected(gap, fc_w, fc_b))
    gate = reshape_view(gate, (B, C) + (1,) * (len(F.shape) - 2))
    return elementwise_add(F_shifted, elementwise_mul(gate, F))


def init_block_params(channels: int, dtype=np.float32, kernel: int = 3) -> dict[str, Tensor]:
    """Zero-initialised offset conv and gate FC, so the block starts as the pure bias schedule."""
    return {
        "offset_w": Tensor(np.zeros((3, channels, kernel, kernel, kernel), dtype=dtype), requires_grad=True),
        "offset_b": Tensor(np.zeros(3, dtype=dtype), requires_grad=True),
        "gate_w": Tensor(np.zeros((channels, channels), dtype=dtype), requires_grad=True),
        "gate_b": Tensor(np.zeros(channels, dtype=dtype), requires_grad=True),
    }


def vsf_block(F: Tensor, params: dict[str, Tensor] | None, frames: int, schedule: str = "feature",
              directions: str = "xyt", fuse: bool = True, return_offsets: bool = False):
    """(B*T, C, H, W) -> same shape: reshape to volumes, predict offsets, shift, fuse, reshape back.

    With ``schedule="data"`` the block is a pure per-channel temporal shift
    (no learnable offsets and no fusion); ``params`` may be None then.
    """
    if F.data.ndim != 4:
        raise ShapeError(f"vsf_block expects (B*T, C, H, W), got {F.shape}")
    if frames < 1 or F.shape[0] % frames:
        raise ShapeError(f"batch {F.shape[0]} is not divisible by frame count {frames}")
    V = frames_to_volume(F, frames)
    sched = BiasSchedule(schedule, V.shape[1], frames)
    if schedule == "data":
        O = predict_offsets(V, None, None, sched)
        out = shift_volumes(V, O)
    else:
        O = predict_offsets(V, params["offset_w"], params["offset_b"], sched, directions)
        out = shift_volumes(V, O)
        if fuse:
            out = differential_attention_fuse(V, out, params["gate_w"], params["gate_b"])
    res = volume_to_frames(out)
    return (res, O) if return_offsets else res
