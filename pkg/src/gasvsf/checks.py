"""Finite-difference gradient suites for the differentiable operations.

Each check returns (name, max relative error, tolerance). Inputs are 64-bit
and kept away from kinks (relu at 0, smooth-L1 at +-beta, integer sampling
positions) so central differences are valid.
"""

from __future__ import annotations

import numpy as np

from . import tensorcore as tc
from .tensorcore.gradcheck import check_gradients
from .vsf import BiasSchedule, differential_attention_fuse, predict_offsets, shift_volumes, vsf_block, vsf_shift

OP_TOL = 1e-5
E2E_TOL = 1e-4
SCOPES = ("tensorcore", "vsf", "detector")


def _away(rng, shape, lo=0.1, hi=1.0):
    """Random values with magnitude in [lo, hi] and random sign."""
    return rng.uniform(lo, hi, shape) * rng.choice([-1.0, 1.0], shape)


def _frac_offsets(rng, shape, span=2):
    """Offsets whose fractional parts stay in [0.1, 0.9]."""
    return rng.integers(-span, span, shape) + rng.uniform(0.1, 0.9, shape)


def _run(name, fn, inputs, tol, **kw):
    errs = check_gradients(fn, inputs, **kw)
    return name, max(errs.values()), tol


def tensorcore_checks(seed: int = 0):
    rng = np.random.default_rng(seed)
    V = (1, 2, 4, 4, 3)
    x5 = rng.standard_normal(V)
    x4 = rng.standard_normal((2, 2, 4, 4))
    out = [
        _run("reshape_view", lambda d: tc.reshape_view(d["x"], (2, 48)), {"x": x5}, OP_TOL),
        _run("permute", lambda d: tc.permute(d["x"], (0, 4, 2, 3, 1)), {"x": x5}, OP_TOL),
        _run("frames_to_volume", lambda d: tc.frames_to_volume(d["x"], 2), {"x": x4}, OP_TOL),
        _run("volume_to_frames", lambda d: tc.volume_to_frames(d["x"]), {"x": x5}, OP_TOL),
        _run("concat", lambda d: tc.concat([d["a"], d["b"]], axis=1),
             {"a": x5, "b": rng.standard_normal(V)}, OP_TOL),
        _run("take", lambda d: tc.take(d["x"], [0, 2, 2, 3], axis=2), {"x": x5}, OP_TOL),
        _run("elementwise_add", lambda d: tc.elementwise_add(d["a"], d["b"]),
             {"a": x5, "b": rng.standard_normal((1, 2, 1, 1, 3))}, OP_TOL),
        _run("elementwise_sub", lambda d: tc.elementwise_sub(d["a"], d["b"]),
             {"a": x5, "b": rng.standard_normal((4, 1, 3))}, OP_TOL),
        _run("elementwise_mul", lambda d: tc.elementwise_mul(d["a"], d["b"]),
             {"a": x5, "b": rng.standard_normal((1, 2, 1, 1, 1))}, OP_TOL),
        _run("scale", lambda d: tc.scale(d["x"], -1.7), {"x": x5}, OP_TOL),
        _run("relu", lambda d: tc.relu(d["x"]), {"x": _away(rng, V)}, OP_TOL),
        _run("sigmoid", lambda d: tc.sigmoid(d["x"]), {"x": 3 * rng.standard_normal(V)}, OP_TOL),
        _run("sum_all", lambda d: tc.sum_all(d["x"]), {"x": x5}, OP_TOL),
        _run("mean_all", lambda d: tc.mean_all(d["x"]), {"x": x5}, OP_TOL),
        _run("global_avg_pool", lambda d: tc.global_avg_pool(d["x"]), {"x": x5}, OP_TOL),
        _run("matmul", lambda d: tc.matmul(d["a"], d["b"]),
             {"a": rng.standard_normal((3, 4)), "b": rng.standard_normal((4, 2))}, OP_TOL),
        _run("fully_connected", lambda d: tc.fully_connected(d["x"], d["w"], d["b"]),
             {"x": rng.standard_normal((3, 4)), "w": rng.standard_normal((2, 4)), "b": rng.standard_normal(2)},
             OP_TOL),
        _run("conv2d", lambda d: tc.conv2d(d["x"], d["w"], d["b"]),
             {"x": x4, "w": rng.standard_normal((3, 2, 3, 3)), "b": rng.standard_normal(3)}, OP_TOL),
        _run("conv2d_stride2", lambda d: tc.conv2d(d["x"], d["w"], d["b"], stride=2),
             {"x": x4, "w": rng.standard_normal((3, 2, 3, 3)), "b": rng.standard_normal(3)}, OP_TOL),
        _run("conv3d", lambda d: tc.conv3d(d["x"], d["w"], d["b"]),
             {"x": x5, "w": rng.standard_normal((3, 2, 3, 3, 3)), "b": rng.standard_normal(3)}, OP_TOL),
        _run("smooth_l1", lambda d: tc.smooth_l1(d["x"]),
             {"x": np.where(rng.random(V) < 0.5, _away(rng, V, 0.1, 0.9), _away(rng, V, 1.1, 3.0))}, OP_TOL),
        _run("binary_cross_entropy", lambda d: tc.binary_cross_entropy(d["p"], (np.arange(96) % 2).reshape(V)),
             {"p": rng.uniform(0.1, 0.9, V)}, OP_TOL),
    ]
    return out


def vsf_checks(seed: int = 0):
    rng = np.random.default_rng(seed)
    V = (1, 2, 4, 4, 3)
    F = rng.standard_normal(V)
    C = 8
    Fc = rng.standard_normal((1, C, 4, 4, 3))
    sched = BiasSchedule("feature", C, 3)
    out = [
        _run("vsf_shift", lambda d: vsf_shift(d["F"], d["O"]),
             {"F": rng.standard_normal((4, 4, 3)), "O": _frac_offsets(rng, (4, 4, 3, 3))}, OP_TOL),
        _run("shift_volumes", lambda d: shift_volumes(d["F"], d["O"]),
             {"F": F, "O": _frac_offsets(rng, V + (3,))}, OP_TOL),
        _run("predict_offsets", lambda d: predict_offsets(d["F"], d["w"], d["b"], sched),
             {"F": Fc, "w": rng.standard_normal((3, C, 3, 3, 3)), "b": rng.standard_normal(3)}, OP_TOL),
        _run("differential_attention_fuse", lambda d: differential_attention_fuse(d["F"], d["Fs"], d["w"], d["b"]),
             {"F": F, "Fs": rng.standard_normal(V), "w": rng.standard_normal((2, 2)), "b": rng.standard_normal(2)},
             OP_TOL),
    ]
    # small offset weights plus a fractional conv bias keep sampling positions off integers
    params = {"offset_w": 0.05 * rng.standard_normal((3, C, 3, 3, 3)),
              "offset_b": rng.uniform(0.2, 0.8, 3),
              "gate_w": rng.standard_normal((C, C)) * 0.3, "gate_b": rng.standard_normal(C) * 0.3}

    def block(d):
        return vsf_block(d["F"], {k: d[k] for k in params}, 3, "feature")

    out.append(_run("vsf_block", block, {"F": rng.standard_normal((3, C, 4, 4)), **params}, OP_TOL))
    return out


def detector_checks(seed: int = 0, max_entries: int = 6):
    """End-to-end loss of a micro vsf_full detector (8x8 frames, T=2) against every parameter tensor."""
    from .detector.boxes import AnchorConfig
    from .detector.model import Model, ModelConfig, build_model, unit_loss

    cfg = ModelConfig(image_size=8, frames=2, channels=(16, 16, 16, 16), rpn_reduce=4, rpn_hidden=8,
                      head_hidden=8, roi_size=2, anchors=AnchorConfig(sizes=(4.0, 8.0)), rpn_batch=8)
    base = build_model("vsf_full", cfg, seed=seed, dtype=np.float64)
    rng = np.random.default_rng(seed)
    # random offset-conv and gate weights so the VSF path is exercised away from its zero init
    for k, p in base.params.items():
        if ".vsf." in k:
            p.data[...] = 0.05 * rng.standard_normal(p.shape)
            if k.endswith("offset_b"):
                p.data[...] = rng.uniform(0.2, 0.8, p.shape)
    frames = rng.integers(0, 256, (2, 8, 8)).astype(np.uint8)
    boxes = [(1, 2, 6, 7), (2, 2, 7, 7)]
    proposals = np.array([[0.5, 1.0, 6.5, 7.0], [2.0, 1.5, 7.5, 6.5], [0.0, 0.0, 5.0, 5.0]])

    def loss(d):
        m = Model(base.variant, cfg, d)
        parts, _ = unit_loss(m, frames, boxes, np.random.default_rng(1), proposals=proposals, dtype=np.float64)
        return parts.total

    inputs = {k: p.data.copy() for k, p in base.params.items()}
    # the loss is O(1) while many parameter gradients are ~1e-6, so a larger step keeps
    # round-off out of the difference quotient
    errs = check_gradients(loss, inputs, max_entries=max_entries, seed=seed, eps=1e-4)
    return [(f"detector_loss[{k}]", v, E2E_TOL) for k, v in errs.items()]


def run_scope(scope: str, seed: int = 0):
    if scope == "tensorcore":
        return tensorcore_checks(seed)
    if scope == "vsf":
        return vsf_checks(seed)
    if scope == "detector":
        return detector_checks(seed)
    raise ValueError(f"unknown gradcheck scope {scope!r}; expected one of {SCOPES}")
