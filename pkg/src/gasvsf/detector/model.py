"""Toy spatio-temporal detector: backbone, multi-frame proposals and per-frame heads.

Clips enter as (T, H, W) gray frames. Frames are standardised per clip,
replicated to three channels and stacked frame-major into a (B*T, 3, H, W)
batch. Four stride-2 stages produce a stride-16 feature map. The proposal
stage sees the concatenation of channel-reduced per-frame features, and
head t pools frame t's features for every shared proposal.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .. import rng as rngmod
from ..tensorcore import (
    Tensor,
    binary_cross_entropy,
    conv2d,
    elementwise_add,
    elementwise_sub,
    fully_connected,
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
)
from ..vsf import init_block_params, vsf_block
from .boxes import (
    AnchorConfig,
    Detection,
    clip_boxes,
    decode,
    encode,
    iou_matrix,
    make_anchors,
    nms,
    nms_detections,
    valid_boxes,
)

VARIANTS = ("frame_baseline", "concat_baseline", "vsf_data", "vsf_full")


@dataclass
class ModelConfig:
    image_size: int = 64
    frames: int = 8
    channels: tuple[int, ...] = (16, 32, 64, 64)
    rpn_reduce: int = 16
    rpn_hidden: int = 64
    head_hidden: int = 64
    roi_size: int = 4
    anchors: AnchorConfig = field(default_factory=AnchorConfig)
    rpn_batch: int = 64
    rpn_pos_fraction: float = 0.5
    pre_nms_topk: int = 64
    rpn_nms: float = 0.7
    post_nms_topk: int = 32
    head_pos_iou: float = 0.5
    det_nms: float = 0.5
    max_det: int = 10
    lam: float = 1.0
    vsf_stages: tuple[int, ...] = (1, 2, 3, 4)
    vsf_schedule: str = "feature"
    vsf_directions: str = "xyt"
    vsf_fuse: bool = True

    def __post_init__(self):
        if self.frames not in (1, 2, 4, 8, 16):
            raise ValueError(f"frames must be one of 1, 2, 4, 8, 16, got {self.frames}")
        if any(c % 16 for c in self.channels):
            raise ValueError("stage channels must be multiples of 16 (the reduced half feeds the feature schedule)")
        if any(s < 1 or s > len(self.channels) for s in self.vsf_stages):
            raise ValueError(f"vsf_stages must index stages 1..{len(self.channels)}")

    @property
    def stride(self) -> int:
        return 2 ** len(self.channels)

    @property
    def feature_size(self) -> int:
        n = self.image_size
        for _ in self.channels:
            n = (n - 1) // 2 + 1
        return n


@dataclass
class Model:
    variant: str
    cfg: ModelConfig
    params: dict[str, Tensor]

    @property
    def frames(self) -> int:
        """Frames seen by one forward pass (1 for the per-frame baseline)."""
        return 1 if self.variant == "frame_baseline" else self.cfg.frames

    def n_params(self) -> int:
        return int(sum(p.size for p in self.params.values()))

    def anchors(self) -> np.ndarray:
        f = self.cfg.feature_size
        return make_anchors(f, f, self.cfg.stride, self.cfg.anchors)


def _he(rng, shape, fan_in, dtype):
    return (rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)).astype(dtype)


def build_model(variant: str, cfg: ModelConfig | None = None, seed: int = 0, dtype=np.float32) -> Model:
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}; expected one of {VARIANTS}")
    cfg = cfg or ModelConfig()
    T = 1 if variant == "frame_baseline" else cfg.frames
    p: dict[str, np.ndarray] = {}

    def conv(name, co, ci, k, std=None):
        r = rngmod.stream(seed, "init", len(p))
        p[name + ".w"] = (_he(r, (co, ci, k, k), ci * k * k, dtype) if std is None
                          else (r.standard_normal((co, ci, k, k)) * std).astype(dtype))
        p[name + ".b"] = np.zeros(co, dtype=dtype)

    def fc(name, co, ci, std=None):
        r = rngmod.stream(seed, "init", len(p))
        p[name + ".w"] = _he(r, (co, ci), ci, dtype) if std is None else (r.standard_normal((co, ci)) * std).astype(dtype)
        p[name + ".b"] = np.zeros(co, dtype=dtype)

    cin = 3
    for s, co in enumerate(cfg.channels, start=1):
        conv(f"stage{s}.down", co, cin, 3)
        conv(f"stage{s}.reduce", co // 2, co, 1)
        conv(f"stage{s}.expand", co, co // 2, 3, std=0.1 * np.sqrt(2.0 / (co // 2 * 9)))
        if variant == "vsf_full" and s in cfg.vsf_stages:
            for k, v in init_block_params(co // 2, dtype).items():
                p[f"stage{s}.vsf.{k}"] = v.data
        cin = co
    A = cfg.anchors.per_cell
    conv("rpn.reduce", cfg.rpn_reduce, cin, 1)
    conv("rpn.conv", cfg.rpn_hidden, T * cfg.rpn_reduce, 3)
    conv("rpn.cls", A, cfg.rpn_hidden, 1, std=0.01)
    conv("rpn.reg", 4 * A, cfg.rpn_hidden, 1, std=0.01)
    roi_dim = cin * cfg.roi_size ** 2
    for t in range(T):
        fc(f"head{t}.fc", cfg.head_hidden, roi_dim)
        fc(f"head{t}.cls", 1, cfg.head_hidden, std=0.01)
        fc(f"head{t}.reg", 4, cfg.head_hidden, std=0.01)
    params = {k: Tensor(v, requires_grad=True, name=k) for k, v in p.items()}
    return Model(variant, cfg, params)


# -- input ------------------------------------------------------------------

def prepare_input(frames: np.ndarray, dtype=np.float32) -> np.ndarray:
    """(T, H, W) gray frames -> (T, 3, H, W) standardised, gray replicated to 3 channels."""
    x = np.asarray(frames, dtype=np.float64)
    if x.ndim != 3:
        raise ValueError(f"expected (T, H, W) frames, got {x.shape}")
    x = (x - x.mean()) / max(float(x.std()), 1.0)
    return np.repeat(x[:, None], 3, axis=1).astype(dtype)


# -- forward ----------------------------------------------------------------

def backbone(model: Model, x: Tensor, offsets: list | None = None) -> Tensor:
    """(B*T, 3, H, W) -> stride-16 features (B*T, C, h, w).

    If ``offsets`` is a list, (stage, offset tensor) pairs of the learnable
    VSF blocks are appended to it.
    """
    P, cfg, T = model.params, model.cfg, model.frames
    if model.variant in ("vsf_data", "vsf_full"):
        x = vsf_block(x, None, T, "data")
    for s in range(1, len(cfg.channels) + 1):
        x = relu(conv2d(x, P[f"stage{s}.down.w"], P[f"stage{s}.down.b"], stride=2))
        r = relu(conv2d(x, P[f"stage{s}.reduce.w"], P[f"stage{s}.reduce.b"]))
        if f"stage{s}.vsf.offset_w" in P:
            vp = {k: P[f"stage{s}.vsf.{k}"] for k in ("offset_w", "offset_b", "gate_w", "gate_b")}
            r, O = vsf_block(r, vp, T, cfg.vsf_schedule, cfg.vsf_directions, cfg.vsf_fuse, return_offsets=True)
            if offsets is not None:
                offsets.append((s, O))
        y = conv2d(r, P[f"stage{s}.expand.w"], P[f"stage{s}.expand.b"])
        x = relu(elementwise_add(x, y))
    return x


def backbone_offsets(model: Model, x: Tensor) -> list:
    out: list = []
    backbone(model, x, out)
    return out


def rpn_forward(model: Model, feats: Tensor) -> tuple[Tensor, Tensor]:
    """Objectness probabilities (B, N) and deltas (B, N, 4) over the N anchors of a clip."""
    P, T = model.params, model.frames
    bt, _, h, w = feats.shape
    B = bt // T
    A = model.cfg.anchors.per_cell
    z = relu(conv2d(feats, P["rpn.reduce.w"], P["rpn.reduce.b"]))
    z = reshape_view(z, (B, T * z.shape[1], h, w))
    z = relu(conv2d(z, P["rpn.conv.w"], P["rpn.conv.b"]))
    obj = sigmoid(conv2d(z, P["rpn.cls.w"], P["rpn.cls.b"]))
    obj = reshape_view(permute(obj, (0, 2, 3, 1)), (B, h * w * A))
    reg = reshape_view(conv2d(z, P["rpn.reg.w"], P["rpn.reg.b"]), (B, A, 4, h, w))
    reg = reshape_view(permute(reg, (0, 3, 4, 1, 2)), (B, h * w * A, 4))
    return obj, reg


def roi_pool_matrix(boxes: np.ndarray, fh: int, fw: int, stride: float, out: int) -> np.ndarray:
    """(R * out * out, fh * fw) area weights: bin (r, i, j) averages the feature cells it overlaps."""
    boxes = np.asarray(boxes, dtype=np.float64).reshape(-1, 4) / stride

    def overlap(lo, hi, n):
        e = lo[:, None] + (hi - lo)[:, None] * np.arange(out + 1)[None] / out  # (R, out + 1)
        a, b = e[:, :-1, None], e[:, 1:, None]
        cells = np.arange(n)[None, None]
        ov = np.clip(np.minimum(b, cells + 1) - np.maximum(a, cells), 0, None)
        return ov / np.maximum(b - a, 1e-12)

    oy = overlap(boxes[:, 1], boxes[:, 3], fh)  # (R, out, fh)
    ox = overlap(boxes[:, 0], boxes[:, 2], fw)  # (R, out, fw)
    m = oy[:, :, None, :, None] * ox[:, None, :, None, :]  # (R, out, out, fh, fw)
    return m.reshape(len(boxes) * out * out, fh * fw)


def head_forward(model: Model, feats: Tensor, frame_row: int, head: int, proposals: np.ndarray):
    """Scores (R, 1) and deltas (R, 4) of head ``head`` on the feature row ``frame_row``."""
    P, cfg = model.params, model.cfg
    _, c, h, w = feats.shape
    R = len(proposals)
    f = reshape_view(take(feats, [frame_row], axis=0), (c, h * w))
    pm = Tensor(roi_pool_matrix(proposals, h, w, cfg.stride, cfg.roi_size).astype(feats.dtype))
    pooled = matmul(pm, permute(f, (1, 0)))  # (R * bins, c)
    pooled = reshape_view(pooled, (R, cfg.roi_size ** 2 * c))
    hid = relu(fully_connected(pooled, P[f"head{head}.fc.w"], P[f"head{head}.fc.b"]))
    score = sigmoid(fully_connected(hid, P[f"head{head}.cls.w"], P[f"head{head}.cls.b"]))
    delta = fully_connected(hid, P[f"head{head}.reg.w"], P[f"head{head}.reg.b"])
    return score, delta


# -- targets and losses -----------------------------------------------------

def mean_gt_box(gt_boxes) -> np.ndarray:
    present = [np.asarray(b, dtype=np.float64) for b in gt_boxes if b is not None]
    if not present:
        raise ValueError("no ground-truth box in any frame")
    return np.mean(present, axis=0)


def assign_rpn_targets(anchors: np.ndarray, gt_boxes, cfg: AnchorConfig):
    """Labels (1 positive, 0 negative, -1 ignored) and deltas toward the mean GT box.

    The anchor with the highest IoU is positive even below the threshold, so
    every clip yields at least one positive.
    """
    g = mean_gt_box(gt_boxes)
    ious = iou_matrix(anchors, g[None])[:, 0]
    labels = np.full(len(anchors), -1, dtype=np.int64)
    labels[ious < cfg.negative_thr] = 0
    labels[ious >= cfg.positive_thr] = 1
    labels[int(np.argmax(ious))] = 1
    targets = encode(anchors, np.broadcast_to(g, anchors.shape))
    return labels, targets


def sample_labels(labels: np.ndarray, batch: int, pos_fraction: float, rng: np.random.Generator) -> np.ndarray:
    """Subsample to at most ``batch`` anchors, positives capped at ``pos_fraction``; others set to -1."""
    out = np.full_like(labels, -1)
    pos = np.flatnonzero(labels == 1)
    neg = np.flatnonzero(labels == 0)
    n_pos = min(len(pos), int(batch * pos_fraction))
    n_neg = min(len(neg), batch - n_pos)
    out[rng.choice(pos, n_pos, replace=False) if n_pos < len(pos) else pos] = 1
    out[rng.choice(neg, n_neg, replace=False) if n_neg < len(neg) else neg] = 0
    return out


def _zero(dtype) -> Tensor:
    return Tensor(np.zeros(1, dtype=dtype))


def rpn_loss(p: Tensor, p_star: np.ndarray, g: Tensor, g_star: np.ndarray, lam: float = 1.0):
    """Mean BCE over labelled anchors plus lam * smooth-L1 on positives (averaged over positives).

    Returns (total, cls, reg) tensors.
    """
    p_star = np.asarray(p_star)
    lab = np.flatnonzero(p_star >= 0)
    pos = np.flatnonzero(p_star == 1)
    cls = _zero(p.dtype)
    if lab.size:
        cls = mean_all(binary_cross_entropy(take(p, lab), p_star[lab].astype(p.dtype)))
    reg = _zero(p.dtype)
    if pos.size:
        diff = elementwise_sub(take(g, pos), Tensor(np.asarray(g_star)[pos].astype(g.dtype)))
        reg = scale(sum_all(smooth_l1(diff)), 1.0 / pos.size)
    return elementwise_add(cls, scale(reg, lam)), cls, reg


def head_targets(proposals: np.ndarray, gt, pos_iou: float):
    if gt is None:
        return np.zeros(len(proposals), dtype=np.int64), np.zeros((len(proposals), 4))
    g = np.asarray(gt, dtype=np.float64)
    ious = iou_matrix(proposals, g[None])[:, 0]
    labels = (ious >= pos_iou).astype(np.int64)
    return labels, encode(proposals, np.broadcast_to(g, proposals.shape))


def make_proposals(model: Model, obj: np.ndarray, reg: np.ndarray, extra=None) -> np.ndarray:
    """Top-k decoded anchors after NMS; ``extra`` boxes (training GT) are appended."""
    cfg = model.cfg
    boxes = clip_boxes(decode(model.anchors(), reg), cfg.image_size, cfg.image_size)
    ok = np.flatnonzero(valid_boxes(boxes, 1.0))
    boxes, scores = boxes[ok], obj[ok]
    order = np.lexsort((boxes[:, 1], boxes[:, 0], -scores))[: cfg.pre_nms_topk]
    boxes, scores = boxes[order], scores[order]
    if len(boxes):
        boxes = boxes[nms(boxes, scores, cfg.rpn_nms)][: cfg.post_nms_topk]
    if extra is not None and len(extra):
        boxes = np.concatenate([boxes.reshape(-1, 4), np.asarray(extra, dtype=np.float64).reshape(-1, 4)])
    return boxes.reshape(-1, 4)


@dataclass
class LossParts:
    total: Tensor
    rpn_cls: float
    rpn_reg: float
    head_cls: float
    head_reg: float


def clip_samples(model: Model, frames: np.ndarray, boxes):
    """Split a clip into forward units: the whole clip, or one unit per frame for the baseline."""
    if model.variant == "frame_baseline":
        return [(frames[t:t + 1], [boxes[t]]) for t in range(len(frames))]
    if len(frames) != model.frames:
        raise ValueError(f"model expects {model.frames} frames, clip has {len(frames)}")
    return [(frames, list(boxes))]


def unit_loss(model: Model, frames: np.ndarray, boxes, rng: np.random.Generator,
              proposals: np.ndarray | None = None, dtype=np.float32) -> tuple[LossParts, np.ndarray]:
    """Total loss of one forward unit (T frames, or 1 for the baseline) and the proposals used.

    Proposals are treated as constants. Passing ``proposals`` fixes them,
    which makes the loss a smooth function of the parameters.
    """
    cfg = model.cfg
    x = Tensor(prepare_input(frames, dtype))
    feats = backbone(model, x)
    obj, reg = rpn_forward(model, feats)
    obj1 = reshape_view(obj, (obj.shape[1],))
    reg1 = reshape_view(reg, reg.shape[1:])
    anchors = model.anchors()
    if any(b is not None for b in boxes):
        labels, targets = assign_rpn_targets(anchors, boxes, cfg.anchors)
    else:
        labels, targets = np.zeros(len(anchors), dtype=np.int64), np.zeros((len(anchors), 4))
    labels = sample_labels(labels, cfg.rpn_batch, cfg.rpn_pos_fraction, rng)
    r_total, r_cls, r_reg = rpn_loss(obj1, labels, reg1, targets, cfg.lam)

    if proposals is None:
        extra = [b for b in boxes if b is not None]
        if extra:
            extra.append(mean_gt_box(boxes))
        proposals = make_proposals(model, obj1.data.astype(np.float64), reg1.data.astype(np.float64), extra)
    total = r_total
    h_cls = h_reg = 0.0
    if len(proposals):
        head_total = None
        for t in range(len(frames)):
            score, delta = head_forward(model, feats, t, t, proposals)
            hl, ht = head_targets(proposals, boxes[t], cfg.head_pos_iou)
            cls = mean_all(binary_cross_entropy(reshape_view(score, (len(proposals),)), hl.astype(score.dtype)))
            pos = np.flatnonzero(hl == 1)
            lt = cls
            if pos.size:
                diff = elementwise_sub(take(delta, pos), Tensor(ht[pos].astype(delta.dtype)))
                rl = scale(sum_all(smooth_l1(diff)), 1.0 / pos.size)
                lt = elementwise_add(cls, scale(rl, cfg.lam))
                h_reg += rl.item() / len(frames)
            h_cls += cls.item() / len(frames)
            head_total = lt if head_total is None else elementwise_add(head_total, lt)
        total = elementwise_add(total, scale(head_total, 1.0 / len(frames)))
    parts = LossParts(total, r_cls.item(), r_reg.item(), h_cls, h_reg)
    return parts, proposals


# -- inference --------------------------------------------------------------

def infer_unit(model: Model, frames: np.ndarray, frame_offset: int = 0) -> list[Detection]:
    cfg = model.cfg
    x = Tensor(prepare_input(frames))
    feats = backbone(model, x)
    obj, reg = rpn_forward(model, feats)
    proposals = make_proposals(model, obj.data[0].astype(np.float64), reg.data[0].astype(np.float64))
    dets: list[Detection] = []
    if not len(proposals):
        return dets
    for t in range(len(frames)):
        score, delta = head_forward(model, feats, t, t, proposals)
        boxes = clip_boxes(decode(proposals, delta.data.astype(np.float64)), cfg.image_size, cfg.image_size)
        s = score.data[:, 0].astype(np.float64)
        ok = np.flatnonzero(valid_boxes(boxes, 1e-3))
        frame_dets = [Detection(frame_offset + t, tuple(float(v) for v in boxes[i]), float(s[i])) for i in ok]
        dets.extend(nms_detections(frame_dets, cfg.det_nms)[: cfg.max_det])
    return dets


def infer_clip(model: Model, frames: np.ndarray) -> list[Detection]:
    """Per-frame detections for a (T, H, W) clip; pure given the parameters."""
    frames = np.asarray(frames)
    if model.variant == "frame_baseline":
        out = []
        for t in range(len(frames)):
            out.extend(infer_unit(model, frames[t:t + 1], t))
        return out
    if len(frames) != model.frames:
        raise ValueError(f"model expects {model.frames} frames, clip has {len(frames)}")
    return infer_unit(model, frames)
