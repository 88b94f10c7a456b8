"""Boxes, anchors, delta encoding and greedy NMS.

Boxes are (x1, y1, x2, y2) in pixel-edge coordinates, so the area of a box
is (x2 - x1) * (y2 - y1).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# largest log-scale a delta may apply when decoding
MAX_LOG_SCALE = float(np.log(1000.0 / 16))


@dataclass(frozen=True)
class Detection:
    frame: int
    box: tuple[float, float, float, float]
    score: float

    def __post_init__(self):
        x1, y1, x2, y2 = self.box
        if not (x1 < x2 and y1 < y2):
            raise ValueError(f"degenerate detection box {self.box}")
        if not np.isfinite(self.score):
            raise ValueError("detection score must be finite")


def box_area(b: np.ndarray) -> np.ndarray:
    b = np.asarray(b, dtype=np.float64)
    return (b[..., 2] - b[..., 0]) * (b[..., 3] - b[..., 1])


def iou_matrix(a, b) -> np.ndarray:
    """Pairwise IoU between (N, 4) and (M, 4) boxes."""
    a = np.asarray(a, dtype=np.float64).reshape(-1, 4)
    b = np.asarray(b, dtype=np.float64).reshape(-1, 4)
    ix1 = np.maximum(a[:, None, 0], b[None, :, 0])
    iy1 = np.maximum(a[:, None, 1], b[None, :, 1])
    ix2 = np.minimum(a[:, None, 2], b[None, :, 2])
    iy2 = np.minimum(a[:, None, 3], b[None, :, 3])
    inter = np.clip(ix2 - ix1, 0, None) * np.clip(iy2 - iy1, 0, None)
    union = box_area(a)[:, None] + box_area(b)[None, :] - inter
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(union > 0, inter / union, 0.0)


@dataclass(frozen=True)
class AnchorConfig:
    sizes: tuple[float, ...] = (12.0, 24.0, 48.0)
    ratios: tuple[float, ...] = (0.5, 1.0, 2.0)
    positive_thr: float = 0.5
    negative_thr: float = 0.3

    def __post_init__(self):
        if not 0 <= self.negative_thr < self.positive_thr <= 1:
            raise ValueError("need 0 <= negative_thr < positive_thr <= 1")
        if min(self.sizes) <= 0 or min(self.ratios) <= 0:
            raise ValueError("anchor sizes and ratios must be positive")

    @property
    def per_cell(self) -> int:
        return len(self.sizes) * len(self.ratios)


def make_anchors(fh: int, fw: int, stride: float, cfg: AnchorConfig) -> np.ndarray:
    """(fh * fw * A, 4) anchors, cell-major; ratio is height / width."""
    base = []
    for s in cfg.sizes:
        for r in cfg.ratios:
            w = s / np.sqrt(r)
            h = s * np.sqrt(r)
            base.append((-w / 2, -h / 2, w / 2, h / 2))
    base = np.array(base)
    cy, cx = np.meshgrid((np.arange(fh) + 0.5) * stride, (np.arange(fw) + 0.5) * stride, indexing="ij")
    ctr = np.stack([cx, cy, cx, cy], axis=-1).reshape(-1, 1, 4)
    return (ctr + base[None]).reshape(-1, 4)


def encode(anchors, gt) -> np.ndarray:
    """Deltas (tx, ty, tw, th) taking ``anchors`` onto ``gt``."""
    a = np.asarray(anchors, dtype=np.float64)
    g = np.asarray(gt, dtype=np.float64)
    aw, ah = a[..., 2] - a[..., 0], a[..., 3] - a[..., 1]
    ax, ay = a[..., 0] + 0.5 * aw, a[..., 1] + 0.5 * ah
    gw, gh = g[..., 2] - g[..., 0], g[..., 3] - g[..., 1]
    gx, gy = g[..., 0] + 0.5 * gw, g[..., 1] + 0.5 * gh
    return np.stack([(gx - ax) / aw, (gy - ay) / ah, np.log(gw / aw), np.log(gh / ah)], axis=-1)


def decode(anchors, deltas) -> np.ndarray:
    a = np.asarray(anchors, dtype=np.float64)
    d = np.asarray(deltas, dtype=np.float64)
    aw, ah = a[..., 2] - a[..., 0], a[..., 3] - a[..., 1]
    ax, ay = a[..., 0] + 0.5 * aw, a[..., 1] + 0.5 * ah
    x = ax + d[..., 0] * aw
    y = ay + d[..., 1] * ah
    w = aw * np.exp(np.clip(d[..., 2], -MAX_LOG_SCALE, MAX_LOG_SCALE))
    h = ah * np.exp(np.clip(d[..., 3], -MAX_LOG_SCALE, MAX_LOG_SCALE))
    return np.stack([x - 0.5 * w, y - 0.5 * h, x + 0.5 * w, y + 0.5 * h], axis=-1)


def clip_boxes(b, width: float, height: float) -> np.ndarray:
    b = np.array(b, dtype=np.float64)
    b[..., 0::2] = np.clip(b[..., 0::2], 0, width)
    b[..., 1::2] = np.clip(b[..., 1::2], 0, height)
    return b


def valid_boxes(b, min_size: float = 1e-3) -> np.ndarray:
    b = np.asarray(b)
    return ((b[..., 2] - b[..., 0]) > min_size) & ((b[..., 3] - b[..., 1]) > min_size)


def nms_order(boxes, scores) -> np.ndarray:
    """Score-descending order with ties broken by x1 then y1 (ascending)."""
    boxes = np.asarray(boxes, dtype=np.float64).reshape(-1, 4)
    scores = np.asarray(scores, dtype=np.float64).reshape(-1)
    return np.lexsort((boxes[:, 1], boxes[:, 0], -scores))


def nms(boxes, scores, iou_thr: float) -> np.ndarray:
    """Indices kept by greedy suppression, in score order."""
    if not 0 < iou_thr < 1:
        raise ValueError("iou_thr must lie in (0, 1)")
    boxes = np.asarray(boxes, dtype=np.float64).reshape(-1, 4)
    order = nms_order(boxes, scores)
    ious = iou_matrix(boxes, boxes)
    keep = []
    suppressed = np.zeros(len(boxes), dtype=bool)
    for i in order:
        if suppressed[i]:
            continue
        keep.append(i)
        suppressed |= ious[i] > iou_thr
    return np.array(keep, dtype=np.int64)


def nms_detections(dets: list[Detection], iou_thr: float) -> list[Detection]:
    if not dets:
        return []
    keep = nms([d.box for d in dets], [d.score for d in dets], iou_thr)
    return [dets[i] for i in keep]
