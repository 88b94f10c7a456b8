"""IoU, COCO-style average precision, TIDE error counts and IoU density.

An evaluation instance is a list of images. Image i has detections
``dets[i]`` as an (n, 5) array of (x1, y1, x2, y2, score) and ground truth
``gts[i]`` as an (m, 4) array of boxes.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from ..detector.boxes import iou_matrix

IOU_THRESHOLDS = tuple(round(0.5 + 0.05 * k, 2) for k in range(10))
RECALL_THRESHOLDS = tuple(k / 100 for k in range(101))
AREA_RANGES = {"all": (0.0, 1e10), "small": (0.0, 32.0 ** 2), "medium": (32.0 ** 2, 96.0 ** 2),
               "large": (96.0 ** 2, 1e10)}
MAX_DETS = 100


def iou(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    for box in (a, b):
        if box.shape != (4,) or not (box[2] > box[0] and box[3] > box[1]):
            raise ValueError(f"degenerate box {box.tolist()}")
    return float(iou_matrix(a, b)[0, 0])


def _as_dets(d) -> np.ndarray:
    d = np.asarray(d, dtype=np.float64)
    return d.reshape(-1, 5)


def _as_gts(g) -> np.ndarray:
    g = np.asarray(g, dtype=np.float64)
    return g.reshape(-1, 4)


def _area(b: np.ndarray) -> np.ndarray:
    return (b[:, 2] - b[:, 0]) * (b[:, 3] - b[:, 1])


def _match_image(d: np.ndarray, g: np.ndarray, thr: float, rng_area):
    """Greedy score-order matching for one image.

    Returns (scores, tp flags, ignore flags) over the kept detections and the
    number of non-ignored ground truths.
    """
    lo, hi = rng_area
    g_ig = (_area(g) < lo) | (_area(g) > hi)
    gorder = np.argsort(g_ig, kind="stable")  # non-ignored ground truth first
    g = g[gorder]
    g_ig = g_ig[gorder]
    dorder = np.argsort(-d[:, 4], kind="stable")[:MAX_DETS]
    d = d[dorder]
    ious = iou_matrix(d[:, :4], g) if len(d) and len(g) else np.zeros((len(d), len(g)))
    g_taken = np.zeros(len(g), dtype=bool)
    tp = np.zeros(len(d), dtype=bool)
    d_ig = np.zeros(len(d), dtype=bool)
    for i in range(len(d)):
        best = min(thr, 1 - 1e-10)
        m = -1
        for j in range(len(g)):
            if g_taken[j]:
                continue
            if m > -1 and not g_ig[m] and g_ig[j]:
                break
            if ious[i, j] < best:
                continue
            best = ious[i, j]
            m = j
        if m == -1:
            continue
        g_taken[m] = True
        d_ig[i] = g_ig[m]
        tp[i] = True
    d_area = _area(d[:, :4]) if len(d) else np.zeros(0)
    d_ig |= ~tp & ((d_area < lo) | (d_area > hi))
    return d[:, 4], tp, d_ig, int(np.sum(~g_ig))


def _interpolated_ap(scores, tp, ignore, n_gt) -> float:
    keep = ~ignore
    scores, tp = scores[keep], tp[keep]
    order = np.argsort(-scores, kind="mergesort")
    tp = tp[order]
    tps = np.cumsum(tp)
    fps = np.cumsum(~tp)
    recall = tps / n_gt
    precision = tps / np.maximum(tps + fps, np.spacing(1))
    # interpolated precision: max precision at any recall >= r
    prec = precision.tolist()
    for k in range(len(prec) - 2, -1, -1):
        prec[k] = max(prec[k], prec[k + 1])
    idx = np.searchsorted(recall, RECALL_THRESHOLDS, side="left")
    vals = [prec[i] if i < len(prec) else 0.0 for i in idx]
    return math.fsum(vals) / len(RECALL_THRESHOLDS)


def average_precision(dets, gts, iou_thr: float = 0.5, area: str = "all") -> tuple[float, bool]:
    """101-point interpolated AP at one IoU threshold; (ap, empty) with ap=0 when there is no GT."""
    if len(dets) != len(gts):
        raise ValueError("dets and gts must list the same images")
    scores, tps, igs = [], [], []
    n_gt = 0
    for d, g in zip(dets, gts):
        s, tp, ig, n = _match_image(_as_dets(d), _as_gts(g), iou_thr, AREA_RANGES[area])
        scores.append(s)
        tps.append(tp)
        igs.append(ig)
        n_gt += n
    if n_gt == 0:
        return 0.0, True
    return _interpolated_ap(np.concatenate(scores), np.concatenate(tps), np.concatenate(igs), n_gt), False


def mean_ap(dets, gts, area: str = "all") -> tuple[float, bool]:
    vals = [average_precision(dets, gts, t, area) for t in IOU_THRESHOLDS]
    return math.fsum(v for v, _ in vals) / len(vals), vals[0][1]


# -- TIDE -------------------------------------------------------------------

ERROR_TYPES = ("Loc", "Dupe", "Bkgd", "Miss")


def tide_classify(dets, gts, fg_thr: float = 0.5, bg_thr: float = 0.1) -> dict[str, int]:
    """Error counts over images; also reports TP and the number of unmatched detections (FP)."""
    if not 0 < bg_thr < fg_thr < 1:
        raise ValueError("need 0 < bg_thr < fg_thr < 1")
    counts = {k: 0 for k in ERROR_TYPES}
    counts["TP"] = 0
    counts["FP"] = 0
    for d, g in zip(dets, gts):
        d, g = _as_dets(d), _as_gts(g)
        d = d[np.argsort(-d[:, 4], kind="stable")]
        ious = iou_matrix(d[:, :4], g) if len(d) and len(g) else np.zeros((len(d), len(g)))
        matched = np.zeros(len(g), dtype=bool)
        covered = np.zeros(len(g), dtype=bool)
        for i in range(len(d)):
            free = np.where(matched, -1.0, ious[i]) if len(g) else np.zeros(0)
            if len(g) and free.max() >= fg_thr:
                matched[int(np.argmax(free))] = True
                counts["TP"] += 1
                continue
            counts["FP"] += 1
            best = float(ious[i].max()) if len(g) else 0.0
            if best >= fg_thr:
                counts["Dupe"] += 1
            elif best >= bg_thr:
                counts["Loc"] += 1
                covered[int(np.argmax(ious[i]))] = True
            else:
                counts["Bkgd"] += 1
        counts["Miss"] += int(np.sum(~(matched | covered)))
    return counts


def iou_density(dets, gts, bins: int = 10) -> np.ndarray:
    """Histogram on [0, 1] of, per GT, the IoU of the highest-scoring detection overlapping it (0 if none)."""
    if bins < 1:
        raise ValueError("bins must be >= 1")
    vals = []
    for d, g in zip(dets, gts):
        d, g = _as_dets(d), _as_gts(g)
        ious = iou_matrix(d[:, :4], g) if len(d) and len(g) else np.zeros((len(d), len(g)))
        for j in range(len(g)):
            hit = np.flatnonzero(ious[:, j] > 0)
            if hit.size == 0:
                vals.append(0.0)
                continue
            top = hit[np.lexsort((hit, -d[hit, 4]))[0]]
            vals.append(float(ious[top, j]))
    # bin k holds [k/bins, (k+1)/bins); IoU 1 joins the top bin
    idx = np.minimum(np.floor(np.asarray(vals) * bins).astype(np.int64), bins - 1)
    hist = np.bincount(idx, minlength=bins).astype(np.float64)
    total = hist.sum()
    return hist / total if total else hist


# -- report -----------------------------------------------------------------

TABLE_COLUMNS = ("AP50", "AP75", "AP_clear", "AP_vague", "AP_s", "AP_m", "AP_l", "AP")


@dataclass
class EvalReport:
    AP50: float
    AP75: float
    AP: float
    AP_s: float
    AP_m: float
    AP_l: float
    AP_clear: float | None = None
    AP_vague: float | None = None
    errors: dict[str, int] = field(default_factory=dict)
    empty: list[str] = field(default_factory=list)  # fields computed without any ground truth
    n_images: int = 0
    n_gt: int = 0

    def __post_init__(self):
        for k in TABLE_COLUMNS:
            v = getattr(self, k)
            if v is not None and not 0.0 <= v <= 1.0:
                raise ValueError(f"{k}={v} outside [0, 1]")
        for k, v in self.errors.items():
            if int(v) != v or v < 0:
                raise ValueError(f"error count {k}={v} must be a non-negative integer")

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "EvalReport":
        return cls(**json.loads(text))

    def table(self) -> str:
        head = " ".join(f"{c:>8}" for c in TABLE_COLUMNS)
        row = " ".join(f"{'-':>8}" if getattr(self, c) is None else f"{100 * getattr(self, c):8.2f}"
                       for c in TABLE_COLUMNS)
        err = "  ".join(f"{k}={self.errors.get(k, 0)}" for k in ERROR_TYPES)
        return f"{head}\n{row}\nerrors: {err}\n"


def coco_ap(dets, gts, visibility=None) -> EvalReport:
    """Full report. ``visibility[i]`` labels image i 'clear' or 'vague' (optional)."""
    rep = {}
    empty = []
    for name, thr in (("AP50", 0.5), ("AP75", 0.75)):
        rep[name], e = average_precision(dets, gts, thr)
        if e:
            empty.append(name)
    for name, area in (("AP", "all"), ("AP_s", "small"), ("AP_m", "medium"), ("AP_l", "large")):
        rep[name], e = mean_ap(dets, gts, area)
        if e:
            empty.append(name)
    if visibility is not None:
        if len(visibility) != len(dets):
            raise ValueError("visibility labels must cover every image")
        for lab in ("clear", "vague"):
            idx = [i for i, v in enumerate(visibility) if v == lab]
            ap, e = mean_ap([dets[i] for i in idx], [gts[i] for i in idx])
            rep[f"AP_{lab}"] = ap
            if e:
                empty.append(f"AP_{lab}")
    n_gt = int(sum(len(_as_gts(g)) for g in gts))
    return EvalReport(**rep, errors=tide_classify(dets, gts), empty=empty, n_images=len(dets), n_gt=n_gt)


def clip_instances(clips, detections):
    """Per-frame (dets, gts, visibility) lists from clips and their Detection lists."""
    dets, gts, vis = [], [], []
    for clip, cd in zip(clips, detections):
        for t in range(clip.n_frames):
            fd = [(*d.box, d.score) for d in cd if d.frame == t]
            dets.append(np.array(fd, dtype=np.float64).reshape(-1, 5))
            b = clip.boxes[t]
            gts.append(np.zeros((0, 4)) if b is None else np.array([b], dtype=np.float64))
            vis.append(clip.meta.get("visibility"))
    return dets, gts, vis


def evaluate_clips(clips, detections) -> EvalReport:
    dets, gts, vis = clip_instances(clips, detections)
    has_vis = all(v in ("clear", "vague") for v in vis)
    return coco_ap(dets, gts, vis if has_vis else None)
