"""Independent plain-loop oracles for the evaluation metrics."""

import math

import numpy as np


def box_iou(a, b):
    iw = max(0.0, min(a[2], b[2]) - max(a[0], b[0]))
    ih = max(0.0, min(a[3], b[3]) - max(a[1], b[1]))
    inter = iw * ih
    union = (a[2] - a[0]) * (a[3] - a[1]) + (b[2] - b[0]) * (b[3] - b[1]) - inter
    return inter / union if union > 0 else 0.0


def oracle_ap(dets, gts, thr):
    """Plain-loop AP: greedy matching per image in score order, then 101-point interpolation."""
    records = []  # (score, is_tp)
    n_gt = sum(len(g) for g in gts)
    if n_gt == 0:
        return 0.0
    for d, g in zip(dets, gts):
        d = sorted([tuple(r) for r in d], key=lambda r: -r[4])
        taken = [False] * len(g)
        for r in d:
            best, m = min(thr, 1 - 1e-10), -1
            for j, gb in enumerate(g):
                if taken[j]:
                    continue
                v = box_iou(r[:4], gb)
                if v >= best:
                    best, m = v, j
            if m >= 0:
                taken[m] = True
            records.append((r[4], m >= 0))
    records.sort(key=lambda x: -x[0])
    tp = fp = 0
    curve = []
    for _, hit in records:
        tp += hit
        fp += not hit
        curve.append((tp / n_gt, tp / (tp + fp)))
    vals = []
    for k in range(101):
        r = k / 100
        ps = [p for rc, p in curve if rc >= r]
        vals.append(max(ps) if ps else 0.0)
    return math.fsum(vals) / 101


def random_instance(rng):
    n_img = int(rng.integers(1, 4))
    dets, gts = [], []
    for _ in range(n_img):
        nd, ng = int(rng.integers(0, 6)), int(rng.integers(0, 4))
        g = []
        for _ in range(ng):
            x, y = rng.integers(0, 8, 2)
            w, h = rng.integers(1, 6, 2)
            g.append((float(x), float(y), float(x + w), float(y + h)))
        d = []
        for _ in range(nd):
            x, y = rng.integers(0, 8, 2)
            w, h = rng.integers(1, 6, 2)
            d.append((float(x), float(y), float(x + w), float(y + h), float(rng.integers(1, 5)) / 4))
        dets.append(np.array(d).reshape(-1, 5))
        gts.append(np.array(g).reshape(-1, 4))
    return dets, gts
