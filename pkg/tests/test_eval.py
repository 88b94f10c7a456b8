import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gasvsf.eval import (
    EvalReport,
    average_precision,
    coco_ap,
    iou,
    iou_density,
    tide_classify,
)
from gasvsf.eval.metrics import IOU_THRESHOLDS, mean_ap
from gasvsf.eval.objectness import (
    cc_score,
    ed_score,
    hog_descriptor,
    ms_score,
    objectness,
    ss_score,
)

from .oracles import box_iou, oracle_ap, random_instance


def test_oracle_agrees_exactly_on_500_instances():
    rng = np.random.default_rng(0)
    for _ in range(500):
        dets, gts = random_instance(rng)
        for thr in (0.5, 0.75, 0.3):
            ours, _ = average_precision(dets, gts, thr)
            assert ours == oracle_ap(dets, gts, thr)


# -- IoU and AP examples ----------------------------------------------------

def test_iou_examples():
    assert iou([0, 0, 2, 2], [0, 0, 2, 2]) == 1.0
    assert iou([0, 0, 1, 1], [2, 2, 3, 3]) == 0.0
    assert iou([0, 0, 2, 2], [1, 0, 3, 2]) == pytest.approx(1 / 3, rel=1e-15)
    with pytest.raises(ValueError):
        iou([0, 0, 0, 2], [0, 0, 1, 1])


def test_ap_examples():
    g = [np.array([[0, 0, 10, 10]], float)]
    assert average_precision([np.array([[0, 0, 10, 9, 0.8]])], g, 0.5)[0] == 1.0
    assert average_precision([np.zeros((0, 5))], g, 0.5)[0] == 0.0
    two = [np.array([[0, 0, 10, 10, 0.9], [20, 20, 30, 30, 0.8]])]
    assert average_precision(two, g, 0.5)[0] == 1.0
    ap, empty = average_precision([np.array([[0, 0, 1, 1, 0.5]])], [np.zeros((0, 4))], 0.5)
    assert ap == 0.0 and empty


def test_ap_false_positive_first():
    g = [np.array([[0, 0, 10, 10]], float)]
    d = [np.array([[20, 20, 30, 30, 0.9], [0, 0, 10, 10, 0.8]])]
    # one point at recall 1, precision 1/2
    assert average_precision(d, g, 0.5)[0] == pytest.approx(0.5, rel=1e-15)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_ap_invariant_under_monotone_score_transform(seed):
    rng = np.random.default_rng(seed)
    dets, gts = random_instance(rng)
    dets = [np.c_[d[:, :4], rng.random(len(d))] for d in dets]
    moved = [np.c_[d[:, :4], np.exp(3 * d[:, 4]) - 0.5] for d in dets]
    for thr in (0.5, 0.75):
        assert average_precision(dets, gts, thr)[0] == average_precision(moved, gts, thr)[0]


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_ap_in_unit_interval_and_tide_partition(seed):
    rng = np.random.default_rng(seed)
    dets, gts = random_instance(rng)
    rep = coco_ap(dets, gts)
    for k in ("AP50", "AP75", "AP", "AP_s", "AP_m", "AP_l"):
        assert 0.0 <= getattr(rep, k) <= 1.0
    c = tide_classify(dets, gts)
    n_det = sum(len(d) for d in dets)
    assert c["Loc"] + c["Dupe"] + c["Bkgd"] == c["FP"] == n_det - c["TP"]
    assert 0 <= c["Miss"] <= sum(len(g) for g in gts) - c["TP"]


def test_size_buckets():
    small = np.array([[0, 0, 20, 20]], float)
    medium = np.array([[0, 0, 50, 50]], float)
    large = np.array([[0, 0, 120, 100]], float)
    gts = [small, medium, large]
    dets = [np.c_[small, [0.9]], np.zeros((0, 5)), np.c_[large, [0.8]]]
    assert mean_ap(dets, gts, "small")[0] == 1.0
    assert mean_ap(dets, gts, "medium")[0] == 0.0
    assert mean_ap(dets, gts, "large")[0] == 1.0
    # an unmatched small detection does not count against the large bucket
    dets2 = [np.array([[40, 40, 45, 45, 0.95]]), np.zeros((0, 5)), np.c_[large, [0.8]]]
    assert mean_ap(dets2, gts, "large")[0] == 1.0


def test_ap_averages_thresholds():
    g = [np.array([[0, 0, 10, 10]], float)]
    d = [np.array([[0, 0, 10, 8, 0.9]])]  # IoU 0.8
    ap, _ = mean_ap(d, g)
    assert ap == pytest.approx(sum(t <= 0.8 for t in IOU_THRESHOLDS) / 10)


def test_tide_examples():
    g = [np.array([[0, 0, 10, 10]], float)]
    loc = tide_classify([np.array([[0, 0, 10, 3, 0.9]])], g)  # IoU 0.3
    assert loc["Loc"] == 1 and loc["Miss"] == 0
    dupe = tide_classify([np.array([[0, 0, 10, 10, 0.9], [0, 0, 10, 9, 0.8]])], g)
    assert dupe["TP"] == 1 and dupe["Dupe"] == 1
    bkgd = tide_classify([np.array([[50, 50, 60, 60, 0.9]])], g)
    assert bkgd["Bkgd"] == 1 and bkgd["Miss"] == 1
    with pytest.raises(ValueError):
        tide_classify([], [], 0.1, 0.5)


def naive_density(dets, gts, bins):
    vals = []
    for d, g in zip(dets, gts):
        for gb in g:
            best_s, best_v, best_i = -1.0, 0.0, None
            for i, r in enumerate(d):
                v = box_iou(r[:4], gb)
                if v > 0 and (r[4] > best_s):
                    best_s, best_v, best_i = r[4], v, i
            vals.append(best_v)
    counts = [0] * bins
    for v in vals:
        counts[min(int(v * bins), bins - 1)] += 1
    tot = sum(counts)
    return np.array(counts) / tot if tot else np.zeros(bins)


def test_iou_density_examples():
    g = [np.array([[0, 0, 10, 10]], float), np.array([[5, 5, 9, 9]], float)]
    perfect = [np.c_[g[0], [0.9]], np.c_[g[1], [0.4]]]
    h = iou_density(perfect, g, 10)
    assert h[-1] == 1.0 and h.sum() == 1.0
    none = iou_density([np.zeros((0, 5)), np.zeros((0, 5))], g, 5)
    assert none[0] == 1.0
    with pytest.raises(ValueError):
        iou_density(perfect, g, 0)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 12))
def test_iou_density_matches_naive(seed, bins):
    rng = np.random.default_rng(seed)
    dets, gts = random_instance(rng)
    dets = [np.c_[d[:, :4], rng.random(len(d))] for d in dets]
    assert np.allclose(iou_density(dets, gts, bins), naive_density(dets, gts, bins), rtol=0, atol=1e-15)


def test_report_json_and_table():
    g = [np.array([[0, 0, 10, 10]], float)] * 2
    d = [np.array([[0, 0, 10, 10, 0.9]]), np.zeros((0, 5))]
    rep = coco_ap(d, g, ["clear", "vague"])
    assert rep.AP_clear == 1.0 and rep.AP_vague == 0.0
    back = EvalReport.from_json(rep.to_json())
    assert back == rep
    assert set(json.loads(rep.to_json())) >= {"AP50", "AP75", "AP", "AP_s", "AP_m", "AP_l", "errors"}
    lines = rep.table().splitlines()
    assert lines[0].split() == ["AP50", "AP75", "AP_clear", "AP_vague", "AP_s", "AP_m", "AP_l", "AP"]
    assert "AP_m" in rep.empty and "AP_l" in rep.empty
    with pytest.raises(ValueError):
        EvalReport(1.5, 0, 0, 0, 0, 0)


# -- objectness -------------------------------------------------------------

def test_uniform_image():
    img = np.full((64, 64), 100.0)
    box = (10, 10, 30, 30)
    assert ed_score(img, box) == 0.0 and cc_score(img, box) == 0.0
    assert ms_score(img, box) == 0.0


def test_white_square():
    img = np.zeros((64, 64))
    img[20:40, 20:40] = 255.0
    box = (20, 20, 40, 40)
    assert cc_score(img, box) == 1.0
    assert ss_score(img, box) == 1.0
    assert ed_score(img, box) > 0.3
    assert ms_score(img, box) > ms_score(img, (0, 0, 20, 20))


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_scores_in_unit_interval(seed):
    rng = np.random.default_rng(seed)
    img = rng.uniform(0, 255, (48, 48))
    x1, y1 = rng.integers(0, 30, 2)
    box = (int(x1), int(y1), int(x1 + rng.integers(16, 48 - x1 + 1)), int(y1 + rng.integers(16, 48 - y1 + 1)))
    s = objectness(img, box)
    for v in (s.ms, s.cc, s.ed, s.ss):
        assert 0.0 <= v <= 1.0
    blocks = s.hog.reshape(-1, 4 * 9)
    norms = np.linalg.norm(blocks, axis=1)
    assert np.all((np.abs(norms - 1) < 1e-12) | (norms == 0))


def test_hog_flat_and_errors():
    img = np.zeros((32, 32))
    assert not hog_descriptor(img, (0, 0, 32, 32)).any()
    with pytest.raises(ValueError):
        hog_descriptor(img, (0, 0, 7, 20))
    with pytest.raises(ValueError):
        cc_score(img, (0, 0, 40, 10))


def test_hog_orientation_bin():
    img = np.tile(np.arange(16, dtype=float), (16, 1))  # horizontal ramp: gradient along x, angle 0
    h = hog_descriptor(img, (0, 0, 16, 16)).reshape(4, 9)
    assert np.all(h[:, 0] > 0.49) and not h[:, 1:].any()
