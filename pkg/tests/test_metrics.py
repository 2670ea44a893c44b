import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gandet.metrics import (
    COCO_IOU_THRESHOLDS,
    area_bin_edges,
    coco_ap,
    iou,
    load_detections,
    save_detections,
    voc_ap,
)
from gandet.rng import substream


# ---------------------------------------------------------------- oracle ---
def _iou_corner_free(a, b):
    """Scalar IoU from scratch (center format), used only by the oracle."""
    ax0, ay0 = a[0] - a[2] / 2, a[1] - a[3] / 2
    ax1, ay1 = a[0] + a[2] / 2, a[1] + a[3] / 2
    bx0, by0 = b[0] - b[2] / 2, b[1] - b[3] / 2
    bx1, by1 = b[0] + b[2] / 2, b[1] + b[3] / 2
    iw = max(0.0, min(ax1, bx1) - max(ax0, bx0))
    ih = max(0.0, min(ay1, by1) - max(ay0, by0))
    inter = iw * ih
    union = a[2] * a[3] + b[2] * b[3] - inter
    return inter / union if union > 0 else 0.0


def _oracle_match_prefix(rows, gts_by_image, thr):
    """Greedy-match the given detections from scratch; returns (tp, fp)."""
    matched = {k: [False] * len(v) for k, v in gts_by_image.items()}
    tp = fp = 0
    for key, _idx, _score, box in rows:
        gts = gts_by_image.get(key, [])
        best_iou, best_j = 0.0, -1
        for j, g in enumerate(gts):
            if matched[key][j]:
                continue
            v = _iou_corner_free(box, g)
            if v >= thr and v > best_iou:
                best_iou, best_j = v, j
        if best_j >= 0:
            matched[key][best_j] = True
            tp += 1
        else:
            fp += 1
    return tp, fp


def oracle_ap(dets_by_image, gts_by_image, class_id, thr):
    """Threshold-enumeration AP: re-match every score cutoff from scratch,
    then integrate the monotone precision envelope over recall."""
    rows = []
    for key in dets_by_image:
        d = np.atleast_2d(dets_by_image[key])
        for i, row in enumerate(d):
            if len(row) and int(row[0]) == class_id:
                rows.append((key, i, float(row[1]), row[2:6]))
    rows.sort(key=lambda r: (-r[2], r[0], r[1]))
    npos = sum(
        int(np.sum(np.atleast_2d(g)[:, 0].astype(int) == class_id)) if np.asarray(g).size else 0
        for g in gts_by_image.values()
    )
    if npos == 0:
        return None
    gt_boxes = {
        k: [row[1:5] for row in np.atleast_2d(g) if np.asarray(g).size and int(row[0]) == class_id]
        for k, g in gts_by_image.items()
    }
    points = []
    for cut in range(1, len(rows) + 1):
        tp, fp = _oracle_match_prefix(rows[:cut], gt_boxes, thr)
        points.append((tp / npos, tp / (tp + fp)))
    if not points:
        return 0.0
    ap = 0.0
    prev_r = 0.0
    for r in sorted({p[0] for p in points}):
        if r <= prev_r:
            continue
        p_env = max(p for rr, p in points if rr >= r)
        ap += (r - prev_r) * p_env
        prev_r = r
    return ap


def random_instance(seed, n_classes=2, max_dets=20):
    rng = substream(seed, "ap-instance")
    n_img = int(rng.integers(1, 4))
    gts, dets = {}, {}
    for k in range(n_img):
        n_gt = int(rng.integers(0, 4))
        g = np.column_stack([
            rng.integers(0, n_classes, n_gt),
            rng.uniform(0.3, 0.7, n_gt), rng.uniform(0.3, 0.7, n_gt),
            rng.uniform(0.1, 0.4, n_gt), rng.uniform(0.1, 0.4, n_gt),
        ]) if n_gt else np.zeros((0, 5))
        gts[k] = g
        n_det = int(rng.integers(0, max_dets // n_img + 1))
        rows = []
        for _ in range(n_det):
            if n_gt and rng.uniform() < 0.6:
                base = g[int(rng.integers(n_gt))]
                box = base[1:5] + rng.normal(0, 0.03, 4)
                cls = base[0] if rng.uniform() < 0.8 else rng.integers(n_classes)
            else:
                box = np.array([rng.uniform(0.3, 0.7), rng.uniform(0.3, 0.7),
                                rng.uniform(0.1, 0.4), rng.uniform(0.1, 0.4)])
                cls = rng.integers(n_classes)
            rows.append([cls, rng.uniform(), *np.abs(box)])
        dets[k] = np.array(rows) if rows else np.zeros((0, 6))
    return dets, gts


# ----------------------------------------------------------------- tests ---
def test_iou_examples():
    assert iou((0.5, 0.5, 0.2, 0.2), (0.5, 0.5, 0.2, 0.2)) == pytest.approx(1.0)
    assert iou((0.2, 0.2, 0.1, 0.1), (0.8, 0.8, 0.1, 0.1)) == 0.0
    # corner boxes (0,0)-(2,2) and (1,1)-(3,3): intersection 1, union 7
    a = (1.0, 1.0, 2.0, 2.0)
    b = (2.0, 2.0, 2.0, 2.0)
    assert iou(a, b) == pytest.approx(1.0 / 7.0)


def test_iou_zero_area_union():
    assert iou((0.5, 0.5, 0.0, 0.0), (0.5, 0.5, 0.0, 0.0)) == 0.0


def test_voc_ap_perfect_detector():
    gts = {0: np.array([[0, 0.5, 0.5, 0.2, 0.2]])}
    dets = {0: np.array([[0, 0.42, 0.5, 0.5, 0.2, 0.2]])}
    ap, mean = voc_ap(dets, gts, num_classes=1)
    assert ap[0] == pytest.approx(1.0)
    assert mean == pytest.approx(1.0)


def test_voc_ap_tp_then_fp_equals_one():
    gts = {0: np.array([[0, 0.5, 0.5, 0.2, 0.2]])}
    dets = {0: np.array([
        [0, 0.9, 0.5, 0.5, 0.2, 0.2],     # TP
        [0, 0.8, 0.9, 0.9, 0.1, 0.1],     # FP after full recall
    ])}
    ap, _ = voc_ap(dets, gts, num_classes=1)
    assert ap[0] == pytest.approx(1.0)


def test_voc_ap_fp_then_tp_equals_half():
    gts = {0: np.array([[0, 0.5, 0.5, 0.2, 0.2]])}
    dets = {0: np.array([
        [0, 0.9, 0.9, 0.9, 0.1, 0.1],     # FP ranked first
        [0, 0.8, 0.5, 0.5, 0.2, 0.2],     # TP
    ])}
    ap, _ = voc_ap(dets, gts, num_classes=1)
    assert ap[0] == pytest.approx(0.5)


def test_voc_ap_class_without_gt_is_undefined():
    gts = {0: np.array([[0, 0.5, 0.5, 0.2, 0.2]])}
    dets = {0: np.array([[1, 0.9, 0.5, 0.5, 0.2, 0.2]])}
    ap, mean = voc_ap(dets, gts, num_classes=2)
    assert ap[1] is None
    assert mean == ap[0]


def test_voc_ap_matches_threshold_oracle():
    for seed in range(100):
        dets, gts = random_instance(seed)
        ap, _ = voc_ap(dets, gts, num_classes=2)
        for c in range(2):
            expected = oracle_ap(dets, gts, c, 0.5)
            if expected is None:
                assert ap[c] is None
            else:
                assert ap[c] == pytest.approx(expected, abs=1e-12), f"seed={seed} class={c}"


def test_score_tie_break_by_image_key_then_index():
    # same scores; deterministic order means image 0's FP ranks first
    gts = {0: np.array([[0, 0.5, 0.5, 0.2, 0.2]]), 1: np.array([[0, 0.5, 0.5, 0.2, 0.2]])}
    dets = {
        0: np.array([[0, 0.8, 0.9, 0.9, 0.05, 0.05]]),   # FP, image 0
        1: np.array([[0, 0.8, 0.5, 0.5, 0.2, 0.2]]),     # TP, image 1
    }
    ap, _ = voc_ap(dets, gts, num_classes=1)
    # order: FP then TP -> PR (0,0), (0.5, 0.5); envelope area = 0.25
    assert ap[0] == pytest.approx(0.25)


def test_duplicate_detection_of_matched_gt_cannot_raise_ap():
    checked = 0
    for seed in range(40):
        dets, gts = random_instance(seed)
        key = next((k for k in sorted(gts) if np.asarray(gts[k]).size), None)
        if key is None:
            continue
        target = np.atleast_2d(gts[key])[0]
        # guarantee the gt is matched: an exact, top-ranked detection
        matcher = np.array([[target[0], 2.0, *target[1:5]]])
        base = dict(dets)
        base[key] = (
            np.vstack([matcher, np.atleast_2d(dets[key])])
            if np.asarray(dets[key]).size else matcher
        )
        ap_before, _ = voc_ap(base, gts, num_classes=2)
        # the duplicate ranks last, so the gt is consumed before it
        dup = np.array([[target[0], 1e-6, *target[1:5]]])
        dets2 = dict(base)
        dets2[key] = np.vstack([base[key], dup])
        ap_after, _ = voc_ap(dets2, gts, num_classes=2)
        c = int(target[0])
        assert ap_after[c] <= ap_before[c] + 1e-12
        checked += 1
    assert checked >= 20


@settings(max_examples=30, deadline=None)
@given(st.integers(min_value=0, max_value=10_000), st.floats(min_value=0.1, max_value=10.0))
def test_ap_invariant_to_monotone_score_rescaling(seed, scale):
    dets, gts = random_instance(seed)
    ap1, _ = voc_ap(dets, gts, num_classes=2)
    dets2 = {}
    for k, d in dets.items():
        d2 = np.atleast_2d(d).copy()
        if d2.size:
            d2[:, 1] = d2[:, 1] * scale + 0.5  # strictly monotone
        dets2[k] = d2
    ap2, _ = voc_ap(dets2, gts, num_classes=2)
    for c in range(2):
        if ap1[c] is None:
            assert ap2[c] is None
        else:
            assert ap2[c] == pytest.approx(ap1[c], abs=1e-12)


def test_coco_perfect_detector_all_ones():
    gts = {0: np.array([[0, 0.5, 0.5, 0.5, 0.5]])}
    dets = {0: np.array([[0, 0.99, 0.5, 0.5, 0.5, 0.5]])}
    rep = coco_ap(dets, gts, num_classes=1, image_size=96)
    assert rep.map50 == pytest.approx(1.0)
    assert rep.map_avg == pytest.approx(1.0)
    assert rep.ap75 == pytest.approx(1.0)
    assert rep.ap_large == pytest.approx(1.0)
    assert rep.ap_small is None and rep.ap_medium is None


def test_coco_iou_point_six_counts_at_three_thresholds():
    # det offset by w/4 with all coordinates exact binary fractions:
    # I = (3/4 w)(w) and U = (5/4 w)(w), so IoU is exactly 3/5
    w = 0.25
    gts = {0: np.array([[0, 0.5, 0.5, w, w]])}
    dets = {0: np.array([[0, 0.9, 0.5 + w / 4, 0.5, w, w]])}
    v = iou(dets[0][0][2:6], gts[0][0][1:5])
    assert v == 0.75 * w * w / (1.25 * w * w)
    assert v >= COCO_IOU_THRESHOLDS[2]  # the 0.60 threshold
    rep = coco_ap(dets, gts, num_classes=1, image_size=96)
    assert rep.map50 == pytest.approx(1.0)
    assert rep.map_avg == pytest.approx(3.0 / 10.0)
    assert rep.ap75 == pytest.approx(0.0)


def test_coco_avg_is_mean_of_per_threshold_aps():
    dets, gts = random_instance(5)
    rep = coco_ap(dets, gts, num_classes=2, image_size=96)
    per_thr = []
    for thr in COCO_IOU_THRESHOLDS:
        ap, mean = voc_ap(dets, gts, num_classes=2, iou_threshold=thr)
        per_thr.append(mean)
    assert rep.map_avg == pytest.approx(float(np.mean(per_thr)), abs=1e-12)
    assert rep.map_avg <= rep.map50 + 1e-12


def test_coco_area_bins():
    lo, hi = area_bin_edges(96)
    assert lo == pytest.approx(32**2 * (96 / 640) ** 2)
    assert hi == pytest.approx(96**2 * (96 / 640) ** 2)
    px = 96.0
    small = 4 / px      # 16 px^2 < 23.04
    med = 10 / px       # 100 px^2 in [23.04, 207.36)
    large = 48 / px     # 2304 px^2
    gts = {0: np.array([
        [0, 0.2, 0.2, small, small],
        [0, 0.5, 0.5, med, med],
        [0, 0.8, 0.8, large, large],
    ])}
    dets = {0: np.array([
        [0, 0.9, 0.2, 0.2, small, small],
        [0, 0.8, 0.5, 0.5, med, med],
        # large gt undetected
    ])}
    rep = coco_ap(dets, gts, num_classes=1, image_size=96)
    assert rep.ap_small == pytest.approx(1.0)
    assert rep.ap_medium == pytest.approx(1.0)
    assert rep.ap_large == pytest.approx(0.0)


def test_detection_dump_roundtrip(tmp_path):
    dets, _ = random_instance(3)
    path = tmp_path / "dets.jsonl"
    save_detections(dets, path)
    back = load_detections(path)
    for k in dets:
        d = np.atleast_2d(dets[k])
        if not d.size:
            assert k not in back
            continue
        assert back[k].shape == d.shape
        assert np.allclose(back[k][:, 1:], d[:, 1:])
