"""Detection metrics (VOC- and COCO-style AP) and loss-degradation probes.

AP uses all-point interpolation (area under the monotone precision
envelope); matching is greedy by descending score with fully deterministic
tie-breaking (score ties by image key then detection index, IoU ties by
ground-truth index). Classes without ground truth are undefined (None) and
excluded from means.
"""

import json
from dataclasses import dataclass

import numpy as np

from . import detector
from .anchors import decode_detections
from .boxes import iou_matrix
from .degrade import apply_random_level
from .rng import substream

COCO_IOU_THRESHOLDS = tuple(np.round(np.arange(0.50, 0.96, 0.05), 2))
COCO_REFERENCE_SIDE = 640
COCO_AREA_EDGES = (32.0**2, 96.0**2)


def iou(a, b):
    """IoU of two (cx, cy, w, h) boxes; 0 when the union has zero area."""
    return float(iou_matrix(np.asarray(a)[None], np.asarray(b)[None])[0, 0])


def _class_detections(dets_by_image, class_id):
    """All detections of one class as sortable rows (key, det_idx, score, box)."""
    rows = []
    for key in sorted(dets_by_image):
        d = np.asarray(dets_by_image[key])
        if d.size == 0:
            continue
        for det_idx in range(len(d)):
            if int(d[det_idx, 0]) == class_id:
                rows.append((key, det_idx, float(d[det_idx, 1]), d[det_idx, 2:6]))
    rows.sort(key=lambda r: (-r[2], r[0], r[1]))
    return rows


def _match_class(dets_by_image, gts_by_image, class_id, iou_threshold,
                 active=None, ignored=None):
    """Greedy matching; returns (tp flags, npos). Ignored gts absorb detections.

    ``active``/``ignored`` map image key -> (k,) bool over that image's gts
    of this class; by default every gt is active (plain VOC matching).
    """
    gt_boxes = {}
    gt_active = {}
    npos = 0
    for key in gts_by_image:
        g = np.asarray(gts_by_image[key])
        sel = np.nonzero(g[:, 0].astype(int) == class_id)[0] if g.size else np.array([], int)
        boxes = g[sel, 1:5] if len(sel) else np.zeros((0, 4))
        act = np.ones(len(sel), bool) if active is None else active[key]
        ign = np.zeros(len(sel), bool) if ignored is None else ignored[key]
        gt_boxes[key] = boxes
        gt_active[key] = (act & ~ign, ign)
        npos += int((act & ~ign).sum())

    tp = []
    matched = {key: np.zeros(len(gt_boxes[key]), bool) for key in gt_boxes}
    for key, _det_idx, _score, box in _class_detections(dets_by_image, class_id):
        boxes = gt_boxes.get(key)
        act, ign = gt_active.get(key, (None, None))
        if boxes is None or len(boxes) == 0:
            tp.append(False)
            continue
        ious = iou_matrix(box[None], boxes)[0]
        cand = np.nonzero(act & ~matched[key] & (ious >= iou_threshold))[0]
        if len(cand):
            best = cand[np.argmax(ious[cand])]  # argmax ties -> lowest gt index
            matched[key][best] = True
            tp.append(True)
        elif np.any(ign & (ious >= iou_threshold)):
            continue  # absorbed by an out-of-bin gt: neither TP nor FP
        else:
            tp.append(False)
    return np.asarray(tp, bool), npos


def _ap_from_flags(tp, npos):
    if npos == 0:
        return None
    if len(tp) == 0:
        return 0.0
    tp_cum = np.cumsum(tp)
    fp_cum = np.cumsum(~tp)
    recall = tp_cum / npos
    precision = tp_cum / (tp_cum + fp_cum)
    mrec = np.concatenate(([0.0], recall, [recall[-1]]))
    mpre = np.concatenate(([0.0], precision, [0.0]))
    for i in range(len(mpre) - 1, 0, -1):
        mpre[i - 1] = max(mpre[i - 1], mpre[i])
    steps = np.nonzero(mrec[1:] != mrec[:-1])[0]
    return float(np.sum((mrec[steps + 1] - mrec[steps]) * mpre[steps + 1]))


def _defined_mean(values):
    vals = [v for v in values if v is not None]
    return float(np.mean(vals)) if vals else None


def voc_ap(dets_by_image, gts_by_image, num_classes, iou_threshold=0.5):
    """Per-class AP at one IoU threshold plus their mean.

    Returns ({class_id: AP or None}, mAP). ``dets_by_image`` maps image key
    -> (m,6) [class, score, cx, cy, w, h]; ``gts_by_image`` maps the same
    keys -> (k,5) [class, cx, cy, w, h].
    """
    ap = {}
    for c in range(num_classes):
        tp, npos = _match_class(dets_by_image, gts_by_image, c, iou_threshold)
        ap[c] = _ap_from_flags(tp, npos)
    return ap, _defined_mean(ap.values())


@dataclass
class APReport:
    per_class_ap50: dict
    map50: float
    map_avg: float           # mean over IoU in {0.50, 0.55, ..., 0.95}
    ap75: float
    ap_small: float
    ap_medium: float
    ap_large: float
    num_gt: int
    num_detections: int
    interpolation: str = "all-point"

    def to_dict(self):
        return {
            "per_class_ap50": {str(k): v for k, v in self.per_class_ap50.items()},
            "map50": self.map50,
            "map_avg": self.map_avg,
            "ap75": self.ap75,
            "ap_small": self.ap_small,
            "ap_medium": self.ap_medium,
            "ap_large": self.ap_large,
            "num_gt": self.num_gt,
            "num_detections": self.num_detections,
            "interpolation": self.interpolation,
        }


def area_bin_edges(image_size):
    """COCO's 32^2 / 96^2 pixel-area edges scaled by (image_size/640)^2."""
    scale = (image_size / COCO_REFERENCE_SIDE) ** 2
    return COCO_AREA_EDGES[0] * scale, COCO_AREA_EDGES[1] * scale


def _bin_masks(gts_by_image, image_size, edges):
    lo, hi = edges
    bins = {"small": {}, "medium": {}, "large": {}}
    for key, g in gts_by_image.items():
        g = np.asarray(g)
        areas = (g[:, 3] * g[:, 4] * image_size * image_size) if g.size else np.zeros(0)
        bins["small"][key] = areas < lo
        bins["medium"][key] = (areas >= lo) & (areas < hi)
        bins["large"][key] = areas >= hi
    return bins


def _per_class_masks(gts_by_image, mask_by_image, class_id):
    out = {}
    for key, g in gts_by_image.items():
        g = np.asarray(g)
        sel = np.nonzero(g[:, 0].astype(int) == class_id)[0] if g.size else np.array([], int)
        out[key] = mask_by_image[key][sel]
    return out


def coco_ap(dets_by_image, gts_by_image, num_classes, image_size, area_edges=None):
    """COCO-style report: AP averaged over 10 IoU thresholds plus area bins.

    Area-bin APs restrict ground truth to the bin; detections overlapping an
    out-of-bin gt are ignored rather than counted as false positives. The
    averaged values are exact arithmetic means of the per-threshold APs.
    """
    edges = area_edges or area_bin_edges(image_size)
    bins = _bin_masks(gts_by_image, image_size, edges)

    maps = {}
    ap50_per_class = None
    for thr in COCO_IOU_THRESHOLDS:
        per_class = {}
        for c in range(num_classes):
            tp, npos = _match_class(dets_by_image, gts_by_image, c, thr)
            per_class[c] = _ap_from_flags(tp, npos)
        maps[thr] = _defined_mean(per_class.values())
        if thr == 0.50:
            ap50_per_class = per_class

    bin_aps = {}
    for bin_name, mask in bins.items():
        per_thr = []
        for thr in COCO_IOU_THRESHOLDS:
            per_class = []
            for c in range(num_classes):
                cls_mask = _per_class_masks(gts_by_image, mask, c)
                ignored = {k: ~m for k, m in cls_mask.items()}
                tp, npos = _match_class(
                    dets_by_image, gts_by_image, c, thr, active=cls_mask, ignored=ignored
                )
                per_class.append(_ap_from_flags(tp, npos))
            per_thr.append(_defined_mean(per_class))
        bin_aps[bin_name] = _defined_mean(per_thr)

    num_gt = sum(len(np.atleast_2d(g)) if np.asarray(g).size else 0 for g in gts_by_image.values())
    num_det = sum(len(np.atleast_2d(d)) if np.asarray(d).size else 0 for d in dets_by_image.values())
    return APReport(
        per_class_ap50=ap50_per_class,
        map50=maps[0.50],
        map_avg=_defined_mean(maps.values()),
        ap75=maps[0.75],
        ap_small=bin_aps["small"],
        ap_medium=bin_aps["medium"],
        ap_large=bin_aps["large"],
        num_gt=num_gt,
        num_detections=num_det,
    )


def predict_split(params, cfg, images, conf_threshold=0.05, nms_iou=0.45,
                  max_dets=100, chunk=32):
    """Run the detector over a split -> {index: (m,6) detections}."""
    anchors = cfg.anchors()
    dets = {}
    for start in range(0, len(images), chunk):
        out, _ = detector.forward_batch(params, cfg, images[start:start + chunk])
        for i in range(out.class_logits.shape[0]):
            single = detector.DetectionOutput(out.class_logits[i], out.box_offsets[i])
            dets[start + i] = decode_detections(single, anchors, conf_threshold,
                                                nms_iou, max_dets)
    return dets


@dataclass
class LossBreakdown:
    family: str            # distortion family or "none"
    mean_l_class: float    # per-image L_class / N, averaged over the split
    mean_l_bb: float       # per-image L_bb / N, averaged over the split

    def to_dict(self):
        return {"family": self.family, "mean_l_class": self.mean_l_class,
                "mean_l_bb": self.mean_l_bb}


def loss_decomposition(params, cfg, images, labels_list, pool=None, seed=0, chunk=32):
    """Mean classification / box-regression loss with a distortion applied.

    Every image gets a uniformly drawn level from ``pool`` (or stays clean
    when pool is None). Deterministic in (params, data, pool, seed).
    """
    from .anchors import encode_targets

    anchors = cfg.anchors()
    targets = [encode_targets(lab, anchors, cfg.num_classes) for lab in labels_list]
    if pool is not None:
        work = np.stack([
            apply_random_level(images[i], pool, substream(seed, "decomp", i))[0]
            for i in range(len(images))
        ])
    else:
        work = images
    empty_neg = round(cfg.neg_pos_ratio * max(
        float(np.mean([t.pos_mask.sum() for t in targets])), 4.0))
    l_class, l_bb = [], []
    for start in range(0, len(work), chunk):
        out, _ = detector.forward_batch(params, cfg, work[start:start + chunk])
        for i in range(out.class_logits.shape[0]):
            li = detector.detection_loss(
                detector.DetectionOutput(out.class_logits[i], out.box_offsets[i]),
                targets[start + i], cfg.alpha, cfg.neg_pos_ratio, empty_neg,
            )
            l_class.append(li.l_class / li.n_matched)
            l_bb.append(li.l_bb / li.n_matched)
    family = pool.family if pool is not None else "none"
    return LossBreakdown(family, float(np.mean(l_class)), float(np.mean(l_bb)))


def per_level_sweep(params, cfg, images, labels_list, family, **predict_kw):
    """mAP at each fixed blur level r in {0, 2, ..., 12} (0 = clean)."""
    from .degrade import BLUR_RADII, DistortionPool

    if family not in ("gaussian", "defocus"):
        raise ValueError("per-level sweep supports gaussian and defocus only")
    pool = DistortionPool.from_name(family)
    gts = {i: labels_list[i] for i in range(len(labels_list))}
    result = {}
    for r in (0,) + tuple(BLUR_RADII):
        if r == 0:
            work = images
        else:
            j = BLUR_RADII.index(r) + 1
            work = np.stack([pool.apply(img, j) for img in images])
        dets = predict_split(params, cfg, work, **predict_kw)
        _, m = voc_ap(dets, gts, cfg.num_classes)
        result[r] = m
    return result


def cross_distortion_matrix(models, families, cfg, images, labels_list, seed=0,
                            pools=None, **predict_kw):
    """mAP of each model on each family's full-level random distortion.

    ``models`` maps a label (typically the family the model was trained on)
    to its parameters. Every (model, family) cell is independently
    reproducible from (params, family, seed).
    """
    from .degrade import DistortionPool

    pools = pools or {}
    gts = {i: labels_list[i] for i in range(len(labels_list))}
    matrix = {}
    for model_name, params in models.items():
        matrix[model_name] = {}
        for family in families:
            pool = pools.get(family) or DistortionPool.from_name(family)
            work = np.stack([
                apply_random_level(images[i], pool, substream(seed, "cross", family, i))[0]
                for i in range(len(images))
            ])
            dets = predict_split(params, cfg, work, **predict_kw)
            _, m = voc_ap(dets, gts, cfg.num_classes)
            matrix[model_name][family] = m
    return matrix


def save_detections(dets_by_image, path):
    """Line-delimited detection dump: image key, class, score, box."""
    with open(path, "w") as fh:
        for key in sorted(dets_by_image):
            for d in np.atleast_2d(dets_by_image[key]):
                if len(d) == 0:
                    continue
                fh.write(json.dumps({
                    "image": key, "class_id": int(d[0]), "score": float(d[1]),
                    "box": [float(v) for v in d[2:6]],
                }) + "\n")


def load_detections(path):
    dets = {}
    with open(path) as fh:
        for line in fh:
            row = json.loads(line)
            dets.setdefault(row["image"], []).append(
                [row["class_id"], row["score"], *row["box"]]
            )
    return {k: np.array(v) for k, v in dets.items()}
