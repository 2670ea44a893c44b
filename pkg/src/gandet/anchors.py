"""SSD-style anchor grid, target encoding and detection decoding."""

from dataclasses import dataclass

import numpy as np

from .boxes import from_corners, iou_matrix, to_corners

DEFAULT_GRIDS = (12, 6)
DEFAULT_RATIOS = (1.0, 2.0, 0.5)
DEFAULT_SCALES = (33.5 / 96.0, 44.5 / 96.0)


def build_anchors(grid_sizes=DEFAULT_GRIDS, aspect_ratios=DEFAULT_RATIOS, scales=DEFAULT_SCALES):
    """(sum g^2 * len(ratios), 4) anchor array in (cx, cy, w, h) order.

    Layout is grid-major, cells row-major, ratio index fastest — the same
    order the detection heads emit.
    """
    if not grid_sizes or not aspect_ratios:
        raise ValueError("need at least one grid and one aspect ratio")
    if len(scales) != len(grid_sizes):
        raise ValueError("one scale per grid required")
    rows = []
    for g, s in zip(grid_sizes, scales):
        for i in range(g):
            for j in range(g):
                cx = (j + 0.5) / g
                cy = (i + 0.5) / g
                for r in aspect_ratios:
                    rows.append((cx, cy, s * np.sqrt(r), s / np.sqrt(r)))
    return np.array(rows)


@dataclass
class EncodedTargets:
    labels: np.ndarray     # (A,) int, class id or background = num_classes
    loc: np.ndarray        # (A, 4) regression targets, defined where pos_mask
    pos_mask: np.ndarray   # (A,) bool
    num_classes: int


def encode_box(gt_box, anchor):
    ax, ay, aw, ah = anchor
    cx, cy, w, h = gt_box
    return np.array([(cx - ax) / aw, (cy - ay) / ah, np.log(w / aw), np.log(h / ah)])


def decode_box(offsets, anchor):
    ax, ay, aw, ah = anchor
    tx, ty, tw, th = offsets
    return np.array([ax + tx * aw, ay + ty * ah, aw * np.exp(tw), ah * np.exp(th)])


def encode_targets(gt_labels, anchors, num_classes, iou_threshold=0.5):
    """Match ground truth to anchors (best anchor forced + IoU threshold).

    ``gt_labels`` is a (k,5) array [class_id, cx, cy, w, h]. Ambiguities
    resolve deterministically: argmax picks the lowest index, and forced
    best-anchor assignments override threshold matches.
    """
    a = len(anchors)
    labels = np.full(a, num_classes, dtype=int)
    loc = np.zeros((a, 4))
    pos = np.zeros(a, dtype=bool)
    gt = np.atleast_2d(np.asarray(gt_labels, dtype=float))
    if gt.size == 0:
        return EncodedTargets(labels, loc, pos, num_classes)

    ious = iou_matrix(gt[:, 1:5], anchors)          # (k, A)
    assigned = ious.argmax(axis=0)                  # best gt per anchor
    best_iou = ious.max(axis=0)
    keep = best_iou >= iou_threshold
    # every gt claims its single best anchor regardless of threshold
    forced = ious.argmax(axis=1)
    assigned[forced] = np.arange(len(gt))
    keep[forced] = True

    pos[keep] = True
    labels[keep] = gt[assigned[keep], 0].astype(int)
    for idx in np.nonzero(keep)[0]:
        loc[idx] = encode_box(gt[assigned[idx], 1:5], anchors[idx])
    return EncodedTargets(labels, loc, pos, num_classes)


def decode_offsets(offsets, anchors):
    """Vectorized inverse of encode_box for (A,4) offsets."""
    out = np.empty_like(offsets, dtype=float)
    out[:, 0] = anchors[:, 0] + offsets[:, 0] * anchors[:, 2]
    out[:, 1] = anchors[:, 1] + offsets[:, 1] * anchors[:, 3]
    out[:, 2] = anchors[:, 2] * np.exp(offsets[:, 2])
    out[:, 3] = anchors[:, 3] * np.exp(offsets[:, 3])
    return out


def nms_greedy(boxes, scores, iou_threshold):
    """Greedy NMS; ties in score break by ascending input index."""
    order = np.argsort(-scores, kind="stable")
    keep = []
    suppressed = np.zeros(len(boxes), dtype=bool)
    for idx in order:
        if suppressed[idx]:
            continue
        keep.append(idx)
        ious = iou_matrix(boxes[idx:idx + 1], boxes)[0]
        suppressed |= ious > iou_threshold
        suppressed[idx] = True
    return np.array(keep, dtype=int)


def softmax(logits, axis=-1):
    z = logits - logits.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def decode_detections(output, anchors, conf_threshold=0.05, nms_iou=0.45, max_dets=100):
    """DetectionOutput -> (m,6) array [class_id, score, cx, cy, w, h].

    Per class: softmax score cut at ``conf_threshold``, offsets decoded,
    boxes clipped to the unit square, greedy NMS, then a global top-k by
    score. Detections whose clipped box degenerates are dropped.
    """
    probs = softmax(np.asarray(output.class_logits, dtype=float))
    num_classes = probs.shape[1] - 1
    boxes = decode_offsets(np.asarray(output.box_offsets, dtype=float), anchors)
    corners = np.clip(to_corners(boxes), 0.0, 1.0)
    boxes = from_corners(corners)
    valid = (boxes[:, 2] > 0) & (boxes[:, 3] > 0)

    rows = []
    for c in range(num_classes):
        sel = np.nonzero((probs[:, c] >= conf_threshold) & valid)[0]
        if sel.size == 0:
            continue
        keep = nms_greedy(boxes[sel], probs[sel, c], nms_iou)
        for i in keep:
            a = sel[i]
            rows.append((c, probs[a, c], *boxes[a]))
    if not rows:
        return np.zeros((0, 6))
    dets = np.array(rows)
    order = np.argsort(-dets[:, 1], kind="stable")[:max_dets]
    return dets[order]
