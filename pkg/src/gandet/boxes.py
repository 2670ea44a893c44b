"""Axis-aligned box helpers. Boxes are (cx, cy, w, h), normalized to [0,1]."""

import numpy as np


def to_corners(boxes):
    b = np.atleast_2d(np.asarray(boxes, dtype=float))
    out = np.empty_like(b)
    out[:, 0] = b[:, 0] - b[:, 2] / 2
    out[:, 1] = b[:, 1] - b[:, 3] / 2
    out[:, 2] = b[:, 0] + b[:, 2] / 2
    out[:, 3] = b[:, 1] + b[:, 3] / 2
    return out


def from_corners(corners):
    c = np.atleast_2d(np.asarray(corners, dtype=float))
    out = np.empty_like(c)
    out[:, 0] = (c[:, 0] + c[:, 2]) / 2
    out[:, 1] = (c[:, 1] + c[:, 3]) / 2
    out[:, 2] = c[:, 2] - c[:, 0]
    out[:, 3] = c[:, 3] - c[:, 1]
    return out


def iou_matrix(a, b):
    """Pairwise IoU of two (n,4) / (m,4) center-format box sets -> (n,m)."""
    ca = to_corners(a)
    cb = to_corners(b)
    x1 = np.maximum(ca[:, None, 0], cb[None, :, 0])
    y1 = np.maximum(ca[:, None, 1], cb[None, :, 1])
    x2 = np.minimum(ca[:, None, 2], cb[None, :, 2])
    y2 = np.minimum(ca[:, None, 3], cb[None, :, 3])
    inter = np.clip(x2 - x1, 0, None) * np.clip(y2 - y1, 0, None)
    area_a = (ca[:, 2] - ca[:, 0]) * (ca[:, 3] - ca[:, 1])
    area_b = (cb[:, 2] - cb[:, 0]) * (cb[:, 3] - cb[:, 1])
    union = area_a[:, None] + area_b[None, :] - inter
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(union > 0, inter / union, 0.0)
    return out
