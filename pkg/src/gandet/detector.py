"""Tiny single-shot detector: config, forward/backward, detection losses.

Four conv blocks (3x3 conv -> ReLU -> 2x2 average pool) with class/box heads
on the last two feature scales. Small enough to train on a laptop CPU while
keeping the multi-scale, anchor-based character of single-shot detection.
"""

from dataclasses import dataclass, field

import numpy as np

from . import net
from .anchors import build_anchors
from .errors import ShapeMismatchError
from .rng import substream

MAX_PARAMS = 200_000


@dataclass(frozen=True)
class DetectorConfig:
    image_size: int = 96
    in_channels: int = 3
    channels: tuple = (12, 24, 36, 48)
    head_blocks: tuple = (3, 4)      # 1-based block indices feeding heads
    head_kernel: int = 3
    num_classes: int = 3
    aspect_ratios: tuple = (1.0, 2.0, 0.5)
    anchor_scales: tuple = (33.5 / 96.0, 44.5 / 96.0)
    neg_pos_ratio: int = 3
    alpha: float = 1.0
    pool_type: str = "max"     # backbone downsampling: "max" or "avg"
    dtype: str = "float32"

    @property
    def grids(self):
        return tuple(self.image_size // (2 ** b) for b in self.head_blocks)

    @property
    def num_anchors(self):
        return sum(g * g * len(self.aspect_ratios) for g in self.grids)

    @property
    def np_dtype(self):
        return np.dtype(self.dtype)

    def anchors(self):
        return build_anchors(self.grids, self.aspect_ratios, self.anchor_scales)

    def param_shapes(self):
        shapes = {}
        cin = self.in_channels
        for i, cout in enumerate(self.channels, start=1):
            shapes[f"block{i}.weight"] = (3, 3, cin, cout)
            shapes[f"block{i}.bias"] = (cout,)
            cin = cout
        k = self.head_kernel
        r = len(self.aspect_ratios)
        for b in self.head_blocks:
            cb = self.channels[b - 1]
            shapes[f"head{b}.cls.weight"] = (k, k, cb, r * (self.num_classes + 1))
            shapes[f"head{b}.cls.bias"] = (r * (self.num_classes + 1),)
            shapes[f"head{b}.box.weight"] = (k, k, cb, r * 4)
            shapes[f"head{b}.box.bias"] = (r * 4,)
        return shapes

    def param_count(self):
        return sum(int(np.prod(s)) for s in self.param_shapes().values())


FREEZE_LAYERS = ("block1", "block2", "block3", "block4", "heads")


def layer_ordinal(param_name):
    group = param_name.split(".")[0]
    if group.startswith("block"):
        return int(group[len("block"):])
    return 5  # detection heads sit after every block


def init_params(cfg, seed):
    """Seeded He-normal conv weights, zero biases."""
    if cfg.param_count() >= MAX_PARAMS:
        raise ValueError(f"configuration has {cfg.param_count()} parameters, cap is {MAX_PARAMS}")
    params = {}
    for name, shape in cfg.param_shapes().items():
        if name.endswith("bias"):
            params[name] = np.zeros(shape, dtype=cfg.np_dtype)
        else:
            params[name] = net.he_init(substream(seed, "init", name), shape, cfg.np_dtype)
    return params


@dataclass
class DetectionOutput:
    class_logits: np.ndarray   # (A, C+1) or (S, A, C+1)
    box_offsets: np.ndarray    # (A, 4) or (S, A, 4)

    def flat(self):
        """Discriminator input: class logits then box offsets, flattened."""
        if self.class_logits.ndim == 2:
            return np.concatenate([self.class_logits.ravel(), self.box_offsets.ravel()])
        s = self.class_logits.shape[0]
        return np.concatenate(
            [self.class_logits.reshape(s, -1), self.box_offsets.reshape(s, -1)], axis=1
        )


def flat_dim(cfg):
    return cfg.num_anchors * (cfg.num_classes + 1 + 4)


def unflatten_output_grad(cfg, dflat):
    """Split a (S, flat_dim) gradient back into logits/offsets gradients."""
    s = dflat.shape[0]
    a = cfg.num_anchors
    k = cfg.num_classes + 1
    d_logits = dflat[:, : a * k].reshape(s, a, k)
    d_offsets = dflat[:, a * k:].reshape(s, a, 4)
    return d_logits, d_offsets


def forward_batch(params, cfg, images, want_cache=False):
    x = np.asarray(images, dtype=cfg.np_dtype)
    if x.ndim != 4 or x.shape[1:] != (cfg.image_size, cfg.image_size, cfg.in_channels):
        raise ShapeMismatchError(
            f"expected images (S,{cfg.image_size},{cfg.image_size},{cfg.in_channels}), "
            f"got {x.shape}"
        )
    cache = {"input": x}
    feats = {}
    h = x
    for i in range(1, len(cfg.channels) + 1):
        w, b = params[f"block{i}.weight"], params[f"block{i}.bias"]
        conv_in = h
        z = net.conv2d_forward(conv_in, w, b)
        a = net.relu_forward(z)
        if cfg.pool_type == "max":
            h, pool_idx = net.maxpool2_forward(a)
        else:
            h, pool_idx = net.avgpool2_forward(a), None
        if want_cache:
            cache[f"block{i}.in"] = conv_in
            cache[f"block{i}.z"] = z
            cache[f"block{i}.pool_idx"] = pool_idx
        feats[i] = h

    s = x.shape[0]
    k = cfg.num_classes + 1
    logits_parts, offset_parts = [], []
    for b_idx in cfg.head_blocks:
        feat = feats[b_idx]
        cls = net.conv2d_forward(feat, params[f"head{b_idx}.cls.weight"], params[f"head{b_idx}.cls.bias"])
        box = net.conv2d_forward(feat, params[f"head{b_idx}.box.weight"], params[f"head{b_idx}.box.bias"])
        if want_cache:
            cache[f"head{b_idx}.in"] = feat
        logits_parts.append(cls.reshape(s, -1, k))
        offset_parts.append(box.reshape(s, -1, 4))
    out = DetectionOutput(
        np.concatenate(logits_parts, axis=1), np.concatenate(offset_parts, axis=1)
    )
    return (out, cache) if want_cache else (out, None)


def forward(params, cfg, image):
    """Single-image forward pass -> DetectionOutput with (A, .) arrays."""
    out, _ = forward_batch(params, cfg, np.asarray(image)[None])
    return DetectionOutput(out.class_logits[0], out.box_offsets[0])


def backward_batch(params, cfg, cache, d_logits, d_offsets):
    """Gradients of a scalar loss wrt every parameter, given output grads."""
    grads = {name: np.zeros_like(p) for name, p in params.items()}
    s = d_logits.shape[0]
    k = cfg.num_classes + 1
    r = len(cfg.aspect_ratios)

    dfeat = {i: None for i in range(1, len(cfg.channels) + 1)}
    start = 0
    for b_idx, g in zip(cfg.head_blocks, cfg.grids):
        n = g * g * r
        dl = np.ascontiguousarray(d_logits[:, start:start + n, :], dtype=cfg.np_dtype)
        do = np.ascontiguousarray(d_offsets[:, start:start + n, :], dtype=cfg.np_dtype)
        start += n
        feat = cache[f"head{b_idx}.in"]
        dcls = dl.reshape(s, g, g, r * k)
        dbox = do.reshape(s, g, g, r * 4)
        dx1, dw, db = net.conv2d_backward(feat, params[f"head{b_idx}.cls.weight"], dcls)
        grads[f"head{b_idx}.cls.weight"] = dw
        grads[f"head{b_idx}.cls.bias"] = db
        dx2, dw, db = net.conv2d_backward(feat, params[f"head{b_idx}.box.weight"], dbox)
        grads[f"head{b_idx}.box.weight"] = dw
        grads[f"head{b_idx}.box.bias"] = db
        dfeat[b_idx] = dx1 + dx2

    dh = None
    for i in range(len(cfg.channels), 0, -1):
        if dh is None:
            dh = dfeat[i]
        elif dfeat[i] is not None:
            dh = dh + dfeat[i]
        if cfg.pool_type == "max":
            da = net.maxpool2_backward(dh, cache[f"block{i}.pool_idx"],
                                       cache[f"block{i}.z"].shape)
        else:
            da = net.avgpool2_backward(dh)
        dz = net.relu_backward(cache[f"block{i}.z"], da)
        dx, dw, db = net.conv2d_backward(cache[f"block{i}.in"], params[f"block{i}.weight"], dz)
        grads[f"block{i}.weight"] = dw
        grads[f"block{i}.bias"] = db
        dh = dx
    return grads


def smooth_l1(d):
    d = np.asarray(d, dtype=float)
    out = np.where(np.abs(d) < 1.0, 0.5 * d * d, np.abs(d) - 0.5)
    return out if out.ndim else float(out)


def smooth_l1_grad(d):
    return np.where(np.abs(d) < 1.0, d, np.sign(d))


def _log_softmax(logits):
    z = logits - logits.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


@dataclass
class DetectionLoss:
    l_class: float      # cross-entropy sum over positives + mined negatives
    l_bb: float         # smooth-L1 sum over positive anchors' offsets
    l_od: float         # (l_class + alpha * l_bb) / n_matched
    n_matched: int
    selected_negatives: np.ndarray = field(repr=False, default=None)


def _mine_negatives(log_probs, targets, neg_pos_ratio, empty_neg_count):
    bg = targets.num_classes
    neg_idx = np.nonzero(~targets.pos_mask)[0]
    n_pos = int(targets.pos_mask.sum())
    want = neg_pos_ratio * n_pos if n_pos > 0 else int(empty_neg_count)
    want = min(want, len(neg_idx))
    if want == 0:
        return np.zeros(0, dtype=int), n_pos
    neg_loss = -log_probs[neg_idx, bg]
    order = np.argsort(-neg_loss, kind="stable")  # ties -> lowest anchor index
    return neg_idx[order[:want]], n_pos


def detection_loss(output, targets, alpha=1.0, neg_pos_ratio=3, empty_neg_count=12):
    """Per-image SSD-style loss with hard negative mining.

    Returns sums (not yet divided) plus l_od = (l_class + alpha*l_bb)/N with
    N = positives + selected negatives. With no ground truth, l_bb = 0 and N
    counts ``empty_neg_count`` mined negatives only.
    """
    logits = np.asarray(output.class_logits, dtype=float)
    log_probs = _log_softmax(logits)
    sel_neg, n_pos = _mine_negatives(log_probs, targets, neg_pos_ratio, empty_neg_count)

    pos_idx = np.nonzero(targets.pos_mask)[0]
    l_class = -log_probs[pos_idx, targets.labels[pos_idx]].sum()
    l_class += -log_probs[sel_neg, targets.num_classes].sum()

    diffs = np.asarray(output.box_offsets, dtype=float)[pos_idx] - targets.loc[pos_idx]
    l_bb = smooth_l1(diffs).sum() if len(pos_idx) else 0.0

    n = n_pos + len(sel_neg)
    l_od = (l_class + alpha * l_bb) / n if n > 0 else 0.0
    return DetectionLoss(float(l_class), float(l_bb), float(l_od), int(n), sel_neg)


def _softmax(logits):
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def batch_od_loss_and_output_grads(outputs, targets_list, alpha=1.0, neg_pos_ratio=3):
    """Batch-pooled L_OD = (sum L_class + alpha * sum L_bb) / sum N.

    Returns (scalars dict, d_logits, d_offsets) where the gradients are of
    the pooled L_OD with respect to the raw head outputs. Mining runs per
    image; with an all-empty image the fallback negative count is
    ratio * max(mean positives per image, 4).
    """
    s, a, k = outputs.class_logits.shape
    mean_pos = np.mean([max(int(t.pos_mask.sum()), 0) for t in targets_list])
    empty_neg = neg_pos_ratio * max(mean_pos, 4.0)

    per_image = []
    total_class = total_bb = 0.0
    total_n = 0
    for i in range(s):
        out_i = DetectionOutput(outputs.class_logits[i], outputs.box_offsets[i])
        li = detection_loss(out_i, targets_list[i], alpha, neg_pos_ratio, round(empty_neg))
        per_image.append(li)
        total_class += li.l_class
        total_bb += li.l_bb
        total_n += li.n_matched

    scale = 1.0 / max(total_n, 1)
    d_logits = np.zeros((s, a, k))
    d_offsets = np.zeros((s, a, 4))
    for i, li in enumerate(per_image):
        t = targets_list[i]
        pos_idx = np.nonzero(t.pos_mask)[0]
        probs = _softmax(np.asarray(outputs.class_logits[i], dtype=float))
        for idx, label in ((pos_idx, t.labels[pos_idx]), (li.selected_negatives, None)):
            if len(idx) == 0:
                continue
            tgt = label if label is not None else np.full(len(idx), t.num_classes)
            g = probs[idx].copy()
            g[np.arange(len(idx)), tgt] -= 1.0
            d_logits[i, idx] += g * scale
        if len(pos_idx):
            diffs = np.asarray(outputs.box_offsets[i], dtype=float)[pos_idx] - t.loc[pos_idx]
            d_offsets[i, pos_idx] = alpha * smooth_l1_grad(diffs) * scale

    scalars = {
        "l_class": total_class * scale,
        "l_bb": total_bb * scale,
        "l_od": (total_class + alpha * total_bb) * scale,
        "n_matched": total_n,
    }
    return scalars, d_logits, d_offsets


def loss_gradients(params, cfg, images, targets_list, alpha=None, neg_pos_ratio=None,
                   trainable=None):
    """Analytic gradients of the pooled detection loss wrt every parameter.

    ``trainable`` is an optional name->bool mask; frozen tensors come back
    with exactly-zero gradients.
    """
    alpha = cfg.alpha if alpha is None else alpha
    ratio = cfg.neg_pos_ratio if neg_pos_ratio is None else neg_pos_ratio
    outputs, cache = forward_batch(params, cfg, images, want_cache=True)
    scalars, d_logits, d_offsets = batch_od_loss_and_output_grads(
        outputs, targets_list, alpha, ratio
    )
    if not np.isfinite(scalars["l_od"]):
        from .errors import NumericError

        raise NumericError(f"non-finite detection loss {scalars}")
    grads = backward_batch(params, cfg, cache, d_logits, d_offsets)
    if trainable is not None:
        for name in grads:
            if not trainable.get(name, True):
                grads[name] = np.zeros_like(grads[name])
    return scalars, grads
