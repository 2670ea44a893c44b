"""Trainers: clean baseline, fine-tuning, and the adversarial (GAN) trainer.

The adversarial trainer follows the alternating scheme: a frozen baseline
produces "real" outputs on clean images, the generator (same architecture,
initialized from the baseline) produces "fake" outputs on 1:1 clean/degraded
batches, a one-layer discriminator separates them, and the generator
minimizes task loss plus the non-saturating adversarial term. Everything is
a pure function of (config, seed, data): reruns are bit-identical.
"""

import time
from dataclasses import dataclass, field

import numpy as np

from . import adversarial, detector
from .anchors import encode_targets
from .degrade import augment_minibatch
from .errors import ConfigError, NumericError
from .rng import substream
from .schedule import PlateauState, TwoPhaseState


@dataclass
class TrainConfig:
    seed: int = 0
    batch_size: int = 16
    max_epochs: int = 40
    lam: float = 1.0                    # |lambda|: adversarial weight for G
    lr: float = 1e-5                    # generator / fine-tune learning rate
    lr_d: float = 1e-5
    betas_gan: tuple = (0.5, 0.99)
    betas_finetune: tuple = (0.9, 0.99)
    patience_finetune: int = 4
    patience_gando: int = 10
    decay_factor: float = 10.0
    max_decays: int = 2
    d_period: int = 2                   # D updated on iterations 1, 1+p, ...
    freeze_after_layer: str = None
    adam_eps: float = 1e-8
    schedule: str = "plateau"           # "plateau" | "two-phase"
    two_phase_epochs: tuple = (20, 10)

    def validate(self):
        if self.lam <= 0:
            raise ConfigError("lambda magnitude must be positive")
        if self.batch_size % 2 != 0:
            raise ConfigError("batch size must be even")
        if self.patience_finetune < 1 or self.patience_gando < 1:
            raise ConfigError("patience must be >= 1")
        if self.d_period < 1:
            raise ConfigError("d_period must be >= 1")
        if self.schedule not in ("plateau", "two-phase"):
            raise ConfigError(f"unknown schedule {self.schedule!r}")


@dataclass
class TrainLog:
    mode: str
    iterations: list = field(default_factory=list)
    epochs: list = field(default_factory=list)
    lr_events: list = field(default_factory=list)
    wall_clock: float = 0.0

    def rows(self):
        yield {"kind": "meta", "mode": self.mode, "wall_clock": self.wall_clock}
        for it in self.iterations:
            yield {"kind": "iteration", **it}
        for ep in self.epochs:
            yield {"kind": "epoch", **ep}
        for ev in self.lr_events:
            yield {"kind": "lr_event", **ev}


@dataclass
class TrainValData:
    train_images: np.ndarray
    train_labels: list
    val_images: np.ndarray
    val_labels: list

    @classmethod
    def from_manifest(cls, manifest, train_split="train", val_split="val"):
        from .synth import materialize_split

        tr_x, tr_y = materialize_split(manifest, train_split)
        va_x, va_y = materialize_split(manifest, val_split)
        return cls(tr_x, tr_y, va_x, va_y)


class Adam:
    def __init__(self, params, lr, betas, eps, trainable=None):
        self.params = params
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.trainable = trainable or {}
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, grads):
        self.t += 1
        b1c = 1.0 - self.beta1**self.t
        b2c = 1.0 - self.beta2**self.t
        for name, p in self.params.items():
            if not self.trainable.get(name, True):
                continue
            g = grads[name]
            self.m[name] = self.beta1 * self.m[name] + (1 - self.beta1) * g
            self.v[name] = self.beta2 * self.v[name] + (1 - self.beta2) * g * g
            mhat = self.m[name] / b1c
            vhat = self.v[name] / b2c
            p -= (self.lr * mhat / (np.sqrt(vhat) + self.eps)).astype(p.dtype)


def freeze_after(params, k):
    """Trainability mask: ordinals <= ordinal(k) train, the rest freeze.

    ``k`` is a block name ("block2") or None for fully trainable. Head
    tensors sit after every block, so any block-level k freezes them.
    """
    if k is None:
        return {name: True for name in params}
    if k not in detector.FREEZE_LAYERS:
        raise ConfigError(f"unknown freeze layer {k!r}, expected one of {detector.FREEZE_LAYERS}")
    cut = detector.layer_ordinal(k + ".weight")
    return {name: detector.layer_ordinal(name) <= cut for name in params}


def _encode_all(labels_list, anchors, num_classes):
    return [encode_targets(lab, anchors, num_classes) for lab in labels_list]


def _mean_positives(targets_list):
    return float(np.mean([int(t.pos_mask.sum()) for t in targets_list]))


def pooled_od_loss(params, cfg, images, targets_list, chunk=32):
    """Split-pooled L_OD = (sum L_class + alpha sum L_bb) / sum N.

    Accumulation order is fixed (dataset order), so the value is independent
    of how callers would batch the same split.
    """
    empty_neg = round(cfg.neg_pos_ratio * max(_mean_positives(targets_list), 4.0))
    tot_class = tot_bb = 0.0
    tot_n = 0
    for start in range(0, len(images), chunk):
        out, _ = detector.forward_batch(params, cfg, images[start:start + chunk])
        for i in range(out.class_logits.shape[0]):
            li = detector.detection_loss(
                detector.DetectionOutput(out.class_logits[i], out.box_offsets[i]),
                targets_list[start + i],
                cfg.alpha,
                cfg.neg_pos_ratio,
                empty_neg,
            )
            tot_class += li.l_class
            tot_bb += li.l_bb
            tot_n += li.n_matched
    return (tot_class + cfg.alpha * tot_bb) / max(tot_n, 1)


def _augmented_val(data, pool, seed):
    """Fixed 1:1 clean/degraded validation images; same every epoch."""
    n = len(data.val_images)
    images = data.val_images.copy()
    for i in range(n // 2, n):
        rng = substream(seed, "val-augment", i)
        j = int(rng.integers(1, pool.J + 1))
        images[i] = pool.apply(data.val_images[i], j, rng)
    return images


def _make_scheduler(tcfg, mode):
    if tcfg.schedule == "two-phase":
        return TwoPhaseState(*tcfg.two_phase_epochs, factor=tcfg.decay_factor)
    patience = tcfg.patience_gando if mode == "gando" else tcfg.patience_finetune
    return PlateauState(patience, tcfg.decay_factor, tcfg.max_decays)


def _precompute_baseline_flat(baseline_params, cfg, images, chunk=64):
    flats = []
    for start in range(0, len(images), chunk):
        out, _ = detector.forward_batch(baseline_params, cfg, images[start:start + chunk])
        flats.append(out.flat())
    return np.concatenate(flats, axis=0)


def _check_finite(value, what, it, seed):
    if not np.isfinite(value):
        raise NumericError(f"non-finite {what} ({value}) at iteration {it}, seed {seed}")


def _run_training(mode, det_cfg, tcfg, data, pool, init, baseline_params=None,
                  on_decay=None, log_every=1):
    tcfg.validate()
    anchors = det_cfg.anchors()
    train_targets = _encode_all(data.train_labels, anchors, det_cfg.num_classes)
    val_targets = _encode_all(data.val_labels, anchors, det_cfg.num_classes)

    params = {k: v.copy() for k, v in init.items()}
    trainable = freeze_after(params, tcfg.freeze_after_layer)
    betas = tcfg.betas_gan if mode == "gando" else tcfg.betas_finetune
    opt_g = Adam(params, tcfg.lr, betas, tcfg.adam_eps, trainable)

    disc = None
    opt_d = None
    baseline_flat = None
    if mode == "gando":
        disc = adversarial.init_discriminator(detector.flat_dim(det_cfg), tcfg.seed)
        d_params = {"weight": disc.weight, "bias": disc.bias}
        opt_d = Adam(d_params, tcfg.lr_d, tcfg.betas_gan, tcfg.adam_eps)
        baseline_flat = _precompute_baseline_flat(baseline_params, det_cfg, data.train_images)

    if mode == "baseline" or pool is None:
        val_images = data.val_images
    else:
        val_images = _augmented_val(data, pool, tcfg.seed)

    sched = _make_scheduler(tcfg, mode)
    log = TrainLog(mode)
    started = time.monotonic()
    s = tcfg.batch_size
    iteration = 0
    n_train = len(data.train_images)

    for epoch in range(tcfg.max_epochs):
        order = substream(tcfg.seed, "shuffle", epoch).permutation(n_train)
        for start in range(0, n_train - s + 1, s):
            iteration += 1
            idx = order[start:start + s]
            clean = data.train_images[idx]
            batch_targets = [train_targets[i] for i in idx]

            if mode == "baseline" or pool is None:
                batch_images = clean
            else:
                rng = substream(tcfg.seed, "augment", iteration)
                aug = augment_minibatch(
                    [(clean[i], None) for i in range(s)], pool, rng
                )
                batch_images = np.stack([item[0] for item in aug])

            outputs, cache = detector.forward_batch(params, det_cfg, batch_images, want_cache=True)
            rec = {"iteration": iteration, "epoch": epoch}

            if mode == "gando" and (iteration - 1) % tcfg.d_period == 0:
                fake_flat = outputs.flat()
                p_real, real_cache = adversarial.discriminator_forward(
                    disc, baseline_flat[idx], want_cache=True
                )
                p_fake, fake_cache = adversarial.discriminator_forward(
                    disc, fake_flat, want_cache=True
                )
                d_loss = adversarial.gan_loss_d(p_real, p_fake)
                _check_finite(d_loss, "discriminator loss", iteration, tcfg.seed)
                opt_d.step(adversarial.discriminator_grads(disc, real_cache, fake_cache))
                acc_r, acc_f = adversarial.discriminator_accuracy(p_real, p_fake)
                rec.update(d_loss=d_loss, d_acc_real=acc_r, d_acc_fake=acc_f)

            scalars, d_logits, d_offsets = detector.batch_od_loss_and_output_grads(
                outputs, batch_targets, det_cfg.alpha, det_cfg.neg_pos_ratio
            )
            _check_finite(scalars["l_od"], "detection loss", iteration, tcfg.seed)
            rec.update(l_od=scalars["l_od"], l_class=scalars["l_class"], l_bb=scalars["l_bb"])

            if mode == "gando":
                p_fake, fake_cache = adversarial.discriminator_forward(
                    disc, outputs.flat(), want_cache=True
                )
                l_gan = adversarial.gan_loss_g(p_fake)
                _check_finite(l_gan, "generator adversarial loss", iteration, tcfg.seed)
                dflat = adversarial.generator_gan_input_grads(disc, fake_cache)
                gl, go = detector.unflatten_output_grad(det_cfg, dflat)
                d_logits = d_logits + tcfg.lam * gl
                d_offsets = d_offsets + tcfg.lam * go
                rec.update(
                    l_gan=l_gan,
                    l_total=adversarial.total_loss(scalars["l_od"], l_gan, tcfg.lam),
                )

            grads = detector.backward_batch(params, det_cfg, cache, d_logits, d_offsets)
            for name in grads:
                if not trainable[name]:
                    grads[name] = np.zeros_like(grads[name])
            opt_g.step(grads)
            if iteration % log_every == 0:
                log.iterations.append(rec)

        val_loss = pooled_od_loss(params, det_cfg, val_images, val_targets)
        log.epochs.append({"epoch": epoch, "val_loss": val_loss,
                           "lr": opt_g.lr, "iterations": iteration})
        before = sched.multiplier if isinstance(sched, PlateauState) else None
        mult, terminate = sched.update(val_loss)
        opt_g.lr = tcfg.lr * mult
        if opt_d is not None:
            opt_d.lr = tcfg.lr_d * mult
        if before is not None and mult != before:
            log.lr_events.append({"epoch": epoch, "multiplier": mult})
            if on_decay is not None:
                on_decay(params, epoch, mult)
        if terminate:
            break

    log.wall_clock = time.monotonic() - started
    return params, log


def train_baseline(det_cfg, tcfg, data, init_seed=0):
    """Train a detector on clean images only (task loss, no augmentation)."""
    init = detector.init_params(det_cfg, init_seed)
    return _run_training("baseline", det_cfg, tcfg, data, None, init)


def train_finetune(det_cfg, tcfg, baseline_params, data, pool, on_decay=None):
    """Continue training the baseline on 1:1 clean/degraded batches, task loss only."""
    return _run_training("finetune", det_cfg, tcfg, data, pool, baseline_params,
                         on_decay=on_decay)


def train_gando(det_cfg, tcfg, baseline_params, data, pool, on_decay=None):
    """Adversarial training; the baseline stays frozen, only G and D update."""
    return _run_training("gando", det_cfg, tcfg, data, pool, baseline_params,
                         baseline_params=baseline_params, on_decay=on_decay)
