"""Analytic gradients vs central finite differences (64-bit, h=1e-4)."""

import numpy as np
import pytest
from _fd import central_diff, max_rel_error

from gandet import adversarial as adv
from gandet.anchors import encode_targets
from gandet.detector import (
    DetectorConfig,
    backward_batch,
    batch_od_loss_and_output_grads,
    flat_dim,
    forward_batch,
    init_params,
    loss_gradients,
    unflatten_output_grad,
)
from gandet.rng import substream
from gandet.train import freeze_after

TINY = DetectorConfig(image_size=16, channels=(2, 2, 3, 3), head_kernel=1,
                      num_classes=2, anchor_scales=(0.4, 0.7), dtype="float64")


@pytest.fixture(scope="module")
def tiny_instance():
    assert TINY.param_count() <= 500
    params = init_params(TINY, 3)
    images = substream(99, "img").uniform(0, 1, (2, 16, 16, 3))
    anchors = TINY.anchors()
    labels = [np.array([[0, 0.5, 0.5, 0.4, 0.38]]),
              np.array([[1, 0.3, 0.6, 0.45, 0.3]])]
    targets = [encode_targets(lab, anchors, TINY.num_classes) for lab in labels]
    return params, images, targets


def test_detection_loss_gradients_match_fd(tiny_instance):
    params, images, targets = tiny_instance

    def loss():
        out, _ = forward_batch(params, TINY, images)
        s, _, _ = batch_od_loss_and_output_grads(out, targets, TINY.alpha, TINY.neg_pos_ratio)
        return s["l_od"]

    _, grads = loss_gradients(params, TINY, images, targets)
    fd = central_diff(loss, params)
    assert max_rel_error(grads, fd) < 1e-4


def test_gan_generator_gradients_match_fd(tiny_instance):
    params, images, _ = tiny_instance
    disc = adv.init_discriminator(flat_dim(TINY), 5)

    def loss():
        out, _ = forward_batch(params, TINY, images)
        return adv.gan_loss_g(adv.discriminator_forward(disc, out.flat()))

    out, cache = forward_batch(params, TINY, images, want_cache=True)
    _, fc = adv.discriminator_forward(disc, out.flat(), want_cache=True)
    dl, do = unflatten_output_grad(TINY, adv.generator_gan_input_grads(disc, fc))
    grads = backward_batch(params, TINY, cache, dl, do)
    fd = central_diff(loss, params)
    assert max_rel_error(grads, fd) < 1e-4


def test_gan_discriminator_gradients_match_fd():
    disc = adv.init_discriminator(40, 8)
    real = substream(7, "real").normal(0.5, 1.0, (4, 40))
    fake = substream(8, "fake").normal(-0.5, 1.0, (4, 40))

    def loss():
        return adv.gan_loss_d(adv.discriminator_forward(disc, real),
                              adv.discriminator_forward(disc, fake))

    _, rc = adv.discriminator_forward(disc, real, want_cache=True)
    _, fc = adv.discriminator_forward(disc, fake, want_cache=True)
    grads = adv.discriminator_grads(disc, rc, fc)
    fd = central_diff(loss, {"weight": disc.weight, "bias": disc.bias})
    assert max_rel_error(grads, fd) < 1e-4


def test_frozen_tensors_get_exactly_zero_gradient(tiny_instance):
    params, images, targets = tiny_instance
    mask = freeze_after(params, "block2")
    _, grads = loss_gradients(params, TINY, images, targets, trainable=mask)
    for name, g in grads.items():
        if not mask[name]:
            assert np.all(g == 0.0)
        elif name.endswith("weight"):
            assert np.any(g != 0.0)


def test_zero_learning_rate_step_is_noop(tiny_instance):
    from gandet.train import Adam

    params, images, targets = tiny_instance
    snapshot = {k: v.copy() for k, v in params.items()}
    opt = Adam(params, lr=0.0, betas=(0.9, 0.99), eps=1e-8)
    _, grads = loss_gradients(params, TINY, images, targets)
    opt.step(grads)
    for name in params:
        assert np.array_equal(params[name], snapshot[name])
