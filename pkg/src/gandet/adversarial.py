"""Single-layer discriminator over raw detection outputs, GAN losses."""

from dataclasses import dataclass

import numpy as np

from .rng import substream

LOGIT_CLAMP = 30.0  # keeps sigmoid outputs strictly inside (0,1)


@dataclass
class DiscriminatorParams:
    weight: np.ndarray  # (flat_dim,)
    bias: np.ndarray    # scalar array

    def copy(self):
        return DiscriminatorParams(self.weight.copy(), self.bias.copy())


def init_discriminator(flat_dim, seed, std=0.02, dtype=np.float64):
    rng = substream(seed, "disc-init")
    return DiscriminatorParams(
        rng.normal(0.0, std, flat_dim).astype(dtype),
        np.zeros((), dtype=dtype),
    )


def _sigmoid(z):
    return 1.0 / (1.0 + np.exp(-z))


def discriminator_forward(d, flat, want_cache=False):
    """Probability of the input being a baseline-on-clean output.

    ``flat`` is (S, flat_dim) or (flat_dim,); the pre-activation is clamped
    to +-30 so the probability stays strictly inside (0,1).
    """
    f = np.atleast_2d(np.asarray(flat, dtype=float))
    if f.shape[1] != d.weight.shape[0]:
        from .errors import ShapeMismatchError

        raise ShapeMismatchError(
            f"discriminator expects inputs of length {d.weight.shape[0]}, got {f.shape[1]}"
        )
    z_raw = f @ d.weight + d.bias
    z = np.clip(z_raw, -LOGIT_CLAMP, LOGIT_CLAMP)
    p = _sigmoid(z)
    if np.asarray(flat).ndim == 1:
        p = p[0]
    if want_cache:
        return p, {"flat": f, "z_raw": z_raw}
    return p


def gan_loss_d(p_real, p_fake):
    """-[log D(real) + log(1 - D(fake))], each term averaged over its batch."""
    p_real = np.atleast_1d(np.asarray(p_real, dtype=float))
    p_fake = np.atleast_1d(np.asarray(p_fake, dtype=float))
    return float(-(np.log(p_real).mean() + np.log1p(-p_fake).mean()))


def gan_loss_g(p_fake):
    """Non-saturating generator objective -log D(fake), batch mean."""
    p_fake = np.atleast_1d(np.asarray(p_fake, dtype=float))
    return float(-np.log(p_fake).mean())


def total_loss(l_od, l_gan, lam_signed):
    """Task loss plus signed adversarial weight (positive for G, negative for D)."""
    return l_od + lam_signed * l_gan


def _clamp_grad_mask(z_raw):
    return (np.abs(z_raw) < LOGIT_CLAMP).astype(float)


def discriminator_grads(d, real_cache, fake_cache):
    """Gradients of gan_loss_d wrt discriminator weight and bias."""
    p_real = _sigmoid(np.clip(real_cache["z_raw"], -LOGIT_CLAMP, LOGIT_CLAMP))
    p_fake = _sigmoid(np.clip(fake_cache["z_raw"], -LOGIT_CLAMP, LOGIT_CLAMP))
    nr, nf = len(p_real), len(p_fake)
    dz_real = -(1.0 - p_real) / nr * _clamp_grad_mask(real_cache["z_raw"])
    dz_fake = p_fake / nf * _clamp_grad_mask(fake_cache["z_raw"])
    dw = real_cache["flat"].T @ dz_real + fake_cache["flat"].T @ dz_fake
    db = dz_real.sum() + dz_fake.sum()
    return {"weight": dw, "bias": np.asarray(db)}


def generator_gan_input_grads(d, fake_cache):
    """Gradient of gan_loss_g wrt the flattened generator outputs, (S, flat)."""
    p_fake = _sigmoid(np.clip(fake_cache["z_raw"], -LOGIT_CLAMP, LOGIT_CLAMP))
    n = len(p_fake)
    dz = (p_fake - 1.0) / n * _clamp_grad_mask(fake_cache["z_raw"])
    return np.outer(dz, d.weight)


def discriminator_accuracy(p_real, p_fake):
    return float(np.mean(np.asarray(p_real) > 0.5)), float(np.mean(np.asarray(p_fake) < 0.5))
