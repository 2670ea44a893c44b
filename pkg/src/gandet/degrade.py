"""Image-quality degradations: blur kernel families, AWGN, batch augmentation.

Blur levels follow the fixed pools (radii 2..12 step 2 for Gaussian and
defocus, 50 seeded camera-shake kernels, AWGN sigma 20..100 step 20 on the
0-255 scale). Degraded batches mix 1:1 with clean images, clean half first.
"""

from dataclasses import dataclass

import numpy as np
from scipy import interpolate, ndimage, signal

from .errors import BatchSizeError, LevelError
from .rng import substream

BLUR_RADII = (2, 4, 6, 8, 10, 12)
AWGN_SIGMAS = (20, 40, 60, 80, 100)
CAMSHAKE_COUNT = 50
CAMSHAKE_SIZE = 21
DEFAULT_CAMSHAKE_SEED = 2023

_DIRECT_CONV_MAX_SIDE = 7  # small kernels convolve exactly; larger go via FFT


@dataclass(frozen=True)
class Kernel:
    taps: np.ndarray
    family: str
    level_index: int
    nominal_radius: float

    def validate(self):
        side = self.taps.shape[0]
        assert self.taps.ndim == 2 and self.taps.shape[1] == side
        assert side % 2 == 1
        assert np.all(self.taps >= 0)
        assert abs(self.taps.sum() - 1.0) <= 1e-6


@dataclass(frozen=True)
class QualityTag:
    is_clean: bool
    family: str = None
    level_index: int = None


def gaussian_kernel(radius):
    """Gaussian blur kernel of side 2r+1 with sigma = r/2, sum 1."""
    if radius not in BLUR_RADII:
        raise LevelError(f"gaussian radius {radius} not in pool {BLUR_RADII}")
    sigma = radius / 2.0
    u = np.arange(-radius, radius + 1, dtype=float)
    g = np.exp(-(u[:, None] ** 2 + u[None, :] ** 2) / (2.0 * sigma**2))
    g /= g.sum()
    return Kernel(g, "gaussian", BLUR_RADII.index(radius) + 1, float(radius))


def defocus_kernel(radius):
    """Uniform circular average over the integer disc u^2+v^2 <= r^2."""
    if radius not in BLUR_RADII:
        raise LevelError(f"defocus radius {radius} not in pool {BLUR_RADII}")
    u = np.arange(-radius, radius + 1, dtype=float)
    disc = (u[:, None] ** 2 + u[None, :] ** 2) <= radius**2
    taps = disc / disc.sum()
    return Kernel(taps, "defocus", BLUR_RADII.index(radius) + 1, float(radius))


def camshake_kernel(seed, size=CAMSHAKE_SIZE):
    """Seeded camera-shake kernel: smooth random trajectory splatted on a grid.

    Control points come from a 2D Gaussian random walk, a cubic spline fills
    in ~200 trajectory samples, and each sample is deposited with bilinear
    weights. Deterministic in (seed, size).
    """
    if size % 2 != 1:
        raise ValueError("kernel size must be odd")
    rng = substream(seed, "camshake")
    n_ctrl = int(rng.integers(4, 9))
    walk = np.cumsum(rng.normal(0.0, 1.0, (n_ctrl, 2)), axis=0)
    walk -= walk.mean(axis=0)
    extent = np.abs(walk).max()
    if extent < 1e-9:
        extent = 1e-9
    reach = rng.uniform(0.35, 0.95) * (size // 2 - 1)
    walk *= reach / extent

    t = np.linspace(0.0, 1.0, n_ctrl)
    spline = interpolate.make_interp_spline(t, walk, k=min(3, n_ctrl - 1))
    samples = spline(np.linspace(0.0, 1.0, 200))

    taps = np.zeros((size, size))
    c = size // 2
    x = samples[:, 0] + c
    y = samples[:, 1] + c
    x = np.clip(x, 0.0, size - 1.0 - 1e-9)
    y = np.clip(y, 0.0, size - 1.0 - 1e-9)
    ix, iy = x.astype(int), y.astype(int)
    fx, fy = x - ix, y - iy
    np.add.at(taps, (iy, ix), (1 - fx) * (1 - fy))
    np.add.at(taps, (iy, ix + 1), fx * (1 - fy))
    np.add.at(taps, (iy + 1, ix), (1 - fx) * fy)
    np.add.at(taps, (iy + 1, ix + 1), fx * fy)
    taps /= taps.sum()
    return Kernel(taps, "camshake", 0, float(reach))


def _convolve_channel(chan, taps):
    if taps.shape[0] <= _DIRECT_CONV_MAX_SIDE:
        return ndimage.convolve(chan, taps, mode="nearest")
    r = taps.shape[0] // 2
    padded = np.pad(chan, r, mode="edge")
    return signal.fftconvolve(padded, taps, mode="valid")


def convolve2d(image, kernel):
    """Same-size 2D convolution with edge-replicate padding, clipped to [0,1].

    True convolution (kernel flipped), applied per channel. Output dtype
    matches the input; accumulation runs in float64.
    """
    taps = np.asarray(kernel.taps, dtype=np.float64)
    img = np.asarray(image)
    work = img.astype(np.float64, copy=False)
    if work.ndim == 2:
        out = _convolve_channel(work, taps)
    else:
        out = np.stack(
            [_convolve_channel(work[:, :, c], taps) for c in range(work.shape[2])], axis=2
        )
    return np.clip(out, 0.0, 1.0).astype(img.dtype, copy=False)


def awgn(image, sigma_255, seed):
    """Additive white Gaussian noise with std sigma_255/255, clipped to [0,1]."""
    if sigma_255 == 0:
        return np.asarray(image).copy()
    if sigma_255 not in AWGN_SIGMAS:
        raise LevelError(f"awgn sigma {sigma_255} not in pool {AWGN_SIGMAS}")
    img = np.asarray(image)
    noise = substream(seed, "awgn").normal(0.0, sigma_255 / 255.0, img.shape)
    return np.clip(img.astype(np.float64, copy=False) + noise, 0.0, 1.0).astype(
        img.dtype, copy=False
    )


class DistortionPool:
    """Ordered set of degradation levels for one family.

    ``apply`` takes a 1-based level index j in [1, J]; randomized families
    (awgn) draw their noise from the generator passed in.
    """

    def __init__(self, family, levels, kernels=None):
        self.family = family
        self.levels = list(levels)
        self.J = len(self.levels)
        self._kernels = kernels

    @classmethod
    def gaussian(cls):
        return cls("gaussian", BLUR_RADII, [gaussian_kernel(r) for r in BLUR_RADII])

    @classmethod
    def defocus(cls):
        return cls("defocus", BLUR_RADII, [defocus_kernel(r) for r in BLUR_RADII])

    @classmethod
    def camshake(cls, pool_seed=DEFAULT_CAMSHAKE_SEED, size=CAMSHAKE_SIZE, count=CAMSHAKE_COUNT):
        seeds = [int(substream(pool_seed, "camshake-pool", i).integers(2**62)) for i in range(count)]
        kernels = [camshake_kernel(s, size) for s in seeds]
        return cls("camshake", seeds, kernels)

    @classmethod
    def awgn_pool(cls):
        return cls("awgn", AWGN_SIGMAS)

    @classmethod
    def identity(cls):
        """Single no-op level; handy for tests and dry runs."""
        taps = np.ones((1, 1))
        return cls("identity", [0], [Kernel(taps, "identity", 1, 0.0)])

    @classmethod
    def from_name(cls, family, **kwargs):
        builders = {
            "gaussian": cls.gaussian,
            "defocus": cls.defocus,
            "camshake": cls.camshake,
            "awgn": cls.awgn_pool,
            "identity": cls.identity,
        }
        if family not in builders:
            raise LevelError(f"unknown distortion family {family!r}")
        if family == "camshake":
            return builders[family](**kwargs)
        return builders[family]()

    def kernel(self, j):
        self._check_level(j)
        if self._kernels is None:
            raise LevelError(f"family {self.family!r} has no kernels")
        return self._kernels[j - 1]

    def _check_level(self, j):
        if not 1 <= j <= self.J:
            raise LevelError(f"level {j} outside [1, {self.J}] for family {self.family!r}")

    def apply(self, image, j, rng=None):
        self._check_level(j)
        if self.family == "awgn":
            if rng is None:
                raise ValueError("awgn pool needs a generator")
            seed = int(rng.integers(2**62))
            return awgn(image, self.levels[j - 1], seed)
        return convolve2d(image, self._kernels[j - 1])


def apply_random_level(image, pool, rng):
    """Apply a uniformly drawn level j ~ U[1..J]; returns (image, QualityTag)."""
    j = int(rng.integers(1, pool.J + 1))
    return pool.apply(image, j, rng), QualityTag(False, pool.family, j)


def augment_minibatch(batch, pool, rng):
    """1:1 clean/degraded mix: items [0, S/2) unchanged, the rest distorted.

    ``batch`` is a list of (image, labels); labels pass through untouched.
    Returns a list of (image, labels, QualityTag).
    """
    s = len(batch)
    if s % 2 != 0:
        raise BatchSizeError(f"augmented mini-batch size must be even, got {s}")
    out = []
    for i, (image, labels) in enumerate(batch):
        if i < s // 2:
            out.append((image, labels, QualityTag(True)))
        else:
            distorted, tag = apply_random_level(image, pool, rng)
            out.append((distorted, labels, tag))
    return out
