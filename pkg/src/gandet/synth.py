"""Seeded synthetic shapes-on-texture dataset for object detection.

Scenes are filled ellipses, rectangles and triangles over multi-octave value
noise. Everything is a pure function of (spec, seed): regenerating from a
manifest record reproduces images and labels bit for bit.
"""

import dataclasses
import hashlib
import json
from dataclasses import dataclass

import numpy as np

from .errors import PlacementError
from .rng import substream

CLASS_NAMES = ("circle", "square", "triangle")

# aspect = width/height of the tight box, clamped per class so the default
# anchor set keeps worst-case IoU coverage above 0.5
_ASPECT_RANGE = {
    "circle": (0.8, 1.25),
    "square": (0.8, 1.25),
    "triangle": (0.6, 1.667),
}

MANIFEST_FORMAT = "gandet-manifest"
MANIFEST_VERSION = 1


@dataclass(frozen=True)
class BackgroundSpec:
    """Multi-octave seeded value noise around a random base color."""

    octave_cells: tuple = (32, 16, 8)
    octave_gain: float = 0.55
    amplitude: float = 0.18


@dataclass(frozen=True)
class SceneSpec:
    image_size: int = 96
    num_objects: int = 3
    class_set: tuple = CLASS_NAMES
    background: BackgroundSpec = BackgroundSpec()
    min_object_side: int = 24
    max_object_side: int = 48

    def validate(self):
        if self.image_size < 16:
            raise ValueError("image_size too small")
        if not 1 <= self.num_objects <= 4:
            raise ValueError("num_objects must be in [1, 4]")
        if not set(self.class_set) <= set(CLASS_NAMES):
            raise ValueError(f"unknown classes in {self.class_set}")
        if not 0 < self.min_object_side <= self.max_object_side < self.image_size:
            raise ValueError("object side bounds inconsistent with image size")

    def to_dict(self):
        d = dataclasses.asdict(self)
        d["class_set"] = list(self.class_set)
        d["background"]["octave_cells"] = list(self.background.octave_cells)
        return d

    @classmethod
    def from_dict(cls, d):
        bg = BackgroundSpec(
            octave_cells=tuple(d["background"]["octave_cells"]),
            octave_gain=d["background"]["octave_gain"],
            amplitude=d["background"]["amplitude"],
        )
        return cls(
            image_size=d["image_size"],
            num_objects=d["num_objects"],
            class_set=tuple(d["class_set"]),
            background=bg,
            min_object_side=d["min_object_side"],
            max_object_side=d["max_object_side"],
        )

    def hash(self):
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:12]


def _value_noise(rng, size, cells):
    """Bilinearly upsampled random grid, one octave of value noise."""
    n = size // cells + 2
    grid = rng.uniform(-1.0, 1.0, (n, n))
    # sample positions of each pixel in grid coordinates
    t = np.arange(size) / cells
    i0 = t.astype(int)
    f = t - i0
    top = grid[np.ix_(i0, i0)] * (1 - f)[None, :] + grid[np.ix_(i0, i0 + 1)] * f[None, :]
    bot = grid[np.ix_(i0 + 1, i0)] * (1 - f)[None, :] + grid[np.ix_(i0 + 1, i0 + 1)] * f[None, :]
    return top * (1 - f)[:, None] + bot * f[:, None]


def _render_background(spec, rng):
    size = spec.image_size
    bg = spec.background
    base = rng.uniform(0.25, 0.75, 3)
    noise = np.zeros((size, size))
    gain = 1.0
    total = 0.0
    for cells in bg.octave_cells:
        noise += gain * _value_noise(rng, size, cells)
        total += gain
        gain *= bg.octave_gain
    noise *= bg.amplitude / total
    # mild per-channel tint keeps the texture colored, not just gray
    tint = rng.uniform(0.6, 1.0, 3)
    img = base[None, None, :] + noise[:, :, None] * tint[None, None, :]
    return np.clip(img, 0.0, 1.0)


def _iou_xyxy(a, b):
    x1 = max(a[0], b[0])
    y1 = max(a[1], b[1])
    x2 = min(a[2], b[2])
    y2 = min(a[3], b[3])
    iw = max(0.0, x2 - x1)
    ih = max(0.0, y2 - y1)
    inter = iw * ih
    union = (a[2] - a[0]) * (a[3] - a[1]) + (b[2] - b[0]) * (b[3] - b[1]) - inter
    return inter / union if union > 0 else 0.0


def _coverage_mask(shape, x0, y0, x1, y1, size, tri_params=None, supersample=2):
    """Per-pixel fill fraction of the shape inside its tight box.

    Only the bounding-box region is evaluated (at ``supersample``^2 samples
    per pixel); the rest of the image is zero coverage.
    """
    ss = supersample
    r0, r1 = max(int(np.floor(y0)), 0), min(int(np.ceil(y1)), size)
    c0, c1 = max(int(np.floor(x0)), 0), min(int(np.ceil(x1)), size)
    px = c0 + (np.arange((c1 - c0) * ss) + 0.5) / ss
    py = r0 + (np.arange((r1 - r0) * ss) + 0.5) / ss
    xs, ys = np.meshgrid(px, py)
    cx, cy = (x0 + x1) / 2, (y0 + y1) / 2
    if shape == "circle":
        a, b = (x1 - x0) / 2, (y1 - y0) / 2
        inside = ((xs - cx) / a) ** 2 + ((ys - cy) / b) ** 2 <= 1.0
    elif shape == "square":
        inside = (xs >= x0) & (xs <= x1) & (ys >= y0) & (ys <= y1)
    else:  # triangle: three half-plane tests
        v = tri_params
        inside = np.ones(xs.shape, dtype=bool)
        for i in range(3):
            ax, ay = v[i]
            bx, by = v[(i + 1) % 3]
            cross = (bx - ax) * (ys - ay) - (by - ay) * (xs - ax)
            inside &= cross >= 0
    cov = np.zeros((size, size))
    cov[r0:r1, c0:c1] = inside.reshape(r1 - r0, ss, c1 - c0, ss).mean(axis=(1, 3))
    return cov


def _triangle_vertices(rng, x0, y0, x1, y1):
    """Tight-box triangle: apex on one side, base on the opposite side."""
    t = rng.uniform(0.2, 0.8)
    orient = int(rng.integers(4))
    if orient == 0:  # apex on top edge
        v = [(x0 + t * (x1 - x0), y0), (x0, y1), (x1, y1)]
    elif orient == 1:  # apex on right edge
        v = [(x1, y0 + t * (y1 - y0)), (x0, y0), (x0, y1)]
    elif orient == 2:  # apex on bottom edge
        v = [(x0 + t * (x1 - x0), y1), (x1, y0), (x0, y0)]
    else:  # apex on left edge
        v = [(x0, y0 + t * (y1 - y0)), (x1, y1), (x1, y0)]
    # enforce counter-clockwise order so the half-plane signs agree
    (ax, ay), (bx, by), (cx, cy) = v
    if (bx - ax) * (cy - ay) - (by - ay) * (cx - ax) < 0:
        v = [v[0], v[2], v[1]]
    return v


def _pick_color(rng, bg_mean):
    for _ in range(64):
        c = rng.uniform(0.0, 1.0, 3)
        if np.max(np.abs(c - bg_mean)) >= 0.2:
            return c
    c = bg_mean.copy()  # deterministic fallback, practically unreachable
    k = int(np.argmin(np.abs(bg_mean - 0.5)))
    c[k] = 0.05 if bg_mean[k] > 0.5 else 0.95
    return c


def render_scene(spec, seed, max_attempts=1000):
    """Render one scene; returns (image float32 HxWx3 in [0,1], labels (k,5)).

    Label columns are [class_id, cx, cy, w, h] with box coordinates
    normalized to [0,1]. Deterministic in (spec, seed).
    """
    spec.validate()
    rng = substream(seed, "scene")
    size = spec.image_size
    img = _render_background(spec, rng)
    bg_mean = img.mean(axis=(0, 1))

    placed = []  # (class_name, x0, y0, x1, y1) in pixels
    attempts = 0
    while len(placed) < spec.num_objects:
        if attempts >= max_attempts:
            raise PlacementError(seed, attempts)
        attempts += 1
        name = spec.class_set[int(rng.integers(len(spec.class_set)))]
        lo, hi = _ASPECT_RANGE[name]
        side = rng.uniform(spec.min_object_side, spec.max_object_side)
        aspect = rng.uniform(lo, hi)
        w = float(np.clip(side * np.sqrt(aspect), spec.min_object_side, spec.max_object_side))
        h = float(np.clip(side / np.sqrt(aspect), spec.min_object_side, spec.max_object_side))
        x0 = rng.uniform(0.0, size - w)
        y0 = rng.uniform(0.0, size - h)
        box = (x0, y0, x0 + w, y0 + h)
        if all(_iou_xyxy(box, p[1:]) < 0.3 for p in placed):
            placed.append((name, *box))

    labels = np.zeros((len(placed), 5))
    for i, (name, x0, y0, x1, y1) in enumerate(placed):
        tri = _triangle_vertices(rng, x0, y0, x1, y1) if name == "triangle" else None
        color = _pick_color(rng, bg_mean)
        cov = _coverage_mask(name, x0, y0, x1, y1, size, tri_params=tri)
        img = img * (1 - cov[:, :, None]) + color[None, None, :] * cov[:, :, None]
        labels[i] = (
            CLASS_NAMES.index(name),
            ((x0 + x1) / 2) / size,
            ((y0 + y1) / 2) / size,
            (x1 - x0) / size,
            (y1 - y0) / size,
        )
    return np.clip(img, 0.0, 1.0).astype(np.float32), labels


@dataclass
class ManifestRecord:
    split: str
    seed: int
    spec: SceneSpec
    labels: np.ndarray  # (k, 5)


@dataclass
class DatasetManifest:
    global_seed: int
    base_spec: SceneSpec
    counts: dict
    records: list  # of ManifestRecord

    def split(self, name):
        return [r for r in self.records if r.split == name]

    def seeds(self, name):
        return {r.seed for r in self.split(name)}


def generate_dataset(spec, counts, seed):
    """Build a manifest with consecutive, disjoint per-split seed ranges.

    ``counts`` maps split name -> item count (order of insertion fixes the
    seed ranges). The per-item object count varies in [1, spec.num_objects].
    """
    spec.validate()
    for name, n in counts.items():
        if n <= 0:
            raise ValueError(f"count for split {name!r} must be positive")
    records = []
    next_seed = int(seed)
    for name, n in counts.items():
        for _ in range(n):
            item_seed = next_seed
            next_seed += 1
            k = 1 + int(substream(item_seed, "num-objects").integers(spec.num_objects))
            item_spec = dataclasses.replace(spec, num_objects=k)
            _, labels = render_scene(item_spec, item_seed)
            records.append(ManifestRecord(name, item_seed, item_spec, labels))
    return DatasetManifest(int(seed), spec, dict(counts), records)


def save_manifest(manifest, path):
    with open(path, "w") as fh:
        header = {
            "format": MANIFEST_FORMAT,
            "version": MANIFEST_VERSION,
            "global_seed": manifest.global_seed,
            "base_spec": manifest.base_spec.to_dict(),
            "counts": manifest.counts,
        }
        fh.write(json.dumps(header, sort_keys=True) + "\n")
        for r in manifest.records:
            row = {
                "split": r.split,
                "seed": r.seed,
                "spec": r.spec.to_dict(),
                "spec_hash": r.spec.hash(),
                "labels": [[int(l[0])] + [float(v) for v in l[1:]] for l in r.labels],
            }
            fh.write(json.dumps(row, sort_keys=True) + "\n")


def load_manifest(path):
    with open(path) as fh:
        header = json.loads(fh.readline())
        if header.get("format") != MANIFEST_FORMAT:
            raise ValueError(f"{path} is not a {MANIFEST_FORMAT} file")
        records = []
        for line in fh:
            row = json.loads(line)
            labels = np.array(row["labels"], dtype=float).reshape(-1, 5)
            records.append(
                ManifestRecord(row["split"], row["seed"], SceneSpec.from_dict(row["spec"]), labels)
            )
    return DatasetManifest(
        header["global_seed"],
        SceneSpec.from_dict(header["base_spec"]),
        header["counts"],
        records,
    )


def materialize_split(manifest, split):
    """Render a split into (images (N,H,W,3) float32, list of label arrays)."""
    recs = manifest.split(split)
    if not recs:
        raise ValueError(f"manifest has no split {split!r}")
    images = np.stack([render_scene(r.spec, r.seed)[0] for r in recs])
    labels = [r.labels for r in recs]
    return images, labels


def save_image_png(image, path):
    """8-bit PNG cache for inspection; never a source of truth."""
    from PIL import Image

    arr = np.clip(np.asarray(image) * 255.0 + 0.5, 0, 255).astype(np.uint8)
    Image.fromarray(arr).save(path)


def load_image_png(path):
    from PIL import Image

    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float32) / 255.0
    return arr
