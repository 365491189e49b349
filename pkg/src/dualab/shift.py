"""Datasets, distribution-shift generators and the augmented-batch builder.

Images are (N, C, H, W) float64 in [0, 1] throughout. Corruptions are pure
functions of (input, kind, severity, seed); severity 0 is the identity.
The severity parameter tables live here and can be exported as a JSON
manifest for reproducibility.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .errors import DimensionError, FormatError, ParameterError
from .rng import Xoshiro256PP, stream

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801

AUGMENTATIONS = ("hflip", "crop", "rot90s")

CORRUPTION_KINDS = (
    "gaussian_noise", "shot_noise", "impulse_noise",
    "defocus_blur", "contrast", "brightness",
)

# severity-indexed parameters (index 0 == severity 1)
SEVERITY_TABLES = {
    "gaussian_noise": {"sigma": (0.04, 0.08, 0.12, 0.18, 0.26)},
    "shot_noise": {"lam": (60.0, 25.0, 12.0, 5.0, 3.0)},
    "impulse_noise": {"p": (0.01, 0.03, 0.06, 0.10, 0.17)},
    "defocus_blur": {"radius": (1, 2, 3, 4, 6)},
    "contrast": {"c": (0.75, 0.5, 0.4, 0.3, 0.15)},
    "brightness": {"b": (0.05, 0.10, 0.15, 0.22, 0.30)},
}


@dataclass
class Dataset:
    images: np.ndarray  # (N, C, H, W) float64 in [0, 1]
    labels: np.ndarray  # (N,) int64
    name: str = ""

    def __post_init__(self):
        if self.images.ndim != 4:
            raise DimensionError(f"images must be 4-D, got shape {self.images.shape}")
        if self.labels.shape != (self.images.shape[0],):
            raise DimensionError(
                f"label count {self.labels.shape} != image count {self.images.shape[0]}"
            )

    def __len__(self) -> int:
        return self.images.shape[0]

    def subset(self, idx) -> "Dataset":
        return Dataset(self.images[idx], self.labels[idx], self.name)


@dataclass
class CorruptionSpec:
    kind: str
    severity: int

    def __post_init__(self):
        if self.kind not in CORRUPTION_KINDS:
            raise ParameterError(
                f"unknown corruption kind {self.kind!r}; known: {CORRUPTION_KINDS}"
            )
        if not 0 <= self.severity <= 5:
            raise ParameterError(f"severity must be in 0..5, got {self.severity}")

    def params(self) -> dict:
        if self.severity == 0:
            return {}
        table = SEVERITY_TABLES[self.kind]
        return {key: vals[self.severity - 1] for key, vals in table.items()}


# ---- IDX files ----

def _read_be_u32(f, path, what):
    data = f.read(4)
    if len(data) != 4:
        raise FormatError(f"{path}: truncated while reading {what} at offset {f.tell() - len(data)}")
    return struct.unpack(">I", data)[0]


def load_idx(images_path, labels_path) -> Dataset:
    """Load an IDX image/label file pair; pixels are scaled to [0, 1]."""
    with open(images_path, "rb") as f:
        magic = _read_be_u32(f, images_path, "magic")
        if magic != IDX_IMAGES_MAGIC:
            raise FormatError(
                f"{images_path}: bad magic 0x{magic:08x} at offset 0, "
                f"expected 0x{IDX_IMAGES_MAGIC:08x}"
            )
        n = _read_be_u32(f, images_path, "image count")
        rows = _read_be_u32(f, images_path, "row count")
        cols = _read_be_u32(f, images_path, "column count")
        payload = f.read()
    if len(payload) != n * rows * cols:
        raise FormatError(
            f"{images_path}: payload of {len(payload)} bytes at offset 16 "
            f"does not match header {n}x{rows}x{cols}"
        )
    images = np.frombuffer(payload, dtype=np.uint8).astype(np.float64) / 255.0
    images = images.reshape(n, 1, rows, cols)

    with open(labels_path, "rb") as f:
        magic = _read_be_u32(f, labels_path, "magic")
        if magic != IDX_LABELS_MAGIC:
            raise FormatError(
                f"{labels_path}: bad magic 0x{magic:08x} at offset 0, "
                f"expected 0x{IDX_LABELS_MAGIC:08x}"
            )
        n_labels = _read_be_u32(f, labels_path, "label count")
        label_payload = f.read()
    if len(label_payload) != n_labels:
        raise FormatError(
            f"{labels_path}: payload of {len(label_payload)} bytes at offset 8 "
            f"does not match header count {n_labels}"
        )
    if n_labels != n:
        raise FormatError(
            f"label count {n_labels} in {labels_path} != image count {n} in {images_path}"
        )
    labels = np.frombuffer(label_payload, dtype=np.uint8).astype(np.int64)
    return Dataset(images, labels, name="idx")


def write_idx(images_u8: np.ndarray, labels: np.ndarray, images_path, labels_path) -> None:
    """Write an IDX pair (images_u8: (N, rows, cols) uint8)."""
    n, rows, cols = images_u8.shape
    with open(images_path, "wb") as f:
        f.write(struct.pack(">IIII", IDX_IMAGES_MAGIC, n, rows, cols))
        f.write(np.ascontiguousarray(images_u8, dtype=np.uint8).tobytes())
    with open(labels_path, "wb") as f:
        f.write(struct.pack(">II", IDX_LABELS_MAGIC, n))
        f.write(np.ascontiguousarray(labels, dtype=np.uint8).tobytes())


# ---- synthetic glyph dataset ----

_GRID_Y, _GRID_X = np.mgrid[0:28, 0:28].astype(np.float64)


def _seg_dist(ax, ay, bx, by):
    """Distance of every grid point to segment A-B; endpoints are (K,1,1) arrays."""
    apx = _GRID_X[None] - ax
    apy = _GRID_Y[None] - ay
    abx = bx - ax
    aby = by - ay
    denom = abx * abx + aby * aby
    t = np.clip((apx * abx + apy * aby) / np.where(denom == 0, 1.0, denom), 0.0, 1.0)
    dx = apx - t * abx
    dy = apy - t * aby
    return np.hypot(dx, dy)


def _arc_dist(cx, cy, r, a0, a1):
    """Distance of every grid point to the arc of radius r spanning [a0, a1]."""
    px = _GRID_X[None] - cx
    py = _GRID_Y[None] - cy
    rho = np.hypot(px, py)
    theta = np.mod(np.arctan2(py, px) - a0, 2.0 * np.pi)
    on_arc = theta <= (a1 - a0)
    d_ring = np.abs(rho - r)
    e0 = np.hypot(px - r * np.cos(a0), py - r * np.sin(a0))
    e1 = np.hypot(px - r * np.cos(a1), py - r * np.sin(a1))
    return np.where(on_arc, d_ring, np.minimum(e0, e1))


def _glyph_distance(cls: int, cx, cy, length):
    """Minimum distance field over the strokes of glyph class `cls`."""
    c, l = (cx, cy), length
    x0, x1 = cx - l, cx + l
    y0, y1 = cy - l, cy + l
    if cls == 0:  # ring
        return _arc_dist(cx, cy, l, 0.0, 2.0 * np.pi)
    if cls == 1:  # vertical bar
        return _seg_dist(cx, y0, cx, y1)
    if cls == 2:  # horizontal bar
        return _seg_dist(x0, cy, x1, cy)
    if cls == 3:  # plus
        return np.minimum(_seg_dist(cx, y0, cx, y1), _seg_dist(x0, cy, x1, cy))
    if cls == 4:  # X
        return np.minimum(_seg_dist(x0, y0, x1, y1), _seg_dist(x0, y1, x1, y0))
    if cls == 5:  # L
        return np.minimum(_seg_dist(x0, y0, x0, y1), _seg_dist(x0, y1, x1, y1))
    if cls == 6:  # T
        return np.minimum(_seg_dist(x0, y0, x1, y0), _seg_dist(cx, y0, cx, y1))
    if cls == 7:  # single diagonal
        return _seg_dist(x0, y0, x1, y1)
    if cls == 8:  # square outline
        return np.minimum.reduce([
            _seg_dist(x0, y0, x1, y0), _seg_dist(x1, y0, x1, y1),
            _seg_dist(x1, y1, x0, y1), _seg_dist(x0, y1, x0, y0),
        ])
    if cls == 9:  # C: ring with a gap on the right
        return _arc_dist(cx, cy, l, np.pi / 3.0, 5.0 * np.pi / 3.0)
    raise ParameterError(f"glyph class must be 0..9, got {cls}")


def gen_synthetic(n: int, seed: int) -> Dataset:
    """n procedurally rendered 28x28 glyphs over 10 classes (round-robin labels).

    Stroke position, length, thickness and intensity are jittered per image,
    deterministically in the seed.
    """
    if n < 1:
        raise ParameterError(f"n must be >= 1, got {n}")
    g = stream(seed, "synthetic", lanes=n)
    jx = g.uniform() * 4.0 - 2.0
    jy = g.uniform() * 4.0 - 2.0
    jl = g.uniform() * 2.0 - 1.0
    thick = 1.0 + g.uniform() * 0.8
    inten = 0.7 + g.uniform() * 0.3

    labels = np.arange(n, dtype=np.int64) % 10
    images = np.empty((n, 1, 28, 28))
    for cls in range(10):
        idx = np.nonzero(labels == cls)[0]
        if idx.size == 0:
            continue
        sh = (idx.size, 1, 1)
        d = _glyph_distance(
            cls,
            (13.5 + jx[idx]).reshape(sh),
            (13.5 + jy[idx]).reshape(sh),
            (7.0 + jl[idx]).reshape(sh),
        )
        img = np.clip(thick[idx].reshape(sh) + 0.5 - d, 0.0, 1.0) * inten[idx].reshape(sh)
        images[idx, 0] = img
    return Dataset(images, labels, name=f"synthetic-{n}")


# ---- corruptions ----

def _uniform_field(seed: int, name: str, n: int, count: int) -> np.ndarray:
    """(n, count) uniforms; lane i is image i's private stream."""
    g = stream(seed, name, lanes=n)
    return np.stack([g.uniform() for _ in range(count)], axis=1)


def _normal_field(seed: int, name: str, n: int, count: int) -> np.ndarray:
    g = stream(seed, name, lanes=n)
    cols = []
    for _ in range((count + 1) // 2):
        z0, z1 = g.normal_pair()
        cols.append(z0)
        cols.append(z1)
    return np.stack(cols[:count], axis=1)


def _poisson_from_uniform(m: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Poisson(m) counts by CDF inversion of one uniform per element."""
    pmf = np.exp(-m)
    cdf = pmf.copy()
    k = np.zeros(m.shape, dtype=np.int64)
    active = u >= cdf
    kk = 0
    m_max = float(m.max()) if m.size else 0.0
    cap = int(np.ceil(m_max + 12.0 * np.sqrt(m_max) + 20.0))
    while active.any() and kk < cap:
        kk += 1
        pmf *= m / kk
        cdf += pmf
        settled = active & (u < cdf)
        k[settled] = kk
        active &= ~settled
    k[active] = cap
    return k


def _disk_kernel(radius: int) -> np.ndarray:
    r = int(radius)
    yy, xx = np.mgrid[-r : r + 1, -r : r + 1]
    mask = (yy * yy + xx * xx) <= r * r
    return mask / mask.sum()


def corrupt(data, spec: CorruptionSpec, seed: int):
    """Apply a corruption at the given severity; shape-preserving, output in [0, 1].

    Accepts a Dataset (labels pass through untouched) or a (N, C, H, W) array.
    Severity 0 returns a bit-exact copy.
    """
    if isinstance(data, Dataset):
        out = corrupt(data.images, spec, seed)
        return Dataset(out, data.labels.copy(),
                       name=f"{data.name}/{spec.kind}-s{spec.severity}")
    x = np.asarray(data, dtype=np.float64)
    if x.ndim != 4:
        raise DimensionError(f"images must be 4-D, got shape {x.shape}")
    if spec.severity == 0:
        return x.copy()

    n = x.shape[0]
    flat = x.reshape(n, -1)
    count = flat.shape[1]
    p = spec.params()
    tag = f"corrupt/{spec.kind}/s{spec.severity}"

    if spec.kind == "gaussian_noise":
        noise = _normal_field(seed, tag, n, count)
        out = np.clip(flat + p["sigma"] * noise, 0.0, 1.0)
    elif spec.kind == "shot_noise":
        lam = p["lam"]
        u = _uniform_field(seed, tag, n, count)
        out = np.clip(_poisson_from_uniform(lam * flat, u) / lam, 0.0, 1.0)
    elif spec.kind == "impulse_noise":
        prob = p["p"]
        u = _uniform_field(seed, tag, n, count)
        out = flat.copy()
        out[u < prob / 2.0] = 0.0
        out[u >= 1.0 - prob / 2.0] = 1.0
    elif spec.kind == "defocus_blur":
        kernel = _disk_kernel(p["radius"])[None, None]
        out = np.clip(ndimage.convolve(x, kernel, mode="reflect"), 0.0, 1.0)
        return out
    elif spec.kind == "contrast":
        means = flat.mean(axis=1, keepdims=True)
        out = np.clip((flat - means) * p["c"] + means, 0.0, 1.0)
    elif spec.kind == "brightness":
        out = np.clip(flat + p["b"], 0.0, 1.0)
    else:  # unreachable: spec validates kind
        raise ParameterError(f"unknown corruption kind {spec.kind!r}")
    return out.reshape(x.shape)


def severity_manifest() -> dict:
    """The corruption parameter tables as a JSON-ready document."""
    return {
        "severity_levels": 5,
        "severity_0": "identity (bit-exact copy)",
        "kinds": {
            kind: {
                "parameters": {k: list(v) for k, v in SEVERITY_TABLES[kind].items()},
                "description": _KIND_DOCS[kind],
            }
            for kind in CORRUPTION_KINDS
        },
    }


_KIND_DOCS = {
    "gaussian_noise": "additive N(0, sigma^2) noise, clamped to [0, 1]",
    "shot_noise": "Poisson(lam * pixel) / lam, clamped to [0, 1]",
    "impulse_noise": "salt-and-pepper with total probability p (half salt, half pepper)",
    "defocus_blur": "normalized disk-kernel convolution of the given radius, reflect padding",
    "contrast": "(x - mean(x)) * c + mean(x) with the per-image mean, clamped",
    "brightness": "x + b, clamped to [0, 1]",
}


def export_severity_manifest(path) -> None:
    with open(path, "w") as f:
        json.dump(severity_manifest(), f, indent=2, sort_keys=True)
        f.write("\n")


# ---- augmented batches ----

@dataclass
class AugmentedBatch:
    """B randomly transformed copies of one sample, with full provenance."""

    tensor: np.ndarray  # (B, C, H, W)
    provenance: list = field(default_factory=list)
    warning: str | None = None


def augment_batch(sample: np.ndarray, batch_size: int, augmentations,
                  rng: Xoshiro256PP) -> AugmentedBatch:
    """Build a batch of independently augmented copies of a single sample.

    Enabled transforms apply in the fixed order hflip -> crop -> rot90s.
    Crop pads 4 zero pixels on each side and cuts back to the original size;
    rotations are right angles only. The identity is always a possible draw.
    """
    if batch_size < 1:
        raise ParameterError(f"batch_size must be >= 1, got {batch_size}")
    if sample.ndim != 4 or sample.shape[0] != 1:
        raise ParameterError(f"sample must have shape (1, C, H, W), got {sample.shape}")
    augs = set(augmentations)
    bad = augs - set(AUGMENTATIONS)
    if bad:
        raise ParameterError(f"unknown augmentations {sorted(bad)}; known: {AUGMENTATIONS}")

    _, c, h, w = sample.shape
    items = np.empty((batch_size, c, h, w))
    provenance = []
    for j in range(batch_size):
        img = sample[0]
        rec = {}
        if "hflip" in augs:
            flip = rng.rand() < 0.5
            rec["hflip"] = flip
            if flip:
                img = img[:, :, ::-1]
        if "crop" in augs:
            padded = np.pad(img, ((0, 0), (4, 4), (4, 4)))
            dy = rng.randint(9)
            dx = rng.randint(9)
            rec["crop"] = (dy, dx)
            img = padded[:, dy : dy + h, dx : dx + w]
        if "rot90s" in augs:
            k = rng.randint(4)
            rec["rot90s"] = k
            if k:
                img = np.rot90(img, k, axes=(1, 2))
        items[j] = img
        provenance.append(rec)

    warning = None
    if not augs and batch_size > 1:
        warning = "empty augmentation set: all batch items are identical"
    return AugmentedBatch(items, provenance, warning)
