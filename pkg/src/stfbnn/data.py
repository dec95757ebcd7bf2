"""Datasets: synthesis, IDX files, normalization, batching, and corruptions.

Features are float64 matrices [m x n]; labels are int64 class indices. Image
data lives in [0, 1] and every corruption clips back into that range.
"""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError, FormatError, InputError
from .rng import Prng

IDX_IMAGE_MAGIC = 0x00000803
IDX_LABEL_MAGIC = 0x00000801

# Severity tables, index 0 = severity 1. Each is monotone in effect strength.
GAUSSIAN_NOISE_STD = (0.04, 0.08, 0.12, 0.16, 0.20)
IMPULSE_NOISE_FRACTION = (0.002, 0.005, 0.01, 0.015, 0.03)
BOX_BLUR_KERNEL = (1, 2, 3, 4, 5)
CONTRAST_GAMMA = (0.95, 0.90, 0.80, 0.72, 0.60)

CORRUPTION_KINDS = ("gaussian_noise", "impulse_noise", "box_blur", "contrast")


@dataclass
class CorruptionSpec:
    kind: str
    severity: int

    def __post_init__(self):
        if self.kind not in CORRUPTION_KINDS:
            raise InputError(f"unknown corruption kind {self.kind!r}")
        if not 1 <= self.severity <= 5:
            raise InputError(f"severity must be in 1..5, got {self.severity}")


@dataclass
class Dataset:
    """One split of labeled examples plus bookkeeping about where it came from."""

    features: np.ndarray
    labels: np.ndarray
    num_classes: int
    split: str = "train"
    norm_mean: np.ndarray | None = None
    norm_std: np.ndarray | None = None
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.features.ndim != 2 or len(self.labels) != len(self.features):
            raise DimensionError("features must be [m x n] with one label per row")
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise InputError(f"labels must lie in [0, {self.num_classes})")

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def dim(self) -> int:
        return self.features.shape[1]


def make_two_moons(m: int, noise_std: float, prng: Prng) -> Dataset:
    """Two interleaving half-circles, balanced binary labels.

    Class 0 is the upper arc (cos t, sin t), class 1 the lower arc shifted to
    (1 - cos t, 0.5 - sin t), t in [0, pi]; Gaussian noise is added on top.
    """
    if m < 2:
        raise InputError("need at least 2 examples")
    if noise_std < 0:
        raise InputError("noise_std must be >= 0")
    n0 = m // 2 + m % 2
    n1 = m - n0
    t0 = prng.uniform((n0,)) * np.pi
    t1 = prng.uniform((n1,)) * np.pi
    pts = np.concatenate(
        [
            np.stack([np.cos(t0), np.sin(t0)], axis=1),
            np.stack([1.0 - np.cos(t1), 0.5 - np.sin(t1)], axis=1),
        ]
    )
    pts += prng.gaussian(pts.shape, 0.0, noise_std)
    labels = np.concatenate([np.zeros(n0, dtype=np.int64), np.ones(n1, dtype=np.int64)])
    perm = prng.permutation(m)
    return Dataset(
        pts[perm],
        labels[perm],
        num_classes=2,
        provenance={"kind": "two_moons", "m": m, "noise_std": noise_std},
    )


def make_blobs(m: int, k: int, centers: np.ndarray, std: float, prng: Prng) -> Dataset:
    """Isotropic Gaussian blobs; labels are the nearest generating center.

    Draws are spread over the centers as evenly as m allows, so with separated
    centers the class counts are balanced by construction.
    """
    centers = np.asarray(centers, dtype=np.float64)
    if k < 2:
        raise InputError("need at least 2 centers")
    if len(centers) != k:
        raise DimensionError(f"k = {k} but {len(centers)} centers given")
    for i in range(k):
        for j in range(i + 1, k):
            if np.array_equal(centers[i], centers[j]):
                raise InputError(f"duplicate centers at indices {i} and {j}")
    per = [m // k + (1 if i < m % k else 0) for i in range(k)]
    pts = np.concatenate(
        [centers[i] + prng.gaussian((per[i], centers.shape[1]), 0.0, std) for i in range(k)]
    )
    d2 = ((pts[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
    labels = d2.argmin(axis=1).astype(np.int64)
    perm = prng.permutation(m)
    return Dataset(
        pts[perm],
        labels[perm],
        num_classes=k,
        provenance={"kind": "blobs", "m": m, "std": std, "centers": centers.tolist()},
    )


def _read_be32(f, path: str) -> int:
    raw = f.read(4)
    if len(raw) != 4:
        raise FormatError(f"{path}: truncated header")
    return struct.unpack(">i", raw)[0]


def load_idx(images_path: str, labels_path: str) -> Dataset:
    """Load an IDX image/label file pair (big-endian, pixels scaled to [0, 1])."""
    with open(images_path, "rb") as f:
        magic = _read_be32(f, images_path)
        if magic != IDX_IMAGE_MAGIC:
            raise FormatError(f"{images_path}: bad image magic {magic:#010x}")
        count = _read_be32(f, images_path)
        rows = _read_be32(f, images_path)
        cols = _read_be32(f, images_path)
        raw = f.read(count * rows * cols)
        if len(raw) != count * rows * cols:
            raise FormatError(f"{images_path}: truncated pixel data")
        pixels = np.frombuffer(raw, dtype=np.uint8).reshape(count, rows * cols)
    with open(labels_path, "rb") as f:
        magic = _read_be32(f, labels_path)
        if magic != IDX_LABEL_MAGIC:
            raise FormatError(f"{labels_path}: bad label magic {magic:#010x}")
        label_count = _read_be32(f, labels_path)
        raw = f.read(label_count)
        if len(raw) != label_count:
            raise FormatError(f"{labels_path}: truncated label data")
        labels = np.frombuffer(raw, dtype=np.uint8).astype(np.int64)
    if label_count != count:
        raise FormatError(f"image count {count} != label count {label_count}")
    num_classes = int(labels.max()) + 1 if count else 0
    return Dataset(
        pixels.astype(np.float64) / 255.0,
        labels,
        num_classes=num_classes,
        provenance={"kind": "idx", "images": images_path, "labels": labels_path,
                    "rows": rows, "cols": cols},
    )


def save_idx(dataset: Dataset, images_path: str, labels_path: str, rows: int, cols: int) -> None:
    """Write a dataset as an IDX pair; inverse of load_idx for [0, 1] pixel data."""
    if rows * cols != dataset.dim:
        raise DimensionError(f"rows*cols = {rows * cols} != feature dim {dataset.dim}")
    pixels = np.rint(np.clip(dataset.features, 0.0, 1.0) * 255.0).astype(np.uint8)
    with open(images_path, "wb") as f:
        f.write(struct.pack(">iiii", IDX_IMAGE_MAGIC, len(dataset), rows, cols))
        f.write(pixels.tobytes())
    with open(labels_path, "wb") as f:
        f.write(struct.pack(">ii", IDX_LABEL_MAGIC, len(dataset)))
        f.write(dataset.labels.astype(np.uint8).tobytes())


def save_csv(dataset: Dataset, path: str) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow([f"f{i}" for i in range(dataset.dim)] + ["label"])
        for x, y in zip(dataset.features, dataset.labels):
            writer.writerow([repr(float(v)) for v in x] + [int(y)])


def load_csv(path: str, num_classes: int) -> Dataset:
    with open(path, newline="") as f:
        reader = csv.reader(f)
        header = next(reader)
        rows = list(reader)
    dim = len(header) - 1
    feats = np.array([[float(v) for v in row[:dim]] for row in rows], dtype=np.float64)
    labels = np.array([int(row[dim]) for row in rows], dtype=np.int64)
    return Dataset(feats, labels, num_classes=num_classes, provenance={"kind": "csv", "path": path})


def split_train_test(dataset: Dataset, n_train: int, prng: Prng) -> tuple[Dataset, Dataset]:
    """Disjoint train/test split by shuffled index bookkeeping."""
    m = len(dataset)
    if not 0 < n_train < m:
        raise InputError(f"n_train must be in (0, {m})")
    perm = prng.permutation(m)
    tr, te = perm[:n_train], perm[n_train:]
    assert len(np.intersect1d(tr, te)) == 0
    mk = lambda idx, tag: Dataset(
        dataset.features[idx], dataset.labels[idx], dataset.num_classes, split=tag,
        provenance={**dataset.provenance, "split_indices": (tag, int(idx[0]), len(idx))},
    )
    return mk(tr, "train"), mk(te, "test")


def normalize(train: Dataset, *others: Dataset) -> tuple[Dataset, ...]:
    """Standardize using train-split statistics only; applies them to `others`."""
    mean = train.features.mean(axis=0)
    std = train.features.std(axis=0)
    std = np.where(std < 1e-12, 1.0, std)

    def apply(ds: Dataset) -> Dataset:
        out = Dataset((ds.features - mean) / std, ds.labels, ds.num_classes,
                      split=ds.split, provenance=dict(ds.provenance))
        out.norm_mean, out.norm_std = mean, std
        return out

    return tuple(apply(ds) for ds in (train, *others))


def batch_indices(m: int, batch_size: int, prng: Prng):
    """One epoch of batches: a fresh shuffle, every index exactly once,
    the final partial batch kept."""
    if batch_size < 1:
        raise InputError("batch_size must be >= 1")
    perm = prng.permutation(m)
    for start in range(0, m, batch_size):
        yield perm[start:start + batch_size]


def batch_iter(dataset: Dataset, batch_size: int, prng: Prng):
    for idx in batch_indices(len(dataset), batch_size, prng):
        yield dataset.features[idx], dataset.labels[idx]


def _box_blur_images(images: np.ndarray, side: int, k: int) -> np.ndarray:
    """k x k mean filter with edge-replicate padding, per image row."""
    if k == 1:
        return images
    imgs = images.reshape(-1, side, side)
    pl = (k - 1) // 2
    pr = k - 1 - pl
    padded = np.pad(imgs, ((0, 0), (pl, pr), (pl, pr)), mode="edge")
    # separable sliding means via cumulative sums along each axis
    c = np.cumsum(padded, axis=1)
    c = np.concatenate([np.zeros_like(c[:, :1, :]), c], axis=1)
    rowsum = c[:, k:, :] - c[:, :-k, :]
    c = np.cumsum(rowsum, axis=2)
    c = np.concatenate([np.zeros_like(c[:, :, :1]), c], axis=2)
    total = c[:, :, k:] - c[:, :, :-k]
    return (total / (k * k)).reshape(images.shape)


def corrupt(dataset: Dataset, spec: CorruptionSpec, prng: Prng) -> Dataset:
    """Apply one corruption at the given severity; output clipped to [0, 1]."""
    x = dataset.features.copy()
    s = spec.severity - 1
    if spec.kind == "gaussian_noise":
        x = x + prng.gaussian(x.shape, 0.0, GAUSSIAN_NOISE_STD[s])
    elif spec.kind == "impulse_noise":
        frac = IMPULSE_NOISE_FRACTION[s]
        hit = prng.uniform(x.shape) < frac
        salt = prng.uniform(x.shape) < 0.5
        x = np.where(hit, np.where(salt, 1.0, 0.0), x)
    elif spec.kind == "box_blur":
        side = int(round(np.sqrt(dataset.dim)))
        if side * side != dataset.dim:
            raise InputError(f"box_blur needs square images, got dim {dataset.dim}")
        x = _box_blur_images(x, side, BOX_BLUR_KERNEL[s])
    elif spec.kind == "contrast":
        x = contrast_adjust(x, CONTRAST_GAMMA[s])
    x = np.clip(x, 0.0, 1.0)
    return Dataset(
        x, dataset.labels.copy(), dataset.num_classes, split=dataset.split,
        provenance={**dataset.provenance,
                    "corruption": {"kind": spec.kind, "severity": spec.severity}},
    )


def contrast_adjust(x: np.ndarray, gamma: float) -> np.ndarray:
    """x <- mean + gamma * (x - mean), per-example mean; gamma = 1 is identity."""
    mean = x.mean(axis=1, keepdims=True)
    return mean + gamma * (x - mean)


def corruption_grid() -> list[CorruptionSpec]:
    """All kind x severity combinations, the desk-scale corruption sweep."""
    return [CorruptionSpec(kind, sev) for kind in CORRUPTION_KINDS for sev in range(1, 6)]


# Stroke vocabulary: 12 soft oriented bars at fixed anchors (28x28 reference
# frame). Classes mix a primary and a weaker secondary stroke, so templates
# share parts but stay separable.
_STROKE_ANCHORS = ((8, 8), (8, 20), (20, 8), (20, 20), (14, 14), (8, 14),
                   (20, 14), (14, 8), (14, 20), (11, 11), (17, 17), (11, 17))
_AMBIGUOUS_FRACTION = 0.30
_PIXEL_NOISE_STD = 0.05
_JITTER_STD = 0.9


def _stroke_field(cx: float, cy: float, ang: float, length: float,
                  width: float, side: int) -> np.ndarray:
    yy, xx = np.mgrid[0:side, 0:side].astype(np.float64)
    dx, dy = xx - cx, yy - cy
    c, s = np.cos(ang), np.sin(ang)
    dpar = dx * c + dy * s
    dperp = -dx * s + dy * c
    over = np.maximum(np.abs(dpar) - length, 0.0)
    return np.exp(-((dperp / width) ** 2)) * np.exp(-((over / 2.0) ** 2))


def _class_mix(num_classes: int) -> np.ndarray:
    mix = np.zeros((num_classes, len(_STROKE_ANCHORS)))
    for c in range(num_classes):
        mix[c, c % 12] = 1.0
        mix[c, (c + 4) % 12] = 0.3
    return mix


def _render_glyph(mix_row: np.ndarray, prng: Prng, side: int) -> np.ndarray:
    """One stroke-glyph image with per-example anchor jitter and stroke gains."""
    scale = side / 28.0
    jx = prng.gaussian((12,), std=_JITTER_STD)
    jy = prng.gaussian((12,), std=_JITTER_STD)
    gains = 0.65 + 0.35 * prng.uniform((12,))
    img = np.zeros((side, side))
    for i, (ay, ax) in enumerate(_STROKE_ANCHORS):
        w = mix_row[i] * gains[i]
        if w == 0.0:
            continue
        ang = np.pi * (i % 6) / 6.0
        length = (5.0 + (i % 3) * 2.0) * scale
        img += w * _stroke_field((ax + jx[i]) * scale, (ay + jy[i]) * scale,
                                 ang, length, 1.4 * scale, side)
    return img


def make_image_corpus(m: int, prng: Prng, side: int = 28, num_classes: int = 10,
                      ambiguous_fraction: float = _AMBIGUOUS_FRACTION,
                      noise_std: float = _PIXEL_NOISE_STD) -> Dataset:
    """Synthetic sparse-glyph corpus shaped like a 28x28 10-class image set.

    Each example renders its class glyph under jitter, translation, brightness
    gain, and pixel noise. A fixed fraction of examples additionally blends in
    a second class's glyph at equal weight while keeping the first label; those
    examples are irreducibly ambiguous, which caps attainable test accuracy and
    gives confidence-threshold and calibration protocols real headroom.
    """
    mix = _class_mix(num_classes)
    per = [m // num_classes + (1 if i < m % num_classes else 0) for i in range(num_classes)]
    feats = np.empty((m, side * side))
    labels = np.empty(m, dtype=np.int64)
    row = 0
    for cls in range(num_classes):
        for _ in range(per[cls]):
            img = _render_glyph(mix[cls], prng, side)
            if float(prng.uniform()) < ambiguous_fraction:
                other = int(prng.integers(1, 0, num_classes - 1)[0])
                other = other + 1 if other >= cls else other
                img = img + _render_glyph(mix[other], prng, side)
            di = int(prng.integers(1, -3, 4)[0])
            dj = int(prng.integers(1, -3, 4)[0])
            img = np.roll(np.roll(img, di, axis=0), dj, axis=1)
            peak = img.max()
            if peak > 0.0:
                img = img / peak
            gain = 0.65 + 0.35 * float(prng.uniform())
            img = gain * img + prng.gaussian(img.shape, 0.0, noise_std)
            feats[row] = np.clip(img, 0.0, 1.0).ravel()
            labels[row] = cls
            row += 1
    perm = prng.permutation(m)
    return Dataset(feats[perm], labels[perm], num_classes=num_classes,
                   provenance={"kind": "synthetic_images", "m": m, "side": side,
                               "ambiguous_fraction": ambiguous_fraction})


def _balanced_subset(dataset: Dataset, per_class: int, prng: Prng) -> np.ndarray:
    idx = []
    for cls in range(dataset.num_classes):
        rows = np.flatnonzero(dataset.labels == cls)
        if len(rows) < per_class:
            raise InputError(f"class {cls} has only {len(rows)} examples, need {per_class}")
        order = prng.permutation(len(rows))
        idx.append(rows[order[:per_class]])
    flat = np.concatenate(idx)
    return flat[prng.permutation(len(flat))]


def desk_corpus(prng: Prng, data_dir: str | None = None,
                n_train: int = 6000, n_test: int = 1000) -> tuple[Dataset, Dataset]:
    """The default image train/test pair, class-balanced at desk scale.

    If `data_dir` (or $STFBNN_DATA) holds the standard 28x28 IDX files they
    are subsampled; otherwise a synthetic corpus is generated, routed through
    an IDX round-trip on disk, and tagged synthetic in provenance.
    """
    import os
    import tempfile

    root = data_dir or os.environ.get("STFBNN_DATA")
    names = ("train-images-idx3-ubyte", "train-labels-idx1-ubyte",
             "t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte")
    if root and all(os.path.exists(os.path.join(root, n)) for n in names):
        full_train = load_idx(os.path.join(root, names[0]), os.path.join(root, names[1]))
        full_test = load_idx(os.path.join(root, names[2]), os.path.join(root, names[3]))
    else:
        gen = prng.spawn(101)
        raw = make_image_corpus(n_train + n_test + 2000, gen)
        tmp = tempfile.mkdtemp(prefix="stfbnn_corpus_")
        save_idx(raw, os.path.join(tmp, "img"), os.path.join(tmp, "lab"), 28, 28)
        raw = load_idx(os.path.join(tmp, "img"), os.path.join(tmp, "lab"))
        raw.provenance["kind"] = "synthetic_images"
        cut = n_train + 1000
        full_train = Dataset(raw.features[:cut], raw.labels[:cut], raw.num_classes,
                             provenance=dict(raw.provenance))
        full_test = Dataset(raw.features[cut:], raw.labels[cut:], raw.num_classes,
                            split="test", provenance=dict(raw.provenance))
    tr_idx = _balanced_subset(full_train, n_train // full_train.num_classes, prng.spawn(11))
    te_idx = _balanced_subset(full_test, n_test // full_test.num_classes, prng.spawn(12))
    train = Dataset(full_train.features[tr_idx], full_train.labels[tr_idx],
                    full_train.num_classes, split="train",
                    provenance={**full_train.provenance, "subset": n_train})
    test = Dataset(full_test.features[te_idx], full_test.labels[te_idx],
                   full_test.num_classes, split="test",
                   provenance={**full_test.provenance, "subset": n_test})
    return train, test

