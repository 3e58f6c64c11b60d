"""Dataset ingestion, a synthetic canary dataset and the augmentation pipeline.

Images are kept as ``uint8 [N, C, H, W]``; conversion to float happens in
:func:`normalize`. Readers cover the CIFAR binary record layout and the IDX
format; both have writers so round-trips can be checked byte for byte.
"""

from __future__ import annotations

import math
import os
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DataFormatError

CIFAR_PIXELS = 3 * 32 * 32
CIFAR_LABEL_BYTES = {"c10": 1, "c100": 2}
CIFAR_CLASSES = {"c10": 10, "c100": 100}
CIFAR_FILES = {
    "c10": {"train": [f"data_batch_{i}.bin" for i in range(1, 6)], "test": ["test_batch.bin"]},
    "c100": {"train": ["train.bin"], "test": ["test.bin"]},
}
CIFAR_SUBDIRS = {"c10": "cifar-10-batches-bin", "c100": "cifar-100-binary"}
IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


@dataclass(frozen=True)
class Dataset:
    images: np.ndarray
    labels: np.ndarray
    classes: int
    split: str = "train"

    def __post_init__(self):
        if self.images.dtype != np.uint8 or self.images.ndim != 4:
            raise DataFormatError(f"images must be uint8 [N, C, H, W], got {self.images.dtype} {self.images.shape}")
        if len(self.images) == 0:
            raise DataFormatError("dataset is empty")
        if self.labels.shape != (len(self.images),):
            raise DataFormatError(f"{len(self.images)} images but labels have shape {self.labels.shape}")
        if self.labels.min() < 0 or self.labels.max() >= self.classes:
            raise DataFormatError(f"labels outside [0, {self.classes})")
        self.images.setflags(write=False)
        self.labels.setflags(write=False)

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def shape(self) -> tuple:
        return self.images.shape[1:]

    def subset(self, indices, split: str | None = None) -> "Dataset":
        idx = np.asarray(indices)
        return Dataset(self.images[idx].copy(), self.labels[idx].copy(), self.classes, split or self.split)

    def head(self, n: int) -> "Dataset":
        return self.subset(np.arange(min(n, len(self))))

    def resized(self, size: int) -> "Dataset":
        if self.images.shape[2:] == (size, size):
            return self
        return Dataset(resize(self.images, size), self.labels.copy(), self.classes, self.split)


# ---------------------------------------------------------------- CIFAR


def _variant(variant: str) -> str:
    if variant not in CIFAR_LABEL_BYTES:
        raise ConfigError(f"unknown CIFAR variant {variant!r}; expected 'c10' or 'c100'")
    return variant


def parse_cifar(raw: bytes, variant: str, source: str = "<bytes>") -> tuple[np.ndarray, np.ndarray]:
    lb = CIFAR_LABEL_BYTES[_variant(variant)]
    rec = lb + CIFAR_PIXELS
    if len(raw) == 0 or len(raw) % rec:
        n = len(raw) // rec
        raise DataFormatError(
            f"{source}: {len(raw)} bytes is not a whole number of {rec}-byte records "
            f"(expected {max(n, 1) * rec} or {(n + 1) * rec})")
    table = np.frombuffer(raw, dtype=np.uint8).reshape(-1, rec)
    labels = table[:, lb - 1].astype(np.int64)  # c100 stores (coarse, fine); keep fine
    images = table[:, lb:].reshape(-1, 3, 32, 32).copy()
    return images, labels


def load_cifar(path, variant: str = "c10", split: str = "train") -> Dataset:
    """Load one CIFAR binary file, or every file of ``split`` when ``path`` is a directory."""
    variant = _variant(variant)
    path = os.fspath(path)
    if os.path.isdir(path):
        sub = os.path.join(path, CIFAR_SUBDIRS[variant])
        root = sub if os.path.isdir(sub) else path
        files = [os.path.join(root, f) for f in CIFAR_FILES[variant][split]]
    else:
        files = [path]
    imgs, labs = [], []
    for f in files:
        if not os.path.exists(f):
            raise DataFormatError(f"missing CIFAR file {f}")
        with open(f, "rb") as fh:
            i, l = parse_cifar(fh.read(), variant, f)
        imgs.append(i)
        labs.append(l)
    return Dataset(np.concatenate(imgs), np.concatenate(labs), CIFAR_CLASSES[variant], split)


def cifar_bytes(ds: Dataset, variant: str = "c10", coarse: np.ndarray | None = None) -> bytes:
    lb = CIFAR_LABEL_BYTES[_variant(variant)]
    if ds.shape != (3, 32, 32):
        raise DataFormatError(f"CIFAR records hold 3x32x32 images, got {ds.shape}")
    table = np.zeros((len(ds), lb + CIFAR_PIXELS), dtype=np.uint8)
    table[:, lb - 1] = ds.labels
    if lb == 2 and coarse is not None:
        table[:, 0] = coarse
    table[:, lb:] = ds.images.reshape(len(ds), -1)
    return table.tobytes()


def write_cifar(path, ds: Dataset, variant: str = "c10", coarse: np.ndarray | None = None) -> None:
    with open(path, "wb") as fh:
        fh.write(cifar_bytes(ds, variant, coarse))


# ---------------------------------------------------------------- IDX


def _read_idx(path, magic: int) -> np.ndarray:
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 4:
        raise DataFormatError(f"{path}: file too short for an IDX header")
    got = struct.unpack(">I", raw[:4])[0]
    if got != magic:
        raise DataFormatError(f"{path}: bad IDX magic 0x{got:08x}, expected 0x{magic:08x}")
    ndim = magic & 0xFF
    header = 4 + 4 * ndim
    dims = struct.unpack(f">{ndim}I", raw[4:header])
    expected = header + int(np.prod(dims))
    if len(raw) != expected:
        raise DataFormatError(f"{path}: expected {expected} bytes for dims {dims}, got {len(raw)}")
    return np.frombuffer(raw, dtype=np.uint8, offset=header).reshape(dims)


def load_idx(images_path, labels_path, classes: int | None = None, split: str = "train") -> Dataset:
    images = _read_idx(images_path, IDX_IMAGES_MAGIC)
    labels = _read_idx(labels_path, IDX_LABELS_MAGIC).astype(np.int64)
    if len(images) != len(labels):
        raise DataFormatError(f"{len(images)} images but {len(labels)} labels")
    k = classes if classes is not None else int(labels.max()) + 1
    return Dataset(images[:, None].copy(), labels, k, split)


def write_idx(images_path, labels_path, ds: Dataset) -> None:
    if ds.images.shape[1] != 1:
        raise DataFormatError(f"IDX stores single-channel images, got {ds.images.shape[1]} channels")
    N, _, H, W = ds.images.shape
    with open(images_path, "wb") as fh:
        fh.write(struct.pack(">IIII", IDX_IMAGES_MAGIC, N, H, W))
        fh.write(ds.images.tobytes())
    with open(labels_path, "wb") as fh:
        fh.write(struct.pack(">II", IDX_LABELS_MAGIC, N))
        fh.write(ds.labels.astype(np.uint8).tobytes())


# ---------------------------------------------------------------- synthetic


def _blob_layout(classes: int):
    """Distinct (row, col) centres in unit coordinates plus a colour per class."""
    side = math.ceil(math.sqrt(classes))
    centres = [((r + 0.5) / side, (c + 0.5) / side) for r in range(side) for c in range(side)][:classes]
    hues = np.arange(classes) / classes
    colours = 0.5 + 0.5 * np.stack([np.cos(2 * np.pi * (hues + s)) for s in (0.0, 1 / 3, 2 / 3)], axis=1)
    return centres, colours


def synthetic(classes: int = 10, n_per_class: int = 100, resolution: int = 64, seed: int = 0,
              noise: float = 0.1, split: str = "train") -> Dataset:
    """Class-conditional Gaussian blobs, one spatial cell and colour per class.

    Each class owns a cell of a ``ceil(sqrt(classes))`` square layout; samples
    jitter the centre a little and add pixel noise.
    """
    if classes < 2 or n_per_class < 1 or resolution < 4:
        raise ConfigError(f"bad synthetic spec: classes={classes}, n_per_class={n_per_class}, "
                          f"resolution={resolution}")
    rng = np.random.default_rng(seed)
    centres, colours = _blob_layout(classes)
    side = math.ceil(math.sqrt(classes))
    sigma = 0.35 / side
    grid = (np.arange(resolution) + 0.5) / resolution
    labels = np.repeat(np.arange(classes), n_per_class)
    rng.shuffle(labels)
    images = np.empty((len(labels), 3, resolution, resolution), dtype=np.uint8)
    for i, k in enumerate(labels):
        cy, cx = np.asarray(centres[k]) + rng.uniform(-0.15, 0.15, 2) / side
        blob = np.exp(-((grid[:, None] - cy) ** 2 + (grid[None, :] - cx) ** 2) / (2 * sigma ** 2))
        img = colours[k][:, None, None] * blob + noise * rng.standard_normal((3, resolution, resolution))
        images[i] = np.clip(np.rint(img * 255), 0, 255).astype(np.uint8)
    return Dataset(images, labels.astype(np.int64), classes, split)


def synthetic_splits(classes: int = 10, n_train: int = 50, n_test: int = 20, resolution: int = 64,
                     seed: int = 0, noise: float = 0.1) -> tuple[Dataset, Dataset]:
    train = synthetic(classes, n_train, resolution, seed, noise, "train")
    test = synthetic(classes, n_test, resolution, seed + 1, noise, "test")
    return train, test


# ---------------------------------------------------------------- augmentation


@dataclass(frozen=True)
class AugmentConfig:
    hflip: float = 0.5
    rotation: float = 30.0
    shear: float = 10.0
    crop_padding: int = 4
    interpolation: str = "bilinear"
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.hflip <= 1.0:
            raise ConfigError(f"hflip probability must be in [0, 1], got {self.hflip}")
        if self.rotation < 0 or self.shear < 0:
            raise ConfigError(f"rotation/shear degrees must be >= 0, got {self.rotation}, {self.shear}")
        if self.crop_padding < 0:
            raise ConfigError(f"crop_padding must be >= 0, got {self.crop_padding}")
        if self.interpolation not in ("bilinear", "nearest"):
            raise ConfigError(f"interpolation must be 'bilinear' or 'nearest', got {self.interpolation!r}")

    @classmethod
    def off(cls) -> "AugmentConfig":
        return cls(hflip=0.0, rotation=0.0, shear=0.0, crop_padding=0)


def warp(image: np.ndarray, matrix: np.ndarray, shift=(0.0, 0.0), interpolation: str = "bilinear") -> np.ndarray:
    """Resample ``image [C, H, W]`` under an affine map about the image centre.

    ``matrix`` maps output (row, col) offsets from the centre to input offsets;
    ``shift`` is added in input pixels. Out-of-range samples read zero.
    """
    C, H, W = image.shape
    cy, cx = (H - 1) / 2.0, (W - 1) / 2.0
    rr, cc = np.meshgrid(np.arange(H) - cy, np.arange(W) - cx, indexing="ij")
    src_r = matrix[0, 0] * rr + matrix[0, 1] * cc + cy + shift[0]
    src_c = matrix[1, 0] * rr + matrix[1, 1] * cc + cx + shift[1]
    img = image.astype(np.float64)
    if interpolation == "nearest":
        r = np.rint(src_r).astype(np.int64)
        c = np.rint(src_c).astype(np.int64)
        ok = (r >= 0) & (r < H) & (c >= 0) & (c < W)
        out = np.zeros_like(img)
        out[:, ok] = img[:, r[ok], c[ok]]
        return out.astype(image.dtype)
    r0 = np.floor(src_r).astype(np.int64)
    c0 = np.floor(src_c).astype(np.int64)
    fr, fc = src_r - r0, src_c - c0
    out = np.zeros_like(img)
    for dr, wr in ((0, 1 - fr), (1, fr)):
        for dc, wc in ((0, 1 - fc), (1, fc)):
            r, c = r0 + dr, c0 + dc
            ok = (r >= 0) & (r < H) & (c >= 0) & (c < W)
            wgt = np.where(ok, wr * wc, 0.0)
            out += wgt * img[:, np.clip(r, 0, H - 1), np.clip(c, 0, W - 1)]
    if np.issubdtype(image.dtype, np.integer):
        info = np.iinfo(image.dtype)
        return np.clip(np.rint(out), info.min, info.max).astype(image.dtype)
    return out.astype(image.dtype)


def affine_matrix(rotation_deg: float, shear_deg: float) -> np.ndarray:
    """Output -> input offset map for a rotation followed by a horizontal shear."""
    a, s = math.radians(rotation_deg), math.tan(math.radians(shear_deg))
    rot = np.array([[math.cos(a), -math.sin(a)], [math.sin(a), math.cos(a)]])
    sh = np.array([[1.0, 0.0], [s, 1.0]])
    return np.linalg.inv(sh @ rot)


def augment(cfg: AugmentConfig, image: np.ndarray, rng: np.random.Generator | None = None) -> np.ndarray:
    """Random flip, rotation, shear and padded crop of one ``[C, H, W]`` image."""
    rng = rng if rng is not None else np.random.default_rng(cfg.seed)
    out = image
    if cfg.hflip > 0 and rng.random() < cfg.hflip:
        out = out[:, :, ::-1]
    angle = rng.uniform(-cfg.rotation, cfg.rotation) if cfg.rotation > 0 else 0.0
    shear = rng.uniform(-cfg.shear, cfg.shear) if cfg.shear > 0 else 0.0
    p = cfg.crop_padding
    shift = tuple(float(v) for v in rng.integers(-p, p + 1, 2)) if p > 0 else (0.0, 0.0)
    if angle or shear:
        out = warp(out, affine_matrix(angle, shear), shift, cfg.interpolation)
    elif shift != (0.0, 0.0):
        out = translate(out, int(shift[0]), int(shift[1]))
    return np.ascontiguousarray(out)


def translate(image: np.ndarray, dr: int, dc: int) -> np.ndarray:
    """Integer shift with zero fill: ``out[r, c] = image[r + dr, c + dc]``."""
    C, H, W = image.shape
    out = np.zeros_like(image)
    rs, re = max(0, -dr), min(H, H - dr)
    cs, ce = max(0, -dc), min(W, W - dc)
    if rs < re and cs < ce:
        out[:, rs:re, cs:ce] = image[:, rs + dr:re + dr, cs + dc:ce + dc]
    return out


def augment_batch(cfg: AugmentConfig, images: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    return np.stack([augment(cfg, img, rng) for img in images])


# ---------------------------------------------------------------- normalisation & batching


@dataclass(frozen=True)
class Normalization:
    mean: tuple[float, ...]
    std: tuple[float, ...]

    @classmethod
    def fit(cls, ds: Dataset) -> "Normalization":
        x = ds.images.astype(np.float64) / 255.0
        mean = x.mean(axis=(0, 2, 3))
        std = x.std(axis=(0, 2, 3))
        std = np.where(std > 1e-8, std, 1.0)
        return cls(tuple(float(v) for v in mean), tuple(float(v) for v in std))

    def apply(self, images: np.ndarray, dtype=np.float32) -> np.ndarray:
        x = images.astype(np.float64) / 255.0
        m = np.asarray(self.mean)[None, :, None, None]
        s = np.asarray(self.std)[None, :, None, None]
        return ((x - m) / s).astype(dtype)


def normalize(images: np.ndarray, stats: Normalization | None = None, dtype=np.float32) -> np.ndarray:
    """Per-channel standardisation; statistics default to those of ``images`` itself."""
    if stats is None:
        stats = Normalization.fit(Dataset(np.ascontiguousarray(images), np.zeros(len(images), np.int64), 1))
    return stats.apply(images, dtype)


def resize(images: np.ndarray, size: int) -> np.ndarray:
    """Nearest-neighbour resize of ``[N, C, H, W]`` to ``size x size``."""
    H, W = images.shape[2:]
    rows = (np.arange(size) * H) // size
    cols = (np.arange(size) * W) // size
    return np.ascontiguousarray(images[:, :, rows][:, :, :, cols])


@dataclass
class BatchIterator:
    """Shuffled mini-batches; the shuffle and augmentation RNGs are owned by the iterator."""

    dataset: Dataset
    batch_size: int
    stats: Normalization
    augment_cfg: AugmentConfig | None = None
    shuffle: bool = True
    seed: int = 0
    dtype: type = np.float32
    epoch: int = field(default=0)

    def __iter__(self):
        rng = np.random.default_rng([self.seed, self.epoch])
        order = rng.permutation(len(self.dataset)) if self.shuffle else np.arange(len(self.dataset))
        aug_rng = np.random.default_rng([self.seed, self.epoch, 1])
        for start in range(0, len(order), self.batch_size):
            idx = order[start:start + self.batch_size]
            imgs = self.dataset.images[idx]
            if self.augment_cfg is not None:
                imgs = augment_batch(self.augment_cfg, imgs, aug_rng)
            yield self.stats.apply(imgs, self.dtype), self.dataset.labels[idx]

    def __len__(self) -> int:
        return math.ceil(len(self.dataset) / self.batch_size)
