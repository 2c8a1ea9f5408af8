"""Image representation and dataset ingestion.

Images are height x width x channels arrays of float64 intensities in
[0, 1], stored row-major with interleaved channels. CIFAR-10's planar
byte layout is converted at load so every other module sees a single
indexing convention. Images and datasets are immutable once built and
safe to share across workers.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import FormatError, ShapeError
from .rng import DOMAIN_SYNTH, substream

CIFAR10_RECORD_BYTES = 3073  # 1 label byte + 3 x 1024 planar pixel bytes
MNIST_IMAGES_MAGIC = 2051
MNIST_LABELS_MAGIC = 2049

# Raw image file layout: 8-byte magic, three little-endian uint32 dims
# (height, width, channels), then float32 intensities row-major interleaved.
IMAGE_MAGIC = b"SATIMG01"


@dataclass(frozen=True, eq=False)
class Image:
    """One image: (h, w, c) float64 intensities in [0, 1], read-only."""

    data: np.ndarray

    def __post_init__(self) -> None:
        arr = np.asarray(self.data, dtype=np.float64)
        if arr.ndim != 3:
            raise ShapeError(f"image data must be (h, w, c), got shape {arr.shape}")
        if arr.shape[2] not in (1, 3):
            raise ShapeError(f"channel count must be 1 or 3, got {arr.shape[2]}")
        if not np.all((arr >= 0.0) & (arr <= 1.0)):
            raise ValueError("intensities must lie in [0, 1] and be finite")
        arr = arr.copy()
        arr.setflags(write=False)
        object.__setattr__(self, "data", arr)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    def same_shape(self, other: "Image") -> bool:
        return self.data.shape == other.data.shape


@dataclass(frozen=True, eq=False)
class LabeledSample:
    image: Image
    label: int


@dataclass(frozen=True, eq=False)
class Dataset:
    """An ordered, homogeneous collection of labeled images."""

    samples: tuple[LabeledSample, ...]
    num_classes: int
    name: str

    def __post_init__(self) -> None:
        if not self.samples:
            raise ValueError("dataset must be non-empty")
        shape = self.samples[0].image.data.shape
        for s in self.samples:
            if s.image.data.shape != shape:
                raise ShapeError("all images in a dataset must share dimensions")
            if not 0 <= s.label < self.num_classes:
                raise ValueError(f"label {s.label} outside [0, {self.num_classes})")

    def __len__(self) -> int:
        return len(self.samples)

    def __iter__(self):
        return iter(self.samples)

    def __getitem__(self, i: int) -> LabeledSample:
        return self.samples[i]

    @property
    def image_shape(self) -> tuple[int, int, int]:
        return self.samples[0].image.data.shape

    def subset(self, indices, name: str | None = None) -> "Dataset":
        picked = tuple(self.samples[i] for i in indices)
        return Dataset(picked, self.num_classes, name or self.name)


def load_cifar10(path: str, max_samples: int | None = None) -> Dataset:
    """Load a CIFAR-10 binary batch file (3073-byte records, planar RGB)."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) == 0 or len(raw) % CIFAR10_RECORD_BYTES != 0:
        raise FormatError(
            f"{path}: length {len(raw)} not a positive multiple of {CIFAR10_RECORD_BYTES}"
        )
    n_records = len(raw) // CIFAR10_RECORD_BYTES
    if max_samples is not None:
        n_records = min(n_records, max_samples)
    samples = []
    for i in range(n_records):
        rec = raw[i * CIFAR10_RECORD_BYTES : (i + 1) * CIFAR10_RECORD_BYTES]
        label = rec[0]
        if label > 9:
            raise FormatError(f"{path}: record {i} has label byte {label} > 9")
        planes = np.frombuffer(rec, dtype=np.uint8, count=3072, offset=1)
        # planar R,G,B (1024 bytes each, row-major) -> interleaved (32, 32, 3)
        arr = planes.reshape(3, 32, 32).transpose(1, 2, 0).astype(np.float64) / 255.0
        samples.append(LabeledSample(Image(arr), int(label)))
    return Dataset(tuple(samples), num_classes=10, name="cifar10")


def save_cifar10(dataset: Dataset, path: str) -> None:
    """Write a dataset of 32x32x3 images back to CIFAR-10 binary format.

    Intensities are quantized to the nearest 1/255 step; images already on
    that grid round-trip exactly.
    """
    if dataset.image_shape != (32, 32, 3):
        raise ShapeError("CIFAR-10 format requires 32x32x3 images")
    with open(path, "wb") as fh:
        for s in dataset:
            quantized = np.round(s.image.data * 255.0).astype(np.uint8)
            fh.write(bytes([s.label]))
            fh.write(quantized.transpose(2, 0, 1).tobytes())


def load_mnist_idx(
    images_path: str, labels_path: str, max_samples: int | None = None
) -> Dataset:
    """Load the MNIST IDX image/label file pair (big-endian headers)."""
    with open(images_path, "rb") as fh:
        img_raw = fh.read()
    with open(labels_path, "rb") as fh:
        lab_raw = fh.read()
    if len(img_raw) < 16:
        raise FormatError(f"{images_path}: truncated IDX header")
    if len(lab_raw) < 8:
        raise FormatError(f"{labels_path}: truncated IDX header")
    magic, n_images, rows, cols = struct.unpack(">iiii", img_raw[:16])
    if magic != MNIST_IMAGES_MAGIC:
        raise FormatError(f"{images_path}: magic {magic}, expected {MNIST_IMAGES_MAGIC}")
    lab_magic, n_labels = struct.unpack(">ii", lab_raw[:8])
    if lab_magic != MNIST_LABELS_MAGIC:
        raise FormatError(f"{labels_path}: magic {lab_magic}, expected {MNIST_LABELS_MAGIC}")
    if n_images != n_labels:
        raise FormatError(f"image count {n_images} != label count {n_labels}")
    if len(img_raw) < 16 + n_images * rows * cols:
        raise FormatError(f"{images_path}: truncated pixel data")
    if len(lab_raw) < 8 + n_labels:
        raise FormatError(f"{labels_path}: truncated label data")

    n = n_images if max_samples is None else min(n_images, max_samples)
    pixels = np.frombuffer(img_raw, dtype=np.uint8, count=n * rows * cols, offset=16)
    pixels = pixels.reshape(n, rows, cols, 1).astype(np.float64) / 255.0
    labels = np.frombuffer(lab_raw, dtype=np.uint8, count=n, offset=8)
    if labels.size and labels.max() > 9:
        raise FormatError(f"{labels_path}: label byte {labels.max()} > 9")
    samples = tuple(
        LabeledSample(Image(pixels[i]), int(labels[i])) for i in range(n)
    )
    return Dataset(samples, num_classes=10, name="mnist")


# Class structure (texture patterns) is shared across dataset seeds so train
# and test splits describe the same classes.
_CLASS_TEXTURE_SEED = 0x5A7C0DE


def _dial_patterns(side: int, channels: int, dial_count: int, block: int) -> np.ndarray:
    """One checker-modulated block pattern per class bit, on disjoint bands.

    Block cells give the pattern enough spatial coherence for a small
    conv net to read; the pixel-level checker gives it near-zero
    autocorrelation under shifts and resampling, so geometric jitter
    destroys it. Together: an easily learned but fragile feature.
    """
    nb = max(1, side // block)
    yy, xx = np.meshgrid(np.arange(side), np.arange(side), indexing="ij")
    checker = (1.0 - 2.0 * ((xx + yy) % 2))[:, :, None]
    edges = np.linspace(0, side, dial_count + 1).astype(int)
    patterns = []
    for d in range(dial_count):
        cells = np.sign(
            substream(_CLASS_TEXTURE_SEED, DOMAIN_SYNTH, d).standard_normal((nb, nb, 1))
        )
        full = np.kron(cells, np.ones((block, block, 1)))[:side, :side] * checker
        mask = np.zeros((side, side, 1))
        mask[edges[d] : edges[d + 1]] = 1.0
        patterns.append(full * mask * np.ones((1, 1, channels)))
    return np.stack(patterns)


def _patch_grid(side: int, count: int) -> list[tuple[slice, slice]]:
    """`count` rectangular patches tiling the image (2 rows, enough columns)."""
    cols = (count + 1) // 2
    row_edges = np.linspace(0, side, 3).astype(int)
    col_edges = np.linspace(0, side, cols + 1).astype(int)
    patches = []
    for r in range(2):
        for c in range(cols):
            patches.append(
                (slice(row_edges[r], row_edges[r + 1]), slice(col_edges[c], col_edges[c + 1]))
            )
    return patches[:count]


def synth_dataset(
    seed: int,
    n: int,
    side: int = 32,
    channels: int = 3,
    num_classes: int = 8,
    *,
    code_amp: float = 0.14,
    dial_amp: float = 0.022,
    noise_sigma: float = 0.01,
    code_corruption: float = 0.08,
) -> Dataset:
    """Generate a deterministic synthetic dataset with separable classes.

    Mimicking the texture/shape feature split of natural images, every
    class carries two kinds of evidence:

      * texture dials: one weak high-frequency pattern per class bit
        (amplitude `dial_amp`). Linearly separable, learned quickly, and
        destroyed by modest geometric transforms.
      * a patch-brightness code: a sign chain over coarse patches whose
        products encode the class bits (amplitude `code_amp`, with a random
        global sign). It survives geometric transforms, but on a
        `code_corruption` fraction of samples it encodes a random class,
        so a trained model cannot rely on it alone.

    The dials alone determine the label, so the classes stay linearly
    separable and a small classifier reaches high train accuracy.
    """
    if n <= 0:
        raise ValueError("n must be positive")
    if num_classes < 2:
        raise ValueError("need at least 2 classes")
    rng = substream(seed, DOMAIN_SYNTH)
    dial_count = max(1, int(np.ceil(np.log2(num_classes))))
    dials = _dial_patterns(side, channels, dial_count, block=4)
    patches = _patch_grid(side, dial_count + 1)

    samples = []
    for i in range(n):
        label = i % num_classes
        bits = [(label >> d) & 1 for d in range(dial_count)]
        code_class = label
        if rng.uniform() < code_corruption:
            code_class = int(rng.integers(num_classes))
        code_bits = [(code_class >> d) & 1 for d in range(dial_count)]
        sign = 1.0 if rng.uniform() < 0.5 else -1.0
        base = np.full((side, side, channels), 0.5)
        for (rs, cs), d in zip(patches, range(dial_count + 1)):
            base[rs, cs, :] = 0.5 + code_amp * sign
            if d < dial_count:
                sign *= 2 * code_bits[d] - 1
        for d in range(dial_count):
            base += dial_amp * (2 * bits[d] - 1) * dials[d]
        noisy = base + rng.normal(0.0, noise_sigma, size=base.shape)
        samples.append(LabeledSample(Image(np.clip(noisy, 0.0, 1.0)), label))
    return Dataset(tuple(samples), num_classes=num_classes, name="synth")


def save_image(image: Image, path: str) -> None:
    """Write one image as a raw float32 tensor file with a small header."""
    h, w, c = image.data.shape
    with open(path, "wb") as fh:
        fh.write(IMAGE_MAGIC)
        fh.write(struct.pack("<III", h, w, c))
        fh.write(image.data.astype("<f4").tobytes())


def load_image(path: str) -> Image:
    """Read an image written by `save_image`."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 20 or raw[:8] != IMAGE_MAGIC:
        raise FormatError(f"{path}: not a raw image file (bad magic)")
    h, w, c = struct.unpack("<III", raw[8:20])
    expected = 20 + h * w * c * 4
    if len(raw) != expected:
        raise FormatError(f"{path}: expected {expected} bytes, got {len(raw)}")
    data = np.frombuffer(raw, dtype="<f4", offset=20).reshape(h, w, c)
    data = data.astype(np.float64)
    if not np.all((data >= 0.0) & (data <= 1.0)):
        raise FormatError(f"{path}: intensities outside [0, 1]")
    return Image(data)
