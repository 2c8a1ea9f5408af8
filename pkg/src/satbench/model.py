"""Small convolutional classifier with hand-coded forward and backward passes.

Architecture (fixed): conv 3x3x8 (stride 1, zero pad 1) -> ReLU ->
maxpool 2x2 -> conv 3x3x16 (stride 1, zero pad 1) -> ReLU -> maxpool 2x2
-> flatten -> fully connected to num_classes logits.

Parameters are stored float32 (the checkpoint precision) and all math
runs in float64, so a save/load round trip is bitwise transparent.
Gradients are exact analytic derivatives; there is no autodiff anywhere.
"""

from __future__ import annotations

import os
import struct
import tempfile
from dataclasses import dataclass

import numpy as np

from .errors import FormatError, ShapeError, TrainingError
from .imagecore import Dataset, Image
from .rng import DOMAIN_TRAIN, substream
from .transform import SatParams, sat_apply, sat_draw

CHECKPOINT_MAGIC = b"SATBCKPT"
CHECKPOINT_VERSION = 1

# Checkpoint serialization order; shapes derive from architecture metadata.
PARAM_NAMES = ("conv1_w", "conv1_b", "conv2_w", "conv2_b", "fc_w", "fc_b")

# Per-class score vector (pre-softmax), shape (num_classes,), float64.
Logits = np.ndarray


@dataclass(eq=False)
class Classifier:
    height: int
    width: int
    channels: int
    num_classes: int
    conv1_w: np.ndarray  # (3, 3, channels, 8) float32
    conv1_b: np.ndarray  # (8,)
    conv2_w: np.ndarray  # (3, 3, 8, 16)
    conv2_b: np.ndarray  # (16,)
    fc_w: np.ndarray  # (flat_dim, num_classes)
    fc_b: np.ndarray  # (num_classes,)

    @property
    def flat_dim(self) -> int:
        return (self.height // 4) * (self.width // 4) * 16

    def __post_init__(self) -> None:
        expected = {
            "conv1_w": (3, 3, self.channels, 8),
            "conv1_b": (8,),
            "conv2_w": (3, 3, 8, 16),
            "conv2_b": (16,),
            "fc_w": (self.flat_dim, self.num_classes),
            "fc_b": (self.num_classes,),
        }
        for name, shape in expected.items():
            arr = getattr(self, name)
            if arr.shape != shape:
                raise ShapeError(f"{name}: expected shape {shape}, got {arr.shape}")
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name}: non-finite parameter values")
            setattr(self, name, np.ascontiguousarray(arr, dtype=np.float32))

    def params(self) -> dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in PARAM_NAMES}


def init_classifier(
    height: int, width: int, channels: int, num_classes: int, rng: np.random.Generator
) -> Classifier:
    """He-initialized weights, zero biases."""
    def he(shape, fan_in):
        return rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape).astype(np.float32)

    flat_dim = (height // 4) * (width // 4) * 16
    return Classifier(
        height=height,
        width=width,
        channels=channels,
        num_classes=num_classes,
        conv1_w=he((3, 3, channels, 8), 9 * channels),
        conv1_b=np.zeros(8, dtype=np.float32),
        conv2_w=he((3, 3, 8, 16), 9 * 8),
        conv2_b=np.zeros(16, dtype=np.float32),
        fc_w=rng.normal(0.0, np.sqrt(1.0 / flat_dim), size=(flat_dim, num_classes)).astype(
            np.float32
        ),
        fc_b=np.zeros(num_classes, dtype=np.float32),
    )


# ---------------------------------------------------------------------------
# layer primitives (batch-first arrays, float64)


def _conv_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray):
    """3x3 convolution, stride 1, zero pad 1. Returns (out, padded input)."""
    n, h, wd, _ = x.shape
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1), (0, 0)))
    out = np.zeros((n, h, wd, w.shape[3]))
    for ky in range(3):
        for kx in range(3):
            out += xp[:, ky : ky + h, kx : kx + wd, :] @ w[ky, kx]
    return out + b, xp


def _conv_backward(dout: np.ndarray, xp: np.ndarray, w: np.ndarray):
    n, h, wd, _ = dout.shape
    dxp = np.zeros_like(xp)
    dw = np.zeros(w.shape)
    for ky in range(3):
        for kx in range(3):
            xs = xp[:, ky : ky + h, kx : kx + wd, :]
            dw[ky, kx] = np.einsum("nhwi,nhwo->io", xs, dout)
            dxp[:, ky : ky + h, kx : kx + wd, :] += dout @ w[ky, kx].T
    db = dout.sum(axis=(0, 1, 2))
    return dxp[:, 1:-1, 1:-1, :], dw, db


def _pool_forward(x: np.ndarray):
    """2x2 max pool, stride 2; trailing odd row/column is dropped."""
    n, h, w, c = x.shape
    ho, wo = h // 2, w // 2
    win = (
        x[:, : ho * 2, : wo * 2, :]
        .reshape(n, ho, 2, wo, 2, c)
        .transpose(0, 1, 3, 2, 4, 5)
        .reshape(n, ho, wo, 4, c)
    )
    idx = win.argmax(axis=3)
    out = win.max(axis=3)
    return out, (idx, x.shape)


def _pool_backward(dout: np.ndarray, cache):
    idx, in_shape = cache
    n, ho, wo, c = dout.shape
    onehot = idx[:, :, :, None, :] == np.arange(4).reshape(1, 1, 1, 4, 1)
    dwin = onehot * dout[:, :, :, None, :]
    dx = np.zeros(in_shape)
    dx[:, : ho * 2, : wo * 2, :] = (
        dwin.reshape(n, ho, wo, 2, 2, c)
        .transpose(0, 1, 3, 2, 4, 5)
        .reshape(n, ho * 2, wo * 2, c)
    )
    return dx


def _forward_cached(model: Classifier, x: np.ndarray):
    """Full forward pass on a float64 batch (n, h, w, c); returns logits + cache."""
    c1, xp1 = _conv_forward(x, model.conv1_w.astype(np.float64), model.conv1_b.astype(np.float64))
    r1 = np.maximum(c1, 0.0)
    p1, pc1 = _pool_forward(r1)
    c2, xp2 = _conv_forward(p1, model.conv2_w.astype(np.float64), model.conv2_b.astype(np.float64))
    r2 = np.maximum(c2, 0.0)
    p2, pc2 = _pool_forward(r2)
    flat = p2.reshape(x.shape[0], -1)
    logits = flat @ model.fc_w.astype(np.float64) + model.fc_b.astype(np.float64)
    cache = (xp1, c1, pc1, xp2, c2, pc2, p2.shape, flat)
    return logits, cache


def _backward(model: Classifier, cache, dlogits: np.ndarray, want_params: bool):
    """Propagate dlogits back to the input; optionally collect parameter grads."""
    xp1, c1, pc1, xp2, c2, pc2, p2_shape, flat = cache
    fc_w = model.fc_w.astype(np.float64)
    grads = {}
    if want_params:
        grads["fc_w"] = flat.T @ dlogits
        grads["fc_b"] = dlogits.sum(axis=0)
    dflat = dlogits @ fc_w.T
    dp2 = dflat.reshape(p2_shape)
    dr2 = _pool_backward(dp2, pc2)
    dc2 = dr2 * (c2 > 0.0)
    dp1, dw2, db2 = _conv_backward(dc2, xp2, model.conv2_w.astype(np.float64))
    if want_params:
        grads["conv2_w"], grads["conv2_b"] = dw2, db2
    dr1 = _pool_backward(dp1, pc1)
    dc1 = dr1 * (c1 > 0.0)
    dx, dw1, db1 = _conv_backward(dc1, xp1, model.conv1_w.astype(np.float64))
    if want_params:
        grads["conv1_w"], grads["conv1_b"] = dw1, db1
    return dx, grads


# ---------------------------------------------------------------------------
# public inference API


def _check_dims(model: Classifier, image: Image) -> None:
    if image.data.shape != (model.height, model.width, model.channels):
        raise ShapeError(
            f"image shape {image.data.shape} does not match model input "
            f"({model.height}, {model.width}, {model.channels})"
        )


def forward(model: Classifier, image: Image) -> Logits:
    """Logits for one image."""
    _check_dims(model, image)
    logits, _ = _forward_cached(model, image.data[None])
    out = logits[0]
    if not np.all(np.isfinite(out)):
        raise TrainingError("non-finite logits")
    return out


def forward_batch(model: Classifier, batch: np.ndarray) -> np.ndarray:
    logits, _ = _forward_cached(model, batch)
    return logits


def predict(model: Classifier, image: Image) -> int:
    return int(np.argmax(forward(model, image)))


def predict_batch(model: Classifier, batch: np.ndarray) -> np.ndarray:
    return np.argmax(forward_batch(model, batch), axis=1)


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def cross_entropy(logits: np.ndarray, label: int) -> float:
    z = logits - logits.max()
    return float(np.log(np.exp(z).sum()) - z[label])


def cw_margin(logits: np.ndarray, target: int, kappa: float = 0.0) -> float:
    """max over non-target logits minus target logit, floored at -kappa."""
    others = np.delete(logits, target)
    return float(max(others.max() - logits[target], -kappa))


def loss_and_input_grad(
    model: Classifier,
    image: Image,
    label: int,
    loss_kind: str = "cross_entropy",
) -> tuple[float, np.ndarray]:
    """Loss value and its exact gradient with respect to the input pixels.

    `loss_kind` is "cross_entropy" (label = true or target class) or
    "cw_margin" (label = target class, kappa fixed at 0).
    """
    _check_dims(model, image)
    if not 0 <= label < model.num_classes:
        raise ValueError(f"class index {label} outside [0, {model.num_classes})")
    logits, cache = _forward_cached(model, image.data[None])
    z = logits[0]
    if loss_kind == "cross_entropy":
        loss = cross_entropy(z, label)
        dlogits = softmax(z)
        dlogits[label] -= 1.0
    elif loss_kind == "cw_margin":
        loss = cw_margin(z, label)
        dlogits = np.zeros_like(z)
        if loss > 0.0:
            masked = z.copy()
            masked[label] = -np.inf
            dlogits[int(np.argmax(masked))] = 1.0
            dlogits[label] = -1.0
    else:
        raise ValueError(f"unknown loss kind: {loss_kind!r}")
    dx, _ = _backward(model, cache, dlogits[None], want_params=False)
    return loss, dx[0]


# ---------------------------------------------------------------------------
# training


@dataclass(frozen=True)
class TrainConfig:
    epochs: int
    batch_size: int
    learning_rate: float
    seed: int
    # Optional affine jitter applied to a fraction of training views; gives
    # the desk-scale model the transform tolerance a large pretrained
    # classifier brings while leaving clean views for fine features.
    augment: SatParams | None = None
    augment_prob: float = 0.5

    def __post_init__(self) -> None:
        if self.epochs <= 0 or self.batch_size <= 0 or self.learning_rate <= 0:
            raise ValueError("epochs, batch_size, and learning_rate must be positive")
        if not 0.0 <= self.augment_prob <= 1.0:
            raise ValueError("augment_prob must lie in [0, 1]")


@dataclass(frozen=True)
class EpochStats:
    epoch: int
    loss: float
    accuracy: float


def batch_loss_and_grads(model: Classifier, batch: np.ndarray, labels: np.ndarray):
    """Mean cross-entropy over the batch plus parameter gradients."""
    n = batch.shape[0]
    logits, cache = _forward_cached(model, batch)
    zmax = logits.max(axis=1, keepdims=True)
    logsumexp = np.log(np.exp(logits - zmax).sum(axis=1)) + zmax[:, 0]
    loss = float(np.mean(logsumexp - logits[np.arange(n), labels]))
    dlogits = softmax(logits)
    dlogits[np.arange(n), labels] -= 1.0
    dlogits /= n
    _, grads = _backward(model, cache, dlogits, want_params=True)
    preds = np.argmax(logits, axis=1)
    return loss, grads, preds


def sgd_step(
    model: Classifier, batch: np.ndarray, labels: np.ndarray, learning_rate: float
) -> float:
    """One mini-batch SGD update in place; returns the batch loss."""
    if batch.shape[0] == 0:
        raise ValueError("empty batch")
    loss, grads, _ = batch_loss_and_grads(model, batch, labels)
    if not np.isfinite(loss):
        raise TrainingError(f"training diverged: batch loss {loss}")
    for name, g in grads.items():
        p = getattr(model, name).astype(np.float64)
        setattr(model, name, (p - learning_rate * g).astype(np.float32))
    return loss


def train(model: Classifier, dataset: Dataset, config: TrainConfig) -> list[EpochStats]:
    """Mini-batch SGD over the dataset; deterministic for a fixed seed.

    The logged accuracy is the post-epoch clean accuracy over the whole
    dataset, so the final entry is reproducible from the saved model.
    """
    images = np.stack([s.image.data for s in dataset])
    labels = np.array([s.label for s in dataset])
    n = len(dataset)
    history = []
    for epoch in range(config.epochs):
        order = substream(config.seed, DOMAIN_TRAIN, epoch).permutation(n)
        epoch_loss = 0.0
        for start in range(0, n, config.batch_size):
            idx = order[start : start + config.batch_size]
            batch = images[idx]
            if config.augment is not None:
                views = []
                for i in idx:
                    rng = substream(config.seed, DOMAIN_TRAIN, epoch, int(i))
                    if rng.uniform() < config.augment_prob:
                        draw = sat_draw(config.augment, rng)
                        views.append(sat_apply(dataset[int(i)].image, draw).data)
                    else:
                        views.append(images[i])
                batch = np.stack(views)
            loss, grads, _ = batch_loss_and_grads(model, batch, labels[idx])
            if not np.isfinite(loss):
                raise TrainingError(
                    f"training diverged at epoch {epoch}, batch {start // config.batch_size}"
                )
            for name, g in grads.items():
                p = getattr(model, name).astype(np.float64)
                setattr(model, name, (p - config.learning_rate * g).astype(np.float32))
            epoch_loss += loss * len(idx)
        history.append(
            EpochStats(epoch=epoch, loss=epoch_loss / n, accuracy=accuracy(model, dataset))
        )
    return history


def accuracy(model: Classifier, dataset: Dataset, chunk: int = 256) -> float:
    images = np.stack([s.image.data for s in dataset])
    labels = np.array([s.label for s in dataset])
    hits = 0
    for start in range(0, len(dataset), chunk):
        part = images[start : start + chunk]
        hits += int((predict_batch(model, part) == labels[start : start + chunk]).sum())
    return hits / len(dataset)


# ---------------------------------------------------------------------------
# checkpoint I/O


def save_checkpoint(model: Classifier, path: str) -> None:
    """Versioned binary checkpoint; written via temp-then-rename."""
    header = CHECKPOINT_MAGIC + struct.pack(
        "<IIIII",
        CHECKPOINT_VERSION,
        model.height,
        model.width,
        model.channels,
        model.num_classes,
    )
    blobs = [getattr(model, name).astype("<f4").tobytes() for name in PARAM_NAMES]
    fd, tmp = tempfile.mkstemp(dir=os.path.dirname(os.path.abspath(path)) or ".")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(header)
            for blob in blobs:
                fh.write(blob)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_checkpoint(path: str) -> Classifier:
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 28 or raw[:8] != CHECKPOINT_MAGIC:
        raise FormatError(f"{path}: not a checkpoint file (bad magic)")
    version, height, width, channels, num_classes = struct.unpack("<IIIII", raw[8:28])
    if version != CHECKPOINT_VERSION:
        raise FormatError(
            f"{path}: unsupported checkpoint version {version} (expected {CHECKPOINT_VERSION})"
        )
    flat_dim = (height // 4) * (width // 4) * 16
    shapes = {
        "conv1_w": (3, 3, channels, 8),
        "conv1_b": (8,),
        "conv2_w": (3, 3, 8, 16),
        "conv2_b": (16,),
        "fc_w": (flat_dim, num_classes),
        "fc_b": (num_classes,),
    }
    offset = 28
    arrays = {}
    for name in PARAM_NAMES:
        shape = shapes[name]
        count = int(np.prod(shape))
        end = offset + count * 4
        if end > len(raw):
            raise FormatError(f"{path}: truncated parameter data at {name}")
        arrays[name] = np.frombuffer(raw, dtype="<f4", count=count, offset=offset).reshape(shape)
        offset = end
    if offset != len(raw):
        raise FormatError(f"{path}: {len(raw) - offset} trailing bytes")
    return Classifier(
        height=height, width=width, channels=channels, num_classes=num_classes, **arrays
    )
