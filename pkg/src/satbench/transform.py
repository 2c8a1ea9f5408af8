"""Input-preprocessing defenses.

The stochastic affine transform chains three stages, each with a
coefficient drawn uniformly at apply time:

  1. translation by (dx * w, dy * h) pixels, floored, zero-filled;
  2. rotation by dr degrees about the integer center, inverse-mapped
     with nearest-neighbor (floor) sampling, zero-filled;
  3. rescale to (floor(ds*h), floor(ds*w)) with bilinear interpolation,
     then center-crop back when enlarged or zero-pad symmetrically when
     shrunk.

Every defense is a pure function of (image, parameters, RNG state), so a
fixed stream reproduces the exact defended image. A bit-depth reduction
baseline and an identity pass-through live here too.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Union

import numpy as np

from .imagecore import Image


@dataclass(frozen=True)
class SatParams:
    """Coefficient limits: translation and scaling as fractions, rotation in degrees."""

    t: float
    s: float
    r: float

    def __post_init__(self) -> None:
        if not 0.0 <= self.t < 1.0:
            raise ValueError(f"translation limit must be in [0, 1), got {self.t}")
        if not 0.0 <= self.s < 1.0:
            raise ValueError(f"scaling limit must be in [0, 1), got {self.s}")
        if not 0.0 <= self.r < 90.0:
            raise ValueError(f"rotation limit must be in [0, 90), got {self.r}")


@dataclass(frozen=True)
class SatDraw:
    """One concrete coefficient sample: dx, dy ~ U(-T,T); dr ~ U(-R,R); ds ~ U(1-S,1+S)."""

    dx: float
    dy: float
    dr: float
    ds: float


@dataclass(frozen=True)
class Identity:
    """No-op defense (undefended baseline)."""


@dataclass(frozen=True)
class Sat:
    params: SatParams


@dataclass(frozen=True)
class BitDepth:
    """Quantize intensities to `bits` bits."""

    bits: int

    def __post_init__(self) -> None:
        if not 1 <= self.bits <= 8:
            raise ValueError(f"bit depth must be in [1, 8], got {self.bits}")


DefenseKind = Union[Identity, Sat, BitDepth]


def describe(kind: DefenseKind) -> str:
    """Stable textual id for report rows."""
    if isinstance(kind, Identity):
        return "identity"
    if isinstance(kind, Sat):
        p = kind.params
        return f"sat(T={p.t:g},S={p.s:g},R={p.r:g})"
    return f"bitdepth({kind.bits})"


def sat_draw(params: SatParams, rng: np.random.Generator) -> SatDraw:
    """Sample one coefficient set. Draw order is fixed: dx, dy, dr, ds."""
    dx = rng.uniform(-params.t, params.t)
    dy = rng.uniform(-params.t, params.t)
    dr = rng.uniform(-params.r, params.r)
    ds = rng.uniform(1.0 - params.s, 1.0 + params.s)
    return SatDraw(dx=dx, dy=dy, dr=dr, ds=ds)


def _translate(arr: np.ndarray, dx: float, dy: float) -> np.ndarray:
    """Shift content by (-floor(dx*w), -floor(dy*h)); sources out of bounds become 0."""
    h, w = arr.shape[:2]
    shift_x = math.floor(dx * w)
    shift_y = math.floor(dy * h)
    out = np.zeros_like(arr)
    xs = np.arange(w) + shift_x
    ys = np.arange(h) + shift_y
    vx = (xs >= 0) & (xs < w)
    vy = (ys >= 0) & (ys < h)
    if vx.any() and vy.any():
        out[np.ix_(vy, vx)] = arr[np.ix_(ys[vy], xs[vx])]
    return out


def _rotate(arr: np.ndarray, degrees: float) -> np.ndarray:
    """Inverse rotation about (floor(w/2), floor(h/2)) with floor sampling."""
    h, w = arr.shape[:2]
    rad = degrees * math.pi / 180.0
    cx, cy = w // 2, h // 2
    y, x = np.meshgrid(np.arange(h, dtype=np.float64), np.arange(w, dtype=np.float64), indexing="ij")
    sx = (x - cx) * math.cos(rad) + (y - cy) * math.sin(rad) + cx
    sy = -(x - cx) * math.sin(rad) + (y - cy) * math.cos(rad) + cy
    sxi = np.floor(sx).astype(np.int64)
    syi = np.floor(sy).astype(np.int64)
    valid = (sxi >= 0) & (sxi < w) & (syi >= 0) & (syi < h)
    out = np.zeros_like(arr)
    out[valid] = arr[syi[valid], sxi[valid]]
    return out


def _resize_bilinear(arr: np.ndarray, new_h: int, new_w: int) -> np.ndarray:
    """Bilinear resample on half-pixel centers; identity when sizes match."""
    h, w = arr.shape[:2]
    if (new_h, new_w) == (h, w):
        return arr.copy()
    ys = (np.arange(new_h, dtype=np.float64) + 0.5) * (h / new_h) - 0.5
    xs = (np.arange(new_w, dtype=np.float64) + 0.5) * (w / new_w) - 0.5
    y0 = np.floor(ys).astype(np.int64)
    x0 = np.floor(xs).astype(np.int64)
    fy = ys - y0
    fx = xs - x0
    y0c = np.clip(y0, 0, h - 1)
    y1c = np.clip(y0 + 1, 0, h - 1)
    x0c = np.clip(x0, 0, w - 1)
    x1c = np.clip(x0 + 1, 0, w - 1)
    fy = fy[:, None, None]
    fx = fx[None, :, None]
    top = arr[y0c][:, x0c] * (1 - fx) + arr[y0c][:, x1c] * fx
    bot = arr[y1c][:, x0c] * (1 - fx) + arr[y1c][:, x1c] * fx
    return top * (1 - fy) + bot * fy


def _rescale(arr: np.ndarray, ds: float) -> np.ndarray:
    """Resize to (floor(ds*h), floor(ds*w)), then crop or zero-pad back per axis."""
    h, w = arr.shape[:2]
    new_h = max(1, math.floor(ds * h))
    new_w = max(1, math.floor(ds * w))
    resized = _resize_bilinear(arr, new_h, new_w)
    out = resized
    # crop center where the resized image is larger
    if new_h > h:
        top = (new_h - h) // 2
        out = out[top : top + h]
    if new_w > w:
        left = (new_w - w) // 2
        out = out[:, left : left + w]
    # pad symmetrically with zeros where it is smaller
    if out.shape[0] < h or out.shape[1] < w:
        pad_y = h - out.shape[0]
        pad_x = w - out.shape[1]
        out = np.pad(
            out,
            ((pad_y // 2, pad_y - pad_y // 2), (pad_x // 2, pad_x - pad_x // 2), (0, 0)),
            mode="constant",
        )
    return out


def sat_apply(image: Image, draw: SatDraw) -> Image:
    """Apply translation, rotation, and scaling with the given coefficients.

    Output dimensions always equal input dimensions; the zero draw
    (0, 0, 0, 1) is a bitwise identity.
    """
    arr = _translate(image.data, draw.dx, draw.dy)
    arr = _rotate(arr, draw.dr)
    arr = _rescale(arr, draw.ds)
    return Image(np.clip(arr, 0.0, 1.0))


def bit_depth_reduce(image: Image, bits: int) -> Image:
    levels = float(2**bits - 1)
    return Image(np.floor(image.data * levels + 0.5) / levels)


def defend(image: Image, kind: DefenseKind, rng: np.random.Generator) -> Image:
    """Apply one defense draw. Pure in (image, kind, rng state)."""
    if isinstance(kind, Identity):
        return image
    if isinstance(kind, Sat):
        return sat_apply(image, sat_draw(kind.params, rng))
    if isinstance(kind, BitDepth):
        return bit_depth_reduce(image, kind.bits)
    raise TypeError(f"unknown defense kind: {kind!r}")
