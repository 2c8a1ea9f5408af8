"""Distortion metrics between an image and its processed version.

All three metrics evaluate on the 0-255 intensity scale (images are
stored in [0,1] and rescaled here, nowhere else):

  l2    sqrt of the summed squared differences, divided by the
        pixel-channel count (division outside the root);
  ssim  the global luminance * contrast * structure product, computed
        from whole-image mean, standard deviation, and covariance
        (population statistics, not the windowed variant);
  psnr  20*log10(255) - 10*log10(MSE), +inf when the images are equal.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ShapeError
from .imagecore import Image

PIXEL_RANGE = 255.0
_C1 = (0.01 * PIXEL_RANGE) ** 2
_C2 = (0.03 * PIXEL_RANGE) ** 2


@dataclass(frozen=True)
class MetricReport:
    l2: float
    ssim: float
    psnr: float  # math.inf when mse == 0
    mse: float


def _paired(a: Image, b: Image) -> tuple[np.ndarray, np.ndarray]:
    if not a.same_shape(b):
        raise ShapeError(f"image shapes differ: {a.data.shape} vs {b.data.shape}")
    return a.data * PIXEL_RANGE, b.data * PIXEL_RANGE


def l2_distance(a: Image, b: Image) -> float:
    x, y = _paired(a, b)
    return float(np.sqrt(np.sum((x - y) ** 2)) / x.size)


def ssim_global(a: Image, b: Image) -> float:
    x, y = _paired(a, b)
    mu_x, mu_y = x.mean(), y.mean()
    sd_x, sd_y = x.std(), y.std()  # population
    cov = ((x - mu_x) * (y - mu_y)).mean()
    lum = (2 * mu_x * mu_y + _C1) / (mu_x**2 + mu_y**2 + _C1)
    con = (2 * sd_x * sd_y + _C2) / (sd_x**2 + sd_y**2 + _C2)
    struct = (cov + _C2 / 2) / (sd_x * sd_y + _C2 / 2)
    return float(lum * con * struct)


def mse(a: Image, b: Image) -> float:
    x, y = _paired(a, b)
    return float(np.mean((x - y) ** 2))


def psnr(a: Image, b: Image) -> float:
    err = mse(a, b)
    if err == 0.0:
        return math.inf
    return 20.0 * math.log10(PIXEL_RANGE) - 10.0 * math.log10(err)


def report(a: Image, b: Image) -> MetricReport:
    return MetricReport(
        l2=l2_distance(a, b), ssim=ssim_global(a, b), psnr=psnr(a, b), mse=mse(a, b)
    )
