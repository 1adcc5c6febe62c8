"""Test phantoms and measurement noise models."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigInvalid, SideTooSmall
from .spaces import as_signal

NOISE_KINDS = ("salt_pepper", "speckle", "gaussian", "split")


def generate_phantom(side: int, kind: str = "sparse_shapes") -> np.ndarray:
    """Piecewise-constant test image in [0, 1], flattened row-major.

    An elliptical ring (1.0) encloses two disks (0.5, 0.8) and a small
    rectangle (0.3) on a zero background.  Row 0 is the top of the image.
    """
    if kind != "sparse_shapes":
        raise ValueError(f"unknown phantom kind {kind!r}")
    if int(side) != side or side < 16:
        raise SideTooSmall(f"phantom side must be an integer >= 16, got {side}")
    side = int(side)
    c = (np.arange(side) + 0.5) / side * 2.0 - 1.0
    u, v = np.meshgrid(c, -c)
    img = np.zeros((side, side))

    def ellipse(cu, cv, a, b):
        return ((u - cu) / a) ** 2 + ((v - cv) / b) ** 2 <= 1.0

    img[ellipse(0, 0, 0.85, 0.65) & ~ellipse(0, 0, 0.75, 0.55)] = 1.0
    img[ellipse(-0.3, 0.1, 0.18, 0.18)] = 0.5
    img[ellipse(0.3, -0.15, 0.12, 0.12)] = 0.8
    img[(np.abs(u - 0.1) <= 0.1) & (np.abs(v - 0.35) <= 0.05)] = 0.3
    return img.ravel()


@dataclass(frozen=True)
class NoiseModel:
    """Noise description.

    ``salt_pepper`` replaces ``round(fraction * n)`` entries by ``low`` or
    ``high`` (defaulting to the data min / max).  ``speckle`` multiplies by
    ``1 + z`` and ``gaussian`` adds ``z`` with ``z ~ N(mean, variance)``.
    ``split`` applies ``background`` to entries with ``|y| <= threshold``
    (default ``1e-12 * max|y|``) and ``foreground`` to the rest.
    """

    kind: str
    fraction: float = 0.0
    mean: float = 0.0
    variance: float = 0.0
    low: float | None = None
    high: float | None = None
    threshold: float | None = None
    background: "NoiseModel | None" = None
    foreground: "NoiseModel | None" = None

    def __post_init__(self):
        if self.kind not in NOISE_KINDS:
            raise ConfigInvalid(f"unknown noise kind {self.kind!r}")
        if not 0.0 <= self.fraction <= 1.0:
            raise ConfigInvalid(f"fraction must lie in [0, 1], got {self.fraction}")
        if self.variance < 0:
            raise ConfigInvalid(f"variance must be >= 0, got {self.variance}")
        if self.kind == "split" and (self.background is None or self.foreground is None):
            raise ConfigInvalid("split noise needs background and foreground models")


def add_salt_pepper(y, fraction, rng, low=None, high=None) -> np.ndarray:
    y = as_signal(y, "data")
    if not 0.0 <= fraction <= 1.0:
        raise ConfigInvalid(f"fraction must lie in [0, 1], got {fraction}")
    out = y.copy()
    count = int(round(fraction * y.size))
    if count == 0:
        return out
    low = y.min() if low is None else low
    high = y.max() if high is None else high
    idx = rng.choice(y.size, size=count, replace=False)
    out[idx] = np.where(rng.random(count) < 0.5, low, high)
    return out


def add_speckle(y, mean, variance, rng) -> np.ndarray:
    y = as_signal(y, "data")
    if variance < 0:
        raise ConfigInvalid("variance must be >= 0")
    return y * (1.0 + rng.normal(mean, np.sqrt(variance), size=y.size))


def add_gaussian(y, mean, variance, rng) -> np.ndarray:
    y = as_signal(y, "data")
    if variance < 0:
        raise ConfigInvalid("variance must be >= 0")
    return y + rng.normal(mean, np.sqrt(variance), size=y.size)


def background_mask(y, threshold=None) -> np.ndarray:
    y = np.abs(as_signal(y, "data"))
    if threshold is None:
        threshold = 1e-12 * y.max()
    return y <= threshold


def add_split_noise(y, model: NoiseModel, rng) -> np.ndarray:
    """Apply ``model.background`` and ``model.foreground`` to disjoint regions.

    Salt-and-pepper impulse levels default to the extremes of the whole
    signal, not of the region, so background impulses stay visible.
    """
    if model.kind != "split":
        raise ConfigInvalid("add_split_noise needs a split model")
    y = as_signal(y, "data")
    back = background_mask(y, model.threshold)
    out = y.copy()
    for region, sub in ((back, model.background), (~back, model.foreground)):
        if region.any():
            out[region] = apply_noise(y[region], sub, rng, y.min(), y.max())
    return out


def apply_noise(y, model: NoiseModel, rng, low=None, high=None) -> np.ndarray:
    if model.kind == "salt_pepper":
        return add_salt_pepper(
            y, model.fraction, rng,
            low=model.low if model.low is not None else low,
            high=model.high if model.high is not None else high)
    if model.kind == "speckle":
        return add_speckle(y, model.mean, model.variance, rng)
    if model.kind == "gaussian":
        return add_gaussian(y, model.mean, model.variance, rng)
    return add_split_noise(y, model, rng)
