"""Depth-image augmentation for sim2real: sensor noise, stick artifacts,
random-value pixels, and dropout, applied in that order.

Images are metric depth in [0.5, 1.5] m at 160×120 (arrays are (H, W) =
(120, 160)). The sensor-noise parameters follow the usual Kinect-style
quadratic axial model; they are configuration defaults, not ground truth.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ConfigurationError

DEPTH_RANGE = (0.5, 1.5)
IMAGE_SHAPE = (120, 160)  # (H, W)


@dataclass
class DepthAugConfig:
    p_dropout: float = 0.003
    p_randu: float = 0.003
    p_stick: float = 0.0025  # per candidate anchor pixel
    stick_max_length: int = 18
    stick_max_width: int = 3
    # random-value replacement range: printed sign dropped, magnitudes kept
    randu_range: tuple = (0.5, 1.3)
    sensor_noise: bool = True
    axial_sigma0: float = 0.0012
    axial_sigma1: float = 0.0019
    axial_z0: float = 0.4
    corr_sigma: float = 0.001  # per-image correlated offset

    def __post_init__(self):
        for p in (self.p_dropout, self.p_randu, self.p_stick):
            if not (0.0 <= p <= 1.0):
                raise ConfigurationError("augmentation probabilities must be in [0, 1]")
        lo, hi = self.randu_range
        if not (lo < hi):
            raise ConfigurationError("randu range must be ordered")


def _apply_sensor_noise(img: np.ndarray, rng: np.random.Generator, cfg: DepthAugConfig) -> np.ndarray:
    sigma = cfg.axial_sigma0 + cfg.axial_sigma1 * (img - cfg.axial_z0) ** 2
    img = img + sigma * rng.standard_normal(img.shape)
    img = img + cfg.corr_sigma * rng.standard_normal()
    return img


def apply_sticks(img: np.ndarray, rng: np.random.Generator, cfg: DepthAugConfig) -> tuple[np.ndarray, int]:
    """Draw wire-like line segments anchored per pixel with p_stick.

    Returns the image and the number of sticks drawn.
    """
    h, w = img.shape
    anchors = np.argwhere(rng.random((h, w)) < cfg.p_stick)
    lo, hi = DEPTH_RANGE
    for y0, x0 in anchors:
        length = int(rng.integers(1, cfg.stick_max_length + 1))
        width = int(rng.integers(1, cfg.stick_max_width + 1))
        angle = rng.uniform(0.0, np.pi)
        value = rng.uniform(lo, hi)
        dy, dx = np.sin(angle), np.cos(angle)
        py, px = -dx, dy  # unit perpendicular for thickness
        for step in range(length):
            for off in range(width):
                y = int(round(y0 + step * dy + (off - (width - 1) / 2) * py))
                x = int(round(x0 + step * dx + (off - (width - 1) / 2) * px))
                if 0 <= y < h and 0 <= x < w:
                    img[y, x] = value
    return img, len(anchors)


def depth_augment(image, rng: np.random.Generator, cfg: DepthAugConfig | None = None) -> np.ndarray:
    """Augmented copy of a depth image, clamped to the valid range on input."""
    cfg = cfg or DepthAugConfig()
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 2:
        raise ConfigurationError("depth image must be 2-D")
    lo, hi = DEPTH_RANGE
    img = np.clip(img, lo, hi)

    if cfg.sensor_noise:
        img = _apply_sensor_noise(img, rng, cfg)
    img, _ = apply_sticks(img, rng, cfg)

    randu_mask = rng.random(img.shape) < cfg.p_randu
    if randu_mask.any():
        img[randu_mask] = rng.uniform(cfg.randu_range[0], cfg.randu_range[1], size=int(randu_mask.sum()))

    drop_mask = rng.random(img.shape) < cfg.p_dropout
    img[drop_mask] = 0.0
    return img
