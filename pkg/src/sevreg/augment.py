"""Feature-space augmentations producing view pairs for contrastive training."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import EmptyInputError, ParameterError


@dataclass
class AugmentConfig:
    """Noise / time-mask / crop settings; each transform is coin-gated."""

    noise_sigma: float = 0.01
    mask_max_frac: float = 0.20
    crop_min_frac: float = 0.70
    per_transform_prob: float = 0.5
    mask_spans: int = 1

    def validate(self) -> None:
        if self.noise_sigma < 0:
            raise ParameterError("noise_sigma must be >= 0")
        if not 0.0 <= self.mask_max_frac <= 1.0:
            raise ParameterError("mask_max_frac must be in [0, 1]")
        if not 0.0 < self.crop_min_frac <= 1.0:
            raise ParameterError("crop_min_frac must be in (0, 1]")
        if not 0.0 <= self.per_transform_prob <= 1.0:
            raise ParameterError("per_transform_prob must be in [0, 1]")
        if self.mask_spans < 1:
            raise ParameterError("mask_spans must be >= 1")


def add_gaussian_noise(
    h: np.ndarray, sigma: float, rng: np.random.Generator
) -> np.ndarray:
    """Add i.i.d. zero-mean Gaussian noise of std sigma elementwise."""
    if sigma < 0:
        raise ParameterError("sigma must be >= 0")
    return h + rng.normal(0.0, sigma, size=h.shape) if sigma > 0 else h.copy()


def time_mask(
    h: np.ndarray, max_frac: float, rng: np.random.Generator, spans: int = 1
) -> np.ndarray:
    """Zero contiguous frame spans; each span length is uniform in
    [0, floor(max_frac * T)]."""
    if not 0.0 <= max_frac <= 1.0:
        raise ParameterError("max_frac must be in [0, 1]")
    t = h.shape[0]
    out = h.copy()
    top = int(np.floor(max_frac * t))
    for _ in range(spans):
        length = int(rng.integers(0, top + 1))
        if length == 0:
            continue
        start = int(rng.integers(0, t - length + 1))
        out[start : start + length] = 0.0
    return out


def random_crop(
    h: np.ndarray, min_frac: float, rng: np.random.Generator
) -> np.ndarray:
    """Keep a contiguous window; its length is uniform in [ceil(min_frac*T), T]."""
    if not 0.0 < min_frac <= 1.0:
        raise ParameterError("min_frac must be in (0, 1]")
    t = h.shape[0]
    if t < 1:
        raise EmptyInputError("random_crop needs T >= 1")
    t_min = int(np.ceil(min_frac * t))
    length = int(rng.integers(t_min, t + 1))
    start = int(rng.integers(0, t - length + 1))
    return h[start : start + length].copy()


def augment_once(
    h: np.ndarray, cfg: AugmentConfig, rng: np.random.Generator
) -> np.ndarray:
    """One draw of the composed pipeline noise -> mask -> crop.

    Each transform fires independently with per_transform_prob.
    """
    out = h
    if rng.random() < cfg.per_transform_prob:
        out = add_gaussian_noise(out, cfg.noise_sigma, rng)
    if rng.random() < cfg.per_transform_prob:
        out = time_mask(out, cfg.mask_max_frac, rng, spans=cfg.mask_spans)
    if rng.random() < cfg.per_transform_prob:
        out = random_crop(out, cfg.crop_min_frac, rng)
    return out if out is not h else h.copy()


def make_views(
    h: np.ndarray, cfg: AugmentConfig, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray]:
    """Two independent augmented views of one sequence.

    The source label travels with both views unchanged; batch assembly is
    responsible for tiling it.
    """
    cfg.validate()
    return augment_once(h, cfg, rng), augment_once(h, cfg, rng)
