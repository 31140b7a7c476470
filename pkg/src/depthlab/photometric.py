"""Photometric error, per-pixel minimum reprojection, auto-masking and smoothness.

All functions accept plain arrays or :class:`~depthlab.autodiff.Variable`
inputs and are differentiable through the autodiff primitives.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import route, value_of


@dataclass(frozen=True)
class PhotometricConfig:
    alpha: float = 0.85
    ssim_c1: float = 0.01**2
    ssim_c2: float = 0.03**2
    window: int = 3

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must lie in [0, 1]")
        if self.ssim_c1 <= 0 or self.ssim_c2 <= 0:
            raise ValueError("SSIM stabilisers must be positive")
        if self.window != 3:
            raise ValueError("only the 3x3 SSIM window is implemented")


DEFAULT_CONFIG = PhotometricConfig()


class ErrorMap(NamedTuple):
    error: object
    argmin: np.ndarray


def _check_pair(a, b):
    av, bv = value_of(a), value_of(b)
    if av.shape != bv.shape:
        raise ValueError(f"image shapes differ: {av.shape} vs {bv.shape}")


def ssim_map(a, b, cfg: PhotometricConfig = DEFAULT_CONFIG):
    """Channel-averaged SSIM from 3x3 box statistics with reflect padding."""
    _check_pair(a, b)
    mu_a = ad.box_filter3(a)
    mu_b = ad.box_filter3(b)
    var_a = ad.box_filter3(a * a) - mu_a * mu_a
    var_b = ad.box_filter3(b * b) - mu_b * mu_b
    cov = ad.box_filter3(a * b) - mu_a * mu_b
    num = (2.0 * mu_a * mu_b + cfg.ssim_c1) * (2.0 * cov + cfg.ssim_c2)
    den = (mu_a * mu_a + mu_b * mu_b + cfg.ssim_c1) * (var_a + var_b + cfg.ssim_c2)
    return ad.mean(num / den, axis=-1)


def pe(a, b, cfg: PhotometricConfig = DEFAULT_CONFIG):
    """alpha/2 * (1 - SSIM) + (1 - alpha) * channel-mean |a - b|, per pixel."""
    _check_pair(a, b)
    ssim = ssim_map(a, b, cfg)
    l1 = ad.mean(ad.absolute(a - b), axis=-1)
    return (cfg.alpha / 2.0) * (1.0 - ssim) + (1.0 - cfg.alpha) * l1


def min_reprojection(pe_maps: Sequence) -> ErrorMap:
    """Per-pixel minimum over source frames; ties go to the lowest index."""
    if len(pe_maps) == 0:
        raise ValueError("min_reprojection needs at least one map")
    shapes = {value_of(m).shape for m in pe_maps}
    if len(shapes) != 1:
        raise ValueError(f"error maps differ in shape: {sorted(shapes)}")
    err, idx = ad.minimum(list(pe_maps))
    return ErrorMap(err, idx)


def identity_error(target, sources: Sequence, cfg: PhotometricConfig = DEFAULT_CONFIG) -> np.ndarray:
    """min over sources of pe(target, unwarped source), as a constant map."""
    return value_of(min_reprojection([pe(value_of(target), value_of(s), cfg) for s in sources]).error)


def mask_from_errors(warped_error, identity_err) -> np.ndarray:
    """mu = [warped min error < unwarped min error] as a {0, 1} float map."""
    w = value_of(warped_error)
    i = value_of(identity_err)
    return route(lambda: (w < i).astype(np.float64))


def auto_mask(target, sources: Sequence, warped: Sequence, cfg: PhotometricConfig = DEFAULT_CONFIG) -> np.ndarray:
    """Binary stationary-pixel mask: 1 where some warp beats every unwarped source."""
    if len(sources) == 0 or len(sources) != len(warped):
        raise ValueError("auto_mask needs matching, non-empty source and warped lists")
    t = value_of(target)
    for img in list(sources) + list(warped):
        if value_of(img).shape != t.shape:
            raise ValueError("auto_mask inputs differ in shape")
    warped_err = min_reprojection([pe(t, value_of(w), cfg) for w in warped]).error
    return mask_from_errors(warped_err, identity_error(t, sources, cfg))


def smoothness(disparity, image):
    """Edge-aware smoothness of mean-normalised disparity.

    Forward differences in x and y, weighted by exp(-|grad I|) with image
    gradients averaged over channels; the sum is divided by the pixel count.
    """
    d = value_of(disparity)
    img = value_of(image)
    if img.ndim == 2:
        img = img[:, :, None]
    if d.shape != img.shape[:2]:
        raise ValueError(f"disparity {d.shape} and image {img.shape[:2]} differ in size")
    mean_d = ad.mean(disparity)
    if not value_of(mean_d) > 0:
        raise ValueError("disparity mean must be positive")
    norm = disparity / mean_d
    wx = np.exp(-np.mean(np.abs(img[:, 1:] - img[:, :-1]), axis=-1))
    wy = np.exp(-np.mean(np.abs(img[1:] - img[:-1]), axis=-1))
    gx = ad.absolute(ad.getitem(norm, (slice(None), slice(1, None))) - ad.getitem(norm, (slice(None), slice(None, -1))))
    gy = ad.absolute(ad.getitem(norm, (slice(1, None), slice(None))) - ad.getitem(norm, (slice(None, -1), slice(None))))
    total = ad.sum_(gx * wx) + ad.sum_(gy * wy)
    return total / float(d.size)
