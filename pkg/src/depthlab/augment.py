"""Seedable image augmentations: weather, time of day, corruptions and positional edits.

Every augmentation is a pure function of an :class:`AugmentationSpec` (kind,
parameters, severity, seed) and its inputs.  Parameters left unset are
drawn from the spec seed by :func:`resolve`, so a resolved spec replays
bit-exactly.  :func:`sample_plan` turns a pool into per-triplet plans,
consuming a seed-derived permutation of the pool without replacement.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
from scipy import fft, ndimage
from sklearn.base import BaseEstimator, TransformerMixin

from .geometry import Intrinsics
from .imaging import check_image, check_scalar_map, to_grayscale

PHOTOMETRIC_KINDS = (
    "fog", "rain_streaks", "ground_snow", "motion_blur", "night", "dawn", "dusk", "brightness",
    "grayscale", "channel_r", "channel_g", "channel_b",
)
CORRUPTION_KINDS = (
    "gaussian_noise", "shot_noise", "impulse_noise", "defocus_blur", "glass_blur", "zoom_blur",
    "snow", "frost", "elastic", "pixelate", "jpeg",
)
POSITIONAL_KINDS = ("vertical_crop", "tile_shuffle", "scale")
KINDS = PHOTOMETRIC_KINDS + CORRUPTION_KINDS + POSITIONAL_KINDS + ("random_erase", "composite", "identity")
DEPTH_KINDS = frozenset({"fog", "ground_snow"})
SEVERITY_KINDS = frozenset(CORRUPTION_KINDS) | {"rain_streaks", "ground_snow", "motion_blur", "brightness"}
CONSISTENCY_MODES = ("scene_consistent", "frame_inconsistent")

AIRLIGHT = 0.8
FOG_BETA_TRAIN = (0.05, 1.0)
FOG_BETA_TEST = 1.0
CROP_TAUS = (0.2, 0.4, 0.6, 0.8)
TILE_GRID_W = (2, 4)
TILE_GRID_H = (2, 3)
SCALE_RANGE = (0.7, 1.3)
MAX_SEVERITY = 5

# one entry per severity level 1..5; each table grows in its distortion magnitude
SEVERITY_TABLES: dict[str, tuple] = {
    "gaussian_noise": (0.04, 0.06, 0.08, 0.09, 0.10),  # noise sigma
    "shot_noise": (60.0, 25.0, 12.0, 5.0, 3.0),  # photons per unit (fewer = noisier)
    "impulse_noise": (0.03, 0.06, 0.09, 0.17, 0.27),  # corrupted fraction
    "defocus_blur": (1.0, 1.5, 2.0, 2.5, 3.0),  # disk radius px
    "glass_blur": ((0.7, 1, 2), (0.9, 2, 1), (1.0, 2, 3), (1.1, 3, 2), (1.5, 4, 2)),  # sigma, delta, iters
    "zoom_blur": (1.06, 1.11, 1.16, 1.21, 1.26),  # largest zoom
    "snow": (0.15, 0.25, 0.35, 0.45, 0.55),  # flake coverage
    "frost": ((1.0, 0.4), (0.8, 0.6), (0.7, 0.7), (0.65, 0.7), (0.6, 0.75)),  # image, frost weight
    "elastic": ((6.0, 3.0), (9.0, 3.0), (12.0, 3.5), (15.0, 4.0), (18.0, 4.0)),  # alpha px, sigma px
    "pixelate": (2, 3, 4, 5, 6),  # block size px
    "jpeg": (25, 18, 15, 10, 7),  # quality
    "rain_streaks": (40, 80, 140, 220, 320),  # streak count per 192x128 raster
    "ground_snow": (0.2, 0.3, 0.4, 0.5, 0.6),  # whitening strength
    "motion_blur": (3, 5, 7, 9, 11),  # kernel length px
    "brightness": (0.1, 0.2, 0.3, 0.4, 0.5),  # additive lift
}
TONE_MAPS = {
    "night": ((0.25, 0.30, 0.45), 2.2),
    "dawn": ((1.0, 0.85, 0.6), 1.2),
    "dusk": ((1.0, 0.8, 0.7), 1.3),
}

_JPEG_LUMA = np.array([
    [16, 11, 10, 16, 24, 40, 51, 61], [12, 12, 14, 19, 26, 58, 60, 55],
    [14, 13, 16, 24, 40, 57, 69, 56], [14, 17, 22, 29, 51, 87, 80, 62],
    [18, 22, 37, 56, 68, 109, 103, 77], [24, 35, 55, 64, 81, 104, 113, 92],
    [49, 64, 78, 87, 103, 121, 120, 101], [72, 92, 95, 98, 112, 100, 103, 99],
], dtype=np.float64)


def mix_seed(*parts: int) -> int:
    """64-bit hash-mix of integer parts (SeedSequence entropy pooling)."""
    ss = np.random.SeedSequence([int(p) & 0xFFFFFFFFFFFFFFFF for p in parts])
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def _rng(seed: int, stream: int) -> np.random.Generator:
    return np.random.default_rng([int(seed) & 0xFFFFFFFFFFFFFFFF, stream])


@dataclass(frozen=True)
class AugmentationSpec:
    kind: str
    params: dict = field(default_factory=dict)
    severity: int | None = None
    seed: int = 0
    children: tuple = ()

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown augmentation kind {self.kind!r}")
        if self.severity is not None and not (1 <= int(self.severity) <= MAX_SEVERITY):
            raise ValueError("severity must lie in [1, 5]")
        if self.kind == "composite":
            if not self.children:
                raise ValueError("composite needs at least one child spec")
            if any(c.kind == "composite" for c in self.children):
                raise ValueError("composite children must not be composite")
        elif self.children:
            raise ValueError("only composite specs carry children")

    @property
    def is_positional(self) -> bool:
        if self.kind == "composite":
            return any(c.is_positional for c in self.children)
        return self.kind in POSITIONAL_KINDS

    @property
    def needs_depth(self) -> bool:
        if self.kind == "composite":
            return any(c.needs_depth for c in self.children)
        return self.kind in DEPTH_KINDS

    def to_dict(self) -> dict:
        d = {"kind": self.kind, "params": {k: _jsonable(v) for k, v in sorted(self.params.items())},
             "severity": self.severity, "seed": int(self.seed)}
        if self.children:
            d["children"] = [c.to_dict() for c in self.children]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "AugmentationSpec":
        unknown = set(d) - {"kind", "params", "severity", "seed", "children"}
        if unknown:
            raise ValueError(f"unknown augmentation spec keys: {sorted(unknown)}")
        children = tuple(cls.from_dict(c) for c in d.get("children", ()))
        return cls(d["kind"], dict(d.get("params", {})), d.get("severity"), int(d.get("seed", 0)), children)


def _jsonable(v):
    if isinstance(v, np.ndarray):
        return v.tolist()
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (np.floating,)):
        return float(v)
    if isinstance(v, tuple):
        return [_jsonable(x) for x in v]
    if isinstance(v, list):
        return [_jsonable(x) for x in v]
    return v


# -- parameter resolution ------------------------------------------------------


def resolve(spec: AugmentationSpec) -> AugmentationSpec:
    """Fill every unset parameter from the spec seed; idempotent."""
    if spec.kind == "composite":
        kids = tuple(resolve(replace(c, seed=mix_seed(spec.seed, i)) if c.seed == 0 else c)
                     for i, c in enumerate(spec.children))
        return replace(spec, children=kids)
    rng = _rng(spec.seed, 0)
    p = dict(spec.params)
    sev = spec.severity
    if sev is None and spec.kind in SEVERITY_KINDS:
        sev = int(rng.integers(1, MAX_SEVERITY + 1))
    k = spec.kind
    if k == "fog":
        p.setdefault("beta", float(rng.uniform(*FOG_BETA_TRAIN)))
    elif k == "vertical_crop":
        p.setdefault("tau", float(CROP_TAUS[rng.integers(len(CROP_TAUS))]))
    elif k == "tile_shuffle":
        p.setdefault("grid_w", int(TILE_GRID_W[rng.integers(2)]))
        p.setdefault("grid_h", int(TILE_GRID_H[rng.integers(2)]))
    elif k == "scale":
        p.setdefault("factor", float(rng.uniform(*SCALE_RANGE)))
    elif k == "motion_blur":
        p.setdefault("angle", float(rng.uniform(0.0, 180.0)))
    elif k == "random_erase":
        p.setdefault("area", float(rng.uniform(0.02, 0.2)))
        p.setdefault("aspect", float(np.exp(rng.uniform(np.log(0.3), np.log(3.3)))))
        p.setdefault("anchor", [float(rng.uniform()), float(rng.uniform())])
        p.setdefault("value", [float(x) for x in rng.uniform(size=3)])
    return replace(spec, params=p, severity=sev)


def _severity_value(spec: AugmentationSpec):
    if spec.severity is None:
        raise ValueError(f"{spec.kind} needs a severity; call resolve() first")
    return SEVERITY_TABLES[spec.kind][int(spec.severity) - 1]


# -- photometric kinds ---------------------------------------------------------


def fog(image: np.ndarray, depth: np.ndarray, beta: float, airlight: float = AIRLIGHT) -> np.ndarray:
    """Atmospheric scattering: I e^(-beta d) + A (1 - e^(-beta d))."""
    if beta < 0:
        raise ValueError("fog beta must be non-negative")
    if beta == 0:
        return image.copy()
    tr = np.exp(-beta * depth)[..., None]
    return image * tr + airlight * (1.0 - tr)


def _rain_streaks(image, spec, rng):
    h, w = image.shape[:2]
    count = int(round(_severity_value(spec) * h * w / (192.0 * 128.0)))
    mask = np.zeros((h, w))
    if count == 0:
        return image.copy()
    x0 = rng.uniform(0, w, count)
    y0 = rng.uniform(0, h, count)
    ang = np.deg2rad(rng.uniform(70.0, 110.0, count))
    length = rng.uniform(5.0, 15.0, count)
    steps = np.linspace(0.0, 1.0, 16)
    xs = np.rint(x0[:, None] + np.cos(ang)[:, None] * length[:, None] * steps).astype(int)
    ys = np.rint(y0[:, None] + np.sin(ang)[:, None] * length[:, None] * steps).astype(int)
    ok = (xs >= 0) & (xs < w) & (ys >= 0) & (ys < h)
    mask[ys[ok], xs[ok]] = 1.0
    a = 0.3 * mask[..., None]
    return image * (1.0 - a) + a


def _ground_snow(image, depth, spec, rng):
    h = image.shape[0]
    strength = _severity_value(spec)
    rows = np.arange(h)[:, None] >= h // 2
    near = np.sqrt(np.min(depth[rows[:, 0]]) / depth)
    noise = rng.uniform(0.7, 1.0, depth.shape)
    wgt = (strength * near * noise * rows)[..., None]
    return image + wgt * (1.0 - image)


def _line_kernel(length: int, angle_deg: float) -> np.ndarray:
    k = np.zeros((length, length))
    c = (length - 1) / 2.0
    t = np.linspace(-c, c, 4 * length)
    a = np.deg2rad(angle_deg)
    xs = np.clip(np.rint(c + t * np.cos(a)).astype(int), 0, length - 1)
    ys = np.clip(np.rint(c - t * np.sin(a)).astype(int), 0, length - 1)
    k[ys, xs] = 1.0
    return k / k.sum()


def _filter_channels(image, kernel):
    return np.stack([ndimage.convolve(image[..., c], kernel, mode="reflect") for c in range(image.shape[2])], axis=-1)


def _tone_map(image, kind):
    gains, gamma = TONE_MAPS[kind]
    return np.asarray(gains) * image**gamma


def _channel(image, idx):
    return np.repeat(image[..., idx : idx + 1], 3, axis=-1)


# -- corruptions ---------------------------------------------------------------


def _disk_kernel(radius: float) -> np.ndarray:
    r = int(np.ceil(radius))
    yy, xx = np.mgrid[-r : r + 1, -r : r + 1]
    k = (xx**2 + yy**2 <= radius**2).astype(np.float64)
    k = ndimage.gaussian_filter(k, 0.5)
    return k / k.sum()


def _block_mean(channel: np.ndarray, b: int) -> np.ndarray:
    """Mean over b x b blocks broadcast back; shifted by the block min so constants stay exact."""
    h, w = channel.shape
    hp, wp = -(-h // b) * b, -(-w // b) * b
    pad = np.pad(channel, ((0, hp - h), (0, wp - w)), mode="edge")
    blocks = pad.reshape(hp // b, b, wp // b, b)
    lo = blocks.min(axis=(1, 3), keepdims=True)
    mean = lo + (blocks - lo).mean(axis=(1, 3), keepdims=True)
    return np.broadcast_to(mean, blocks.shape).reshape(hp, wp)[:h, :w]


def _jpeg_table(quality: int) -> np.ndarray:
    q = int(np.clip(quality, 1, 100))
    s = 5000.0 / q if q < 50 else 200.0 - 2 * q
    return np.clip(np.floor((_JPEG_LUMA * s + 50.0) / 100.0), 1.0, 255.0)


def jpeg_quantize(image: np.ndarray, table: np.ndarray) -> np.ndarray:
    """8x8 DCT quantisation roundtrip per channel on the 0-255 scale."""
    h, w, c = image.shape
    hp, wp = -(-h // 8) * 8, -(-w // 8) * 8
    x = np.pad(image * 255.0 - 128.0, ((0, hp - h), (0, wp - w), (0, 0)), mode="edge")
    blocks = x.reshape(hp // 8, 8, wp // 8, 8, c).transpose(0, 2, 4, 1, 3)
    coef = fft.dctn(blocks, axes=(-2, -1), norm="ortho")
    coef = np.rint(coef / table) * table
    rec = fft.idctn(coef, axes=(-2, -1), norm="ortho")
    out = rec.transpose(0, 3, 1, 4, 2).reshape(hp, wp, c)[:h, :w]
    return (out + 128.0) / 255.0


def _zoom(image, z):
    h, w = image.shape[:2]
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    coords = [cy + (yy - cy) / z, cx + (xx - cx) / z]
    return np.stack([ndimage.map_coordinates(image[..., c], coords, order=1, mode="nearest")
                     for c in range(image.shape[2])], axis=-1)


def _remap(image, dy, dx):
    h, w = image.shape[:2]
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    coords = [yy + dy, xx + dx]
    return np.stack([ndimage.map_coordinates(image[..., c], coords, order=1, mode="reflect")
                     for c in range(image.shape[2])], axis=-1)


def _smooth_noise(rng, shape, sigma):
    n = ndimage.gaussian_filter(rng.standard_normal(shape), sigma, mode="wrap")
    n -= n.min()
    return n / max(n.max(), 1e-12)


def corruption(kind: str, image, severity: int, seed: int) -> np.ndarray:
    """One of the eleven corruption kinds at ``severity`` 1..5."""
    if kind not in CORRUPTION_KINDS:
        raise ValueError(f"unknown corruption kind {kind!r}")
    return apply(AugmentationSpec(kind, severity=severity, seed=seed), image)


def _corrupt(image, spec, rng):
    k = spec.kind
    val = _severity_value(spec)
    h, w, _ = image.shape
    if k == "gaussian_noise":
        return image + rng.normal(0.0, val, image.shape)
    if k == "shot_noise":
        return rng.poisson(image * val) / val
    if k == "impulse_noise":
        out = image.copy()
        hit = rng.uniform(size=image.shape) < val
        out[hit] = (rng.uniform(size=int(hit.sum())) < 0.5).astype(np.float64)
        return out
    if k == "defocus_blur":
        return _filter_channels(image, _disk_kernel(val))
    if k == "glass_blur":
        sigma, delta, iters = val
        out = ndimage.gaussian_filter(image, (sigma, sigma, 0))
        yy, xx = np.mgrid[0:h, 0:w]
        for _ in range(iters):
            ys = np.clip(yy + rng.integers(-delta, delta + 1, (h, w)), 0, h - 1)
            xs = np.clip(xx + rng.integers(-delta, delta + 1, (h, w)), 0, w - 1)
            out = out[ys, xs]
        return ndimage.gaussian_filter(out, (sigma, sigma, 0))
    if k == "zoom_blur":
        zooms = np.arange(1.0, val + 1e-9, 0.01)
        acc = image.copy()
        for z in zooms[1:]:
            acc += _zoom(image, z)
        return acc / len(zooms)
    if k == "snow":
        flakes = rng.uniform(size=(h, w)) < val * 0.1
        layer = ndimage.convolve(flakes.astype(np.float64), _line_kernel(5, float(rng.uniform(60, 120))),
                                 mode="wrap")
        layer = np.clip(layer * 3.0, 0.0, 1.0)[..., None]
        lifted = np.maximum(image, to_grayscale(image) * 1.5 + 0.5)
        base = (1.0 - val) * image + val * np.clip(lifted, 0.0, 1.0)
        return base * (1.0 - layer) + layer
    if k == "frost":
        c_img, c_frost = val
        frost = _smooth_noise(rng, (h, w), 2.0) * 0.6 + _smooth_noise(rng, (h, w), 0.7) * 0.4
        frost = (0.55 + 0.45 * frost)[..., None] * np.array([0.85, 0.9, 1.0])
        return c_img * image + c_frost * frost
    if k == "elastic":
        alpha, sigma = val
        dx = ndimage.gaussian_filter(rng.uniform(-1, 1, (h, w)), sigma) * alpha
        dy = ndimage.gaussian_filter(rng.uniform(-1, 1, (h, w)), sigma) * alpha
        return _remap(image, dy, dx)
    if k == "pixelate":
        return np.stack([_block_mean(image[..., c], int(val)) for c in range(image.shape[2])], axis=-1)
    if k == "jpeg":
        table = spec.params.get("table")
        table = _jpeg_table(val) if table is None else np.broadcast_to(np.asarray(table, dtype=float), (8, 8))
        return jpeg_quantize(image, table)
    raise AssertionError(k)


# -- positional kinds ------------------------------------------------------------


def _crop_rows(h: int, tau: float) -> int:
    if not any(tau == t for t in CROP_TAUS):
        raise ValueError(f"tau must be one of {CROP_TAUS}")
    return int(round(tau * h))


def vertical_crop(image, tau: float) -> np.ndarray:
    """Move the top ``round(tau*H)`` rows underneath the rest."""
    img = np.asarray(image)
    k = _crop_rows(img.shape[0], tau)
    return np.concatenate([img[k:], img[:k]], axis=0)


def invert_vertical_crop(image, tau: float) -> np.ndarray:
    img = np.asarray(image)
    k = _crop_rows(img.shape[0], tau)
    return np.concatenate([img[img.shape[0] - k :], img[: img.shape[0] - k]], axis=0)


def _check_grid(grid_w: int, grid_h: int):
    if grid_w not in TILE_GRID_W or grid_h not in TILE_GRID_H:
        raise ValueError(f"tile grid must be w in {TILE_GRID_W}, h in {TILE_GRID_H}")


def _divisible_crop(img: np.ndarray, gw: int, gh: int) -> np.ndarray:
    h, w = img.shape[:2]
    hh, ww = h - h % gh, w - w % gw
    top, left = (h - hh) // 2, (w - ww) // 2
    return img[top : top + hh, left : left + ww]


def _tiles(img, gw, gh):
    h, w = img.shape[:2]
    th, tw = h // gh, w // gw
    return [img[r * th : (r + 1) * th, c * tw : (c + 1) * tw] for r in range(gh) for c in range(gw)]


def _assemble(tiles, gw, gh):
    return np.concatenate([np.concatenate(tiles[r * gw : (r + 1) * gw], axis=1) for r in range(gh)], axis=0)


def tile_permutation(grid_w: int, grid_h: int, seed: int) -> np.ndarray:
    return _rng(seed, 1).permutation(grid_w * grid_h)


def tile_shuffle(image, grid_w: int, grid_h: int, seed: int | None = None, permutation=None):
    """Split into a grid_h x grid_w grid and permute tiles (row-major).

    Output tile ``i`` is input tile ``permutation[i]``.  Rasters that do not
    divide evenly are centre-cropped first.  Returns ``(image, permutation)``.
    """
    _check_grid(grid_w, grid_h)
    img = _divisible_crop(np.asarray(image), grid_w, grid_h)
    perm = tile_permutation(grid_w, grid_h, seed if seed is not None else 0) if permutation is None \
        else np.asarray(permutation, dtype=int)
    if sorted(perm.tolist()) != list(range(grid_w * grid_h)):
        raise ValueError("permutation must cover every tile exactly once")
    tiles = _tiles(img, grid_w, grid_h)
    return _assemble([tiles[i] for i in perm], grid_w, grid_h), perm


def invert_tile_shuffle(image, grid_w: int, grid_h: int, permutation) -> np.ndarray:
    _check_grid(grid_w, grid_h)
    perm = np.asarray(permutation, dtype=int)
    tiles = _tiles(np.asarray(image), grid_w, grid_h)
    inv = np.empty_like(perm)
    inv[perm] = np.arange(perm.size)
    return _assemble([tiles[i] for i in inv], grid_w, grid_h)


def scale_image(image, factor: float) -> np.ndarray:
    """Resize about the raster centre by ``factor`` (bilinear), keeping H x W."""
    if not SCALE_RANGE[0] <= factor <= SCALE_RANGE[1]:
        raise ValueError(f"scale factor must lie in {SCALE_RANGE}")
    return _zoom(np.asarray(image, dtype=np.float64), factor)


def scale_intrinsics(K: Intrinsics, height: int, width: int, factor: float) -> Intrinsics:
    """Intrinsics of the view produced by :func:`scale_image`."""
    cy, cx = (height - 1) / 2.0, (width - 1) / 2.0
    return Intrinsics(K.fx * factor, K.fy * factor, cx + factor * (K.cx - cx), cy + factor * (K.cy - cy))


def erase_rectangle(shape, area: float, aspect: float, anchor) -> tuple[int, int, int, int]:
    h, w = shape[:2]
    eh = int(np.clip(round(np.sqrt(area * h * w * aspect)), 1, h))
    ew = int(np.clip(round(np.sqrt(area * h * w / aspect)), 1, w))
    top = int(anchor[0] * (h - eh + 1)) if h > eh else 0
    left = int(anchor[1] * (w - ew + 1)) if w > ew else 0
    return min(top, h - eh), min(left, w - ew), eh, ew


# -- dispatch --------------------------------------------------------------------


def apply(spec: AugmentationSpec, image, depth_gt=None) -> np.ndarray:
    """Apply ``spec`` (resolved on the fly) and clamp to [0, 1]."""
    img = check_image(image)
    depth = None
    if depth_gt is not None:
        depth = check_scalar_map(depth_gt, "depth_gt", positive=True)
        if depth.shape != img.shape[:2]:
            raise ValueError("depth_gt and image differ in size")
    spec = resolve(spec)
    if spec.needs_depth and depth is None:
        raise ValueError(f"{spec.kind} requires ground-truth depth")
    if spec.kind == "composite":
        out = img
        for child in spec.children:
            out = apply(child, out, depth)
        return out
    return np.clip(_apply_one(spec, img, depth), 0.0, 1.0)


def _apply_one(spec, img, depth):
    k, p = spec.kind, spec.params
    rng = _rng(spec.seed, 2)
    if k == "identity":
        return img.copy()
    if k in ("grayscale", "channel_r", "channel_g", "channel_b", "night", "dawn", "dusk") and img.shape[2] != 3:
        raise ValueError(f"{k} needs an RGB image")
    if k == "fog":
        return fog(img, depth, float(p["beta"]), float(p.get("airlight", AIRLIGHT)))
    if k == "rain_streaks":
        return _rain_streaks(img, spec, rng)
    if k == "ground_snow":
        return _ground_snow(img, depth, spec, rng)
    if k == "motion_blur":
        return _filter_channels(img, _line_kernel(int(_severity_value(spec)), float(p["angle"])))
    if k in TONE_MAPS:
        return _tone_map(img, k)
    if k == "brightness":
        return img + _severity_value(spec)
    if k == "grayscale":
        return to_grayscale(img)
    if k.startswith("channel_"):
        return _channel(img, "rgb".index(k[-1]))
    if k in CORRUPTION_KINDS:
        return _corrupt(img, spec, rng)
    if k == "vertical_crop":
        return vertical_crop(img, float(p["tau"]))
    if k == "tile_shuffle":
        return tile_shuffle(img, int(p["grid_w"]), int(p["grid_h"]), seed=spec.seed)[0]
    if k == "scale":
        return scale_image(img, float(p["factor"]))
    if k == "random_erase":
        top, left, eh, ew = erase_rectangle(img.shape, p["area"], p["aspect"], p["anchor"])
        out = img.copy()
        out[top : top + eh, left : left + ew] = np.asarray(p["value"], dtype=np.float64)[: img.shape[2]]
        return out
    raise ValueError(f"unknown augmentation kind {k!r}")


# -- plans -----------------------------------------------------------------------


@dataclass(frozen=True)
class AugmentationPlan:
    """Resolved specs for the (t-1, t, t+1) frames of one triplet."""

    frames: tuple
    consistency: str
    seed: int
    pool_index: int

    def to_dict(self) -> dict:
        return {"consistency": self.consistency, "seed": int(self.seed), "pool_index": int(self.pool_index),
                "frames": [s.to_dict() for s in self.frames]}

    @classmethod
    def from_dict(cls, d: dict) -> "AugmentationPlan":
        return cls(tuple(AugmentationSpec.from_dict(s) for s in d["frames"]), d["consistency"], int(d["seed"]),
                   int(d["pool_index"]))

    def apply(self, frames: Sequence, depths: Sequence | None = None) -> list[np.ndarray]:
        if len(frames) != len(self.frames):
            raise ValueError("plan and triplet differ in frame count")
        depths = depths if depths is not None else [None] * len(frames)
        return [apply(s, f, d) for s, f, d in zip(self.frames, frames, depths)]


def _reseed(spec: AugmentationSpec, seed: int) -> AugmentationSpec:
    if spec.kind == "composite":
        return replace(spec, seed=seed, children=tuple(replace(c, seed=mix_seed(seed, i))
                                                       for i, c in enumerate(spec.children)))
    return replace(spec, seed=seed)


def _with_params_of(frame_spec: AugmentationSpec, shared: AugmentationSpec) -> AugmentationSpec:
    """Frame-specific seed (noise realisation), parameters copied from ``shared``."""
    if frame_spec.kind == "composite":
        kids = tuple(replace(fc, params=dict(sc.params), severity=sc.severity)
                     for fc, sc in zip(frame_spec.children, shared.children))
        return replace(frame_spec, children=kids)
    return replace(frame_spec, params=dict(shared.params), severity=shared.severity)


def pool_order(n: int, rng_seed: int, cycle: int) -> np.ndarray:
    return _rng(mix_seed(rng_seed, cycle), 3).permutation(n)


def sample_plan(pool: Sequence[AugmentationSpec], rng_seed: int, draw_index: int,
                consistency: str = "scene_consistent", n_frames: int = 3) -> AugmentationPlan:
    """Plan for the ``draw_index``-th draw from ``pool``.

    Draws are grouped in cycles of ``len(pool)``; each cycle consumes its
    own seed-derived permutation, so every spec appears exactly once per
    cycle.  Photometric parameters come from the spec seed mix of
    (plan seed, frame index, spec index): shared across frames in
    ``scene_consistent`` mode, independent in ``frame_inconsistent`` mode.
    """
    if len(pool) == 0:
        raise ValueError("augmentation pool is empty")
    if consistency not in CONSISTENCY_MODES:
        raise ValueError(f"consistency must be one of {CONSISTENCY_MODES}")
    if draw_index < 0:
        raise ValueError("draw_index must be non-negative")
    n = len(pool)
    cycle, pos = divmod(int(draw_index), n)
    idx = int(pool_order(n, rng_seed, cycle)[pos])
    base = pool[idx]
    plan_seed = mix_seed(rng_seed, draw_index)
    frames = [_reseed(base, mix_seed(plan_seed, f, idx)) for f in range(n_frames)]
    if consistency == "scene_consistent":
        shared = resolve(_reseed(base, mix_seed(plan_seed, n_frames, idx)))
        frames = [_with_params_of(resolve(f), shared) for f in frames]
    else:
        frames = [resolve(f) for f in frames]
    return AugmentationPlan(tuple(frames), consistency, plan_seed, idx)


def frame_parameters(plan: AugmentationPlan) -> list:
    """Drawn photometric parameters per frame, for equality checks."""
    out = []
    for s in plan.frames:
        specs = s.children if s.kind == "composite" else (s,)
        out.append([(c.kind, sorted(c.params.items()), c.severity) for c in specs])
    return out


def photometric_fog_noise(severity: int = 3) -> AugmentationSpec:
    """Fog with a per-draw beta followed by Gaussian noise at ``severity``."""
    return AugmentationSpec("composite", children=(
        AugmentationSpec("fog"), AugmentationSpec("gaussian_noise", severity=severity)))


class Augmenter(BaseEstimator, TransformerMixin):
    """Apply sampled plans to triplets: ``transform(records) -> list of frame triplets``.

    ``X`` is a list of :class:`~depthlab.synth.TripletRecord`; triplet ``i``
    receives draw ``i`` of the pool.
    """

    def __init__(self, pool=None, consistency: str = "scene_consistent", random_state: int = 0):
        self.pool = pool
        self.consistency = consistency
        self.random_state = random_state

    def _pool(self) -> list[AugmentationSpec]:
        pool = [AugmentationSpec("identity")] if self.pool is None else list(self.pool)
        return [s if isinstance(s, AugmentationSpec) else AugmentationSpec.from_dict(s) for s in pool]

    def fit(self, X=None, y=None):
        pool = self._pool()
        if not pool:
            raise ValueError("augmentation pool is empty")
        if self.consistency not in CONSISTENCY_MODES:
            raise ValueError(f"consistency must be one of {CONSISTENCY_MODES}")
        self.pool_ = pool
        return self

    def plans(self, n: int) -> list[AugmentationPlan]:
        pool = self.pool_ if hasattr(self, "pool_") else self._pool()
        return [sample_plan(pool, self.random_state, i, self.consistency) for i in range(n)]

    def transform(self, X):
        if not hasattr(self, "pool_"):
            self.fit(X)
        self.plans_ = self.plans(len(X))
        return [plan.apply(rec.frames, rec.depths) for plan, rec in zip(self.plans_, X)]
