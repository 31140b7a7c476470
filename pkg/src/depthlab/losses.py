"""Augmentation-robust self-supervised depth/pose losses.

Two branches are optimised side by side: the unaugmented branch sees the
clean frames, the augmented branch predicts depth (and optionally pose)
from augmented frames.  The pieces below build

* naive augmented warping (augmented source, augmented depth and pose),
* semi-augmented warping (clean source, augmented depth, clean pose),
* pair training (photometric loss on both branches against the clean target),
* bi-directional masked pseudo-supervision between the two depth maps,
* one-way pose pseudo-supervision from the clean pose,

and :func:`total_loss` assembles them under :class:`AblationToggles`.
"""
from __future__ import annotations

from dataclasses import dataclass, fields
from typing import Sequence

import numpy as np

from . import autodiff as ad
from . import geometry
from .autodiff import Variable, route, value_of
from .geometry import Intrinsics
from .photometric import (
    DEFAULT_CONFIG,
    ErrorMap,
    PhotometricConfig,
    identity_error,
    mask_from_errors,
    min_reprojection,
    pe,
    smoothness,
)

D_MIN, D_MAX = 0.1, 100.0
MASK_MODES = ("unaug", "and")


@dataclass(frozen=True)
class LossWeights:
    omega: float = 0.01  # pseudo-supervised depth
    beta: float = 0.01  # pseudo-supervised pose
    gamma: float = 0.001  # edge-aware smoothness

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if not (np.isfinite(v) and v >= 0):
                raise ValueError(f"weight {f.name} must be finite and non-negative")


@dataclass(frozen=True)
class AblationToggles:
    pair_training: bool = False
    semi_warp_image: bool = False
    semi_warp_pose: bool = False
    pseudo_depth: bool = False
    pseudo_pose: bool = False

    @classmethod
    def full(cls) -> "AblationToggles":
        return cls(True, True, True, True, True)

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


def disparity_to_depth(disparity, d_min: float = D_MIN, d_max: float = D_MAX):
    """Map a disparity in [0, 1] to depth in [d_min, d_max]."""
    lo, hi = 1.0 / d_max, 1.0 / d_min
    return 1.0 / (disparity * (hi - lo) + lo)


class BranchState:
    """Free variables of one branch: raw disparity plus one pose per source."""

    def __init__(self, disparity_raw, poses: Sequence, d_min: float = D_MIN, d_max: float = D_MAX):
        self.disparity_raw = disparity_raw if isinstance(disparity_raw, Variable) else Variable(disparity_raw)
        self.poses = [p if isinstance(p, Variable) else Variable(np.asarray(p, dtype=float).reshape(6)) for p in poses]
        self.d_min, self.d_max = d_min, d_max

    @classmethod
    def initial(cls, height: int, width: int, pose_init: Sequence, **kw) -> "BranchState":
        return cls(np.zeros((height, width)), [np.array(p, dtype=float) for p in pose_init], **kw)

    @property
    def variables(self) -> list[Variable]:
        return [self.disparity_raw] + list(self.poses)

    def disparity(self):
        return ad.sigmoid(self.disparity_raw)

    def depth(self):
        return disparity_to_depth(self.disparity(), self.d_min, self.d_max)

    def depth_value(self) -> np.ndarray:
        return value_of(disparity_to_depth(ad.sigmoid(self.disparity_raw.value), self.d_min, self.d_max))

    def copy(self) -> "BranchState":
        return BranchState(
            self.disparity_raw.value.copy(), [p.value.copy() for p in self.poses], self.d_min, self.d_max
        )


# -- warping -----------------------------------------------------------------


def naive_augmented_warp(aug_source, aug_depth, aug_pose, K: Intrinsics, rays=None):
    """Augmented source warped with augmented depth and augmented pose."""
    return geometry.inverse_warp(aug_source, aug_depth, aug_pose, K, rays=rays)


def semi_augmented_warp(unaug_source, aug_depth, unaug_pose, K: Intrinsics, rays=None):
    """Clean source warped with augmented depth and the clean branch's pose."""
    return geometry.inverse_warp(unaug_source, aug_depth, unaug_pose, K, rays=rays)


# -- photometric terms -------------------------------------------------------


def branch_photometric(target, warped: Sequence, identity_err, cfg: PhotometricConfig = DEFAULT_CONFIG):
    """Auto-masked min-reprojection mean for one branch.

    Returns ``(loss, mu, ErrorMap)``; the mean divides by the full pixel count.
    """
    if len(warped) == 0:
        raise ValueError("need at least one warped source")
    err = min_reprojection([pe(target, w, cfg) for w in warped])
    mu = mask_from_errors(err.error, identity_err)
    return ad.mean(err.error * mu), mu, err


def pair_photometric_loss(target, warped_unaug: Sequence, warped_semi: Sequence, sources: Sequence,
                          cfg: PhotometricConfig = DEFAULT_CONFIG):
    """Sum of the two auto-masked branch losses, both against the clean target.

    Returns ``(loss, mu, mu_aug, err_unaug, err_aug)``.
    """
    if len(sources) == 0:
        raise ValueError("pair_photometric_loss needs at least one source")
    if not (len(warped_unaug) == len(warped_semi) == len(sources)):
        raise ValueError("warped and source lists must have equal length")
    ident = identity_error(target, sources, cfg)
    l_u, mu, err_u = branch_photometric(target, warped_unaug, ident, cfg)
    l_a, mu_a, err_a = branch_photometric(target, warped_semi, ident, cfg)
    return l_u + l_a, mu, mu_a, err_u, err_a


def consistency_masks(err_unaug, err_aug, mu):
    """M_v = [e_u < e_a] * mu and M_a = [e_a < e_u] * mu; ties land in neither."""
    eu = value_of(err_unaug.error if isinstance(err_unaug, ErrorMap) else err_unaug)
    ea = value_of(err_aug.error if isinstance(err_aug, ErrorMap) else err_aug)
    m = np.asarray(mu, dtype=np.float64)
    if not (eu.shape == ea.shape == m.shape):
        raise ValueError("error maps and mask differ in shape")
    if not np.all((m == 0.0) | (m == 1.0)):
        raise ValueError("mu must be binary")
    m_v = route(lambda: (eu < ea).astype(np.float64)) * m
    m_a = route(lambda: (ea < eu).astype(np.float64)) * m
    return m_v, m_a


def pseudo_depth_loss(depth, depth_aug, m_v, m_a):
    """Bi-directional pseudo-supervision on depth.

    L_a pulls the augmented depth toward the (constant) clean depth where the
    clean branch reprojects better, L_v does the reverse.
    """
    d, da = value_of(depth), value_of(depth_aug)
    if not (d.shape == da.shape == np.shape(m_v) == np.shape(m_a)):
        raise ValueError("depths and masks differ in shape")
    l_a = ad.mean(ad.log1p_abs(depth_aug - ad.stop_gradient(depth)) * m_v)
    l_v = ad.mean(ad.log1p_abs(depth - ad.stop_gradient(depth_aug)) * m_a)
    return l_a, l_v, l_a + l_v


def pose_pseudo_loss(aug_poses: Sequence, unaug_poses: Sequence):
    """Component-mean L1 between augmented and (constant) clean pose parameters.

    Returns ``(L_R, L_t)`` averaged over the axis-angle / translation
    components of every source pose.
    """
    if len(aug_poses) != len(unaug_poses):
        raise ValueError("pose lists differ in length")
    if len(aug_poses) == 0:
        raise ValueError("need at least one pose")
    l_r = 0.0
    l_t = 0.0
    for pa, pu in zip(aug_poses, unaug_poses):
        diff = pa - ad.stop_gradient(pu)
        l_r = l_r + ad.mean(ad.absolute(ad.getitem(diff, slice(0, 3))))
        l_t = l_t + ad.mean(ad.absolute(ad.getitem(diff, slice(3, 6))))
    n = float(len(aug_poses))
    return l_r / n, l_t / n


# -- assembly ----------------------------------------------------------------


def _pool_image(img: np.ndarray) -> np.ndarray:
    h, w, c = img.shape
    return img.reshape(h // 2, 2, w // 2, 2, c).mean(axis=(1, 3))


class Window:
    """A target frame, its sources and (optionally) augmented copies, per pyramid level."""

    def __init__(self, target, sources: Sequence, K: Intrinsics, aug_frames: Sequence | None = None,
                 levels: int = 1, cfg: PhotometricConfig = DEFAULT_CONFIG):
        if levels < 1 or levels > 4:
            raise ValueError("pyramid levels must be between 1 and 4")
        if len(sources) == 0:
            raise ValueError("a window needs at least one source frame")
        h, w = np.shape(target)[:2]
        if h % (2 ** (levels - 1)) or w % (2 ** (levels - 1)):
            raise ValueError(f"{h}x{w} raster is not divisible for {levels} pyramid levels")
        self.levels = levels
        self.cfg = cfg
        self.shape = (h, w)
        self.n_sources = len(sources)
        clean = [np.asarray(target, dtype=float)] + [np.asarray(s, dtype=float) for s in sources]
        aug = None if aug_frames is None else [np.asarray(f, dtype=float) for f in aug_frames]
        if aug is not None and len(aug) != len(clean):
            raise ValueError("augmented frames must mirror (target, *sources)")
        self.clean, self.aug, self.K, self.rays = [], [], [], []
        self._ident: dict = {}
        for lvl in range(levels):
            self.clean.append(clean)
            self.aug.append(aug)
            Kl = K if lvl == 0 else K.downscaled(2**lvl)
            self.K.append(Kl)
            self.rays.append(geometry.pixel_rays(clean[0].shape[0], clean[0].shape[1], Kl))
            clean = [_pool_image(f) for f in clean]
            if aug is not None:
                aug = [_pool_image(f) for f in aug]
        # constant maps, computed up front so no routed decision hides behind a cache
        with ad.recording(ad.Routing()):
            for lvl in range(levels):
                for augmented in (False, True) if self.aug[0] is not None else (False,):
                    tgt, srcs = self.images(lvl, augmented)
                    self._ident[(lvl, augmented)] = identity_error(tgt, srcs, cfg)

    @classmethod
    def from_record(cls, record, aug_frames=None, levels: int = 1, cfg: PhotometricConfig = DEFAULT_CONFIG):
        """Build from a triplet record; ``aug_frames`` are ordered (t-1, t, t+1)."""
        aug = None
        if aug_frames is not None:
            aug = [aug_frames[1], aug_frames[0], aug_frames[2]]
        return cls(record.target, record.sources, record.K, aug, levels, cfg)

    def images(self, level: int, augmented: bool):
        frames = self.aug[level] if augmented else self.clean[level]
        if frames is None:
            raise ValueError("window has no augmented frames")
        return frames[0], frames[1:]

    def identity_error(self, level: int, augmented: bool) -> np.ndarray:
        if (level, augmented) not in self._ident:
            raise ValueError("window has no augmented frames")
        return self._ident[(level, augmented)]


@dataclass
class LossBreakdown:
    l_p: object
    l_a: object
    l_v: object
    l_ps: object
    l_r: object
    l_t: object
    l_s: object
    total: object
    mu: np.ndarray | None = None
    mu_aug: np.ndarray | None = None
    m_v: np.ndarray | None = None
    m_a: np.ndarray | None = None

    TERMS = ("l_p", "l_a", "l_v", "l_ps", "l_r", "l_t", "l_s", "total")

    def summary(self) -> dict:
        return {k: float(value_of(getattr(self, k))) for k in self.TERMS}


def _level_disparity(disp, level: int):
    for _ in range(level):
        disp = ad.avg_pool2(disp)
    return disp


def _warp_all(sources, depth, poses, K, rays):
    return [geometry.inverse_warp(s, depth, p, K, rays=rays)[0] for s, p in zip(sources, poses)]


def total_loss(window: Window, unaug: BranchState, aug: BranchState | None = None,
               toggles: AblationToggles = AblationToggles(), weights: LossWeights = LossWeights(),
               mask_mode: str = "unaug") -> LossBreakdown:
    """Assemble the full objective for one window.

    The unaugmented photometric term is active without an augmented branch
    or under pair training; the augmented term is active whenever ``aug`` is
    given.  Terms are averaged equally over pyramid levels.
    """
    if mask_mode not in MASK_MODES:
        raise ValueError(f"mask_mode must be one of {MASK_MODES}")
    if aug is not None and window.aug[0] is None:
        raise ValueError("augmented branch given but window has no augmented frames")
    if len(unaug.poses) != window.n_sources or (aug is not None and len(aug.poses) != window.n_sources):
        raise ValueError("one pose per source frame is required")
    unaug_on = aug is None or toggles.pair_training
    aug_on = aug is not None
    use_ps = aug_on and toggles.pseudo_depth
    levels = window.levels

    sums = {k: 0.0 for k in ("l_p", "l_a", "l_v", "l_ps", "l_s")}
    maps = {}
    disp_u = unaug.disparity()
    disp_a = aug.disparity() if aug_on else None

    for lvl in range(levels):
        K, rays = window.K[lvl], window.rays[lvl]
        tgt, srcs = window.images(lvl, augmented=False)
        du = _level_disparity(disp_u, lvl)
        depth_u = disparity_to_depth(du, unaug.d_min, unaug.d_max)
        lp = 0.0
        smooth_terms = []
        err_u = mu = None

        if unaug_on or use_ps:
            # with the clean term off, pseudo-supervision still needs its error map as a constant
            du_eval = du if unaug_on else value_of(du)
            depth_eval = depth_u if unaug_on else value_of(depth_u)
            poses_eval = unaug.poses if unaug_on else [value_of(p) for p in unaug.poses]
            warped = _warp_all(srcs, depth_eval, poses_eval, K, rays)
            l_u, mu, err_u = branch_photometric(tgt, warped, window.identity_error(lvl, False), window.cfg)
            if unaug_on:
                lp = lp + l_u
                smooth_terms.append(smoothness(du_eval, tgt))

        if aug_on:
            da = _level_disparity(disp_a, lvl)
            depth_a = disparity_to_depth(da, aug.d_min, aug.d_max)
            a_tgt, a_srcs = window.images(lvl, augmented=True)
            b_tgt, b_srcs = (tgt, srcs) if toggles.semi_warp_image else (a_tgt, a_srcs)
            poses = unaug.poses if toggles.semi_warp_pose else aug.poses
            warped_a = _warp_all(b_srcs, depth_a, poses, K, rays)
            l_au, mu_a, err_a = branch_photometric(
                b_tgt, warped_a, window.identity_error(lvl, not toggles.semi_warp_image), window.cfg
            )
            lp = lp + l_au
            smooth_terms.append(smoothness(da, a_tgt))
            if lvl == 0:
                maps["mu_aug"] = value_of(mu_a)
            if use_ps:
                gate = mu if mask_mode == "unaug" else mu * mu_a
                m_v, m_a = consistency_masks(err_u, err_a, gate)
                l_a, l_v, l_ps = pseudo_depth_loss(depth_u, depth_a, m_v, m_a)
                sums["l_a"] = sums["l_a"] + l_a
                sums["l_v"] = sums["l_v"] + l_v
                sums["l_ps"] = sums["l_ps"] + l_ps
                if lvl == 0:
                    maps["m_v"], maps["m_a"] = m_v, m_a
        if lvl == 0 and mu is not None:
            maps["mu"] = value_of(mu)
        sums["l_p"] = sums["l_p"] + lp
        ls = smooth_terms[0] if len(smooth_terms) == 1 else (smooth_terms[0] + smooth_terms[1]) / 2.0
        sums["l_s"] = sums["l_s"] + ls

    terms = {k: v / float(levels) if levels > 1 else v for k, v in sums.items()}
    if aug_on and toggles.pseudo_pose:
        l_r, l_t = pose_pseudo_loss(aug.poses, unaug.poses)
    else:
        l_r, l_t = 0.0, 0.0
    total = terms["l_p"] + weights.omega * terms["l_ps"] + weights.beta * (l_r + l_t) + weights.gamma * terms["l_s"]
    return LossBreakdown(
        terms["l_p"], terms["l_a"], terms["l_v"], terms["l_ps"], l_r, l_t, terms["l_s"], total,
        mu=maps.get("mu"), mu_aug=maps.get("mu_aug"), m_v=maps.get("m_v"), m_a=maps.get("m_a"),
    )


def batch_loss(windows: Sequence[Window], unaug: Sequence[BranchState], aug: Sequence[BranchState] | None,
               toggles: AblationToggles = AblationToggles(), weights: LossWeights = LossWeights(),
               mask_mode: str = "unaug") -> tuple[object, list[LossBreakdown]]:
    """Mean of :func:`total_loss` over windows, summed in window order."""
    parts = []
    acc = 0.0
    for i, win in enumerate(windows):
        bd = total_loss(win, unaug[i], None if aug is None else aug[i], toggles, weights, mask_mode)
        parts.append(bd)
        acc = acc + bd.total
    return acc / float(len(windows)), parts
