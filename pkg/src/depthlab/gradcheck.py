"""Finite-difference verification of the full objective's gradients.

Each trial draws a random state for both branches on a small rendered
triplet, evaluates analytic gradients, and compares them with central
differences.  Stop-gradient operands are routed values, so they stay at
their recorded constants during the difference evaluations too.  Discrete choices (abs signs, per-pixel argmin, mask
comparisons, bilinear cells, clamps) are recorded on the analytic pass
and replayed during the difference evaluations, so the check measures the
smooth piece the analytic gradient belongs to.  States whose continuous
margins (branch error difference, min-candidate gap, mask comparison)
fall below ``tie_margin`` anywhere are redrawn.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .augment import Augmenter, photometric_fog_noise
from .autodiff import Routing, recording, value_of
from .geometry import inverse_warp
from .losses import D_MAX, D_MIN, AblationToggles, BranchState, LossWeights, Window, total_loss
from .photometric import pe
from .synth import TripletRecord, generate_dataset

DEFAULT_TOLERANCE = 1e-4
DEFAULT_EPS = 1e-4
ABS_FLOOR = 1e-10
FIXTURE_OVERSAMPLE = 4


@dataclass
class PointResult:
    index: int
    gradient_rel: float  # vector relative error over the checked coordinates
    direction_rel: float  # worst scalar relative error over random directions
    coord_rel: float  # worst single-coordinate relative error (diagnostic)
    worst_coord: str
    n_checked: int

    @property
    def max_rel(self) -> float:
        return max(self.gradient_rel, self.direction_rel)

    def to_dict(self) -> dict:
        return {"index": self.index, "gradient_rel": self.gradient_rel, "direction_rel": self.direction_rel,
                "coord_rel": self.coord_rel, "worst_coord": self.worst_coord, "n_checked": self.n_checked}


@dataclass
class GradcheckReport:
    tolerance: float
    eps: float
    points: list[PointResult] = field(default_factory=list)
    resampled: int = 0

    @property
    def max_rel(self) -> float:
        return max((p.max_rel for p in self.points), default=0.0)

    @property
    def passed(self) -> bool:
        return all(p.max_rel <= self.tolerance for p in self.points)

    def to_dict(self) -> dict:
        return {"tolerance": self.tolerance, "eps": self.eps, "passed": self.passed, "max_rel": self.max_rel,
                "resampled": self.resampled, "points": [p.to_dict() for p in self.points]}


def rel_error(a: float, b: float, floor: float = ABS_FLOOR) -> float:
    return abs(a - b) / max(abs(a), abs(b), floor)


def _branch_pe(target, sources, depth, poses, window, level):
    out = []
    for s, p in zip(sources, poses):
        w, _ = inverse_warp(s, depth, p, window.K[level], rays=window.rays[level])
        out.append(value_of(pe(target, w, window.cfg)))
    return out


def tie_margin(window: Window, unaug: BranchState, aug: BranchState, toggles: AblationToggles) -> float:
    """Smallest continuous gap feeding any discrete decision at level 0."""
    tgt, srcs = window.images(0, False)
    pu = [value_of(p) for p in unaug.poses]
    pa = [value_of(p) for p in aug.poses]
    e_u = _branch_pe(tgt, srcs, unaug.depth_value(), pu, window, 0)
    b_tgt, b_srcs = (tgt, srcs) if toggles.semi_warp_image else window.images(0, True)
    e_a = _branch_pe(b_tgt, b_srcs, aug.depth_value(), pu if toggles.semi_warp_pose else pa, window, 0)
    gaps = []
    for errs, augmented in ((e_u, False), (e_a, not toggles.semi_warp_image)):
        stack = np.stack(errs)
        gaps.append(np.abs(stack[0] - stack[1]).min() if len(errs) > 1 else np.inf)
        gaps.append(np.abs(stack.min(axis=0) - window.identity_error(0, augmented)).min())
    gaps.append(np.abs(np.min(e_u, axis=0) - np.min(e_a, axis=0)).min())
    gaps.append(np.abs(unaug.depth_value() - aug.depth_value()).min())
    for a, b in zip(pa, pu):
        gaps.append(np.abs(a - b).min())
    return float(min(gaps))


def _pool(a: np.ndarray, f: int) -> np.ndarray:
    h, w = a.shape[:2]
    return a.reshape(h // f, f, w // f, f, *a.shape[2:]).mean(axis=(1, 3))


def _fixture(seed: int, height: int, width: int, oversample: int = FIXTURE_OVERSAMPLE):
    """Small band-limited triplet: rendered ``oversample`` times larger, then area-pooled."""
    big = generate_dataset("ground_and_walls", seed, 1, height * oversample, width * oversample)[0]
    rec = [TripletRecord([_pool(f, oversample) for f in big.frames], [_pool(d, oversample) for d in big.depths],
                         big.world_poses, big.K.downscaled(oversample))]
    aug = Augmenter([photometric_fog_noise(3)], "frame_inconsistent", seed).fit().transform(rec)
    return Window.from_record(rec[0], aug[0]), rec[0]


def _logit_of_depth(depth: np.ndarray, d_min: float = D_MIN, d_max: float = D_MAX) -> np.ndarray:
    s = (1.0 / depth - 1.0 / d_max) / (1.0 / d_min - 1.0 / d_max)
    return np.log(s) - np.log1p(-s)


def _random_state(rng, record) -> BranchState:
    """Depth within a factor ~1.3 of the scene's, poses near the true ones."""
    depth = record.target_depth * np.exp(rng.normal(0.0, 0.15, record.target_depth.shape))
    poses = [np.r_[p.rotation + rng.normal(0, 0.01, 3), p.translation + rng.normal(0, 0.02, 3)]
             for p in record.relative_poses]
    return BranchState(_logit_of_depth(depth), poses)


def check_point(window: Window, unaug: BranchState, aug: BranchState, toggles: AblationToggles,
                weights: LossWeights, rng, eps: float = DEFAULT_EPS, n_pixels: int = 8, n_dirs: int = 3,
                mask_mode: str = "unaug") -> PointResult:
    """Compare analytic and central-difference gradients at one state.

    Checked coordinates are every pose parameter of both branches plus
    ``n_pixels`` random disparity variables per branch; their errors are
    summarised as the vector relative error ``|a - f| / max(|a|, |f|)``.
    ``n_dirs`` random unit directions over all variables are checked as
    scalar directional derivatives.
    """
    variables = unaug.variables + aug.variables
    names = ["unaug.disp"] + [f"unaug.pose{i}" for i in range(len(unaug.poses))] + \
            ["aug.disp"] + [f"aug.pose{i}" for i in range(len(aug.poses))]
    routing = Routing()
    with recording(routing):
        bd = total_loss(window, unaug, aug, toggles, weights, mask_mode)
    grads = ad.grad(bd.total, variables)

    def f_at() -> float:
        routing.start_replay()
        with recording(routing):
            val = total_loss(window, unaug, aug, toggles, weights, mask_mode).total
        return float(value_of(val))

    def central(perturb) -> float:
        perturb(+eps)
        fp = f_at()
        perturb(-2 * eps)
        fm = f_at()
        perturb(+eps)
        return (fp - fm) / (2 * eps)

    analytic, numeric, labels = [], [], []
    for vi, (var, name) in enumerate(zip(variables, names)):
        flat = var.value.reshape(-1)
        if var.ndim == 1:
            coords = range(flat.size)
        else:
            coords = list(rng.choice(flat.size, size=min(n_pixels, flat.size), replace=False))
        for c in coords:
            orig = flat[c]

            def bump(delta, flat=flat, c=c):
                flat[c] += delta

            numeric.append(central(bump))
            flat[c] = orig
            analytic.append(float(grads[vi].reshape(-1)[c]))
            labels.append(f"{name}[{c}]")
    a, f = np.array(analytic), np.array(numeric)
    vec_rel = float(np.linalg.norm(a - f) / max(np.linalg.norm(a), np.linalg.norm(f), ABS_FLOOR))
    per = np.abs(a - f) / np.maximum(np.maximum(np.abs(a), np.abs(f)), ABS_FLOOR)
    k = int(np.argmax(per))

    saved = [v.value.copy() for v in variables]
    dir_rel = 0.0
    for _ in range(n_dirs):
        dirs = [rng.standard_normal(v.shape) for v in variables]
        norm = np.sqrt(sum(float(np.sum(d * d)) for d in dirs))
        dirs = [d / norm for d in dirs]
        along = sum(float(np.sum(g * d)) for g, d in zip(grads, dirs))

        def shift(delta, dirs=dirs):
            for v, d in zip(variables, dirs):
                v.value = v.value + delta * d

        fd = central(shift)
        for v, s in zip(variables, saved):
            v.value = s.copy()
        dir_rel = max(dir_rel, rel_error(along, fd))
    return PointResult(-1, vec_rel, dir_rel, float(per[k]), labels[k], len(labels) + n_dirs)


def run_gradcheck(trials: int = 20, seed: int = 0, tolerance: float = DEFAULT_TOLERANCE, eps: float = DEFAULT_EPS,
                  height: int = 16, width: int = 24, tie_margin_min: float = 1e-6,
                  toggles: AblationToggles | None = None, weights: LossWeights | None = None,
                  mask_mode: str = "unaug", max_resample: int = 50) -> GradcheckReport:
    """Run ``trials`` tie-free points of the full objective with every term active."""
    toggles = AblationToggles.full() if toggles is None else toggles
    weights = LossWeights() if weights is None else weights
    report = GradcheckReport(tolerance, eps)
    if trials <= 0:
        return report
    window, record = _fixture(seed, height, width)
    rng = np.random.default_rng([seed, 4242])
    for i in range(trials):
        for _ in range(max_resample):
            unaug = _random_state(rng, record)
            aug = _random_state(rng, record)
            if tie_margin(window, unaug, aug, toggles) >= tie_margin_min:
                break
            report.resampled += 1
        else:
            raise RuntimeError("could not draw a tie-free point")
        res = check_point(window, unaug, aug, toggles, weights, rng, eps, mask_mode=mask_mode)
        res.index = i
        report.points.append(res)
    return report
