"""Direct optimisation of per-pixel disparity and poses: the training-loop stand-in.

:class:`DepthPoseOptimizer` follows the scikit-learn estimator shape: the
constructor only stores hyper-parameters, :meth:`~DepthPoseOptimizer.fit`
runs Adam over the loss of :mod:`depthlab.losses`, and fitted state lives
in trailing-underscore attributes.
"""
from __future__ import annotations

import json
import math
from typing import Sequence

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from . import autodiff as ad
from .autodiff import value_of
from .geometry import PoseParams
from .losses import (
    D_MAX,
    D_MIN,
    MASK_MODES,
    AblationToggles,
    BranchState,
    LossBreakdown,
    LossWeights,
    Window,
    batch_loss,
)
from .metrics import DepthMetrics, evaluate
from .optim import DEFAULT_MILESTONES, AdamHyper, MultiStepSchedule, OptimizerState, adam_step
from .photometric import PhotometricConfig

BRANCHES = ("unaug", "aug")


class NumericalAbort(RuntimeError):
    """Raised when the loss turns non-finite; ``maps`` holds the state at that step."""

    def __init__(self, step: int, maps: dict):
        super().__init__(f"non-finite loss at step {step}")
        self.step = step
        self.maps = maps


def initial_poses(seed: int, n_triplets: int, n_sources: int = 2, jitter: float = 0.01) -> list[list[np.ndarray]]:
    """Identity poses plus seeded N(0, jitter^2) noise on every component."""
    rng = np.random.default_rng([int(seed), 0x9E3779B9])
    return [[rng.normal(0.0, jitter, 6) for _ in range(n_sources)] for _ in range(n_triplets)]


def translation_angle_deg(t_est, t_gt) -> float:
    a = np.asarray(t_est, dtype=float)
    b = np.asarray(t_gt, dtype=float)
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        return float("nan")
    c = np.clip(np.dot(a, b) / (na * nb), -1.0, 1.0)
    return float(np.degrees(np.arccos(c)))


class DepthPoseOptimizer(BaseEstimator):
    """Fit depth and relative poses of each triplet's target frame.

    ``fit(X, augmented=None)`` takes a list of triplet records and, for the
    augmented branch, a matching list of augmented (t-1, t, t+1) frames.
    Without augmented frames only the clean branch is optimised.
    """

    def __init__(self, steps: int = 2000, lr: float = 1e-4, lr_milestones=DEFAULT_MILESTONES, lr_decay: float = 0.1,
                 pyramid_levels: int = 1, alpha: float = 0.85, omega: float = 0.01, beta: float = 0.01,
                 gamma: float = 0.001, pair_training: bool = False, semi_warp_image: bool = False,
                 semi_warp_pose: bool = False, pseudo_depth: bool = False, pseudo_pose: bool = False,
                 mask_mode: str = "unaug", pose_jitter: float = 0.01, pose_lr_scale: float = 1.0,
                 rotation_lr_scale: float = 1.0, d_min: float = D_MIN, d_max: float = D_MAX,
                 random_state: int = 0):
        self.steps = steps
        self.lr = lr
        self.lr_milestones = lr_milestones
        self.lr_decay = lr_decay
        self.pyramid_levels = pyramid_levels
        self.alpha = alpha
        self.omega = omega
        self.beta = beta
        self.gamma = gamma
        self.pair_training = pair_training
        self.semi_warp_image = semi_warp_image
        self.semi_warp_pose = semi_warp_pose
        self.pseudo_depth = pseudo_depth
        self.pseudo_pose = pseudo_pose
        self.mask_mode = mask_mode
        self.pose_jitter = pose_jitter
        self.pose_lr_scale = pose_lr_scale
        self.rotation_lr_scale = rotation_lr_scale
        self.d_min = d_min
        self.d_max = d_max
        self.random_state = random_state

    # -- parameter views ----------------------------------------------------

    @property
    def toggles(self) -> AblationToggles:
        return AblationToggles(bool(self.pair_training), bool(self.semi_warp_image), bool(self.semi_warp_pose),
                               bool(self.pseudo_depth), bool(self.pseudo_pose))

    @property
    def weights(self) -> LossWeights:
        return LossWeights(float(self.omega), float(self.beta), float(self.gamma))

    def _validate_params(self):
        if int(self.steps) != self.steps or self.steps < 0:
            raise ValueError("steps must be a non-negative integer")
        if self.mask_mode not in MASK_MODES:
            raise ValueError(f"mask_mode must be one of {MASK_MODES}")
        if not 0 < self.d_min < self.d_max:
            raise ValueError("need 0 < d_min < d_max")
        if not (self.pose_lr_scale > 0 and self.rotation_lr_scale > 0):
            raise ValueError("pose_lr_scale and rotation_lr_scale must be positive")
        if self.pose_jitter < 0:
            raise ValueError("pose_jitter must be non-negative")
        AdamHyper(lr=float(self.lr))
        LossWeights(float(self.omega), float(self.beta), float(self.gamma))
        PhotometricConfig(alpha=float(self.alpha))

    # -- fitting ------------------------------------------------------------

    def fit(self, X, y=None, augmented=None):
        self._validate_params()
        records = list(X)
        if not records:
            raise ValueError("need at least one triplet")
        if augmented is not None and len(augmented) != len(records):
            raise ValueError("augmented frames must match the triplet count")
        cfg = PhotometricConfig(alpha=float(self.alpha))
        windows = [
            Window.from_record(r, None if augmented is None else augmented[i], int(self.pyramid_levels), cfg)
            for i, r in enumerate(records)
        ]
        inits = initial_poses(self.random_state, len(records), windows[0].n_sources, float(self.pose_jitter))
        kw = dict(d_min=float(self.d_min), d_max=float(self.d_max))
        unaug = [BranchState.initial(*w.shape, p, **kw) for w, p in zip(windows, inits)]
        aug = None if augmented is None else [BranchState.initial(*w.shape, p, **kw) for w, p in zip(windows, inits)]
        variables = [v for b in unaug + (aug or []) for v in b.variables]
        # pose slots: [axis_angle, translation]; rotation gets an extra multiplier
        pose_scale = float(self.pose_lr_scale) * np.r_[np.full(3, float(self.rotation_lr_scale)), np.ones(3)]
        scales = [1.0 if v.ndim == 2 else pose_scale for v in variables]

        steps = int(self.steps)
        schedule = MultiStepSchedule.proportional(float(self.lr), steps, self.lr_milestones, float(self.lr_decay))
        state = OptimizerState.zeros_like([v.value for v in variables], schedule)
        hyper = AdamHyper(lr=float(self.lr))
        toggles, weights = self.toggles, self.weights

        history = []
        for step in range(steps):
            for v in variables:
                v.zero_grad()
            if not all(np.all(np.isfinite(v.value)) for v in variables):
                raise NumericalAbort(step, self._dump(unaug, aug, []))
            total, parts = batch_loss(windows, unaug, aug, toggles, weights, self.mask_mode)
            record = self._record(step, schedule.lr_at(step), parts)
            if not math.isfinite(record["total"]):
                raise NumericalAbort(step, self._dump(unaug, aug, parts))
            history.append(record)
            if isinstance(total, ad.Variable):
                ad.backward(total)
            grads = [v.grad if v.grad is not None else np.zeros_like(v.value) for v in variables]
            for v, new in zip(variables, adam_step([v.value for v in variables], grads, state, hyper, scales)):
                v.value = new

        _, final = batch_loss(windows, unaug, aug, toggles, weights, self.mask_mode)
        self.final_ = self._record(steps, schedule.lr_at(steps), final)
        self.final_breakdowns_ = final
        self.history_ = history
        self.records_ = records
        self.windows_ = windows
        self.branches_ = {"unaug": unaug, "aug": aug}
        self.unaug_trained_ = augmented is None or toggles.pair_training or toggles.pseudo_depth
        self.aug_trained_ = augmented is not None
        self.optimizer_state_ = state
        return self

    @staticmethod
    def _record(step: int, lr: float, parts: Sequence[LossBreakdown]) -> dict:
        rows = [p.summary() for p in parts]
        out = {"step": step, "lr": lr}
        for k in LossBreakdown.TERMS:
            acc = 0.0
            for r in rows:
                acc = acc + r[k]
            out[k] = acc / len(rows)
        return out

    @staticmethod
    def _dump(unaug, aug, parts) -> dict:
        maps = {}
        for name, branch in (("unaug", unaug), ("aug", aug)):
            for i, b in enumerate(branch or []):
                maps[f"{name}_disparity_raw_{i}"] = b.disparity_raw.value.copy()
                with np.errstate(all="ignore"):
                    maps[f"{name}_depth_{i}"] = b.depth_value()
        for i, p in enumerate(parts):
            for key in ("mu", "mu_aug", "m_v", "m_a"):
                m = getattr(p, key)
                if m is not None:
                    maps[f"{key}_{i}"] = np.asarray(m, dtype=float)
        return maps

    # -- fitted views ----------------------------------------------------------

    def _branch(self, branch: str) -> list[BranchState]:
        check_is_fitted(self, "branches_")
        if branch not in BRANCHES:
            raise ValueError(f"branch must be one of {BRANCHES}")
        states = self.branches_[branch]
        if states is None:
            raise ValueError(f"the {branch} branch was not optimised")
        return states

    def predict(self, X=None, branch: str = "unaug") -> list[np.ndarray]:
        """Fitted depth maps for the triplets passed to :meth:`fit`."""
        states = self._branch(branch)
        if X is not None and len(X) != len(states):
            raise ValueError("predict only serves the fitted triplets")
        return [s.depth_value() for s in states]

    def poses(self, branch: str = "unaug") -> list[list[PoseParams]]:
        return [[PoseParams.from_vector(p.value) for p in s.poses] for s in self._branch(branch)]

    def evaluate(self, branch: str = "unaug", median_scale: bool = True) -> list[DepthMetrics]:
        depths = self.predict(branch=branch)
        return [evaluate(d, r.target_depth, median_scale=median_scale, clamp=(self.d_min, self.d_max))
                for d, r in zip(depths, self.records_)]

    def translation_errors_deg(self, branch: str = "unaug") -> list[float]:
        out = []
        for est, rec in zip(self.poses(branch), self.records_):
            for pe, pg in zip(est, rec.relative_poses):
                out.append(translation_angle_deg(pe.translation, pg.translation))
        return out

    def step_log(self) -> str:
        """JSON-lines text, one loss breakdown per step."""
        check_is_fitted(self, "history_")
        return "".join(json.dumps(r, sort_keys=True) + "\n" for r in self.history_)
