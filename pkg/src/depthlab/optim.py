"""Adam with bias correction and a proportional multi-step learning-rate schedule."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

# epoch milestones 20, 25, 29 of a 30-epoch schedule, as fractions of the step budget
DEFAULT_MILESTONES = (20 / 30, 25 / 30, 29 / 30)


@dataclass(frozen=True)
class AdamHyper:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if not (self.lr > 0 and np.isfinite(self.lr)):
            raise ValueError("lr must be positive and finite")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("Adam betas must lie in [0, 1)")
        if self.eps <= 0:
            raise ValueError("eps must be positive")


@dataclass(frozen=True)
class MultiStepSchedule:
    """lr * decay**k after the k-th milestone; milestones are step indices."""

    base_lr: float
    milestones: tuple[int, ...] = ()
    decay: float = 0.1

    @classmethod
    def proportional(cls, base_lr: float, total_steps: int, fractions: Sequence[float] = DEFAULT_MILESTONES,
                     decay: float = 0.1) -> "MultiStepSchedule":
        for f in fractions:
            if not 0.0 <= f <= 1.0:
                raise ValueError("milestone fractions must lie in [0, 1]")
        return cls(base_lr, tuple(int(round(f * total_steps)) for f in fractions), decay)

    def lr_at(self, step: int) -> float:
        """Learning rate used for the update at zero-based ``step``."""
        k = sum(1 for m in self.milestones if step >= m)
        return self.base_lr * self.decay**k


@dataclass
class OptimizerState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    step: int = 0
    schedule: MultiStepSchedule | None = None
    lr_log: list[float] = field(default_factory=list)

    @classmethod
    def zeros_like(cls, values: Sequence[np.ndarray], schedule: MultiStepSchedule | None = None) -> "OptimizerState":
        return cls([np.zeros_like(x, dtype=float) for x in values], [np.zeros_like(x, dtype=float) for x in values],
                   0, schedule)


def adam_step(values: Sequence[np.ndarray], grads: Sequence[np.ndarray], state: OptimizerState,
              hyper: AdamHyper = AdamHyper(), lr_scales: Sequence | None = None) -> list[np.ndarray]:
    """One Adam update; returns new arrays and advances ``state`` in place.

    ``lr_scales`` optionally multiplies the learning rate per slot (a scalar or
    an array broadcasting against the slot).
    """
    if not (len(values) == len(grads) == len(state.m)):
        raise ValueError("values, grads and optimizer state differ in length")
    if lr_scales is not None and len(lr_scales) != len(values):
        raise ValueError("lr_scales must have one entry per slot")
    lr = state.schedule.lr_at(state.step) if state.schedule is not None else hyper.lr
    t = state.step + 1
    c1 = 1.0 - hyper.beta1**t
    c2 = 1.0 - hyper.beta2**t
    out = []
    for i, (x, g) in enumerate(zip(values, grads)):
        x = np.asarray(x, dtype=float)
        g = np.asarray(g, dtype=float)
        if x.shape != g.shape or x.shape != state.m[i].shape:
            raise ValueError(f"shape mismatch at slot {i}: {x.shape} vs {g.shape}")
        state.m[i] = hyper.beta1 * state.m[i] + (1.0 - hyper.beta1) * g
        state.v[i] = hyper.beta2 * state.v[i] + (1.0 - hyper.beta2) * g * g
        m_hat = state.m[i] / c1
        v_hat = state.v[i] / c2
        step_lr = lr if lr_scales is None else lr * lr_scales[i]
        out.append(x - step_lr * m_hat / (np.sqrt(v_hat) + hyper.eps))
    state.step = t
    state.lr_log.append(lr)
    return out
