"""AdamW with decoupled weight decay, and a warmup + cosine decay schedule.

The optimizer is written against plain lists of float64 arrays; encoder
code flattens its layers into such a list before stepping.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .exceptions import ShapeMismatch, StepOutOfRange


@dataclass(frozen=True)
class ScheduleSpec:
    """Linear warmup to ``peak_lr`` followed by cosine decay to zero."""

    total_steps: int
    warmup_steps: int
    peak_lr: float

    def __post_init__(self) -> None:
        if self.total_steps < 0:
            raise ValueError(f"total_steps must be >= 0, got {self.total_steps}")
        if not (0 <= self.warmup_steps <= self.total_steps):
            raise ValueError(
                f"warmup_steps must lie in [0, {self.total_steps}], got {self.warmup_steps}"
            )
        if not (self.peak_lr > 0):
            raise ValueError(f"peak_lr must be > 0, got {self.peak_lr}")


def lr_at(step: int, schedule: ScheduleSpec) -> float:
    """Learning rate at an integer step in ``[0, total_steps]``.

    Ramps linearly from 0 to ``peak_lr`` over the warmup steps, then decays
    as ``peak_lr * (1 + cos(pi * progress)) / 2`` down to exactly 0 at
    ``total_steps``.
    """
    if not (0 <= step <= schedule.total_steps):
        raise StepOutOfRange(f"step {step} outside [0, {schedule.total_steps}]")
    if step < schedule.warmup_steps:
        return schedule.peak_lr * step / schedule.warmup_steps
    if schedule.total_steps == schedule.warmup_steps:
        return schedule.peak_lr
    progress = (step - schedule.warmup_steps) / (schedule.total_steps - schedule.warmup_steps)
    return schedule.peak_lr * 0.5 * (1.0 + math.cos(math.pi * progress))


@dataclass
class AdamState:
    """Per-parameter first/second moments plus the shared step counter."""

    m: list[np.ndarray]
    v: list[np.ndarray]
    step: int = 0
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    weight_decay: float = 0.1


def init_adam(
    params: list[np.ndarray],
    betas: tuple[float, float] = (0.9, 0.999),
    eps: float = 1e-8,
    weight_decay: float = 0.1,
) -> AdamState:
    return AdamState(
        m=[np.zeros_like(p) for p in params],
        v=[np.zeros_like(p) for p in params],
        step=0,
        betas=betas,
        eps=eps,
        weight_decay=weight_decay,
    )


def adamw_step(
    params: list[np.ndarray],
    grads: list[np.ndarray],
    state: AdamState,
    lr: float,
) -> tuple[list[np.ndarray], AdamState]:
    """One AdamW update; returns fresh parameter arrays and the next state.

    Moments use bias correction; weight decay is decoupled, i.e.
    ``p <- p * (1 - lr * wd)`` is applied separately from the moment-driven
    step.  ``lr == 0`` leaves parameters bitwise unchanged apart from the
    moment update.  Frozen encoders are simply never passed here.
    """
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ShapeMismatch(
            f"got {len(params)} params, {len(grads)} grads, {len(state.m)} moment slots"
        )
    b1, b2 = state.betas
    t = state.step + 1
    bc1 = 1.0 - b1**t
    bc2 = 1.0 - b2**t
    new_params: list[np.ndarray] = []
    new_m: list[np.ndarray] = []
    new_v: list[np.ndarray] = []
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if p.shape != g.shape:
            raise ShapeMismatch(f"param shape {p.shape} != grad shape {g.shape}")
        m_next = b1 * m + (1.0 - b1) * g
        v_next = b2 * v + (1.0 - b2) * (g * g)
        m_hat = m_next / bc1
        v_hat = v_next / bc2
        p_next = p * (1.0 - lr * state.weight_decay) - lr * m_hat / (np.sqrt(v_hat) + state.eps)
        new_params.append(p_next)
        new_m.append(m_next)
        new_v.append(v_next)
    next_state = AdamState(
        m=new_m, v=new_v, step=t, betas=state.betas, eps=state.eps, weight_decay=state.weight_decay
    )
    return new_params, next_state
