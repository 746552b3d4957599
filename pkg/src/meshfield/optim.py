"""Adam and the step-decay learning-rate schedule."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from meshfield.errors import NonFinite


@dataclass
class LrSchedule:
    base_lr: float = 1e-4
    decay_factor: float = 0.7
    decay_every: int = 700


def lr_at(schedule: LrSchedule, iteration: int) -> float:
    if iteration < 0:
        raise ValueError("iteration must be >= 0")
    return schedule.base_lr * schedule.decay_factor ** (iteration // schedule.decay_every)


@dataclass
class AdamState:
    beta1: float = 0.9
    beta2: float = 0.99
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params, state: AdamState, lr: float) -> None:
    """One bias-corrected Adam update over ``params``; gradients are zeroed after.

    A non-finite gradient aborts the whole step before anything is modified.
    """
    params = [p for p in params if p.trainable]
    for p in params:
        if not np.all(np.isfinite(p.grad)):
            raise NonFinite("adam_step", p.name)
    state.step += 1
    bc1 = 1.0 - state.beta1**state.step
    bc2 = 1.0 - state.beta2**state.step
    for p in params:
        g = p.grad
        m = state.m.get(p.name)
        if m is None:
            m = state.m[p.name] = np.zeros_like(p.value)
            state.v[p.name] = np.zeros_like(p.value)
        v = state.v[p.name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        p.value -= lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
        p.zero_grad()
