"""ADAM optimizer and learning-rate schedules."""

import math
from dataclasses import dataclass, field

import numpy as np


class NonFiniteGradientError(RuntimeError):
    """A parameter gradient contained NaN or Inf."""


@dataclass
class AdamState:
    """Per-parameter moment estimates; mirrors the parameter list order."""

    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)


def adam_step(state, params, grads, lr):
    """One bias-corrected ADAM update, in place on the parameter arrays.

    params is a list of named (name, array) pairs or bare arrays; grads is
    the matching list of gradient arrays.
    """
    if lr <= 0:
        raise ValueError(f"learning rate must be positive, got {lr}")
    named = [p if isinstance(p, tuple) else (f"param{i}", p) for i, p in enumerate(params)]
    if not state.m:
        state.m = [np.zeros_like(p) for _, p in named]
        state.v = [np.zeros_like(p) for _, p in named]
    state.t += 1
    bc1 = 1.0 - state.beta1**state.t
    bc2 = 1.0 - state.beta2**state.t
    for (name, p), g, m, v in zip(named, grads, state.m, state.v):
        if g is None:
            continue
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradientError(f"non-finite gradient for parameter {name!r}")
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        p -= lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)


@dataclass(frozen=True)
class LrSchedule:
    """Learning-rate schedule: fixed, step(gamma, period), exponential(gamma),
    or cosine(t_max).  base_lr is the maximum rate for every kind."""

    kind: str = "fixed"
    base_lr: float = 1e-3
    gamma: float = 0.99
    period: int = 2000
    t_max: int = 2000

    COSINE_FLOOR = 1e-2  # fraction of base_lr; keeps the emitted lr positive

    def __post_init__(self):
        if self.base_lr <= 0:
            raise ValueError(f"base_lr must be positive, got {self.base_lr}")
        if self.kind not in ("fixed", "step", "exponential", "cosine"):
            raise ValueError(f"unknown schedule kind {self.kind!r}")
        if self.kind == "cosine" and self.t_max <= 0:
            raise ValueError("cosine schedule needs t_max > 0")
        if self.kind == "step" and self.period <= 0:
            raise ValueError("step schedule needs period > 0")


def schedule_lr(sched, epoch):
    """Learning rate at the given epoch (non-increasing in epoch)."""
    if sched.kind == "fixed":
        return sched.base_lr
    if sched.kind == "step":
        return sched.base_lr * sched.gamma ** (epoch // sched.period)
    if sched.kind == "exponential":
        return sched.base_lr * sched.gamma**epoch
    # cosine, floored to stay positive
    raw = sched.base_lr * (1.0 + math.cos(math.pi * min(epoch, sched.t_max) / sched.t_max)) / 2.0
    return max(raw, sched.base_lr * LrSchedule.COSINE_FLOOR)
