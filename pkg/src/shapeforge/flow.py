"""Rectified-flow mathematics: interpolation, step schedule, Euler integration.

The forward process is the straight-line interpolation z_t = (1-t) z0 + t eps;
denoising integrates a velocity field backwards from t=1 to t=0 over a
discretized schedule whose times are rescaled to concentrate steps near the
noise end.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Protocol

import numpy as np


class FlowError(ValueError):
    pass


class IntegrationError(RuntimeError):
    """Velocity field produced non-finite output; carries the failing step."""

    def __init__(self, step: int, message: str | None = None):
        self.step = step
        super().__init__(message or f"non-finite velocity at step {step}")


class VelocityField(Protocol):
    def evaluate(self, z: np.ndarray, t: float, condition=None) -> np.ndarray: ...


@dataclass(frozen=True)
class StepSchedule:
    """Discrete times t(0..T): t(0)=1, t(T)=0, strictly decreasing.

    Each time is the rescaled linear step t = lam * u / (1 + (lam - 1) * u)
    with u = 1 - tau / T; lam > 1 biases steps toward high noise.
    """

    steps: int
    rescale: float
    times: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        if t.shape != (self.steps + 1,):
            raise FlowError(f"schedule needs T+1 times, got {t.shape}")
        if t[0] != 1.0 or t[-1] != 0.0:
            raise FlowError("schedule endpoints must be exactly 1 and 0")
        if not np.all(np.diff(t) < 0):
            raise FlowError("schedule times must be strictly decreasing")
        object.__setattr__(self, "times", t)

    def to_dict(self) -> dict:
        return {"steps": self.steps, "rescale": self.rescale}


def make_schedule(steps: int = 25, rescale: float = 3.0) -> StepSchedule:
    if steps < 1:
        raise FlowError("need at least one step")
    if rescale <= 0:
        raise FlowError("rescale factor must be positive")
    u = 1.0 - np.arange(steps + 1) / steps
    times = rescale * u / (1.0 + (rescale - 1.0) * u)
    times[0], times[-1] = 1.0, 0.0  # fixed points of the rescale, forced exact
    return StepSchedule(steps=steps, rescale=float(rescale), times=times)


def forward_noise(z0: np.ndarray, eps: np.ndarray, t: float) -> np.ndarray:
    """(1-t) z0 + t eps, elementwise."""
    z0 = np.asarray(z0, dtype=float)
    eps = np.asarray(eps, dtype=float)
    if z0.shape != eps.shape:
        raise FlowError(f"shape mismatch: {z0.shape} vs {eps.shape}")
    if not (0.0 <= t <= 1.0):
        raise FlowError(f"t={t} outside [0, 1]")
    return (1.0 - t) * z0 + t * eps


def integrate(
    z_start: np.ndarray,
    field: VelocityField,
    schedule: StepSchedule,
    start_index: int = 0,
    condition=None,
    on_step: Callable[[int, int], None] | None = None,
) -> np.ndarray:
    """Euler-integrate from t(start_index) down to t=0.

    z_{t(i+1)} = z_{t(i)} - v(z_{t(i)}, t(i)) * (t(i) - t(i+1)); start_index=T
    performs zero steps and returns z_start unchanged.
    """
    T = schedule.steps
    if not (0 <= start_index <= T):
        raise FlowError(f"start index {start_index} outside [0, {T}]")
    z = np.array(z_start, dtype=float, copy=True)
    if not np.all(np.isfinite(z)):
        raise FlowError("non-finite start state")
    t = schedule.times
    total = T - start_index
    for i in range(start_index, T):
        v = field.evaluate(z, float(t[i]), condition)
        if not np.all(np.isfinite(v)):
            raise IntegrationError(step=i)
        z = z - v * (t[i] - t[i + 1])
        if on_step is not None:
            on_step(i - start_index + 1, total)
    return z


@dataclass(frozen=True)
class ConstantField:
    """v(z, t) = c; Euler integrates it exactly (testing helper)."""

    velocity: np.ndarray

    def evaluate(self, z, t, condition=None):
        return np.broadcast_to(np.asarray(self.velocity, dtype=float), np.shape(z)).copy()
