"""Time-decayed blending of per-interaction vectors into per-entity vectors.

Each update folds a new vector into the stored one:

    value <- b * value + (1 - b) * new,   b = exp(-dt / tau)

where dt is the time since the key's last update. A long-idle key (large
dt, b ~ 0) is effectively reset to the fresh vector; a hot key (small dt,
b ~ 1) keeps most of its history. The blend is computed as
new + b * (old - new) so each component stays inside [min(old, new),
max(old, new)] in floating point and an identical update is an exact
fixed point.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DimensionError
from .nncore import check_finite

Array = np.ndarray


@dataclass(frozen=True)
class BetaFn:
    """Exponential decay weight b(dt) = exp(-dt / tau), tau in seconds."""

    tau: float

    def __post_init__(self):
        if not (self.tau > 0.0 and math.isfinite(self.tau)):
            raise ValueError(f"tau must be positive and finite, got {self.tau}")


def beta(fn: BetaFn, dt: float) -> float:
    """Decay weight for a positive time gap; 1 as dt->0+, 0 as dt->inf."""
    if not dt > 0.0:
        raise ValueError(f"dt must be positive, got {dt}")
    return math.exp(-dt / fn.tau)


@dataclass
class AggState:
    """Current blended vector plus the timestamp of its last update."""

    value: Array
    last_update: float


def update_cr(state: AggState | None, new_cr: Array, now: float, fn: BetaFn) -> AggState:
    """Fold one observation into the state; absent state adopts it verbatim.

    Raises if ``now`` precedes the state's last update or dimensions differ.
    A zero gap keeps the stored value (the dt->0+ limit of the blend).
    """
    new_cr = np.asarray(new_cr, dtype=np.float64)
    check_finite(new_cr, "new_cr")
    if state is None:
        return AggState(value=new_cr.copy(), last_update=float(now))
    if new_cr.shape != state.value.shape:
        raise DimensionError(
            f"update of shape {new_cr.shape} against state {state.value.shape}"
        )
    if now < state.last_update:
        raise ValueError(
            f"clock went backwards: now={now} < last_update={state.last_update}"
        )
    dt = float(now) - state.last_update
    b = 1.0 if dt == 0.0 else beta(fn, dt)
    value = new_cr + b * (state.value - new_cr)
    return AggState(value=value, last_update=float(now))


def aggregate_oracle(updates: list[tuple[Array, float]], fn: BetaFn) -> Array:
    """Reference left-fold of ``update_cr`` over a sorted update sequence."""
    if not updates:
        raise ValueError("empty update sequence")
    times = [t for _, t in updates]
    if any(b < a for a, b in zip(times, times[1:])):
        raise ValueError("update timestamps must be sorted non-decreasing")
    state: AggState | None = None
    for vec, t in updates:
        state = update_cr(state, vec, t, fn)
    return state.value
