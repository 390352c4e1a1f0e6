from typing import Dict, Mapping, MutableMapping

import numpy as np

from schema.run_schema import LrSchedule
from utils.errors import NumericError, RangeError, ShapeError
from utils.tensor_core import Tensor


class AdamState:
    """
    Per-parameter first/second moments plus the shared timestep.
    Moments are created lazily (zeros) the first time a parameter is stepped.
    """

    def __init__(self, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m: Dict[str, Tensor] = {}
        self.v: Dict[str, Tensor] = {}

    def ensure(self, params: Mapping[str, Tensor]) -> None:
        for name, value in params.items():
            if name not in self.m:
                self.m[name] = np.zeros_like(value)
                self.v[name] = np.zeros_like(value)

    def copy(self) -> "AdamState":
        other = AdamState(self.beta1, self.beta2, self.eps)
        other.t = self.t
        other.m = {k: v.copy() for k, v in self.m.items()}
        other.v = {k: v.copy() for k, v in self.v.items()}
        return other


def adam_step(params: MutableMapping[str, Tensor], grads: Mapping[str, Tensor],
              state: AdamState, lr: float) -> None:
    """One bias-corrected Adam update, in place on params and state."""
    if not lr > 0:
        raise RangeError(f"Learning rate must be > 0, got {lr}.")
    # Validate everything before touching state so a bad step leaves no partial update
    for name, g in grads.items():
        if name not in params:
            raise ShapeError(f"Gradient for unknown parameter '{name}'.")
        if g.shape != params[name].shape:
            raise ShapeError(f"Gradient shape {g.shape} does not match '{name}' {params[name].shape}.")
        if not np.all(np.isfinite(g)):
            raise NumericError(f"Non-finite gradient for '{name}'.")

    state.ensure(params)
    state.t += 1
    bc1 = 1.0 - state.beta1 ** state.t
    bc2 = 1.0 - state.beta2 ** state.t

    for name, g in grads.items():
        m, v = state.m[name], state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        m_hat = m / bc1
        v_hat = v / bc2
        params[name] -= (lr * m_hat / (np.sqrt(v_hat) + state.eps)).astype(params[name].dtype, copy=False)


def lr_for_epoch(schedule: LrSchedule, epoch: int) -> float:
    """Phase lookup for a 1-based epoch."""
    if not 1 <= epoch <= schedule.total_epochs:
        raise RangeError(f"Epoch {epoch} outside schedule range 1..{schedule.total_epochs}.")
    remaining = epoch
    for count, rate in schedule.phases:
        if remaining <= count:
            return rate
        remaining -= count
    raise RangeError(f"Epoch {epoch} outside schedule range.")
