"""Central finite differences for checking analytic gradients in wide precision."""
from typing import Callable, Optional

import numpy as np

from utils.tensor_core import Tensor, make_rng

FD_STEP = 1e-5


def relative_error(analytic: Tensor, numeric: Tensor, floor: float = 1e-12) -> float:
    """||a - n|| / max(||a|| + ||n||, floor) over the whole tensor."""
    a = np.asarray(analytic, dtype=np.float64).reshape(-1)
    n = np.asarray(numeric, dtype=np.float64).reshape(-1)
    return float(np.linalg.norm(a - n) / max(np.linalg.norm(a) + np.linalg.norm(n), floor))


def numeric_grad(f: Callable[[], float], x: Tensor, step: float = FD_STEP,
                 max_entries: Optional[int] = None, seed: int = 0) -> Tensor:
    """
    d f / d x by central differences, perturbing `x` in place and restoring it.

    With `max_entries` only a random subset of coordinates is sampled; the rest
    of the returned array is NaN.
    """
    if not x.flags.c_contiguous:
        raise ValueError("numeric_grad perturbs x in place and needs a C-contiguous array.")
    flat = x.reshape(-1)
    if max_entries and max_entries < flat.size:
        coords = make_rng(seed).choice(flat.size, size=max_entries, replace=False)
        grad = np.full(flat.size, np.nan)
    else:
        coords = np.arange(flat.size)
        grad = np.zeros(flat.size)
    for i in coords:
        original = flat[i]
        flat[i] = original + step
        plus = f()
        flat[i] = original - step
        minus = f()
        flat[i] = original
        grad[i] = (plus - minus) / (2.0 * step)
    return grad.reshape(x.shape)


def check_gradient(f: Callable[[], float], x: Tensor, analytic: Tensor, step: float = FD_STEP,
                   max_entries: Optional[int] = None, seed: int = 0) -> float:
    """Relative error between `analytic` and a finite-difference estimate over the sampled entries."""
    numeric = numeric_grad(f, x, step, max_entries, seed)
    sampled = ~np.isnan(numeric)
    return relative_error(np.asarray(analytic)[sampled], numeric[sampled])
