import logging
from typing import Dict, Mapping, Tuple

import numpy as np

from schema.record_schema import LossReport
from schema.run_schema import LossConfig
from utils.errors import ConfigError, NumericError, ShapeError
from utils.tensor_core import Tensor

logger = logging.getLogger(__name__)

PROB_FLOOR = 1e-12


def softmax(logits: Tensor) -> Tensor:
    """Row-wise softmax with max-subtraction."""
    if logits.ndim != 2 or logits.shape[1] < 1:
        raise ShapeError(f"softmax expects (N, C) with C >= 1, got {logits.shape}.")
    if not np.all(np.isfinite(logits)):
        raise NumericError("softmax received non-finite logits.")
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def _label_indices(labels: Tensor, n: int, c: int) -> np.ndarray:
    labels = np.asarray(labels)
    if labels.ndim == 2:
        if labels.shape != (n, c):
            raise ShapeError(f"One-hot labels {labels.shape} do not match probs {(n, c)}.")
        labels = labels.argmax(axis=1)
    labels = labels.astype(np.int64).reshape(-1)
    if labels.shape[0] != n:
        raise ShapeError(f"{labels.shape[0]} labels for {n} rows.")
    if np.any(labels < 0) or np.any(labels >= c):
        raise ShapeError(f"Labels must lie in [0, {c}).")
    return labels


def cce(probs: Tensor, labels: Tensor) -> float:
    """Mean of -log p[true class] over the batch."""
    n, c = probs.shape
    idx = _label_indices(labels, n, c)
    p_true = probs[np.arange(n), idx]
    if np.any(p_true < PROB_FLOOR):
        logger.warning(f"CCE: {int(np.sum(p_true < PROB_FLOOR))} true-class probabilities "
                       f"clamped to {PROB_FLOOR:g}.")
        p_true = np.maximum(p_true, PROB_FLOOR)
    return float(-np.mean(np.log(p_true)))


def l2_penalty(params: Mapping[str, Tensor], cfg: LossConfig, m: int) -> float:
    """(lambda / 2m) * sum of squared entries of the configured kernels."""
    if m < 1:
        raise ValueError(f"Batch size m must be >= 1, got {m}.")
    if cfg.lam == 0.0:
        return 0.0
    total = 0.0
    for name in cfg.regularized_param_names:
        if name not in params:
            raise ConfigError(f"Regularized parameter '{name}' is not in the parameter store.")
        w = params[name].astype(np.float64)
        total += float(np.sum(w * w))
    return cfg.lam / (2.0 * m) * total


def l2_grads(params: Mapping[str, Tensor], cfg: LossConfig, m: int) -> Dict[str, Tensor]:
    """(lambda / m) * W for every configured kernel."""
    out = {}
    for name in cfg.regularized_param_names:
        if name not in params:
            raise ConfigError(f"Regularized parameter '{name}' is not in the parameter store.")
        out[name] = (cfg.lam / m) * params[name]
    return out


def loss_and_logit_grad(logits: Tensor, labels: Tensor, params: Mapping[str, Tensor],
                        cfg: LossConfig) -> Tuple[LossReport, Tensor]:
    """
    Total regularized loss and the fused softmax-CCE gradient at the logits,
    (softmax(logits) - onehot) / N. The L2 gradient is added to the kernels
    during backward, not here.
    """
    n, c = logits.shape
    probs = softmax(logits)
    idx = _label_indices(labels, n, c)
    data_loss = cce(probs, idx)
    reg_loss = l2_penalty(params, cfg, n)

    grad = probs.copy()
    grad[np.arange(n), idx] -= 1.0
    grad /= n
    report = LossReport(data_loss=data_loss, reg_loss=reg_loss, total=data_loss + reg_loss)
    return report, grad.astype(logits.dtype, copy=False)
