"""
Forward and backward passes for every layer kind AKHCRNet uses.

All functions are pure: parameters, caches and random generators are passed
explicitly. Images are channels-last (N, H, W, C).
"""
import math
from typing import Dict, List, Literal, Optional, Sequence, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from utils.errors import BatchTooSmallError, ShapeError
from utils.tensor_core import Tensor, matmul, pad_spatial

Mode = Literal["train", "infer"]


# --- PARAMETER / GRADIENT CARRIERS ---

class _ArrayModel(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    def __init__(self, **data):
        # pydantic wraps validator exceptions; hand callers the ShapeError itself
        try:
            super().__init__(**data)
        except ValidationError as e:
            first = e.errors()[0]
            cause = first.get("ctx", {}).get("error")
            if isinstance(cause, ShapeError):
                raise cause from None
            raise ShapeError(f"Invalid {type(self).__name__}: {first['msg']}") from None


class ConvParams(_ArrayModel):
    kernel: Tensor = Field(..., description="(kh, kw, Cin, Cout)")
    bias: Tensor = Field(..., description="(Cout,)")
    stride: int = 1
    padding: Literal["same"] = "same"

    @model_validator(mode="after")
    def _check_geometry(self):
        if self.kernel.ndim != 4:
            raise ShapeError(f"Conv kernel must be rank 4, got {self.kernel.shape}.")
        kh, kw, _, cout = self.kernel.shape
        if kh % 2 == 0 or kw % 2 == 0:
            raise ShapeError(f"Same padding needs odd kernel sizes, got {kh}x{kw}.")
        if self.bias.shape != (cout,):
            raise ShapeError(f"Conv bias shape {self.bias.shape} does not match Cout={cout}.")
        if self.stride != 1:
            raise ShapeError("Only stride 1 convolutions are supported.")
        return self


class BatchNormParams(_ArrayModel):
    gamma: Tensor
    beta: Tensor
    running_mean: Tensor
    running_var: Tensor
    eps: float = Field(1e-5, gt=0)
    momentum: float = Field(0.9, gt=0, lt=1)

    @field_validator("running_var")
    @classmethod
    def _nonnegative_var(cls, v: Tensor) -> Tensor:
        if np.any(v < 0):
            raise ShapeError("running_var must be non-negative.")
        return v


class DenseParams(_ArrayModel):
    weight: Tensor = Field(..., description="(n_in, n_out)")
    bias: Tensor = Field(..., description="(n_out,)")

    @model_validator(mode="after")
    def _check_widths(self):
        if self.weight.ndim != 2 or self.bias.shape != (self.weight.shape[1],):
            raise ShapeError(f"Dense shapes inconsistent: W{self.weight.shape}, b{self.bias.shape}.")
        return self


class LayerGrads(_ArrayModel):
    params: Dict[str, Tensor] = Field(default_factory=dict)
    input: Tensor


# --- CONVOLUTION ---

def _same_pads(k: int) -> Tuple[int, int]:
    return k // 2, k // 2


def conv2d_forward(x: Tensor, p: ConvParams) -> Tensor:
    """Stride-1 cross-correlation with zero same-padding."""
    if x.ndim != 4:
        raise ShapeError(f"conv2d expects (N,H,W,C), got {x.shape}.")
    kh, kw, cin, cout = p.kernel.shape
    if x.shape[3] != cin:
        raise ShapeError(f"Input has {x.shape[3]} channels, kernel expects {cin}.")
    n, h, w, _ = x.shape
    ph, pw = _same_pads(kh)[0], _same_pads(kw)[0]
    xp = pad_spatial(x, ph, ph, pw, pw, 0.0)

    # Accumulate one (N*H*W, Cin) @ (Cin, Cout) product per kernel tap
    out = np.zeros((n * h * w, cout), dtype=np.result_type(x, p.kernel))
    for i in range(kh):
        for j in range(kw):
            patch = xp[:, i:i + h, j:j + w, :].reshape(-1, cin)
            out += patch @ p.kernel[i, j]
    out += p.bias
    return out.reshape(n, h, w, cout)


def conv2d_backward(x: Tensor, p: ConvParams, upstream: Tensor) -> LayerGrads:
    kh, kw, cin, cout = p.kernel.shape
    n, h, w, _ = x.shape
    if upstream.shape != (n, h, w, cout):
        raise ShapeError(f"Upstream grad {upstream.shape} does not match conv output {(n, h, w, cout)}.")
    ph, pw = kh // 2, kw // 2
    xp = pad_spatial(x, ph, ph, pw, pw, 0.0)
    g = upstream.reshape(-1, cout)

    d_kernel = np.zeros_like(p.kernel)
    d_xp = np.zeros_like(xp)
    for i in range(kh):
        for j in range(kw):
            patch = xp[:, i:i + h, j:j + w, :].reshape(-1, cin)
            d_kernel[i, j] = patch.T @ g
            d_xp[:, i:i + h, j:j + w, :] += (g @ p.kernel[i, j].T).reshape(n, h, w, cin)

    d_bias = upstream.sum(axis=(0, 1, 2))
    d_x = d_xp[:, ph:ph + h, pw:pw + w, :]
    return LayerGrads(params={"kernel": d_kernel, "bias": d_bias}, input=np.ascontiguousarray(d_x))


# --- MAX POOLING ---

class ArgmaxMap(_ArrayModel):
    """Winning window offset per output cell, plus the geometry to scatter it back."""
    indices: Tensor
    input_shape: Tuple[int, int, int, int]
    window: int
    stride: int
    pad_top: int
    pad_left: int


def _pool_geometry(size: int, window: int, stride: int,
                   padding: Literal["valid", "same"]) -> Tuple[int, int, int]:
    if padding == "same":
        out = math.ceil(size / stride)
        total = max((out - 1) * stride + window - size, 0)
        return out, total // 2, total - total // 2
    if size < window:
        raise ShapeError(f"Valid pooling needs extent >= window ({size} < {window}).")
    return (size - window) // stride + 1, 0, 0


def maxpool_forward(x: Tensor, window: int = 2, stride: int = 2,
                    padding: Literal["valid", "same"] = "valid") -> Tuple[Tensor, ArgmaxMap]:
    if x.ndim != 4:
        raise ShapeError(f"maxpool expects (N,H,W,C), got {x.shape}.")
    n, h, w, c = x.shape
    out_h, top, bottom = _pool_geometry(h, window, stride, padding)
    out_w, left, right = _pool_geometry(w, window, stride, padding)
    xp = pad_spatial(x, top, bottom, left, right, -np.inf)

    # (N, Hp-w+1, Wp-w+1, C, window, window) -> strided windows -> (N, oh, ow, C, window*window)
    windows = sliding_window_view(xp, (window, window), axis=(1, 2))
    windows = windows[:, ::stride, ::stride][:, :out_h, :out_w]
    flat = windows.reshape(n, out_h, out_w, c, window * window)

    # argmax returns the first row-major index on ties
    indices = np.argmax(flat, axis=-1)
    out = np.take_along_axis(flat, indices[..., None], axis=-1)[..., 0]
    amap = ArgmaxMap(indices=indices, input_shape=(n, h, w, c), window=window,
                     stride=stride, pad_top=top, pad_left=left)
    return np.ascontiguousarray(out), amap


def maxpool_backward(amap: ArgmaxMap, upstream: Tensor) -> Tensor:
    if upstream.shape != amap.indices.shape:
        raise ShapeError(f"Upstream grad {upstream.shape} does not match pool output {amap.indices.shape}.")
    n, h, w, c = amap.input_shape
    _, out_h, out_w, _ = upstream.shape
    k, s = amap.window, amap.stride
    hp = max(h + amap.pad_top, (out_h - 1) * s + k)
    wp = max(w + amap.pad_left, (out_w - 1) * s + k)
    d_xp = np.zeros((n, hp, wp, c), dtype=upstream.dtype)

    # Scatter per window offset; overlapping windows accumulate
    for di in range(k):
        for dj in range(k):
            hit = amap.indices == di * k + dj
            if not hit.any():
                continue
            d_xp[:, di:di + s * (out_h - 1) + 1:s, dj:dj + s * (out_w - 1) + 1:s, :] += upstream * hit

    top, left = amap.pad_top, amap.pad_left
    return np.ascontiguousarray(d_xp[:, top:top + h, left:left + w, :])


# --- BATCH NORMALIZATION ---

class BatchNormCache(_ArrayModel):
    mode: Mode
    x_hat: Tensor
    inv_std: Tensor
    gamma: Tensor
    axes: Tuple[int, ...]


def batchnorm_forward(x: Tensor, p: BatchNormParams, mode: Mode = "train"
                      ) -> Tuple[Tensor, BatchNormCache, Optional[Tuple[Tensor, Tensor]]]:
    """
    Normalizes per channel (last axis) over every other axis.

    Returns the output, the backward cache and, in train mode, the updated
    (running_mean, running_var) pair. Committing them is the caller's job.
    """
    if x.ndim not in (2, 4):
        raise ShapeError(f"batchnorm expects (N,F) or (N,H,W,C), got {x.shape}.")
    if x.shape[-1] != p.gamma.shape[0]:
        raise ShapeError(f"Input has {x.shape[-1]} channels, batchnorm expects {p.gamma.shape[0]}.")
    axes = tuple(range(x.ndim - 1))

    if mode == "train":
        if x.shape[0] < 2:
            raise BatchTooSmallError(f"Batch norm in train mode needs N >= 2, got N={x.shape[0]}.")
        mean = x.mean(axis=axes)
        var = x.var(axis=axes)
        running = (
            (p.momentum * p.running_mean + (1.0 - p.momentum) * mean).astype(p.running_mean.dtype),
            (p.momentum * p.running_var + (1.0 - p.momentum) * var).astype(p.running_var.dtype),
        )
    else:
        mean, var = p.running_mean, p.running_var
        running = None

    inv_std = 1.0 / np.sqrt(var + p.eps)
    x_hat = (x - mean) * inv_std
    out = p.gamma * x_hat + p.beta
    cache = BatchNormCache(mode=mode, x_hat=x_hat, inv_std=inv_std, gamma=p.gamma, axes=axes)
    return out.astype(x.dtype, copy=False), cache, running


def batchnorm_backward(cache: BatchNormCache, upstream: Tensor) -> LayerGrads:
    if upstream.shape != cache.x_hat.shape:
        raise ShapeError(f"Upstream grad {upstream.shape} does not match batchnorm output {cache.x_hat.shape}.")
    axes = cache.axes
    d_beta = upstream.sum(axis=axes)
    d_gamma = (upstream * cache.x_hat).sum(axis=axes)

    if cache.mode == "infer":
        d_x = upstream * cache.gamma * cache.inv_std
    else:
        m = upstream.size // upstream.shape[-1]
        d_x = (cache.gamma * cache.inv_std / m) * (
            m * upstream - d_beta - cache.x_hat * d_gamma
        )
    return LayerGrads(params={"gamma": d_gamma, "beta": d_beta}, input=d_x.astype(upstream.dtype, copy=False))


# --- ACTIVATIONS / REGULARIZATION ---

def relu(x: Tensor) -> Tensor:
    return np.maximum(x, 0).astype(x.dtype, copy=False)


def relu_backward(x: Tensor, upstream: Tensor) -> Tensor:
    # subgradient at 0 is 0
    return upstream * (x > 0)


def dropout(x: Tensor, rate: float, mode: Mode, rng: Optional[np.random.Generator]
            ) -> Tuple[Tensor, Optional[Tensor]]:
    """Inverted dropout. Returns (output, keep-mask); the mask is None for pass-through."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"Dropout rate must be in [0, 1), got {rate}.")
    if mode == "infer" or rate == 0.0:
        return x, None
    if rng is None:
        raise ValueError("Train-mode dropout needs a random generator.")
    mask = rng.random(x.shape) >= rate
    return (x * mask / (1.0 - rate)).astype(x.dtype, copy=False), mask


def dropout_backward(mask: Optional[Tensor], rate: float, upstream: Tensor) -> Tensor:
    if mask is None:
        return upstream
    return (upstream * mask / (1.0 - rate)).astype(upstream.dtype, copy=False)


# --- SHAPE PLUMBING ---

def concat_channels(xs: Sequence[Tensor]) -> Tensor:
    if not xs:
        raise ShapeError("concat_channels needs at least one input.")
    lead = xs[0].shape[:-1]
    for x in xs:
        if x.ndim != 4 or x.shape[:-1] != lead:
            raise ShapeError(f"Cannot concat {x.shape} with leading dims {lead}.")
    if len(xs) == 1:
        return xs[0]
    return np.concatenate(xs, axis=-1)


def split_channels(upstream: Tensor, sizes: Sequence[int]) -> List[Tensor]:
    """Left inverse of concat_channels for the given per-input channel counts."""
    if sum(sizes) != upstream.shape[-1]:
        raise ShapeError(f"Channel sizes {list(sizes)} do not sum to {upstream.shape[-1]}.")
    offsets = np.cumsum(sizes)[:-1]
    return [np.ascontiguousarray(part) for part in np.split(upstream, offsets, axis=-1)]


def dense_forward(x: Tensor, p: DenseParams) -> Tensor:
    if x.ndim != 2 or x.shape[1] != p.weight.shape[0]:
        raise ShapeError(f"Dense input {x.shape} does not match weight {p.weight.shape}.")
    return matmul(x, p.weight) + p.bias


def dense_backward(x: Tensor, p: DenseParams, upstream: Tensor) -> LayerGrads:
    if upstream.shape != (x.shape[0], p.weight.shape[1]):
        raise ShapeError(f"Upstream grad {upstream.shape} does not match dense output.")
    return LayerGrads(
        params={"kernel": matmul(x.T, upstream), "bias": upstream.sum(axis=0)},
        input=matmul(upstream, p.weight.T),
    )


def flatten(x: Tensor) -> Tensor:
    if x.ndim != 4:
        raise ShapeError(f"flatten expects (N,H,W,C), got {x.shape}.")
    return x.reshape(x.shape[0], -1)


def unflatten(upstream: Tensor, shape: Sequence[int]) -> Tensor:
    return upstream.reshape(tuple(shape))
