"""
Dense tensor primitives shared by every layer.

Tensors are plain numpy arrays in row-major (C) order with channels-last image
layout (N, H, W, C). Two precisions are used: `standard` (float32) for training
and `wide` (float64) for finite-difference gradient checks.

Random draws go through numpy's PCG64 bit generator so seeds reproduce across
platforms.
"""
from enum import Enum
from typing import Iterable, List, Literal, Sequence, Tuple, Union

import numpy as np

from utils.errors import ShapeError

Tensor = np.ndarray
Shape = Tuple[int, ...]


class Precision(str, Enum):
    STANDARD = "standard"
    WIDE = "wide"

    @property
    def dtype(self) -> np.dtype:
        return np.dtype(np.float32) if self is Precision.STANDARD else np.dtype(np.float64)


def make_rng(seed: Union[int, Sequence[int]]) -> np.random.Generator:
    """PCG64 generator; a sequence seed derives an independent stream (e.g. [seed, epoch])."""
    return np.random.Generator(np.random.PCG64(seed))


# --- SHAPE HELPERS ---

def check_shape(shape: Iterable[int]) -> Shape:
    dims = tuple(int(d) for d in shape)
    if not dims:
        raise ShapeError("Shape must have at least one extent.")
    if any(d < 1 for d in dims):
        raise ShapeError(f"Every extent must be >= 1, got {dims}.")
    return dims


def strides_for(shape: Sequence[int]) -> Shape:
    """Element (not byte) strides for a row-major layout."""
    strides = [1] * len(shape)
    for axis in range(len(shape) - 2, -1, -1):
        strides[axis] = strides[axis + 1] * int(shape[axis + 1])
    return tuple(strides)


def linear_index(coord: Sequence[int], shape: Sequence[int]) -> int:
    if len(coord) != len(shape):
        raise ShapeError(f"Coordinate rank {len(coord)} does not match shape rank {len(shape)}.")
    for c, d in zip(coord, shape):
        if not 0 <= c < d:
            raise ShapeError(f"Coordinate {tuple(coord)} out of bounds for shape {tuple(shape)}.")
    return sum(int(c) * s for c, s in zip(coord, strides_for(shape)))


def coordinate(index: int, shape: Sequence[int]) -> Shape:
    size = int(np.prod(shape))
    if not 0 <= index < size:
        raise ShapeError(f"Linear index {index} out of range for {size} elements.")
    coord = []
    for stride in strides_for(shape):
        coord.append(index // stride)
        index %= stride
    return tuple(coord)


# --- CREATION ---

def create(shape: Iterable[int], fill: Union[float, Sequence[float], np.ndarray] = 0.0,
           precision: Precision = Precision.STANDARD) -> Tensor:
    dims = check_shape(shape)
    if np.isscalar(fill):
        return np.full(dims, fill, dtype=precision.dtype)
    values = np.asarray(fill, dtype=precision.dtype).reshape(-1)
    expected = int(np.prod(dims))
    if values.size != expected:
        raise ShapeError(f"Fill has {values.size} values but shape {dims} needs {expected}.")
    return values.reshape(dims).copy()


def he_init(shape: Iterable[int], fan_in: int, rng: np.random.Generator,
            precision: Precision = Precision.STANDARD) -> Tensor:
    """Normal(0, sqrt(2 / fan_in)) draws."""
    if fan_in < 1:
        raise ShapeError(f"fan_in must be >= 1, got {fan_in}.")
    dims = check_shape(shape)
    std = np.sqrt(2.0 / fan_in)
    return (rng.standard_normal(dims) * std).astype(precision.dtype)


# --- ELEMENTWISE / REDUCTION ---

_MAP2_OPS = {"add": np.add, "sub": np.subtract, "mul": np.multiply}
_REDUCE_OPS = {"sum": np.sum, "mean": np.mean, "max": np.max}


def map2(a: Union[Tensor, float], b: Union[Tensor, float],
         op: Literal["add", "sub", "mul"]) -> Tensor:
    if op not in _MAP2_OPS:
        raise ShapeError(f"Unknown elementwise op '{op}'. Valid options: {list(_MAP2_OPS)}")
    a_arr, b_arr = np.asarray(a), np.asarray(b)
    if a_arr.ndim and b_arr.ndim and a_arr.shape != b_arr.shape:
        raise ShapeError(f"Shape mismatch for {op}: {a_arr.shape} vs {b_arr.shape}.")
    return _MAP2_OPS[op](a_arr, b_arr)


def reduce(a: Tensor, axes: Iterable[int], op: Literal["sum", "mean", "max"]) -> Tensor:
    if op not in _REDUCE_OPS:
        raise ShapeError(f"Unknown reduction '{op}'. Valid options: {list(_REDUCE_OPS)}")
    axis_list: List[int] = sorted(set(int(x) for x in axes))
    for axis in axis_list:
        if not 0 <= axis < a.ndim:
            raise ShapeError(f"Axis {axis} invalid for rank {a.ndim}.")
    return _REDUCE_OPS[op](a, axis=tuple(axis_list))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul expects rank-2 operands, got {a.shape} and {b.shape}.")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"Inner dimensions differ: {a.shape} x {b.shape}.")
    return a @ b


def pad_spatial(a: Tensor, top: int, bottom: int, left: int, right: int,
                value: float = 0.0) -> Tensor:
    """Pads H and W of an (N, H, W, C) tensor. value=-inf is the max-pool sentinel."""
    if a.ndim != 4:
        raise ShapeError(f"pad_spatial expects rank 4 (N,H,W,C), got shape {a.shape}.")
    if top == bottom == left == right == 0:
        return a
    return np.pad(a, ((0, 0), (top, bottom), (left, right), (0, 0)),
                  mode="constant", constant_values=value)
