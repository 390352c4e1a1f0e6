"""
AKHCRNet graph assembly, full forward/backward passes and prediction.

The graph is a list of LayerNode records in topological order. Each node reads
the outputs of its named inputs; the inception block is four branches reading
the same pooled stem tensor and merging at a concat node. Backward walks the
list in reverse and accumulates gradients where a tensor fans out.
"""
import logging
from pathlib import Path
from typing import Dict, List, Literal, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from network import layers
from network.objective import l2_grads, loss_and_logit_grad, softmax
from network.optimizer import AdamState
from schema.record_schema import LossReport, RankedClass
from schema.run_schema import ArchitectureSpec, LossConfig
from utils.checkpoint_io import Checkpoint
from utils.errors import FormatError, RangeError, ShapeError, UsageError
from utils.tensor_core import Precision, Tensor, create, he_init, make_rng

logger = logging.getLogger(__name__)

NodeKind = Literal["input", "conv", "relu", "batchnorm", "maxpool", "concat",
                   "flatten", "dense", "dropout"]


# --- GRAPH DESCRIPTION ---

class LayerNode(BaseModel):
    name: str
    kind: NodeKind
    inputs: List[str] = Field(default_factory=list)
    filters: Optional[int] = None
    kernel: Optional[int] = None
    window: Optional[int] = None
    stride: Optional[int] = None
    padding: Optional[Literal["valid", "same"]] = None
    units: Optional[int] = None
    rate: Optional[float] = None
    out_shape: Tuple[int, ...] = Field((), description="Per-sample output shape from the static trace")

    @property
    def mode_sensitive(self) -> bool:
        """Behaves differently in train and infer mode."""
        return self.kind in ("batchnorm", "dropout")


class ModelGraph(BaseModel):
    spec: ArchitectureSpec
    nodes: List[LayerNode]
    output: str

    def node(self, name: str) -> LayerNode:
        for n in self.nodes:
            if n.name == name:
                return n
        raise KeyError(name)

    def summary(self, store: "ParamStore") -> List[Tuple[str, str, Tuple[int, ...], int]]:
        rows = []
        for n in self.nodes:
            count = sum(v.size for k, v in store.params.items() if k.split(".")[0] == n.name)
            rows.append((n.name, n.kind, n.out_shape, int(count)))
        return rows


class ParamStore:
    """Named learnable tensors (params) and batch-norm running statistics (buffers)."""

    def __init__(self, precision: Precision = Precision.STANDARD):
        self.precision = precision
        self.params: Dict[str, Tensor] = {}
        self.buffers: Dict[str, Tensor] = {}
        self.version = 0

    def add(self, name: str, value: Tensor, buffer: bool = False) -> None:
        target = self.buffers if buffer else self.params
        if name in self.params or name in self.buffers:
            raise ValueError(f"Duplicate parameter name '{name}'.")
        target[name] = value

    def assign(self, name: str, value: Tensor) -> None:
        target = self.buffers if name in self.buffers else self.params
        if name not in target:
            raise KeyError(name)
        if target[name].shape != value.shape:
            raise ShapeError(f"Cannot reshape '{name}' from {target[name].shape} to {value.shape}.")
        target[name] = value.astype(target[name].dtype, copy=True)

    def mark_updated(self) -> None:
        self.version += 1

    def parameter_count(self) -> int:
        return int(sum(v.size for v in self.params.values()))

    def copy(self) -> "ParamStore":
        other = ParamStore(self.precision)
        other.params = {k: v.copy() for k, v in self.params.items()}
        other.buffers = {k: v.copy() for k, v in self.buffers.items()}
        other.version = self.version
        return other


# --- BUILD ---

class _GraphBuilder:
    def __init__(self, spec: ArchitectureSpec):
        self.spec = spec
        self.nodes: List[LayerNode] = []
        self.shapes: Dict[str, Tuple[int, ...]] = {}

    def add(self, name: str, kind: NodeKind, inputs: Sequence[str], **attrs) -> str:
        node = LayerNode(name=name, kind=kind, inputs=list(inputs), **attrs)
        node.out_shape = self._trace(node)
        self.shapes[name] = node.out_shape
        self.nodes.append(node)
        return name

    def conv_relu(self, name: str, src: str, filters: int, kernel: int) -> str:
        self.add(name, "conv", [src], filters=filters, kernel=kernel, padding="same")
        return self.add(f"{name}_relu", "relu", [name])

    def _trace(self, node: LayerNode) -> Tuple[int, ...]:
        if node.kind == "input":
            s = self.spec.input_size
            return (s, s, 1)
        ins = [self.shapes[i] for i in node.inputs]
        x = ins[0]
        if node.kind == "conv":
            return (x[0], x[1], node.filters)
        if node.kind in ("relu", "batchnorm", "dropout"):
            return x
        if node.kind == "maxpool":
            h, _, _ = layers._pool_geometry(x[0], node.window, node.stride, node.padding)
            w, _, _ = layers._pool_geometry(x[1], node.window, node.stride, node.padding)
            return (h, w, x[2])
        if node.kind == "concat":
            if any(s[:2] != x[:2] for s in ins):
                raise ShapeError(f"Concat '{node.name}' inputs disagree spatially: {ins}.")
            return (x[0], x[1], sum(s[2] for s in ins))
        if node.kind == "flatten":
            return (int(np.prod(x)),)
        if node.kind == "dense":
            return (node.units,)
        raise ShapeError(f"Unknown node kind '{node.kind}'.")


def build_graph(spec: ArchitectureSpec) -> ModelGraph:
    b = _GraphBuilder(spec)
    x = b.add("input", "input", [])

    # Stem: two same-padded convs, batch norm, 2x2 pooling
    x = b.conv_relu("conv1", x, spec.stem_filters, spec.stem_kernel)
    x = b.conv_relu("conv2", x, spec.stem_filters, spec.stem_kernel)
    x = b.add("bn1", "batchnorm", [x])
    x = b.add("pool1", "maxpool", [x], window=2, stride=2, padding="valid")

    if spec.use_inception:
        w3, w5, w1, wp = spec.inception_widths
        a = b.conv_relu("inc_a_reduce", x, w3, 1)
        a = b.conv_relu("inc_a_conv", a, w3, 3)
        c5 = b.conv_relu("inc_b_reduce", x, w5, 1)
        c5 = b.conv_relu("inc_b_conv", c5, w5, 5)
        c1 = b.conv_relu("inc_c_conv", x, w1, 1)
        d = b.add("inc_d_pool", "maxpool", [x], window=3, stride=1, padding="same")
        d = b.conv_relu("inc_d_conv", d, wp, 3)
        x = b.add("inc_concat", "concat", [a, c5, c1, d])
    x = b.add("inc_relu", "relu", [x])

    # Rear blocks: conv -> pool -> batch norm -> pool
    for k, filters in enumerate(spec.rear_filters, start=1):
        x = b.conv_relu(f"block{k}_conv", x, filters, 3)
        x = b.add(f"block{k}_pool_a", "maxpool", [x], window=2, stride=2, padding="valid")
        x = b.add(f"block{k}_bn", "batchnorm", [x])
        x = b.add(f"block{k}_pool_b", "maxpool", [x], window=2, stride=2, padding="valid")

    x = b.add("flatten", "flatten", [x])
    for k, units in enumerate(spec.dense_widths, start=1):
        b.add(f"dense{k}", "dense", [x], units=units)
        x = b.add(f"dense{k}_relu", "relu", [f"dense{k}"])
        if k == spec.dropout_after and spec.dropout_rate > 0:
            x = b.add(f"dense{k}_dropout", "dropout", [x], rate=spec.dropout_rate)
    out = b.add("logits", "dense", [x], units=spec.n_classes)

    graph = ModelGraph(spec=spec, nodes=b.nodes, output=out)
    _assert_trace(graph)
    return graph


def _assert_trace(graph: ModelGraph) -> None:
    spec = graph.spec
    s = spec.input_size
    expected = {"input": (s, s, 1), "pool1": (s // 2, s // 2, spec.stem_filters),
                "logits": (spec.n_classes,)}
    if spec.use_inception:
        expected["inc_concat"] = (s // 2, s // 2, spec.inception_channels)
    size = s // 2
    for k, filters in enumerate(spec.rear_filters, start=1):
        size = size // 4
        expected[f"block{k}_pool_b"] = (size, size, filters)
    for name, shape in expected.items():
        actual = graph.node(name).out_shape
        if actual != shape:
            raise ShapeError(f"Static trace: '{name}' is {actual}, expected {shape}.")


def init_params(graph: ModelGraph, seed: int,
                precision: Precision = Precision.STANDARD) -> ParamStore:
    """He-normal kernels, zero biases, identity batch norm; drawn in node order."""
    rng = make_rng(seed)
    store = ParamStore(precision)
    shapes = {n.name: n.out_shape for n in graph.nodes}
    for node in graph.nodes:
        in_shape = shapes[node.inputs[0]] if node.inputs else None
        if node.kind == "conv":
            k, cin = node.kernel, in_shape[-1]
            store.add(f"{node.name}.kernel", he_init((k, k, cin, node.filters), k * k * cin, rng, precision))
            store.add(f"{node.name}.bias", create((node.filters,), 0.0, precision))
        elif node.kind == "dense":
            n_in = in_shape[0]
            kernel = he_init((n_in, node.units), n_in, rng, precision)
            if node.name == graph.output:
                # keeps the initial softmax near uniform
                kernel *= kernel.dtype.type(graph.spec.logit_init_gain)
            store.add(f"{node.name}.kernel", kernel)
            store.add(f"{node.name}.bias", create((node.units,), 0.0, precision))
        elif node.kind == "batchnorm":
            c = in_shape[-1]
            store.add(f"{node.name}.gamma", create((c,), 1.0, precision))
            store.add(f"{node.name}.beta", create((c,), 0.0, precision))
            store.add(f"{node.name}.running_mean", create((c,), 0.0, precision), buffer=True)
            store.add(f"{node.name}.running_var", create((c,), 1.0, precision), buffer=True)
    return store


def build_akhcrnet(seed: int, spec: Optional[ArchitectureSpec] = None,
                   precision: Precision = Precision.STANDARD) -> Tuple[ModelGraph, ParamStore]:
    graph = build_graph(spec or ArchitectureSpec())
    store = init_params(graph, seed, precision)
    logger.debug(f"Built AKHCRNet with {store.parameter_count()} parameters.")
    return graph, store


# --- FORWARD / BACKWARD ---

class ForwardCache(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    mode: Literal["train", "infer"]
    store_version: int
    values: Dict[str, Tensor] = Field(default_factory=dict)
    aux: Dict[str, object] = Field(default_factory=dict)
    consumed: bool = False


def _conv_params(store: ParamStore, name: str) -> layers.ConvParams:
    return layers.ConvParams(kernel=store.params[f"{name}.kernel"], bias=store.params[f"{name}.bias"])


def _dense_params(store: ParamStore, name: str) -> layers.DenseParams:
    return layers.DenseParams(weight=store.params[f"{name}.kernel"], bias=store.params[f"{name}.bias"])


def _bn_params(store: ParamStore, name: str) -> layers.BatchNormParams:
    return layers.BatchNormParams(
        gamma=store.params[f"{name}.gamma"], beta=store.params[f"{name}.beta"],
        running_mean=store.buffers[f"{name}.running_mean"],
        running_var=store.buffers[f"{name}.running_var"],
    )


def forward(graph: ModelGraph, store: ParamStore, images: Tensor,
            mode: Literal["train", "infer"] = "infer",
            rng: Optional[np.random.Generator] = None) -> Tuple[Tensor, ForwardCache]:
    """
    Runs the graph and returns pre-softmax logits plus the cache backward needs.
    Train mode commits batch-norm running statistics to the store.
    """
    expected = graph.node("input").out_shape
    if images.ndim != 4 or images.shape[1:] != expected:
        raise ShapeError(f"Expected images of shape (N, {', '.join(map(str, expected))}), got {images.shape}.")
    images = images.astype(store.precision.dtype, copy=False)
    cache = ForwardCache(mode=mode, store_version=store.version)
    values = cache.values

    for node in graph.nodes:
        ins = [values[i] for i in node.inputs]
        if node.kind == "input":
            out = images
        elif node.kind == "conv":
            out = layers.conv2d_forward(ins[0], _conv_params(store, node.name))
        elif node.kind == "relu":
            out = layers.relu(ins[0])
        elif node.kind == "batchnorm":
            out, bn_cache, running = layers.batchnorm_forward(ins[0], _bn_params(store, node.name), mode)
            cache.aux[node.name] = bn_cache
            if running is not None:
                store.buffers[f"{node.name}.running_mean"] = running[0]
                store.buffers[f"{node.name}.running_var"] = running[1]
        elif node.kind == "maxpool":
            out, amap = layers.maxpool_forward(ins[0], node.window, node.stride, node.padding)
            cache.aux[node.name] = amap
        elif node.kind == "concat":
            out = layers.concat_channels(ins)
        elif node.kind == "flatten":
            out = layers.flatten(ins[0])
        elif node.kind == "dense":
            out = layers.dense_forward(ins[0], _dense_params(store, node.name))
        elif node.kind == "dropout":
            out, mask = layers.dropout(ins[0], node.rate, mode, rng)
            cache.aux[node.name] = mask
        else:
            raise ShapeError(f"Unknown node kind '{node.kind}'.")

        if out.shape[1:] != node.out_shape:
            raise ShapeError(f"Node '{node.name}' produced {out.shape[1:]}, expected {node.out_shape}.")
        values[node.name] = out

    return values[graph.output], cache


def backward(graph: ModelGraph, store: ParamStore, cache: ForwardCache, labels: Tensor,
             loss_cfg: LossConfig) -> Tuple[LossReport, Dict[str, Tensor]]:
    """Gradient of the regularized loss for every parameter."""
    if cache.mode != "train":
        raise UsageError("backward needs a cache from a train-mode forward pass.")
    if cache.consumed or cache.store_version != store.version:
        raise UsageError("Stale forward cache: parameters changed or cache already used.")
    cache.consumed = True

    values = cache.values
    logits = values[graph.output]
    report, logit_grad = loss_and_logit_grad(logits, labels, store.params, loss_cfg)

    grads: Dict[str, Tensor] = {}
    upstream: Dict[str, Tensor] = {graph.output: logit_grad}

    def push(name: str, g: Tensor) -> None:
        if name in upstream:
            upstream[name] = upstream[name] + g
        else:
            upstream[name] = g

    for node in reversed(graph.nodes):
        if node.kind == "input":
            continue
        g = upstream.pop(node.name)
        x = values[node.inputs[0]]
        if node.kind == "conv":
            lg = layers.conv2d_backward(x, _conv_params(store, node.name), g)
            grads[f"{node.name}.kernel"] = lg.params["kernel"]
            grads[f"{node.name}.bias"] = lg.params["bias"]
            push(node.inputs[0], lg.input)
        elif node.kind == "relu":
            push(node.inputs[0], layers.relu_backward(x, g))
        elif node.kind == "batchnorm":
            lg = layers.batchnorm_backward(cache.aux[node.name], g)
            grads[f"{node.name}.gamma"] = lg.params["gamma"]
            grads[f"{node.name}.beta"] = lg.params["beta"]
            push(node.inputs[0], lg.input)
        elif node.kind == "maxpool":
            push(node.inputs[0], layers.maxpool_backward(cache.aux[node.name], g))
        elif node.kind == "concat":
            sizes = [values[i].shape[-1] for i in node.inputs]
            for name, part in zip(node.inputs, layers.split_channels(g, sizes)):
                push(name, part)
        elif node.kind == "flatten":
            push(node.inputs[0], layers.unflatten(g, x.shape))
        elif node.kind == "dense":
            lg = layers.dense_backward(x, _dense_params(store, node.name), g)
            grads[f"{node.name}.kernel"] = lg.params["kernel"]
            grads[f"{node.name}.bias"] = lg.params["bias"]
            push(node.inputs[0], lg.input)
        elif node.kind == "dropout":
            push(node.inputs[0], layers.dropout_backward(cache.aux[node.name], node.rate, g))

    for name, g in l2_grads(store.params, loss_cfg, logits.shape[0]).items():
        grads[name] = grads[name] + g

    return report, {name: grads[name] for name in store.params}


# --- PREDICTION ---

def predict_proba(graph: ModelGraph, store: ParamStore, images: Tensor) -> Tensor:
    logits, _ = forward(graph, store, images, mode="infer")
    return softmax(logits.astype(np.float64))


def predict(graph: ModelGraph, store: ParamStore, image: Tensor, topk: int = 5,
            class_names: Optional[Sequence[str]] = None) -> List[RankedClass]:
    """Top-k (class, probability) pairs for one preprocessed (S, S, 1) image."""
    n_classes = graph.spec.n_classes
    if not 1 <= topk <= n_classes:
        raise RangeError(f"topk must be in 1..{n_classes}, got {topk}.")
    names = list(class_names) if class_names is not None else [str(i) for i in range(n_classes)]
    probs = predict_proba(graph, store, image[None, ...])[0]
    order = np.argsort(-probs, kind="stable")[:topk]
    return [RankedClass(rank=r, class_id=int(c), class_name=names[c], probability=float(probs[c]))
            for r, c in enumerate(order, start=1)]


# --- CHECKPOINTING ---

def make_checkpoint(graph: ModelGraph, store: ParamStore, state: Optional[AdamState],
                    epoch: int, class_names: Sequence[str]) -> Checkpoint:
    return Checkpoint(
        params={k: v.copy() for k, v in store.params.items()},
        buffers={k: v.copy() for k, v in store.buffers.items()},
        adam_t=state.t if state else 0,
        adam_beta1=state.beta1 if state else 0.9,
        adam_beta2=state.beta2 if state else 0.999,
        adam_eps=state.eps if state else 1e-8,
        adam_m={k: v.copy() for k, v in state.m.items()} if state else {},
        adam_v={k: v.copy() for k, v in state.v.items()} if state else {},
        epoch=epoch, class_names=list(class_names), architecture=graph.spec,
        precision=store.precision.value,
    )


def restore_checkpoint(ckpt: Checkpoint, path: Optional[Union[str, Path]] = None
                       ) -> Tuple[ModelGraph, ParamStore, AdamState]:
    """Rebuilds the graph from the embedded architecture and loads every tensor."""
    graph = build_graph(ckpt.architecture)
    precision = Precision(ckpt.precision)
    store = init_params(graph, seed=0, precision=precision)
    missing = set(store.params) - set(ckpt.params) | set(store.buffers) - set(ckpt.buffers)
    if missing:
        raise FormatError(f"Checkpoint lacks tensors: {sorted(missing)[:5]}", path)
    for name, value in list(ckpt.params.items()) + list(ckpt.buffers.items()):
        try:
            store.assign(name, value)
        except KeyError:
            raise FormatError(f"Checkpoint tensor '{name}' is not part of the architecture", path)
        except ShapeError as e:
            raise FormatError(str(e), path)

    state = AdamState(ckpt.adam_beta1, ckpt.adam_beta2, ckpt.adam_eps)
    state.t = ckpt.adam_t
    state.m = {k: v.copy() for k, v in ckpt.adam_m.items()}
    state.v = {k: v.copy() for k, v in ckpt.adam_v.items()}
    return graph, store, state
