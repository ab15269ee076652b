"""
Dense float64 tensors with reverse-mode automatic differentiation.

A Graph records every operation of one forward pass as an append-only list
of nodes. backward() walks that list in reverse, accumulating gradients at
fan-out nodes, and writes parameter gradients into a ParamStore. A graph
supports exactly one backward pass.
"""

import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from .errors import (
    DegenerateProbabilityError,
    DimensionError,
    GraphStateError,
    LabelError,
    NonFiniteError,
)

logger = logging.getLogger(__name__)

LOG_CLAMP = 1e-300
SIMPLEX_TOL = 1e-9

BackwardFn = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


@dataclass
class _Node:
    op: str
    inputs: Tuple[int, ...]
    backward: Optional[BackwardFn] = None
    param_name: Optional[str] = None


class Tensor:
    """A value flowing through a Graph. Read the numbers through .data"""

    __slots__ = ("data", "graph", "node_id")

    def __init__(self, data: np.ndarray, graph: "Graph", node_id: int):
        self.data = data
        self.graph = graph
        self.node_id = node_id

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        if self.data.size != 1:
            raise DimensionError(f"item() needs a single element, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def __repr__(self):
        return f"Tensor(shape={self.shape}, node={self.node_id})"


class ParamStore:
    """Ordered name -> value map with a same-shaped gradient buffer per entry"""

    def __init__(self):
        self._values: Dict[str, np.ndarray] = {}
        self._grads: Dict[str, np.ndarray] = {}

    def add(self, name: str, value) -> np.ndarray:
        if name in self._values:
            raise ValueError(f"Duplicate parameter name: {name}")
        array = np.array(value, dtype=np.float64)
        if array.size == 0 or any(extent < 1 for extent in array.shape):
            raise DimensionError(f"Parameter {name} has empty shape {array.shape}")
        self._values[name] = array
        self._grads[name] = np.zeros_like(array)
        return array

    def __contains__(self, name: str) -> bool:
        return name in self._values

    def __len__(self) -> int:
        return len(self._values)

    def __iter__(self) -> Iterator[str]:
        return iter(self._values)

    def names(self) -> List[str]:
        return list(self._values)

    def items(self):
        return self._values.items()

    def value(self, name: str) -> np.ndarray:
        return self._values[name]

    def grad(self, name: str) -> np.ndarray:
        return self._grads[name]

    def grads(self) -> Dict[str, np.ndarray]:
        return dict(self._grads)

    def set_value(self, name: str, value) -> None:
        array = np.array(value, dtype=np.float64)
        if array.shape != self._values[name].shape:
            raise DimensionError(
                f"Parameter {name}: new value shape {array.shape} != stored shape {self._values[name].shape}"
            )
        self._values[name] = array

    def set_grad(self, name: str, grad) -> None:
        array = np.array(grad, dtype=np.float64)
        if array.shape != self._values[name].shape:
            raise DimensionError(
                f"Gradient for {name}: shape {array.shape} != parameter shape {self._values[name].shape}"
            )
        self._grads[name] = array

    def zero_grad(self) -> None:
        for name, value in self._values.items():
            self._grads[name] = np.zeros_like(value)

    def shapes(self) -> Dict[str, Tuple[int, ...]]:
        return {name: value.shape for name, value in self._values.items()}

    def num_elements(self) -> int:
        return sum(value.size for value in self._values.values())

    def copy(self) -> "ParamStore":
        clone = ParamStore()
        for name, value in self._values.items():
            clone._values[name] = value.copy()
            clone._grads[name] = self._grads[name].copy()
        return clone


class Graph:
    """Append-only record of one forward pass"""

    def __init__(self):
        self._nodes: List[_Node] = []
        self._values: List[np.ndarray] = []
        self._params: Dict[str, int] = {}
        self._grads: Optional[List[Optional[np.ndarray]]] = None

    @property
    def consumed(self) -> bool:
        return self._grads is not None

    def __len__(self) -> int:
        return len(self._nodes)

    def constant(self, value) -> Tensor:
        """A leaf that receives no parameter gradient (inputs, fixed weights)"""
        array = np.array(value, dtype=np.float64)
        return self._record("constant", array, (), None)

    def param(self, store: ParamStore, name: str) -> Tensor:
        """The leaf bound to a stored parameter; one leaf per name per graph"""
        if name in self._params:
            node_id = self._params[name]
            return Tensor(self._values[node_id], self, node_id)
        tensor = self._record("param", store.value(name), (), None)
        self._nodes[tensor.node_id].param_name = name
        self._params[name] = tensor.node_id
        return tensor

    def param_names(self) -> List[str]:
        return list(self._params)

    def grad(self, tensor: Tensor) -> np.ndarray:
        """Gradient of the loss w.r.t. any node, available after backward()"""
        if self._grads is None:
            raise GraphStateError("Gradients are only available after backward()")
        g = self._grads[tensor.node_id]
        return np.zeros_like(tensor.data) if g is None else g

    def _record(self, op: str, value: np.ndarray, inputs: Tuple[Tensor, ...], backward: Optional[BackwardFn]) -> Tensor:
        if self._grads is not None:
            raise GraphStateError(f"Cannot record '{op}' on a graph that already ran backward()")
        for tensor in inputs:
            if tensor.graph is not self:
                raise GraphStateError(f"Operand of '{op}' belongs to a different graph")
        if not np.all(np.isfinite(value)):
            raise NonFiniteError(f"Operation '{op}' produced non-finite values")
        node_id = len(self._nodes)
        self._nodes.append(_Node(op, tuple(t.node_id for t in inputs), backward))
        self._values.append(value)
        return Tensor(value, self, node_id)


def _record(op: str, value: np.ndarray, inputs: Sequence[Tensor], backward: BackwardFn) -> Tensor:
    return inputs[0].graph._record(op, value, tuple(inputs), backward)


def _swap(x: np.ndarray) -> np.ndarray:
    return np.swapaxes(x, -1, -2)


# Operations


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product; rank-3 operands multiply per leading batch index"""
    if a.ndim not in (2, 3) or a.ndim != b.ndim or a.shape[-1] != b.shape[-2] or a.shape[:-2] != b.shape[:-2]:
        raise DimensionError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    av, bv = a.data, b.data

    def backward(g):
        return g @ _swap(bv), _swap(av) @ g

    return _record("matmul", av @ bv, (a, b), backward)


def transpose(a: Tensor) -> Tensor:
    """Swap the last two axes"""
    if a.ndim < 2:
        raise DimensionError(f"transpose: needs rank >= 2, got shape {a.shape}")

    def backward(g):
        return (_swap(g),)

    return _record("transpose", _swap(a.data), (a,), backward)


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum; a rank-1 b is added to every row of a (bias)"""
    if a.shape == b.shape:
        def backward(g):
            return g, g
    elif b.ndim == 1 and a.ndim >= 1 and a.shape[-1] == b.shape[0]:
        width = b.shape[0]

        def backward(g):
            return g, g.reshape(-1, width).sum(axis=0)
    else:
        raise DimensionError(f"add: incompatible shapes {a.shape} and {b.shape}")
    return _record("add", a.data + b.data, (a, b), backward)


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise product of equally shaped tensors"""
    if a.shape != b.shape:
        raise DimensionError(f"mul: incompatible shapes {a.shape} and {b.shape}")
    av, bv = a.data, b.data

    def backward(g):
        return g * bv, g * av

    return _record("mul", av * bv, (a, b), backward)


def scale(a: Tensor, factor: float) -> Tensor:
    factor = float(factor)

    def backward(g):
        return (g * factor,)

    return _record("scale", a.data * factor, (a,), backward)


def linear(x: Tensor, w: Tensor, b: Optional[Tensor] = None) -> Tensor:
    """Row-wise affine map x·wᵀ (+ b) for w of shape (out, in)"""
    out = matmul(x, transpose(w))
    return out if b is None else add(out, b)


def concat(parts: Sequence[Tensor], axis: int = -1) -> Tensor:
    """Concatenate along an axis; the backward pass splits at the same offsets"""
    if not parts:
        raise DimensionError("concat: empty part list")
    ndim = parts[0].ndim
    if ndim == 0:
        raise DimensionError("concat: parts must have rank >= 1")
    axis = axis % ndim
    for part in parts:
        if part.ndim != ndim or part.shape[:axis] + part.shape[axis + 1:] != parts[0].shape[:axis] + parts[0].shape[axis + 1:]:
            raise DimensionError(
                f"concat: part shape {part.shape} does not match {parts[0].shape} outside axis {axis}"
            )
    offsets = np.cumsum([p.shape[axis] for p in parts])[:-1]

    def backward(g):
        return np.split(g, offsets, axis=axis)

    return _record("concat", np.concatenate([p.data for p in parts], axis=axis), tuple(parts), backward)


def stack(parts: Sequence[Tensor], axis: int = 1) -> Tensor:
    """Stack equally shaped tensors along a new axis"""
    if not parts:
        raise DimensionError("stack: empty part list")
    for part in parts:
        if part.shape != parts[0].shape:
            raise DimensionError(f"stack: part shape {part.shape} != {parts[0].shape}")
    count = len(parts)

    def backward(g):
        return [np.take(g, i, axis=axis) for i in range(count)]

    return _record("stack", np.stack([p.data for p in parts], axis=axis), tuple(parts), backward)


def reshape(a: Tensor, shape: Tuple[int, ...]) -> Tensor:
    shape = tuple(shape)
    if int(np.prod(shape)) != a.data.size:
        raise DimensionError(f"reshape: cannot view {a.shape} as {shape}")
    original = a.shape

    def backward(g):
        return (g.reshape(original),)

    return _record("reshape", a.data.reshape(shape), (a,), backward)


def relu(x: Tensor) -> Tensor:
    """max(0, x); the subgradient at exactly 0 is 0"""
    mask = x.data > 0

    def backward(g):
        return (np.where(mask, g, 0.0),)

    return _record("relu", np.where(mask, x.data, 0.0), (x,), backward)


def softmax_array(z: np.ndarray) -> np.ndarray:
    """Row-max stabilized softmax over the last axis"""
    shifted = z - np.max(z, axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / np.sum(e, axis=-1, keepdims=True)


def softmax(z: Tensor) -> Tensor:
    """Softmax over the last axis"""
    if z.ndim == 0 or z.shape[-1] < 1:
        raise DimensionError(f"softmax: needs a non-empty last axis, got shape {z.shape}")
    p = softmax_array(z.data)

    def backward(g):
        return (p * (g - np.sum(g * p, axis=-1, keepdims=True)),)

    return _record("softmax", p, (z,), backward)


def _check_labels(y, rows: int, n_classes: int) -> np.ndarray:
    labels = np.asarray(y, dtype=np.int64).reshape(-1)
    if labels.shape[0] != rows:
        raise DimensionError(f"expected {rows} labels, got {labels.shape[0]}")
    if np.any(labels < 0) or np.any(labels >= n_classes):
        bad = labels[(labels < 0) | (labels >= n_classes)][0]
        raise LabelError(f"class index {bad} outside [0, {n_classes})")
    return labels


def _as_rows(t: Tensor, op: str) -> Tuple[int, int]:
    if t.ndim == 1:
        return 1, t.shape[0]
    if t.ndim == 2:
        return t.shape
    raise DimensionError(f"{op}: expected a vector or (B, N) matrix, got shape {t.shape}")


def cross_entropy_with_logits(z: Tensor, y) -> Tensor:
    """
    Per-row −log softmax(z)[y], fused for a stable backward (P − onehot(y)).

    z has shape (B, N) (or (N,) for one sample); the result has shape (B,) (or ()).
    """
    rows, n = _as_rows(z, "cross_entropy_with_logits")
    labels = _check_labels(y, rows, n)
    logits = z.data.reshape(rows, n)
    peak = np.max(logits, axis=1, keepdims=True)
    lse = peak[:, 0] + np.log(np.sum(np.exp(logits - peak), axis=1))
    losses = lse - logits[np.arange(rows), labels]
    p = softmax_array(logits)
    out_shape = () if z.ndim == 1 else (rows,)

    def backward(g):
        grad = p.copy()
        grad[np.arange(rows), labels] -= 1.0
        return ((grad * np.reshape(g, (rows, 1))).reshape(z.shape),)

    return _record("cross_entropy_with_logits", losses.reshape(out_shape), (z,), backward)


def cross_entropy(p: Tensor, y) -> Tensor:
    """
    Per-row −log P[y] on probability vectors (non-fused path).

    P[y] == 0 is rejected; otherwise the log argument is clamped at 1e-300.
    """
    rows, n = _as_rows(p, "cross_entropy")
    labels = _check_labels(y, rows, n)
    probs = p.data.reshape(rows, n)
    if np.any(probs < -SIMPLEX_TOL) or np.any(np.abs(np.sum(probs, axis=1) - 1.0) > SIMPLEX_TOL):
        raise DegenerateProbabilityError("cross_entropy: input rows are not on the probability simplex")
    picked = probs[np.arange(rows), labels]
    if np.any(picked == 0.0):
        raise DegenerateProbabilityError("cross_entropy: probability of the true class is exactly 0")
    clamped = np.maximum(picked, LOG_CLAMP)
    out_shape = () if p.ndim == 1 else (rows,)

    def backward(g):
        grad = np.zeros((rows, n))
        grad[np.arange(rows), labels] = -np.reshape(g, rows) / clamped
        return (grad.reshape(p.shape),)

    return _record("cross_entropy", (-np.log(clamped)).reshape(out_shape), (p,), backward)


def convex_combination(weights: Tensor, parts: Sequence[Tensor]) -> Tensor:
    """Σ_j weights[:, j] · parts[j], summed left to right"""
    if weights.ndim != 2 or weights.shape[1] != len(parts):
        raise DimensionError(f"convex_combination: weights shape {weights.shape} for {len(parts)} parts")
    for part in parts:
        if part.ndim != 2 or part.shape != parts[0].shape or part.shape[0] != weights.shape[0]:
            raise DimensionError(
                f"convex_combination: part shape {part.shape} incompatible with weights {weights.shape}"
            )
    w = weights.data
    values = [part.data for part in parts]
    out = w[:, 0:1] * values[0]
    for j in range(1, len(values)):
        out = out + w[:, j:j + 1] * values[j]

    def backward(g):
        grad_w = np.stack([np.sum(g * v, axis=1) for v in values], axis=1)
        return [grad_w] + [w[:, j:j + 1] * g for j in range(len(values))]

    return _record("convex_combination", out, (weights,) + tuple(parts), backward)


def sum_all(a: Tensor) -> Tensor:
    shape = a.shape

    def backward(g):
        return (np.full(shape, float(g)),)

    return _record("sum", np.array(np.sum(a.data)), (a,), backward)


def mean(a: Tensor) -> Tensor:
    shape = a.shape
    count = a.data.size

    def backward(g):
        return (np.full(shape, float(g) / count),)

    return _record("mean", np.array(np.sum(a.data) / count), (a,), backward)


# Differentiation


def backward(graph: Graph, loss: Tensor, store: Optional[ParamStore] = None) -> Dict[str, np.ndarray]:
    """
    Reverse pass from a scalar loss.

    Every parameter of `store` ends up holding ∂loss/∂param (zeros for
    parameters the graph never touched). Returns the same mapping.
    """
    if graph.consumed:
        raise GraphStateError("backward() already ran on this graph")
    if loss.graph is not graph:
        raise GraphStateError("loss tensor belongs to a different graph")
    if loss.data.size != 1:
        raise GraphStateError(f"backward() needs a scalar loss, got shape {loss.shape}")

    grads: List[Optional[np.ndarray]] = [None] * len(graph._nodes)
    grads[loss.node_id] = np.ones_like(loss.data)

    for node_id in range(loss.node_id, -1, -1):
        g = grads[node_id]
        node = graph._nodes[node_id]
        if g is None or node.backward is None:
            continue
        for input_id, input_grad in zip(node.inputs, node.backward(g)):
            if input_grad is None:
                continue
            if not np.all(np.isfinite(input_grad)):
                raise NonFiniteError(f"Gradient through '{node.op}' (node {node_id}) is non-finite")
            previous = grads[input_id]
            grads[input_id] = input_grad if previous is None else previous + input_grad

    graph._grads = grads

    result: Dict[str, np.ndarray] = {}
    if store is not None:
        store.zero_grad()
        for name, node_id in graph._params.items():
            if name in store and grads[node_id] is not None:
                store.set_grad(name, grads[node_id])
        result = store.grads()
    else:
        for name, node_id in graph._params.items():
            g = grads[node_id]
            result[name] = np.zeros_like(graph._values[node_id]) if g is None else g
    return result


def finite_diff_gradient(f: Callable[[ParamStore], float], store: ParamStore, h: float = 1e-6,
                         names: Optional[Sequence[str]] = None) -> Dict[str, np.ndarray]:
    """Central differences (f(θ+h·e) − f(θ−h·e)) / 2h for every coordinate"""
    if h <= 0:
        raise ValueError(f"step h must be positive, got {h}")
    result: Dict[str, np.ndarray] = {}
    for name in (names if names is not None else store.names()):
        original = store.value(name).copy()
        grad = np.zeros_like(original)
        for index in np.ndindex(original.shape):
            shifted = original.copy()
            shifted[index] = original[index] + h
            store.set_value(name, shifted)
            f_plus = float(f(store))
            shifted[index] = original[index] - h
            store.set_value(name, shifted)
            f_minus = float(f(store))
            if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
                store.set_value(name, original)
                raise NonFiniteError(f"finite differences: f is non-finite at {name}{list(index)}")
            grad[index] = (f_plus - f_minus) / (2.0 * h)
        store.set_value(name, original)
        result[name] = grad
    return result


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-3) -> np.ndarray:
    """|a − b| / max(|a|, |b|, floor), elementwise"""
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return np.abs(analytic - numeric) / denom


@dataclass
class GradCheckReport:
    """Outcome of comparing backward() against finite differences"""
    errors: Dict[str, float] = field(default_factory=dict)
    h: float = 1e-6
    tolerance: float = 1e-5

    @property
    def worst_parameter(self) -> Optional[str]:
        if not self.errors:
            return None
        return max(self.errors, key=self.errors.get)

    @property
    def worst_error(self) -> float:
        return max(self.errors.values()) if self.errors else 0.0

    @property
    def passed(self) -> bool:
        return self.worst_error < self.tolerance


def check_gradients(loss_fn: Callable[[ParamStore, Graph], Tensor], store: ParamStore, h: float = 1e-6,
                    tolerance: float = 1e-5, floor: float = 1e-3) -> GradCheckReport:
    """Compare analytic and numeric gradients of loss_fn for every parameter"""
    graph = Graph()
    analytic = backward(graph, loss_fn(store, graph), store)
    numeric = finite_diff_gradient(lambda s: loss_fn(s, Graph()).item(), store, h)
    report = GradCheckReport(h=h, tolerance=tolerance)
    for name in store.names():
        report.errors[name] = float(np.max(relative_error(analytic[name], numeric[name], floor)))
        logger.debug(f"gradcheck {name}: worst relative error {report.errors[name]:.3e}")
    return report
