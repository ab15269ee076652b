"""Parameter initialization and the small dense building blocks shared by the models."""

from typing import Tuple

import numpy as np

from ..autodiff import Graph, ParamStore, Tensor, linear, relu


def glorot_bound(shape: Tuple[int, int]) -> float:
    fan_out, fan_in = shape
    return float(np.sqrt(6.0 / (fan_in + fan_out)))


def glorot_uniform(rng: np.random.Generator, shape: Tuple[int, int]) -> np.ndarray:
    """U(−b, b) with b = √(6 / (fan_in + fan_out)) for a (out, in) matrix"""
    bound = glorot_bound(shape)
    return rng.uniform(-bound, bound, size=shape)


def add_dense(store: ParamStore, rng: np.random.Generator, prefix: str, out_dim: int, in_dim: int,
              bias: bool = True) -> None:
    store.add(f"{prefix}.w", glorot_uniform(rng, (out_dim, in_dim)))
    if bias:
        store.add(f"{prefix}.b", np.zeros(out_dim))


def dense(graph: Graph, store: ParamStore, prefix: str, x: Tensor, bias: bool = True) -> Tensor:
    w = graph.param(store, f"{prefix}.w")
    b = graph.param(store, f"{prefix}.b") if bias else None
    return linear(x, w, b)


def add_encoder(store: ParamStore, rng: np.random.Generator, prefix: str, in_dim: int, hidden: int,
                out_dim: int) -> None:
    """Two-layer MLP encoder: in -> hidden (ReLU) -> out"""
    add_dense(store, rng, f"{prefix}.l1", hidden, in_dim)
    add_dense(store, rng, f"{prefix}.l2", out_dim, hidden)


def encoder(graph: Graph, store: ParamStore, prefix: str, x: Tensor) -> Tensor:
    hidden = relu(dense(graph, store, f"{prefix}.l1", x))
    return dense(graph, store, f"{prefix}.l2", hidden)
