"""
Multi-modal fusion attention.

Each head projects the image feature and the metadata feature into a
two-token query/key/value set, runs a 2×2 softmax attention over the two
tokens and mixes the values. The flattened head outputs are re-projected,
passed through a linear+ReLU layer and added to a bias-free skip projection
of the raw concatenated features.
"""

from dataclasses import dataclass
from typing import List, Optional

import numpy as np

from ..autodiff import (
    Graph,
    ParamStore,
    Tensor,
    add,
    concat,
    linear,
    matmul,
    relu,
    reshape,
    scale,
    softmax,
    stack,
    transpose,
)
from ..config import MMFAVariant, ModelConfig
from ..errors import DimensionError
from .layers import glorot_uniform

PREFIX = "mmfa"
PROJECTIONS = ("wq_img", "wk_img", "wv_img", "wq_meta", "wk_meta", "wv_meta")


@dataclass
class AttentionOutput:
    values: Tensor   # U_h, (B, 2, d_h); row 0 is the image token
    weights: Tensor  # (B, 2, 2), rows sum to 1


@dataclass
class MMFAOutput:
    fused: Tensor
    attention: List[Tensor]


def head_param(head: int, projection: str) -> str:
    return f"{PREFIX}.head{head}.{projection}"


def init_mmfa_params(store: ParamStore, config: ModelConfig, rng: np.random.Generator) -> None:
    for h in range(config.heads):
        for projection in PROJECTIONS:
            in_dim = config.d_img if projection.endswith("_img") else config.d_meta
            store.add(head_param(h, projection), glorot_uniform(rng, (config.head_dim, in_dim)))
    store.add(f"{PREFIX}.wo", glorot_uniform(rng, (config.d_joint, 2 * config.heads * config.head_dim)))
    store.add(f"{PREFIX}.wskip", glorot_uniform(rng, (config.d_joint, config.d_img + config.d_meta)))
    store.add(f"{PREFIX}.g_w", glorot_uniform(rng, (config.d_joint, config.d_joint)))
    store.add(f"{PREFIX}.g_b", np.zeros(config.d_joint))


def _check_inputs(f_img: Tensor, f_meta: Tensor, config: ModelConfig) -> None:
    if f_img.ndim != 2 or f_img.shape[1] != config.d_img:
        raise DimensionError(f"MMFA image feature shape {f_img.shape}, expected (B, {config.d_img})")
    if f_meta.ndim != 2 or f_meta.shape[1] != config.d_meta:
        raise DimensionError(f"MMFA metadata feature shape {f_meta.shape}, expected (B, {config.d_meta})")
    if f_img.shape[0] != f_meta.shape[0]:
        raise DimensionError(f"MMFA batch sizes differ: {f_img.shape} vs {f_meta.shape}")


def _tokens(graph: Graph, store: ParamStore, f_img: Tensor, f_meta: Tensor, head: int, kind: str) -> Tensor:
    img_row = linear(f_img, graph.param(store, head_param(head, f"w{kind}_img")))
    meta_row = linear(f_meta, graph.param(store, head_param(head, f"w{kind}_meta")))
    return stack([img_row, meta_row], axis=1)


def two_token_attention(graph: Graph, store: ParamStore, f_img: Tensor, f_meta: Tensor, head: int,
                        config: ModelConfig) -> AttentionOutput:
    """U_h = softmax(Q_h K_hᵀ / √d_h) V_h over the [image; metadata] token pair"""
    _check_inputs(f_img, f_meta, config)
    if not 0 <= head < config.heads:
        raise DimensionError(f"head index {head} outside [0, {config.heads})")
    q = _tokens(graph, store, f_img, f_meta, head, "q")
    k = _tokens(graph, store, f_img, f_meta, head, "k")
    v = _tokens(graph, store, f_img, f_meta, head, "v")
    scores = scale(matmul(q, transpose(k)), 1.0 / np.sqrt(config.head_dim))
    weights = softmax(scores)
    return AttentionOutput(values=matmul(weights, v), weights=weights)


def mmfa_forward(graph: Graph, store: ParamStore, f_img: Tensor, f_meta: Tensor, config: ModelConfig,
                 variant: Optional[MMFAVariant] = None) -> MMFAOutput:
    """
    f_IM = W_skip·[f_I ∥ f_M] + g(W_O·concat(vec(U_1) … vec(U_H))), g(x) = ReLU(g_W·x + g_b).

    AttentionOnly drops the skip term, SkipOnly drops the attention term.
    """
    _check_inputs(f_img, f_meta, config)
    variant = variant or config.mmfa_variant
    batch = f_img.shape[0]

    skip = None
    if variant != MMFAVariant.ATTENTION_ONLY:
        skip = linear(concat([f_img, f_meta], axis=-1), graph.param(store, f"{PREFIX}.wskip"))
    if variant == MMFAVariant.SKIP_ONLY:
        return MMFAOutput(fused=skip, attention=[])

    flattened = []
    attention = []
    for h in range(config.heads):
        out = two_token_attention(graph, store, f_img, f_meta, h, config)
        attention.append(out.weights)
        # vec() stacks row-wise: image row, then metadata row
        flattened.append(reshape(out.values, (batch, 2 * config.head_dim)))
    o = linear(concat(flattened, axis=-1), graph.param(store, f"{PREFIX}.wo"))
    attended = relu(linear(o, graph.param(store, f"{PREFIX}.g_w"), graph.param(store, f"{PREFIX}.g_b")))

    fused = attended if skip is None else add(skip, attended)
    return MMFAOutput(fused=fused, attention=attention)
