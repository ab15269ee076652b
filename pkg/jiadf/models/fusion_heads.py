"""Branch classifier heads, the adaptive decision-fusion gate and posterior fusion."""

from dataclasses import dataclass, field
from typing import List, Optional, Union

import numpy as np

from ..autodiff import Graph, ParamStore, Tensor, concat, convex_combination, relu, softmax
from ..config import ModelConfig
from ..errors import DegenerateProbabilityError, DimensionError
from .layers import add_dense, dense, glorot_uniform

# Branch order inside s = [z_I ∥ z_IM ∥ z_M] and alpha
BRANCHES = ("img", "joint", "meta")
FUSE_TOL = 1e-6


@dataclass
class BranchOutputs:
    """Per-sample branch logits and posteriors, gate weights and the fused posterior"""
    p_final: Tensor
    z_img: Optional[Tensor] = None
    z_joint: Optional[Tensor] = None
    z_meta: Optional[Tensor] = None
    p_img: Optional[Tensor] = None
    p_joint: Optional[Tensor] = None
    p_meta: Optional[Tensor] = None
    alpha: Optional[Tensor] = None
    # Logits whose softmax is p_final, when p_final is a single head's posterior
    final_logits: Optional[Tensor] = None
    attention: List[Tensor] = field(default_factory=list)

    def prediction(self) -> np.ndarray:
        return predict(self.p_final.data)


def init_head_params(store: ParamStore, config: ModelConfig, rng: np.random.Generator) -> None:
    add_dense(store, rng, "head_img", config.n_classes, config.d_img)
    add_dense(store, rng, "head_joint", config.n_classes, config.d_joint)
    add_dense(store, rng, "head_meta", config.n_classes, config.d_meta)


def init_gate_params(store: ParamStore, config: ModelConfig, rng: np.random.Generator) -> None:
    """W1 Glorot, b1 = 0; the output layer starts at zero so alpha begins uniform"""
    store.add("gate.l1.w", glorot_uniform(rng, (config.gate_hidden, 3 * config.n_classes)))
    store.add("gate.l1.b", np.zeros(config.gate_hidden))
    store.add("gate.l2.w", np.zeros((3, config.gate_hidden)))
    store.add("gate.l2.b", np.zeros(3))


def _check_feature(name: str, f: Tensor, width: int) -> None:
    if f.ndim != 2 or f.shape[1] != width:
        raise DimensionError(f"{name} feature shape {f.shape}, expected (B, {width})")


def branch_logits(graph: Graph, store: ParamStore, config: ModelConfig, f_img: Optional[Tensor] = None,
                  f_joint: Optional[Tensor] = None, f_meta: Optional[Tensor] = None):
    """Affine head per branch; returns (z_img, z_joint, z_meta), None where the feature is absent"""
    z = []
    for name, f, width in (("head_img", f_img, config.d_img),
                           ("head_joint", f_joint, config.d_joint),
                           ("head_meta", f_meta, config.d_meta)):
        if f is None:
            z.append(None)
            continue
        _check_feature(name, f, width)
        z.append(dense(graph, store, name, f))
    return tuple(z)


def adf_gate(graph: Graph, store: ParamStore, z_img: Tensor, z_joint: Tensor, z_meta: Tensor) -> Tensor:
    """alpha = softmax(W2·ReLU(W1·[z_I ∥ z_IM ∥ z_M] + b1) + b2), columns ordered (I, IM, M)"""
    if not (z_img.shape == z_joint.shape == z_meta.shape) or z_img.ndim != 2:
        raise DimensionError(
            f"adf_gate: branch logits must share a (B, N) shape, got {z_img.shape}, {z_joint.shape}, {z_meta.shape}"
        )
    expected = store.value("gate.l1.w").shape[1]
    if 3 * z_img.shape[1] != expected:
        raise DimensionError(f"adf_gate: 3·N = {3 * z_img.shape[1]} but gate expects {expected} inputs")
    s = concat([z_img, z_joint, z_meta], axis=-1)
    hidden = relu(dense(graph, store, "gate.l1", s))
    return softmax(dense(graph, store, "gate.l2", hidden))


def _check_simplex(name: str, values: np.ndarray) -> None:
    if np.any(values < -FUSE_TOL) or np.any(np.abs(np.sum(values, axis=-1) - 1.0) > FUSE_TOL):
        raise DegenerateProbabilityError(f"fuse_posteriors: {name} is not on the simplex")


def fuse_posteriors(alpha: Tensor, p_img: Tensor, p_joint: Tensor, p_meta: Tensor) -> Tensor:
    """P_final = α_I·P_I + α_IM·P_IM + α_M·P_M"""
    for name, t in (("alpha", alpha), ("P_I", p_img), ("P_IM", p_joint), ("P_M", p_meta)):
        _check_simplex(name, t.data)
    return convex_combination(alpha, [p_img, p_joint, p_meta])


def predict(p_final: Union[np.ndarray, Tensor]) -> np.ndarray:
    """argmax over classes; ties go to the lowest index"""
    values = p_final.data if isinstance(p_final, Tensor) else np.asarray(p_final)
    return np.argmax(values, axis=-1)


def branch_posteriors(z_img: Optional[Tensor], z_joint: Optional[Tensor], z_meta: Optional[Tensor]):
    return tuple(None if z is None else softmax(z) for z in (z_img, z_joint, z_meta))
