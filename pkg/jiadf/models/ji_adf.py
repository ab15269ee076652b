"""
The joint-individual model with adaptive decision fusion.

Two MLP encoders produce the image feature f_I (from the clinical and
dermoscopic blocks) and the metadata feature f_M. Depending on the fusion
variant, a joint feature f_IM is built by MMFA or by a linear map, up to
three classifier heads run, and their posteriors are combined into P_final.
"""

import logging
from typing import Dict, List, Optional, Union

import numpy as np

from ..autodiff import (
    Graph,
    ParamStore,
    Tensor,
    add,
    concat,
    convex_combination,
    cross_entropy,
    cross_entropy_with_logits,
    linear,
    mean,
    mul,
    scale,
    softmax,
)
from ..config import FusionVariant, Modality, ModelConfig, validate_model_config
from ..errors import ConfigError, DimensionError
from .fusion_heads import (
    BranchOutputs,
    adf_gate,
    branch_logits,
    branch_posteriors,
    fuse_posteriors,
    init_gate_params,
    init_head_params,
)
from .layers import add_dense, add_encoder, dense, encoder, glorot_uniform
from .mmfa import init_mmfa_params, mmfa_forward

logger = logging.getLogger(__name__)

# Variants whose auxiliary heads are supervised alongside P_final
AUXILIARY_VARIANTS = frozenset({FusionVariant.JF_CONCAT, FusionVariant.JI_MMFA, FusionVariant.JI_ADF})


def init_params(config: ModelConfig, rng: Union[np.random.Generator, int, None] = None) -> ParamStore:
    """
    Create every parameter group for a configuration.

    Groups a variant never uses are still created so parameter names stay
    stable across variants; they receive zero gradient. The image encoder is
    sized to the image blocks that are present and is omitted when none are.
    """
    errors = validate_model_config(config)
    if errors:
        raise ConfigError(f"Invalid model configuration: {'; '.join(errors)}")
    if rng is None:
        rng = config.seed
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)

    store = ParamStore()
    if config.has_images:
        add_encoder(store, rng, "enc_img", config.image_input_width, config.enc_hidden, config.d_img)
    add_encoder(store, rng, "enc_meta", config.dm_raw, config.enc_hidden, config.d_meta)
    init_mmfa_params(store, config, rng)
    init_head_params(store, config, rng)
    init_gate_params(store, config, rng)
    add_dense(store, rng, "late_concat", config.n_classes, config.d_img + config.d_meta)
    store.add("jf_concat.w", glorot_uniform(rng, (config.d_joint, config.d_img + config.d_meta)))
    logger.debug(f"Initialized {len(store)} parameter arrays ({store.num_elements()} values)")
    return store


def param_group(name: str) -> str:
    return name.split(".", 1)[0]


def group_names(store: ParamStore) -> Dict[str, List[str]]:
    groups: Dict[str, List[str]] = {}
    for name in store.names():
        groups.setdefault(param_group(name), []).append(name)
    return groups


def _block(graph: Graph, batch, attr: str, width: int, label: str) -> Tensor:
    values = getattr(batch, attr, None)
    if values is None:
        raise DimensionError(f"batch is missing the {label} block required by the configured modalities")
    values = np.asarray(values, dtype=np.float64)
    if values.ndim == 1:
        values = values.reshape(1, -1)
    if values.ndim != 2 or values.shape[1] != width:
        raise DimensionError(f"{label} block has shape {values.shape}, expected (B, {width})")
    return graph.constant(values)


def _inputs(graph: Graph, batch, config: ModelConfig):
    image_blocks = []
    if Modality.CLINICAL in config.modalities:
        image_blocks.append(_block(graph, batch, "c", config.dc, "clinical"))
    if Modality.DERMOSCOPIC in config.modalities:
        image_blocks.append(_block(graph, batch, "d", config.dd, "dermoscopic"))
    x_img = None
    if image_blocks:
        x_img = image_blocks[0] if len(image_blocks) == 1 else concat(image_blocks, axis=-1)
    x_meta = _block(graph, batch, "m", config.dm_raw, "metadata") if config.has_metadata else None
    if x_img is not None and x_meta is not None and x_img.shape[0] != x_meta.shape[0]:
        raise DimensionError(f"image and metadata blocks disagree on batch size: {x_img.shape} vs {x_meta.shape}")
    return x_img, x_meta


def forward(store: ParamStore, batch, config: ModelConfig, graph: Optional[Graph] = None) -> BranchOutputs:
    """
    Run the model on a batch (any object with c, d, m arrays of shape (B, width)).

    With a single stream left (no metadata, or no images) the model reduces to
    that stream's encoder and head and P_final is its posterior.
    """
    graph = Graph() if graph is None else graph
    x_img, x_meta = _inputs(graph, batch, config)
    variant = config.fusion_variant

    if x_meta is None:
        f_img = encoder(graph, store, "enc_img", x_img)
        z_img, _, _ = branch_logits(graph, store, config, f_img=f_img)
        p_img = softmax(z_img)
        return BranchOutputs(p_final=p_img, z_img=z_img, p_img=p_img, final_logits=z_img)
    if x_img is None:
        f_meta = encoder(graph, store, "enc_meta", x_meta)
        _, _, z_meta = branch_logits(graph, store, config, f_meta=f_meta)
        p_meta = softmax(z_meta)
        return BranchOutputs(p_final=p_meta, z_meta=z_meta, p_meta=p_meta, final_logits=z_meta)

    f_img = encoder(graph, store, "enc_img", x_img)
    f_meta = encoder(graph, store, "enc_meta", x_meta)

    if variant == FusionVariant.LATE_CONCAT:
        z = dense(graph, store, "late_concat", concat([f_img, f_meta], axis=-1))
        p = softmax(z)
        return BranchOutputs(p_final=p, final_logits=z)

    attention: List[Tensor] = []
    if variant == FusionVariant.JF_CONCAT:
        f_joint = linear(concat([f_img, f_meta], axis=-1), graph.param(store, "jf_concat.w"))
    else:
        mmfa = mmfa_forward(graph, store, f_img, f_meta, config)
        f_joint = mmfa.fused
        attention = mmfa.attention

    if variant == FusionVariant.JF_MMFA:
        _, z_joint, _ = branch_logits(graph, store, config, f_joint=f_joint)
        p_joint = softmax(z_joint)
        return BranchOutputs(p_final=p_joint, z_joint=z_joint, p_joint=p_joint, final_logits=z_joint,
                             attention=attention)

    z_img, z_joint, z_meta = branch_logits(graph, store, config, f_img=f_img, f_joint=f_joint, f_meta=f_meta)
    p_img, p_joint, p_meta = branch_posteriors(z_img, z_joint, z_meta)
    outputs = BranchOutputs(p_final=p_joint, z_img=z_img, z_joint=z_joint, z_meta=z_meta, p_img=p_img,
                            p_joint=p_joint, p_meta=p_meta, attention=attention)

    if variant == FusionVariant.JF_CONCAT:
        outputs.final_logits = z_joint
    elif variant == FusionVariant.JI_MMFA:
        outputs.alpha = graph.constant(np.full((z_img.shape[0], 3), 1.0 / 3.0))
        outputs.p_final = convex_combination(outputs.alpha, [p_img, p_joint, p_meta])
    else:
        outputs.alpha = adf_gate(graph, store, z_img, z_joint, z_meta)
        outputs.p_final = fuse_posteriors(outputs.alpha, p_img, p_joint, p_meta)
    return outputs


def _weighted(ce: Tensor, y: np.ndarray, config: ModelConfig) -> Tensor:
    if config.class_weights is None:
        return ce
    weights = np.asarray(config.class_weights, dtype=np.float64)[y]
    return mul(ce, ce.graph.constant(weights.reshape(ce.shape)))


def uses_auxiliary_losses(outputs: BranchOutputs, config: ModelConfig) -> bool:
    if config.fusion_variant not in AUXILIARY_VARIANTS:
        return False
    return outputs.z_img is not None and outputs.z_joint is not None and outputs.z_meta is not None


def total_loss(outputs: BranchOutputs, y, config: ModelConfig) -> Tensor:
    """
    Per-sample loss, shape (B,).

    CE(P_final, y) plus λ_IM·CE(P_IM, y) + λ_I·CE(P_I, y) + λ_M·CE(P_M, y) for
    the variants that supervise their auxiliary heads. Optional class weights
    multiply every term by w[y].
    """
    y = np.asarray(y, dtype=np.int64).reshape(-1)
    if outputs.final_logits is not None:
        final = cross_entropy_with_logits(outputs.final_logits, y)
    else:
        final = cross_entropy(outputs.p_final, y)
    loss = _weighted(final, y, config)

    if uses_auxiliary_losses(outputs, config):
        for z, weight in ((outputs.z_joint, config.lambda_joint),
                          (outputs.z_img, config.lambda_img),
                          (outputs.z_meta, config.lambda_meta)):
            term = _weighted(cross_entropy_with_logits(z, y), y, config)
            loss = add(loss, scale(term, weight))
    return loss


def batch_loss(store: ParamStore, batch, config: ModelConfig, graph: Optional[Graph] = None) -> Tensor:
    """Mean per-sample total loss over the batch"""
    y = np.asarray(batch.y, dtype=np.int64).reshape(-1)
    if y.size == 0:
        raise DimensionError("batch_loss: empty batch")
    outputs = forward(store, batch, config, graph)
    if outputs.p_final.shape[0] != y.size:
        raise DimensionError(f"batch has {outputs.p_final.shape[0]} samples but {y.size} labels")
    return mean(total_loss(outputs, y, config))


def predict_proba(store: ParamStore, batch, config: ModelConfig) -> np.ndarray:
    """P_final for every sample of the batch, shape (B, N)"""
    return forward(store, batch, config, Graph()).p_final.data
