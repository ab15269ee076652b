import numpy as np
import pytest

from jiadf.autodiff import Graph, backward, check_gradients
from jiadf.cli import gradcheck_problem
from jiadf.config import FusionVariant, Modality
from jiadf.errors import ConfigError, DimensionError
from jiadf.models.ji_adf import (
    batch_loss,
    forward,
    group_names,
    init_params,
    predict_proba,
    total_loss,
    uses_auxiliary_losses,
)
from jiadf.models.layers import glorot_bound
from jiadf.models.mmfa import PROJECTIONS, head_param
from jiadf.utils.dataset import Batch

from conftest import tiny_model_config


def _batch(config, rng, size=5, labels=None):
    y = rng.integers(0, config.n_classes, size) if labels is None else np.asarray(labels)
    return Batch(ids=[f"t{i}" for i in range(size)], y=y,
                 c=rng.standard_normal((size, config.dc)),
                 d=rng.standard_normal((size, config.dd)),
                 m=rng.standard_normal((size, config.dm_raw)))


def _softmax(z):
    e = np.exp(z - z.max())
    return e / e.sum()


def _dense(store, prefix, x):
    return store.value(f"{prefix}.w") @ x + store.value(f"{prefix}.b")


def _encoder(store, prefix, x):
    return _dense(store, f"{prefix}.l2", np.maximum(_dense(store, f"{prefix}.l1", x), 0.0))


def _oracle_sample(store, config, c, d, m, y):
    """Single-sample JI-ADF forward and total loss with plain numpy"""
    f_img = _encoder(store, "enc_img", np.concatenate([c, d]))
    f_meta = _encoder(store, "enc_meta", m)
    heads = []
    for h in range(config.heads):
        w = {p: store.value(head_param(h, p)) for p in PROJECTIONS}
        q = np.stack([w["wq_img"] @ f_img, w["wq_meta"] @ f_meta])
        k = np.stack([w["wk_img"] @ f_img, w["wk_meta"] @ f_meta])
        v = np.stack([w["wv_img"] @ f_img, w["wv_meta"] @ f_meta])
        scores = q @ k.T / np.sqrt(config.head_dim)
        a = np.stack([_softmax(row) for row in scores])
        heads.append((a @ v).reshape(-1))
    o = store.value("mmfa.wo") @ np.concatenate(heads)
    f_joint = (store.value("mmfa.wskip") @ np.concatenate([f_img, f_meta])
               + np.maximum(store.value("mmfa.g_w") @ o + store.value("mmfa.g_b"), 0.0))

    z_img = _dense(store, "head_img", f_img)
    z_joint = _dense(store, "head_joint", f_joint)
    z_meta = _dense(store, "head_meta", f_meta)
    hidden = np.maximum(_dense(store, "gate.l1", np.concatenate([z_img, z_joint, z_meta])), 0.0)
    alpha = _softmax(_dense(store, "gate.l2", hidden))
    p_img, p_joint, p_meta = _softmax(z_img), _softmax(z_joint), _softmax(z_meta)
    p_final = alpha[0] * p_img + alpha[1] * p_joint + alpha[2] * p_meta
    loss = (-np.log(p_final[y]) - config.lambda_joint * np.log(p_joint[y])
            - config.lambda_img * np.log(p_img[y]) - config.lambda_meta * np.log(p_meta[y]))
    return p_final, loss


def test_init_is_deterministic(tiny_config):
    a = init_params(tiny_config, 11)
    b = init_params(tiny_config, 11)
    c = init_params(tiny_config, 12)
    assert a.names() == b.names()
    for name in a.names():
        np.testing.assert_array_equal(a.value(name), b.value(name))
    assert any(not np.array_equal(a.value(n), c.value(n)) for n in a.names() if n.endswith(".w"))


def test_init_layout(tiny_config):
    store = init_params(tiny_config, 0)
    np.testing.assert_array_equal(store.value("gate.l2.w"), 0.0)
    np.testing.assert_array_equal(store.value("gate.l2.b"), 0.0)
    np.testing.assert_array_equal(store.value("enc_img.l1.b"), 0.0)

    # image encoder input is c ∥ d: fan_in 8, fan_out 5
    assert store.value("enc_img.l1.w").shape == (5, 8)
    assert glorot_bound((5, 8)) == pytest.approx(np.sqrt(6.0 / 13.0))
    assert np.all(np.abs(store.value("enc_img.l1.w")) <= np.sqrt(6.0 / 13.0))

    groups = group_names(store)
    for group in ("enc_img", "enc_meta", "mmfa", "head_img", "head_joint", "head_meta", "gate"):
        assert group in groups


def test_image_encoder_sized_to_present_blocks():
    store = init_params(tiny_model_config(modalities="d+m", dd=7), 0)
    assert store.value("enc_img.l1.w").shape == (5, 7)
    assert "enc_img.l1.w" not in init_params(tiny_model_config(modalities="m"), 0)


def test_invalid_config_rejected():
    with pytest.raises(ConfigError):
        init_params(tiny_model_config(n_classes=1), 0)


def test_zero_gate_matches_fixed_average(tiny_config, rng):
    """With the gate output layer at its zero init, JI-ADF and JI-MMFA agree exactly"""
    store = init_params(tiny_config, 5)
    batch = _batch(tiny_config, rng)
    adf = forward(store, batch, tiny_config)
    fixed = forward(store, batch, tiny_model_config(fusion_variant=FusionVariant.JI_MMFA))
    np.testing.assert_array_equal(adf.alpha.data, fixed.alpha.data)
    np.testing.assert_array_equal(adf.p_final.data, fixed.p_final.data)


def test_single_stream_final_posterior(rng):
    config = tiny_model_config(modalities="d")
    store = init_params(config, 2)
    out = forward(store, _batch(config, rng), config)
    np.testing.assert_array_equal(out.p_final.data, out.p_img.data)
    assert out.alpha is None and out.p_meta is None

    config = tiny_model_config(modalities="m")
    out = forward(init_params(config, 2), _batch(config, rng), config)
    np.testing.assert_array_equal(out.p_final.data, out.p_meta.data)
    assert not uses_auxiliary_losses(out, config)


def _zero_heads(store, bias=None):
    for name in ("head_img", "head_joint", "head_meta"):
        store.set_value(f"{name}.w", np.zeros_like(store.value(f"{name}.w")))
        b = np.zeros_like(store.value(f"{name}.b")) if bias is None else bias
        store.set_value(f"{name}.b", b)


def test_uniform_outputs_give_two_log_n(tiny_config, rng):
    """Uniform posteriors everywhere: ln N + (0.5 + 0.25 + 0.25)·ln N"""
    store = init_params(tiny_config, 0)
    _zero_heads(store)
    loss = batch_loss(store, _batch(tiny_config, rng), tiny_config)
    assert loss.item() == pytest.approx(2.0 * np.log(3.0), abs=1e-12)


def test_confident_correct_outputs_give_near_zero_loss(tiny_config, rng):
    store = init_params(tiny_config, 0)
    _zero_heads(store, bias=np.array([0.0, 60.0, 0.0]))
    loss = batch_loss(store, _batch(tiny_config, rng, labels=[1, 1, 1, 1, 1]), tiny_config)
    assert 0.0 <= loss.item() < 1e-12


def test_loss_composition(tiny_config, rng):
    store = init_params(tiny_config, 4)
    batch = _batch(tiny_config, rng)
    out = forward(store, batch, tiny_config)
    loss = total_loss(out, batch.y, tiny_config).data
    idx = np.arange(len(batch.y))

    def ce(p):
        return -np.log(p[idx, batch.y])

    expected = (ce(out.p_final.data) + 0.5 * ce(out.p_joint.data) + 0.25 * ce(out.p_img.data)
                + 0.25 * ce(out.p_meta.data))
    np.testing.assert_allclose(loss, expected, rtol=0, atol=1e-12)

    no_aux = tiny_model_config(fusion_variant=FusionVariant.JI_ADF_NO_AUX)
    np.testing.assert_allclose(total_loss(out, batch.y, no_aux).data, ce(out.p_final.data), rtol=0, atol=1e-12)


def test_class_weights_scale_every_term(rng):
    weighted = tiny_model_config(class_weights=[1.0, 2.0, 0.5])
    plain = tiny_model_config()
    store = init_params(plain, 4)
    batch = _batch(plain, rng, size=6, labels=[0, 1, 2, 0, 1, 2])
    out = forward(store, batch, plain)
    np.testing.assert_allclose(total_loss(out, batch.y, weighted).data,
                               np.array([1.0, 2.0, 0.5] * 2) * total_loss(out, batch.y, plain).data,
                               rtol=1e-13, atol=0)


def test_forward_matches_scalar_oracle(rng):
    config, store, batch = gradcheck_problem(FusionVariant.JI_ADF, seed=3, batch_size=4)
    out = forward(store, batch, config)
    loss = total_loss(out, batch.y, config).data
    for i in range(4):
        p_final, sample_loss = _oracle_sample(store, config, batch.c[i], batch.d[i], batch.m[i], batch.y[i])
        np.testing.assert_allclose(out.p_final.data[i], p_final, rtol=0, atol=1e-10)
        assert loss[i] == pytest.approx(sample_loss, abs=1e-10)


def test_batch_of_one_and_duplicates(tiny_config, rng):
    store = init_params(tiny_config, 9)
    single = _batch(tiny_config, rng, size=1)
    p = predict_proba(store, single, tiny_config)
    assert p.shape == (1, 3)
    np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-12)

    doubled = Batch(ids=["a", "b"], y=np.repeat(single.y, 2), c=np.repeat(single.c, 2, axis=0),
                    d=np.repeat(single.d, 2, axis=0), m=np.repeat(single.m, 2, axis=0))
    assert batch_loss(store, doubled, tiny_config).item() == pytest.approx(
        batch_loss(store, single, tiny_config).item(), abs=1e-14)


def test_unused_groups_receive_zero_gradient(rng):
    config = tiny_model_config(fusion_variant=FusionVariant.LATE_CONCAT)
    store = init_params(config, 1)
    graph = Graph()
    backward(graph, batch_loss(store, _batch(config, rng), config, graph), store)
    for name in store.names():
        if name.startswith(("head_", "gate.", "mmfa.", "jf_concat.")):
            np.testing.assert_array_equal(store.grad(name), 0.0)
    assert np.any(store.grad("late_concat.w") != 0.0)

    config = tiny_model_config(modalities="c+d")
    store = init_params(config, 1)
    graph = Graph()
    backward(graph, batch_loss(store, _batch(config, rng), config, graph), store)
    np.testing.assert_array_equal(store.grad("enc_meta.l1.w"), 0.0)
    np.testing.assert_array_equal(store.grad("enc_meta.l2.w"), 0.0)
    assert np.any(store.grad("enc_img.l1.w") != 0.0)


def test_gate_receives_gradient(tiny_config, rng):
    store = init_params(tiny_config, 1)
    graph = Graph()
    backward(graph, batch_loss(store, _batch(tiny_config, rng), tiny_config, graph), store)
    assert np.any(store.grad("gate.l2.w") != 0.0)

    config, store, batch = gradcheck_problem(FusionVariant.JI_ADF, seed=0)
    graph = Graph()
    backward(graph, batch_loss(store, batch, config, graph), store)
    assert np.any(store.grad("gate.l1.w") != 0.0)


@pytest.mark.parametrize("variant", list(FusionVariant))
def test_variant_gradients_match_finite_differences(variant):
    config, store, batch = gradcheck_problem(variant, seed=0)
    report = check_gradients(lambda s, g: batch_loss(s, batch, config, g), store)
    assert report.passed, (report.worst_parameter, report.worst_error)
    print(f"✓ {variant.value}: worst relative error {report.worst_error:.2e}")


def test_missing_block_rejected(tiny_config, rng):
    store = init_params(tiny_config, 0)
    batch = _batch(tiny_config, rng)
    batch.m = None
    with pytest.raises(DimensionError, match="metadata"):
        forward(store, batch, tiny_config)

    narrow = _batch(tiny_config, rng)
    narrow.c = narrow.c[:, :2]
    with pytest.raises(DimensionError):
        forward(store, narrow, tiny_config)


def test_metadata_block_ignored_when_not_configured(rng):
    config = tiny_model_config(modalities=(Modality.CLINICAL, Modality.DERMOSCOPIC))
    store = init_params(config, 0)
    batch = _batch(config, rng)
    batch.m = None
    assert forward(store, batch, config).p_final.shape == (5, 3)


def test_empty_batch_rejected(tiny_config):
    store = init_params(tiny_config, 0)
    empty = Batch(ids=[], y=np.zeros(0, dtype=int), c=np.zeros((0, 4)), d=np.zeros((0, 4)), m=np.zeros((0, 3)))
    with pytest.raises(DimensionError):
        batch_loss(store, empty, tiny_config)


def test_forward_records_onto_a_fresh_caller_graph(tiny_config, rng):
    store = init_params(tiny_config, 0)
    graph = Graph()
    assert len(graph) == 0
    loss = batch_loss(store, _batch(tiny_config, rng), tiny_config, graph)
    assert loss.graph is graph
    grads = backward(graph, loss, store)
    assert set(grads) == set(store.names())
    assert np.any(grads["enc_img.l1.w"] != 0.0)
