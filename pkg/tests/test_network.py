"""Network construction, gradients, training behavior, and transfer."""

import numpy as np
import pytest

from kjmnet.errors import (
    DivergenceDetected,
    IncompatibleArchitecture,
    ShapeMismatch,
    TooFewSamples,
)
from kjmnet.network import (
    ArchitectureSpec,
    Conv,
    FullyConnected,
    MaxPool,
    Output,
    TrainConfig,
    build,
    desk_architecture,
    euclidean_loss,
    loss_and_gradients,
    model_id,
    predict,
    train,
    transfer,
)

TINY = ArchitectureSpec(
    layers=(
        Conv(4, 5, stride=2),
        Conv(6, 3, stride=1, pad=1),
        FullyConnected(10),
        Output(3),
    ),
    input_shape=(16, 16, 3),
)
HEAD = len(TINY.layers) - 1


def _images(n, seed=0, size=16):
    rng = np.random.default_rng(seed)
    return rng.uniform(0.0, 255.0, size=(n, size, size, 3)).astype(np.float32)


def _targets(n, k=3, seed=1):
    rng = np.random.default_rng(seed)
    return rng.normal(loc=[10.0, -5.0, 0.5][:k], scale=2.0, size=(n, k))


# ----------------------------------------------------------------------
# architecture
# ----------------------------------------------------------------------

def test_desk_preset_shapes():
    arch = desk_architecture(59)
    chain = arch.shape_chain()
    assert chain[0] == (16, 56, 56)
    assert chain[1] == (16, 27, 27)
    assert chain[2] == (32, 27, 27)
    assert chain[3] == (32, 13, 13)
    assert chain[4] == 256
    assert chain[5] == 59
    assert arch.output_dim == 59
    model = build(arch, seed=0)
    assert model.params[4]["W"].shape == (32 * 13 * 13, 256)
    assert model.params[5]["W"].shape == (256, 59)


def test_architecture_validation():
    with pytest.raises(IncompatibleArchitecture):
        ArchitectureSpec(layers=(Conv(4, 3), FullyConnected(5))).validate()
    with pytest.raises(IncompatibleArchitecture):
        ArchitectureSpec(layers=(Output(3), Output(3))).validate()
    with pytest.raises(IncompatibleArchitecture):
        ArchitectureSpec(
            layers=(FullyConnected(5, dropout_p=1.0), Output(3)),
            input_shape=(8, 8, 3),
        ).validate()
    with pytest.raises(IncompatibleArchitecture):
        ArchitectureSpec(
            layers=(Conv(4, 11), Output(3)), input_shape=(8, 8, 3)
        ).validate()


def test_build_is_seeded_and_zero_biased():
    a = build(TINY, seed=4)
    b = build(TINY, seed=4)
    c = build(TINY, seed=5)
    for i in a.params:
        np.testing.assert_array_equal(a.params[i]["W"], b.params[i]["W"])
        assert not a.params[i]["transferred"]
        assert np.all(a.params[i]["b"] == 0)
    assert any(
        not np.array_equal(a.params[i]["W"], c.params[i]["W"]) for i in a.params
    )
    assert a.dtype == np.float32
    assert build(TINY, seed=0, dtype=np.float64).dtype == np.float64


def test_build_weight_scale_follows_fan_in():
    model = build(TINY, seed=6)
    conv = model.params[0]["W"]
    expect = np.sqrt(2.0 / (3 * 5 * 5))  # relu gain
    assert np.std(conv) == pytest.approx(expect, rel=0.2)
    # the linear head carries no relu gain; use the desk head for a
    # sample large enough to pin the scale tightly
    desk = build(desk_architecture(59), seed=6)
    assert np.std(desk.params[5]["W"]) == pytest.approx(np.sqrt(1.0 / 256), rel=0.05)


def test_model_id_tracks_weight_content():
    a = build(TINY, seed=7)
    assert model_id(a) == model_id(a.copy())
    b = a.copy()
    b.params[0]["W"][0, 0, 0, 0] += 1.0
    assert model_id(b) != model_id(a)


# ----------------------------------------------------------------------
# loss
# ----------------------------------------------------------------------

def test_half_squared_error_hand_case():
    loss, grad = euclidean_loss(np.array([1.0, 2.0]), np.zeros(2))
    assert loss == pytest.approx(2.5)
    np.testing.assert_array_equal(grad, [1.0, 2.0])
    loss, _ = euclidean_loss(np.array([3.0, -1.0]), np.array([1.0, 1.0]))
    assert loss == pytest.approx(0.5 * (4 + 4))
    with pytest.raises(ShapeMismatch):
        euclidean_loss(np.zeros(3), np.zeros(2))


def test_batch_loss_is_the_per_sample_mean():
    model = build(TINY, seed=8)
    imgs = _images(2, seed=9)
    tgts = _targets(2)
    l0, _ = loss_and_gradients(model, imgs[0], tgts[0])
    l1, _ = loss_and_gradients(model, imgs[1], tgts[1])
    lb, _ = loss_and_gradients(model, imgs, tgts)
    assert lb == pytest.approx((l0 + l1) / 2, rel=1e-6)
    with pytest.raises(ShapeMismatch):
        loss_and_gradients(model, imgs, tgts[:1])


def gradcheck_model(n_images=4, dtype=np.float64):
    """Model and batch posed away from relu kinks.

    Freshly built biases are exactly zero, and zero padding plus dead relu
    units then leave some pre-activations exactly at the kink, where central
    differences and the subgradient legitimately disagree. Small random
    biases move every pre-activation a safe distance from zero (minimum
    |z| is about 8e-4 for this seed set, hundreds of times the step).
    """
    model = build(TINY, seed=10, dtype=dtype)
    brng = np.random.default_rng(1033)
    for p in model.params.values():
        p["b"] = p["b"] + brng.normal(scale=0.05, size=p["b"].shape).astype(dtype)
    imgs = np.random.default_rng(11).uniform(0.0, 255.0, size=(n_images, 16, 16, 3))
    tgts = np.random.default_rng(1).normal(
        loc=[10.0, -5.0, 0.5], scale=2.0, size=(n_images, 3)
    )
    return model, imgs, tgts


def test_gradients_match_central_differences():
    model, imgs, tgts = gradcheck_model()
    _, grads = loss_and_gradients(model, imgs, tgts)
    rng = np.random.default_rng(12)
    eps = 1e-5
    worst = 0.0
    for i, p in model.params.items():
        for name in ("W", "b"):
            arr = p[name]
            flat = arr.reshape(-1)
            picks = rng.choice(flat.size, size=min(25, flat.size), replace=False)
            g = grads[i][0 if name == "W" else 1].reshape(-1)
            for j in picks:
                orig = flat[j]
                flat[j] = orig + eps
                lp, _ = loss_and_gradients(model, imgs, tgts)
                flat[j] = orig - eps
                lm, _ = loss_and_gradients(model, imgs, tgts)
                flat[j] = orig
                num = (lp - lm) / (2 * eps)
                rel = abs(g[j] - num) / max(abs(g[j]), abs(num), 1e-6)
                worst = max(worst, rel)
    assert worst <= 1e-4


# ----------------------------------------------------------------------
# training
# ----------------------------------------------------------------------

def test_training_reduces_the_loss():
    model = build(TINY, seed=13)
    imgs = _images(20, seed=14)
    tgts = _targets(20)
    cfg = TrainConfig(epochs=8, learning_rate=3e-3, batch_size=10, seed=0)
    trained, history = train(model, imgs, tgts, cfg)
    assert len(history) == 8
    assert all(np.isfinite(history))
    assert history[-1] < history[0]
    # the input model is untouched
    np.testing.assert_array_equal(model.params[0]["W"], build(TINY, seed=13).params[0]["W"])


def test_training_is_deterministic():
    imgs = _images(12, seed=15)
    tgts = _targets(12)
    cfg = TrainConfig(epochs=3, learning_rate=1e-3, batch_size=6, seed=2)
    m1, h1 = train(build(TINY, seed=16), imgs, tgts, cfg)
    m2, h2 = train(build(TINY, seed=16), imgs, tgts, cfg)
    assert h1 == h2
    for i in m1.params:
        np.testing.assert_array_equal(m1.params[i]["W"], m2.params[i]["W"])
        np.testing.assert_array_equal(m1.params[i]["b"], m2.params[i]["b"])


def test_zero_epochs_only_fits_the_transforms():
    model = build(TINY, seed=17)
    imgs = _images(6, seed=18)
    tgts = _targets(6)
    out, history = train(model, imgs, tgts, TrainConfig(epochs=0, batch_size=6))
    assert history == []
    for i in model.params:
        np.testing.assert_array_equal(out.params[i]["W"], model.params[i]["W"])
    np.testing.assert_allclose(out.target_center, tgts.mean(axis=0))
    np.testing.assert_allclose(
        out.pixel_mean, imgs.mean(axis=0, dtype=np.float64).astype(np.float32),
        atol=1e-4,
    )


def test_training_transform_switches():
    model = build(TINY, seed=19)
    imgs = _images(6, seed=20)
    tgts = _targets(6)
    cfg = TrainConfig(
        epochs=0, batch_size=6, standardize_targets=False, center_inputs=False
    )
    out, _ = train(model, imgs, tgts, cfg)
    assert out.target_center is None
    assert out.pixel_mean is None


def test_constant_target_column_standardizes_safely():
    model = build(TINY, seed=21)
    imgs = _images(6, seed=22)
    tgts = _targets(6)
    tgts[:, 1] = 4.0
    out, history = train(model, imgs, tgts, TrainConfig(epochs=1, batch_size=3))
    assert all(np.isfinite(history))
    assert out.target_scale[1] == 1.0


def test_batch_size_must_fit_the_sample_count():
    model = build(TINY, seed=23)
    imgs = _images(4, seed=24)
    tgts = _targets(4)
    with pytest.raises(TooFewSamples):
        train(model, imgs, tgts, TrainConfig(epochs=1, batch_size=5))
    with pytest.raises(TooFewSamples):
        train(model, imgs, tgts, TrainConfig(epochs=1, batch_size=0))


def test_divergence_carries_the_last_finite_state():
    model = build(TINY, seed=25)
    imgs = _images(10, seed=26)
    tgts = 1e4 * _targets(10)
    cfg = TrainConfig(
        epochs=50, learning_rate=1e9, batch_size=5, standardize_targets=False
    )
    with pytest.raises(DivergenceDetected) as info:
        with np.errstate(over="ignore", invalid="ignore"):
            train(model, imgs, tgts, cfg)
    err = info.value
    assert isinstance(err.loss_history, list)
    for p in err.model.params.values():
        assert np.isfinite(p["W"]).all()
        assert np.isfinite(p["b"]).all()


def test_predict_inverts_the_target_standardization():
    model = build(TINY, seed=27)
    imgs = _images(8, seed=28)
    tgts = _targets(8)
    trained, _ = train(model, imgs, tgts, TrainConfig(epochs=1, batch_size=4))
    trained.params[HEAD]["W"][:] = 0.0
    trained.params[HEAD]["b"][:] = 0.0
    out = predict(trained, imgs)
    np.testing.assert_allclose(out, np.tile(tgts.mean(axis=0), (8, 1)), atol=1e-5)
    single = predict(trained, imgs[0])
    assert single.shape == (3,)
    np.testing.assert_allclose(single, tgts.mean(axis=0), atol=1e-5)


def test_predict_without_transform_returns_raw_outputs():
    model = build(TINY, seed=29)
    imgs = _images(3, seed=30)
    out = predict(model, imgs)
    assert out.shape == (3, 3)
    assert model.target_center is None


# ----------------------------------------------------------------------
# transfer
# ----------------------------------------------------------------------

def test_transfer_copies_the_body_and_reseeds_the_head():
    donor = build(TINY, seed=31)
    out = transfer(donor, TINY, new_output_dim=7, seed=32)
    assert out.arch.output_dim == 7
    for i in range(HEAD):
        if i in donor.params:
            np.testing.assert_array_equal(out.params[i]["W"], donor.params[i]["W"])
            assert out.params[i]["transferred"]
    assert not out.params[HEAD]["transferred"]
    assert out.params[HEAD]["W"].shape == (10, 7)
    assert out.provenance == ("scratch", "finetune")
    assert out.donor == model_id(donor)


def test_transfer_head_reseed_differs_from_donor():
    donor = build(TINY, seed=33)
    out = transfer(donor, TINY, 3, seed=34)  # same width as the donor head
    assert not np.array_equal(out.params[HEAD]["W"], donor.params[HEAD]["W"])


def test_transferred_body_computes_the_same_features():
    donor = build(TINY, seed=35)
    out = transfer(donor, TINY, 3, seed=36)
    out.params[HEAD]["W"] = donor.params[HEAD]["W"].copy()
    out.params[HEAD]["b"] = donor.params[HEAD]["b"].copy()
    imgs = _images(4, seed=37)
    np.testing.assert_array_equal(predict(out, imgs), predict(donor, imgs))


def test_double_transfer_reaches_and_keeps_the_final_stage():
    donor = build(TINY, seed=38)
    second = transfer(donor, TINY, 5, seed=39)
    third = transfer(second, TINY, 4, seed=40)
    assert third.provenance == ("scratch", "finetune", "cascade")
    fourth = transfer(third, TINY, 2, seed=41)
    assert fourth.provenance == ("scratch", "finetune", "cascade", "cascade")


def test_transfer_inherits_the_donor_mean_image():
    donor = build(TINY, seed=42)
    imgs = _images(5, seed=43)
    tgts = _targets(5)
    donor, _ = train(donor, imgs, tgts, TrainConfig(epochs=1, batch_size=5))
    out = transfer(donor, TINY, 2, seed=44)
    np.testing.assert_array_equal(out.pixel_mean, donor.pixel_mean)


def test_transfer_requires_matching_bodies():
    donor = build(TINY, seed=45)
    with pytest.raises(ShapeMismatch):
        transfer(donor, desk_architecture(3), 3, seed=46)
    from dataclasses import replace

    widened = replace(TINY, input_shape=(20, 20, 3))
    with pytest.raises(ShapeMismatch):
        transfer(donor, widened, 3, seed=47)


def test_transferred_layers_update_more_slowly():
    donor = build(TINY, seed=48)
    out = transfer(donor, TINY, 3, seed=49)
    imgs = _images(8, seed=50)
    tgts = _targets(8)
    cfg = TrainConfig(epochs=1, learning_rate=1e-3, batch_size=8, seed=0)
    tuned, _ = train(out, imgs, tgts, cfg)
    body_step = np.abs(tuned.params[0]["W"] - out.params[0]["W"]).max()
    head_step = np.abs(tuned.params[HEAD]["W"] - out.params[HEAD]["W"]).max()
    assert body_step < head_step
