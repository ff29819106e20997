import math

import numpy as np
import pytest

import oracles
from vild.classifier import TextClassifier
from vild.errors import ConfigError, DataFormatError, DimensionMismatchError
from vild.training import (
    RegionHead,
    TrainConfig,
    TrainingSample,
    labels_to_indices,
    learning_rate_at,
    train,
    vild_image_loss,
    vild_loss,
    vild_text_loss,
)

FD_STEP = 1e-5
FD_TOL = 1e-4


def pack(head: RegionHead) -> np.ndarray:
    return np.concatenate([head.W.ravel(), head.b, head.e_bg])


def unpack(flat: np.ndarray, d_in: int, d_out: int) -> RegionHead:
    w_end = d_out * d_in
    return RegionHead(
        W=flat[:w_end].reshape(d_out, d_in),
        b=flat[w_end : w_end + d_out],
        e_bg=flat[w_end + d_out :],
    )


def grad_vector(res) -> np.ndarray:
    return np.concatenate([res.d_w.ravel(), res.d_b, res.d_bg])


def random_classifier(rng, n_cats, d_out, tau) -> TextClassifier:
    return TextClassifier(
        embeddings=rng.normal(size=(n_cats, d_out)),
        ids=tuple(str(i) for i in range(n_cats)),
        background=rng.normal(size=d_out),
        tau=tau,
    )


def unit_head() -> RegionHead:
    # identity map: emb of feature [1,0] is exactly [1,0]
    return RegionHead(W=np.eye(2), b=np.zeros(2), e_bg=np.array([0.0, 1.0]))


def test_text_loss_frozen_value():
    clf = TextClassifier(
        embeddings=np.array([[1.0, 0.0]]), ids=("0",), background=np.zeros(2) + 1e-9,
        tau=1.0,
    )
    head = unit_head()
    feats = np.array([[1.0, 0.0]])
    # logits (bg, cat) = (0, 1) at tau=1: CE(label=cat) = log(1+e) - 1
    res = vild_text_loss(head, clf, feats, [0])
    assert res.loss == pytest.approx(0.3132616875182228, abs=1e-15)
    # CE(label=background) = log(1+e)
    res_bg = vild_text_loss(head, clf, feats, [-1])
    assert res_bg.loss == pytest.approx(1.3132616875182228, abs=1e-15)


def test_text_loss_is_mean_over_proposals():
    rng = np.random.default_rng(61)
    clf = random_classifier(rng, 3, 4, 0.1)
    head = RegionHead.initialize(5, 4, rng)
    feats = rng.normal(size=(6, 5))
    labels = np.array([0, 1, 2, -1, 1, 0])
    total = vild_text_loss(head, clf, feats, labels)
    singles = [
        vild_text_loss(head, clf, feats[i : i + 1], labels[i : i + 1]).loss
        for i in range(6)
    ]
    assert total.loss == pytest.approx(np.mean(singles), rel=1e-12)


def test_text_loss_validation():
    rng = np.random.default_rng(62)
    clf = random_classifier(rng, 3, 4, 0.1)
    head = RegionHead.initialize(5, 4, rng)
    feats = rng.normal(size=(2, 5))
    with pytest.raises(DataFormatError):
        vild_text_loss(head, clf, np.zeros((0, 5)), [])
    with pytest.raises(DataFormatError):
        vild_text_loss(head, clf, feats, [0])  # count mismatch
    with pytest.raises(DataFormatError):
        vild_text_loss(head, clf, feats, [0, 3])  # index out of range
    with pytest.raises(DataFormatError):
        vild_text_loss(head, clf, feats, [0, -2])
    bad_clf = random_classifier(rng, 3, 5, 0.1)
    with pytest.raises(DimensionMismatchError):
        vild_text_loss(head, bad_clf, feats, [0, 1])


def test_image_loss_frozen_values():
    head = unit_head()
    feats = np.array([[1.0, 0.0]])
    teachers = np.array([[0.5, -0.25]])  # resid = [-0.5, -0.25]
    assert vild_image_loss(head, feats, teachers, "l1").loss == pytest.approx(
        0.75, abs=1e-15
    )
    assert vild_image_loss(head, feats, teachers, "l2").loss == pytest.approx(
        0.3125, abs=1e-15
    )


def test_image_loss_background_gradient_zero():
    rng = np.random.default_rng(63)
    head = RegionHead.initialize(5, 4, rng)
    feats = rng.normal(size=(3, 5))
    teachers = rng.normal(size=(3, 4))
    for norm in ("l1", "l2"):
        res = vild_image_loss(head, feats, teachers, norm)
        assert np.all(res.d_bg == 0.0)


def test_image_loss_validation():
    rng = np.random.default_rng(64)
    head = RegionHead.initialize(5, 4, rng)
    with pytest.raises(DataFormatError):
        vild_image_loss(head, np.zeros((0, 5)), np.zeros((0, 4)))
    with pytest.raises(DataFormatError):
        vild_image_loss(head, rng.normal(size=(2, 5)), rng.normal(size=(3, 4)))
    with pytest.raises(DimensionMismatchError):
        vild_image_loss(head, rng.normal(size=(2, 5)), rng.normal(size=(2, 3)))
    with pytest.raises(ConfigError):
        vild_image_loss(head, rng.normal(size=(2, 5)), rng.normal(size=(2, 4)), "l3")


def text_loss_fn(clf, feats, labels, d_in, d_out):
    def fn(flat):
        return vild_text_loss(unpack(flat, d_in, d_out), clf, feats, labels).loss

    return fn


def test_text_loss_gradient_matches_fd():
    rng = np.random.default_rng(65)
    d_in, d_out = 5, 4
    for tau in (0.05, 0.01):
        clf = random_classifier(rng, 3, d_out, tau)
        head = RegionHead.initialize(d_in, d_out, rng)
        feats = rng.normal(size=(4, d_in))
        labels = np.array([0, -1, 2, 1])
        analytic = grad_vector(vild_text_loss(head, clf, feats, labels))
        fd = oracles.fd_gradient(
            text_loss_fn(clf, feats, labels, d_in, d_out), pack(head), FD_STEP
        )
        assert np.max(oracles.relative_errors(analytic, fd)) <= FD_TOL


def kink_free_teachers(head, feats, rng):
    # residuals bounded away from zero so L1 stays differentiable at
    # every FD-perturbed point
    emb = head.region_embeddings(feats)
    signs = rng.choice([-1.0, 1.0], size=emb.shape)
    return emb + signs * rng.uniform(0.1, 1.0, size=emb.shape)


def test_image_loss_gradient_matches_fd():
    rng = np.random.default_rng(66)
    d_in, d_out = 5, 4
    for norm in ("l1", "l2"):
        head = RegionHead.initialize(d_in, d_out, rng)
        feats = rng.normal(size=(3, d_in))
        teachers = kink_free_teachers(head, feats, rng)

        def fn(flat):
            return vild_image_loss(
                unpack(flat, d_in, d_out), feats, teachers, norm
            ).loss

        analytic = grad_vector(vild_image_loss(head, feats, teachers, norm))
        fd = oracles.fd_gradient(fn, pack(head), FD_STEP)
        assert np.max(oracles.relative_errors(analytic, fd)) <= FD_TOL


def test_combined_loss_gradient_matches_fd():
    rng = np.random.default_rng(67)
    d_in, d_out = 5, 4
    for norm in ("l1", "l2"):
        clf = random_classifier(rng, 3, d_out, 0.05)
        head = RegionHead.initialize(d_in, d_out, rng)
        config = TrainConfig(tau=0.05, distill_weight=0.5, distill_norm=norm)
        sample = TrainingSample(
            image_id="img",
            online_features=rng.normal(size=(4, d_in)),
            online_labels=[0, 2, -1, 1],
            offline_features=rng.normal(size=(3, d_in)),
            offline_teachers=np.zeros((3, d_out)),
        )
        sample.offline_teachers = kink_free_teachers(
            head, sample.offline_features, rng
        )

        def fn(flat):
            return vild_loss(unpack(flat, d_in, d_out), clf, sample, config).loss

        analytic = grad_vector(vild_loss(head, clf, sample, config))
        fd = oracles.fd_gradient(fn, pack(head), FD_STEP)
        assert np.max(oracles.relative_errors(analytic, fd)) <= FD_TOL


def test_combined_loss_zero_weight_bit_equals_text_loss():
    rng = np.random.default_rng(68)
    d_in, d_out = 6, 4
    clf = random_classifier(rng, 3, d_out, 0.01)
    config = TrainConfig(distill_weight=0.0)
    for _ in range(50):
        head = RegionHead.initialize(d_in, d_out, rng)
        labels = rng.integers(-1, 3, size=4)
        sample = TrainingSample(
            image_id="img",
            online_features=rng.normal(size=(4, d_in)),
            online_labels=labels,
            offline_features=rng.normal(size=(3, d_in)),
            offline_teachers=rng.normal(size=(3, d_out)),
        )
        combined = vild_loss(head, clf, sample, config)
        text = vild_text_loss(
            head, clf, sample.online_features, labels_to_indices(labels, clf)
        )
        assert combined.loss == text.loss
        assert np.array_equal(combined.d_w, text.d_w)
        assert np.array_equal(combined.d_b, text.d_b)
        assert np.array_equal(combined.d_bg, text.d_bg)


def test_combined_loss_weight_scales_image_term():
    rng = np.random.default_rng(69)
    d_in, d_out = 5, 4
    clf = random_classifier(rng, 3, d_out, 0.05)
    head = RegionHead.initialize(d_in, d_out, rng)
    sample = TrainingSample(
        image_id="img",
        online_features=rng.normal(size=(2, d_in)),
        online_labels=[0, 1],
        offline_features=rng.normal(size=(2, d_in)),
        offline_teachers=rng.normal(size=(2, d_out)),
    )
    text = vild_text_loss(
        head, clf, sample.online_features, labels_to_indices([0, 1], clf)
    )
    image = vild_image_loss(head, sample.offline_features, sample.offline_teachers)
    combined = vild_loss(head, clf, sample, TrainConfig(tau=0.05, distill_weight=0.5))
    assert combined.loss == pytest.approx(text.loss + 0.5 * image.loss, rel=1e-12)


def test_combined_loss_requires_proposals():
    rng = np.random.default_rng(70)
    clf = random_classifier(rng, 2, 3, 0.05)
    head = RegionHead.initialize(4, 3, rng)
    sample = TrainingSample(
        image_id="img",
        online_features=np.zeros((0, 4)),
        online_labels=[],
        offline_features=np.zeros((0, 4)),
        offline_teachers=np.zeros((0, 3)),
    )
    with pytest.raises(DataFormatError):
        vild_loss(head, clf, sample, TrainConfig())


def test_labels_to_indices():
    rng = np.random.default_rng(71)
    clf = TextClassifier(
        embeddings=rng.normal(size=(2, 3)),
        ids=("5", "7"),
        background=rng.normal(size=3),
    )
    out = labels_to_indices([7, 5, -1], clf)
    assert list(out) == [1, 0, -1]
    with pytest.raises(DataFormatError):
        labels_to_indices([6], clf)


def test_learning_rate_schedule_frozen():
    assert learning_rate_at(0, 2000, 0.5) == 0.5
    assert learning_rate_at(1799, 2000, 0.5) == 0.5
    assert learning_rate_at(1800, 2000, 0.5) == 0.05
    assert learning_rate_at(1899, 2000, 0.5) == 0.05
    assert learning_rate_at(1900, 2000, 0.5) == pytest.approx(0.005, rel=1e-12)
    assert learning_rate_at(1949, 2000, 0.5) == pytest.approx(0.005, rel=1e-12)
    assert learning_rate_at(1950, 2000, 0.5) == pytest.approx(0.0005, rel=1e-12)
    assert learning_rate_at(1999, 2000, 0.5) == pytest.approx(0.0005, rel=1e-12)
    # milestone index via ceil: 0.9 * 10 -> iteration 9
    assert learning_rate_at(8, 10, 1.0) == 1.0
    assert learning_rate_at(9, 10, 1.0) == pytest.approx(0.1, rel=1e-12)


def test_train_config_validation():
    with pytest.raises(ConfigError):
        TrainConfig(tau=0.0)
    with pytest.raises(ConfigError):
        TrainConfig(distill_weight=-0.1)
    with pytest.raises(ConfigError):
        TrainConfig(distill_norm="linf")
    with pytest.raises(ConfigError):
        TrainConfig(learning_rate=0.0)
    with pytest.raises(ConfigError):
        TrainConfig(iterations=-1)
    with pytest.raises(ConfigError):
        TrainConfig(objective="both")


def test_training_sample_validation():
    with pytest.raises(DataFormatError):
        TrainingSample(
            image_id="img",
            online_features=np.zeros((2, 3)),
            online_labels=[0],
            offline_features=np.zeros((1, 3)),
            offline_teachers=np.zeros((1, 2)),
        )
    with pytest.raises(DataFormatError):
        TrainingSample(
            image_id="img",
            online_features=np.zeros((1, 3)),
            online_labels=[0],
            offline_features=np.zeros((2, 3)),
            offline_teachers=np.zeros((1, 2)),
        )


def make_samples(rng, n_images, d_in, d_out, n_cats):
    samples = []
    for i in range(n_images):
        labels = rng.integers(-1, n_cats, size=3)
        samples.append(
            TrainingSample(
                image_id=f"img{i}",
                online_features=rng.normal(size=(3, d_in)),
                online_labels=labels,
                offline_features=rng.normal(size=(2, d_in)),
                offline_teachers=rng.normal(size=(2, d_out)),
            )
        )
    return samples


def test_train_is_deterministic():
    rng = np.random.default_rng(72)
    clf = random_classifier(rng, 3, 4, 0.05)
    samples = make_samples(rng, 3, 5, 4, 3)
    config = TrainConfig(tau=0.05, iterations=20, seed=7)
    h1 = train(samples, clf, config)
    h2 = train(samples, clf, config)
    assert np.array_equal(h1.W, h2.W)
    assert np.array_equal(h1.b, h2.b)
    assert np.array_equal(h1.e_bg, h2.e_bg)
    h3 = train(samples, clf, TrainConfig(tau=0.05, iterations=20, seed=8))
    assert not np.array_equal(h1.W, h3.W)


def test_train_loss_decreases():
    rng = np.random.default_rng(73)
    clf = random_classifier(rng, 3, 4, 0.05)
    samples = make_samples(rng, 4, 5, 4, 3)
    losses = []
    train(
        samples,
        clf,
        TrainConfig(tau=0.05, iterations=60, learning_rate=0.1, seed=0),
        on_iteration=lambda i, loss: losses.append(loss),
    )
    assert len(losses) == 60
    assert losses[-1] < losses[0]


def test_train_objective_text_ignores_distillation():
    rng = np.random.default_rng(74)
    clf = random_classifier(rng, 3, 4, 0.05)
    samples = make_samples(rng, 3, 5, 4, 3)
    base = dict(tau=0.05, iterations=15, seed=3)
    h_text = train(samples, clf, TrainConfig(objective="text", **base))
    h_zero = train(samples, clf, TrainConfig(objective="vild", distill_weight=0.0, **base))
    assert np.array_equal(h_text.W, h_zero.W)
    assert np.array_equal(h_text.b, h_zero.b)
    assert np.array_equal(h_text.e_bg, h_zero.e_bg)
    h_full = train(samples, clf, TrainConfig(objective="vild", **base))
    assert not np.array_equal(h_text.W, h_full.W)


def test_train_objective_image_leaves_background_untouched():
    rng = np.random.default_rng(75)
    clf = random_classifier(rng, 3, 4, 0.05)
    samples = make_samples(rng, 3, 5, 4, 3)
    config = TrainConfig(tau=0.05, iterations=15, seed=3, objective="image")
    head = train(samples, clf, config)
    init = RegionHead.initialize(5, 4, np.random.default_rng(3))
    assert np.array_equal(head.e_bg, init.e_bg)
    assert not np.array_equal(head.W, init.W)


def test_train_validation():
    rng = np.random.default_rng(76)
    clf = random_classifier(rng, 3, 4, 0.05)
    with pytest.raises(DataFormatError):
        train([], clf, TrainConfig())
    text_only = TrainingSample(
        image_id="img",
        online_features=rng.normal(size=(2, 5)),
        online_labels=[0, 1],
        offline_features=np.zeros((0, 5)),
        offline_teachers=np.zeros((0, 4)),
    )
    with pytest.raises(DataFormatError):
        train([text_only], clf, TrainConfig(objective="image"))
    mismatched = make_samples(rng, 1, 5, 3, 3)  # teacher dim 3 != clf dim 4
    with pytest.raises(DimensionMismatchError):
        train(mismatched, clf, TrainConfig(tau=0.05, iterations=1))


def test_head_initialize_shapes_and_bounds():
    rng = np.random.default_rng(77)
    head = RegionHead.initialize(9, 4, rng)
    bound = 1.0 / math.sqrt(9)
    assert head.W.shape == (4, 9)
    assert np.all(np.abs(head.W) <= bound)
    assert np.all(head.b == 0.0)
    assert np.linalg.norm(head.e_bg) == pytest.approx(1.0, abs=1e-12)
    with pytest.raises(ConfigError):
        RegionHead.initialize(0, 4, rng)


def test_head_validation():
    with pytest.raises(DimensionMismatchError):
        RegionHead(W=np.zeros(3), b=np.zeros(3), e_bg=np.zeros(3))
    with pytest.raises(DimensionMismatchError):
        RegionHead(W=np.zeros((2, 3)), b=np.zeros(3), e_bg=np.zeros(2))
