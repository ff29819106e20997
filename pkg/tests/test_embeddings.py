import numpy as np
import pytest

from vild.embeddings import (
    UNIT_NORM_TOL,
    compose_crop_ensemble,
    compose_text_embedding,
    cosine_sim,
    cosine_sim_many,
    is_unit_norm,
    l2_normalize,
)
from vild.errors import DimensionMismatchError, NormalizationError


def test_l2_normalize_frozen():
    out = l2_normalize([3.0, 4.0])
    assert np.allclose(out, [0.6, 0.8], atol=0.0)
    assert out.dtype == np.float64


def test_l2_normalize_unit_input_stays_close():
    out = l2_normalize([1.0, 0.0, 0.0])
    assert np.array_equal(out, [1.0, 0.0, 0.0])


def test_l2_normalize_rejects_zero_and_nonfinite():
    with pytest.raises(NormalizationError):
        l2_normalize([0.0, 0.0])
    with pytest.raises(NormalizationError):
        l2_normalize([1.0, float("nan")])
    with pytest.raises(NormalizationError):
        l2_normalize([1.0, float("inf")])


def test_l2_normalize_rejects_matrix():
    with pytest.raises(DimensionMismatchError):
        l2_normalize([[1.0, 2.0], [3.0, 4.0]])


def test_l2_normalize_tiny_vector():
    out = l2_normalize([1e-160, 0.0])
    assert np.array_equal(out, [1.0, 0.0])


def test_cosine_sim_frozen():
    # [1,0] vs [1,1]: dot 1, norms 1 and sqrt(2)
    assert cosine_sim([1.0, 0.0], [1.0, 1.0]) == pytest.approx(
        0.7071067811865475, abs=1e-15
    )
    assert cosine_sim([1.0, 0.0], [1.0, 0.0]) == 1.0
    assert cosine_sim([1.0, 0.0], [-1.0, 0.0]) == -1.0
    assert cosine_sim([1.0, 0.0], [0.0, 1.0]) == 0.0


def test_cosine_sim_scale_invariant_fuzz():
    rng = np.random.default_rng(11)
    for _ in range(200):
        d = int(rng.integers(1, 12))
        a = rng.normal(size=d)
        b = rng.normal(size=d)
        if np.linalg.norm(a) == 0.0 or np.linalg.norm(b) == 0.0:
            continue
        s = cosine_sim(a, b)
        assert -1.0 <= s <= 1.0
        assert cosine_sim(3.5 * a, b) == pytest.approx(s, abs=1e-12)
        assert cosine_sim(a, 0.2 * b) == pytest.approx(s, abs=1e-12)
        assert cosine_sim(b, a) == pytest.approx(s, abs=1e-12)


def test_cosine_sim_errors():
    with pytest.raises(DimensionMismatchError):
        cosine_sim([1.0, 0.0], [1.0, 0.0, 0.0])
    with pytest.raises(NormalizationError):
        cosine_sim([0.0, 0.0], [1.0, 0.0])


def test_cosine_sim_many_matches_scalar():
    rng = np.random.default_rng(12)
    m = rng.normal(size=(7, 5))
    v = rng.normal(size=5)
    sims = cosine_sim_many(m, v)
    for i in range(7):
        assert sims[i] == pytest.approx(cosine_sim(m[i], v), abs=1e-12)


def test_cosine_sim_many_shape_errors():
    with pytest.raises(DimensionMismatchError):
        cosine_sim_many(np.zeros((2, 3)) + 1.0, np.ones(4))
    with pytest.raises(NormalizationError):
        cosine_sim_many(np.array([[1.0, 0.0], [0.0, 0.0]]), np.ones(2))


def test_compose_crop_ensemble_frozen():
    # normalize([1,0] + [0,1]) = [1/sqrt2, 1/sqrt2]
    out = compose_crop_ensemble([1.0, 0.0], [0.0, 1.0])
    assert np.allclose(out, [0.7071067811865475] * 2, atol=1e-15)


def test_compose_crop_ensemble_identical_inputs():
    v = l2_normalize([2.0, 1.0, -1.0])
    out = compose_crop_ensemble(v, v)
    assert np.allclose(out, v, atol=1e-15)


def test_compose_crop_ensemble_opposite_inputs_fail():
    with pytest.raises(NormalizationError):
        compose_crop_ensemble([1.0, 0.0], [-1.0, 0.0])


def test_compose_text_embedding_frozen():
    # mean of [1,0] and [0,1] renormalized
    out = compose_text_embedding([[1.0, 0.0], [0.0, 1.0]])
    assert np.allclose(out, [0.7071067811865475] * 2, atol=1e-15)


def test_compose_text_embedding_single_gets_normalized():
    out = compose_text_embedding([[3.0, 4.0]])
    assert np.allclose(out, [0.6, 0.8], atol=0.0)


def test_compose_text_embedding_errors():
    with pytest.raises(ValueError):
        compose_text_embedding([])
    with pytest.raises(DimensionMismatchError):
        compose_text_embedding([[1.0, 0.0], [1.0, 0.0, 0.0]])


def test_compose_unit_norm_invariant_fuzz():
    rng = np.random.default_rng(13)
    for _ in range(300):
        d = int(rng.integers(2, 10))
        k = int(rng.integers(1, 6))
        rows = rng.normal(size=(k, d))
        try:
            out = compose_text_embedding(list(rows))
        except NormalizationError:
            continue  # mean collapsed to zero: legitimately rejected
        assert is_unit_norm(out, UNIT_NORM_TOL)
        a = rng.normal(size=d)
        b = rng.normal(size=d)
        try:
            fused = compose_crop_ensemble(l2_normalize(a), l2_normalize(b))
        except NormalizationError:
            continue
        assert is_unit_norm(fused, UNIT_NORM_TOL)
