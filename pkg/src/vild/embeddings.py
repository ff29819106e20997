"""Vector primitives for composing and comparing embeddings.

All arithmetic runs in double precision regardless of the input dtype.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from vild.errors import DimensionMismatchError, NormalizationError

# norm deviation tolerated before a vector stops counting as unit-norm
UNIT_NORM_TOL = 1e-9


def as_vector(v) -> np.ndarray:
    """Coerce ``v`` to a 1-d float64 array."""
    arr = np.asarray(v, dtype=np.float64)
    if arr.ndim != 1:
        raise DimensionMismatchError(f"expected a 1-d vector, got shape {arr.shape}")
    return arr


def l2_normalize(v) -> np.ndarray:
    """Scale ``v`` to unit L2 norm."""
    arr = as_vector(v)
    if not np.all(np.isfinite(arr)):
        raise NormalizationError("cannot normalize a vector with non-finite entries")
    # pre-scale by the largest magnitude so squaring cannot underflow to
    # subnormals (or overflow) for representable inputs
    scale = float(np.max(np.abs(arr)))
    if scale == 0.0:
        raise NormalizationError("cannot normalize a zero vector")
    scaled = arr / scale
    return scaled / float(np.linalg.norm(scaled))


def is_unit_norm(v, tol: float = UNIT_NORM_TOL) -> bool:
    arr = as_vector(v)
    return bool(abs(float(np.linalg.norm(arr)) - 1.0) <= tol)


def cosine_sim(a, b) -> float:
    """Cosine similarity of two vectors of equal dimension."""
    va = as_vector(a)
    vb = as_vector(b)
    if va.shape != vb.shape:
        raise DimensionMismatchError(
            f"cosine_sim operands differ in dimension: {va.shape[0]} vs {vb.shape[0]}"
        )
    na = float(np.linalg.norm(va))
    nb = float(np.linalg.norm(vb))
    if na == 0.0 or nb == 0.0:
        raise NormalizationError("cosine similarity of a zero vector is undefined")
    value = float(np.dot(va, vb) / (na * nb))
    # rounding can push |value| a hair past 1
    return min(1.0, max(-1.0, value))


def cosine_sim_many(matrix, v) -> np.ndarray:
    """Cosine similarity of each row of ``matrix`` against ``v``."""
    m = np.asarray(matrix, dtype=np.float64)
    if m.ndim != 2:
        raise DimensionMismatchError(f"expected a 2-d matrix, got shape {m.shape}")
    vec = as_vector(v)
    if m.shape[1] != vec.shape[0]:
        raise DimensionMismatchError(
            f"matrix rows have dimension {m.shape[1]}, vector has {vec.shape[0]}"
        )
    row_norms = np.linalg.norm(m, axis=1)
    nv = float(np.linalg.norm(vec))
    if nv == 0.0 or np.any(row_norms == 0.0):
        raise NormalizationError("cosine similarity of a zero vector is undefined")
    sims = (m @ vec) / (row_norms * nv)
    return np.clip(sims, -1.0, 1.0)


def compose_crop_ensemble(v_1x, v_1p5x) -> np.ndarray:
    """Fuse the embeddings of a region crop and its 1.5x-enlarged crop.

    Both inputs must be unit-norm vectors of equal dimension; the result
    is the renormalized sum.
    """
    a = as_vector(v_1x)
    b = as_vector(v_1p5x)
    if a.shape != b.shape:
        raise DimensionMismatchError(
            f"crop embeddings differ in dimension: {a.shape[0]} vs {b.shape[0]}"
        )
    return l2_normalize(a + b)


def compose_text_embedding(per_prompt: Sequence) -> np.ndarray:
    """Average a category's per-prompt embeddings and renormalize."""
    if len(per_prompt) == 0:
        raise ValueError("cannot compose a text embedding from an empty list")
    rows = [as_vector(p) for p in per_prompt]
    dim = rows[0].shape[0]
    for r in rows[1:]:
        if r.shape[0] != dim:
            raise DimensionMismatchError(
                f"per-prompt embeddings differ in dimension: {dim} vs {r.shape[0]}"
            )
    return l2_normalize(np.mean(np.stack(rows), axis=0))
