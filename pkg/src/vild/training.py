"""Region-head training: cross-entropy against text embeddings plus
distillation toward teacher embeddings, with analytic gradients.

The head maps backbone features to region embeddings via e = W f + b.
The text loss is cross entropy over temperature-softmaxed cosine
similarities between e and the classifier's embeddings (background at
slot 0); the image loss is the L1 or squared-L2 distance between e and
the teacher embedding of the same region. Gradients are hand-derived
and exact; training is full-batch gradient descent with a fixed step
decay schedule.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from vild.classifier import TAU_DEFAULT, TextClassifier
from vild.errors import (
    ConfigError,
    DataFormatError,
    DimensionMismatchError,
    NormalizationError,
    NumericalError,
)

DISTILL_WEIGHT_DEFAULT = 0.5
DISTILL_NORMS = ("l1", "l2")
OBJECTIVES = ("vild", "text", "image")

BACKGROUND_LABEL = -1

# step-decay milestones: divide the learning rate by 10 at each of
# these fractions of the iteration budget
DECAY_MILESTONES = (0.9, 0.95, 0.975)


@dataclass(eq=False)
class RegionHead:
    """Affine map from backbone features to region embeddings, plus the
    learned background embedding."""

    W: np.ndarray  # (d_out, d_in)
    b: np.ndarray  # (d_out,)
    e_bg: np.ndarray  # (d_out,)

    def __post_init__(self):
        self.W = np.asarray(self.W, dtype=np.float64)
        self.b = np.asarray(self.b, dtype=np.float64)
        self.e_bg = np.asarray(self.e_bg, dtype=np.float64)
        if self.W.ndim != 2:
            raise DimensionMismatchError(f"W must be 2-d, got shape {self.W.shape}")
        d_out = self.W.shape[0]
        if self.b.shape != (d_out,) or self.e_bg.shape != (d_out,):
            raise DimensionMismatchError(
                f"b {self.b.shape} and e_bg {self.e_bg.shape} must both have "
                f"shape ({d_out},)"
            )

    @property
    def d_in(self) -> int:
        return int(self.W.shape[1])

    @property
    def d_out(self) -> int:
        return int(self.W.shape[0])

    @classmethod
    def initialize(cls, d_in: int, d_out: int, rng: np.random.Generator) -> "RegionHead":
        """Fresh head: W uniform in [-1/sqrt(d_in), 1/sqrt(d_in)], zero
        bias, unit-norm random background embedding."""
        if d_in < 1 or d_out < 1:
            raise ConfigError(f"head dimensions must be >= 1, got {d_in}x{d_out}")
        bound = 1.0 / math.sqrt(d_in)
        w = rng.uniform(-bound, bound, size=(d_out, d_in))
        bg = rng.normal(size=d_out)
        norm = float(np.linalg.norm(bg))
        if norm == 0.0:
            raise NormalizationError("background embedding initialized to zero")
        return cls(W=w, b=np.zeros(d_out), e_bg=bg / norm)

    def region_embeddings(self, features) -> np.ndarray:
        """Map (N, d_in) features to (N, d_out) region embeddings."""
        f = _as_matrix(features, self.d_in, "features")
        return f @ self.W.T + self.b

    def copy(self) -> "RegionHead":
        return RegionHead(W=self.W.copy(), b=self.b.copy(), e_bg=self.e_bg.copy())


@dataclass(eq=False)
class TrainingSample:
    """One image's training data: N labeled online proposals and M
    offline proposals with teacher embeddings. Labels are category ids;
    -1 marks background."""

    image_id: str
    online_features: np.ndarray  # (N, d_in)
    online_labels: np.ndarray  # (N,) int
    offline_features: np.ndarray  # (M, d_in)
    offline_teachers: np.ndarray  # (M, d_out)

    def __post_init__(self):
        self.online_features = np.atleast_2d(
            np.asarray(self.online_features, dtype=np.float64)
        )
        self.offline_features = np.atleast_2d(
            np.asarray(self.offline_features, dtype=np.float64)
        )
        self.offline_teachers = np.atleast_2d(
            np.asarray(self.offline_teachers, dtype=np.float64)
        )
        self.online_labels = np.asarray(self.online_labels, dtype=np.int64)
        if self.online_labels.ndim != 1:
            raise DataFormatError("online labels must be a 1-d integer array")
        if self.online_features.shape[0] != self.online_labels.shape[0]:
            raise DataFormatError(
                f"image {self.image_id}: {self.online_features.shape[0]} online "
                f"features for {self.online_labels.shape[0]} labels"
            )
        if self.offline_features.shape[0] != self.offline_teachers.shape[0]:
            raise DataFormatError(
                f"image {self.image_id}: {self.offline_features.shape[0]} offline "
                f"features for {self.offline_teachers.shape[0]} teachers"
            )

    @property
    def n_online(self) -> int:
        return int(self.online_features.shape[0])

    @property
    def m_offline(self) -> int:
        return int(self.offline_features.shape[0])


@dataclass
class TrainConfig:
    tau: float = TAU_DEFAULT
    distill_weight: float = DISTILL_WEIGHT_DEFAULT
    distill_norm: str = "l1"
    learning_rate: float = 0.5
    iterations: int = 2000
    seed: int = 0
    objective: str = "vild"

    def __post_init__(self):
        if self.tau <= 0.0:
            raise ConfigError(f"tau must be > 0, got {self.tau}")
        if self.distill_weight < 0.0:
            raise ConfigError(
                f"distill_weight must be >= 0, got {self.distill_weight}"
            )
        if self.distill_norm not in DISTILL_NORMS:
            raise ConfigError(
                f"distill_norm must be one of {DISTILL_NORMS}, got {self.distill_norm!r}"
            )
        if self.learning_rate <= 0.0:
            raise ConfigError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.iterations < 0:
            raise ConfigError(f"iterations must be >= 0, got {self.iterations}")
        if self.objective not in OBJECTIVES:
            raise ConfigError(
                f"objective must be one of {OBJECTIVES}, got {self.objective!r}"
            )


@dataclass(eq=False)
class LossResult:
    """Loss value with gradients for every head parameter."""

    loss: float
    d_w: np.ndarray
    d_b: np.ndarray
    d_bg: np.ndarray

    def scaled(self, factor: float) -> "LossResult":
        return LossResult(
            loss=factor * self.loss,
            d_w=factor * self.d_w,
            d_b=factor * self.d_b,
            d_bg=factor * self.d_bg,
        )


def _as_matrix(arr, dim: int | None, what: str) -> np.ndarray:
    m = np.asarray(arr, dtype=np.float64)
    if m.ndim != 2:
        raise DimensionMismatchError(f"{what} must be 2-d, got shape {m.shape}")
    if dim is not None and m.shape[1] != dim:
        raise DimensionMismatchError(
            f"{what} have dimension {m.shape[1]}, expected {dim}"
        )
    return m


def _row_norms(m: np.ndarray, what: str) -> np.ndarray:
    norms = np.linalg.norm(m, axis=1)
    if np.any(norms == 0.0):
        raise NumericalError(f"{what} collapsed to zero norm")
    return norms


def _text_loss_weighted(
    w_mat: np.ndarray,
    b_vec: np.ndarray,
    e_bg: np.ndarray,
    text_embeddings: np.ndarray,
    tau: float,
    features: np.ndarray,
    slots: np.ndarray,
    weights: np.ndarray,
) -> LossResult:
    """Weighted cross-entropy over cosine-softmax logits.

    ``slots`` index the 1+C logit rows (0 = background); ``weights`` are
    per-proposal loss weights. Gradients are exact.
    """
    n = features.shape[0]
    emb = features @ w_mat.T + b_vec
    emb_norms = _row_norms(emb, "region embeddings")
    emb_hat = emb / emb_norms[:, None]
    text_norms = _row_norms(text_embeddings, "text embeddings")
    text_hat = text_embeddings / text_norms[:, None]
    bg_norm = float(np.linalg.norm(e_bg))
    if bg_norm == 0.0:
        raise NumericalError("background embedding collapsed to zero norm")
    bg_hat = e_bg / bg_norm

    logits = np.empty((n, 1 + text_hat.shape[0]), dtype=np.float64)
    logits[:, 0] = emb_hat @ bg_hat
    logits[:, 1:] = emb_hat @ text_hat.T

    scaled = logits / tau
    max_row = np.max(scaled, axis=1)
    lse = max_row + np.log(np.sum(np.exp(scaled - max_row[:, None]), axis=1))
    rows = np.arange(n)
    ce = lse - scaled[rows, slots]
    loss = float(weights @ ce)

    probs = np.exp(scaled - lse[:, None])
    grad_z = probs
    grad_z[rows, slots] -= 1.0
    grad_z *= (weights / tau)[:, None]

    # d logit_k / d e = (u_k - z_k * e_hat) / ||e||, u_0 = bg_hat, u_k = t_hat_k
    z_dot = np.sum(grad_z * logits, axis=1)
    d_emb = grad_z[:, 1:] @ text_hat
    d_emb += grad_z[:, 0:1] * bg_hat[None, :]
    d_emb -= z_dot[:, None] * emb_hat
    d_emb /= emb_norms[:, None]

    d_w = d_emb.T @ features
    d_b = np.sum(d_emb, axis=0)
    g0 = grad_z[:, 0]
    d_bg = ((g0 @ emb_hat) - float(g0 @ logits[:, 0]) * bg_hat) / bg_norm
    return LossResult(loss=loss, d_w=d_w, d_b=d_b, d_bg=d_bg)


def _image_loss_weighted(
    w_mat: np.ndarray,
    b_vec: np.ndarray,
    features: np.ndarray,
    teachers: np.ndarray,
    norm: str,
    weights: np.ndarray,
) -> LossResult:
    """Weighted distillation distance between head outputs and teacher
    embeddings: L1 or squared L2 per proposal."""
    emb = features @ w_mat.T + b_vec
    resid = teachers - emb
    if norm == "l1":
        per = np.sum(np.abs(resid), axis=1)
        d_emb = -np.sign(resid) * weights[:, None]
    elif norm == "l2":
        per = np.sum(resid * resid, axis=1)
        d_emb = -2.0 * resid * weights[:, None]
    else:
        raise ConfigError(f"distill_norm must be one of {DISTILL_NORMS}, got {norm!r}")
    loss = float(weights @ per)
    d_w = d_emb.T @ features
    d_b = np.sum(d_emb, axis=0)
    return LossResult(
        loss=loss, d_w=d_w, d_b=d_b, d_bg=np.zeros(w_mat.shape[0], dtype=np.float64)
    )


def vild_text_loss(
    head: RegionHead,
    clf: TextClassifier,
    features,
    labels,
) -> LossResult:
    """Mean cross entropy of N labeled proposals under the classifier.

    ``labels`` hold the classifier category index per proposal, or -1
    for background (softmax slot 0). The background logit comes from the
    head's own background embedding; ``clf.background`` is not consulted.
    """
    f = _as_matrix(features, head.d_in, "online features")
    y = np.asarray(labels, dtype=np.int64)
    n = f.shape[0]
    if n == 0:
        raise DataFormatError("text loss needs at least one online proposal")
    if y.shape != (n,):
        raise DataFormatError(f"{n} features for {y.size} labels")
    if np.any(y < BACKGROUND_LABEL) or np.any(y >= len(clf)):
        raise DataFormatError(
            f"labels must lie in [-1, {len(clf) - 1}], got range "
            f"[{y.min()}, {y.max()}]"
        )
    if clf.dim != head.d_out:
        raise DimensionMismatchError(
            f"classifier dimension {clf.dim} does not match head output "
            f"dimension {head.d_out}"
        )
    weights = np.full(n, 1.0 / n)
    return _text_loss_weighted(
        head.W, head.b, head.e_bg, clf.embeddings, clf.tau, f, y + 1, weights
    )


def vild_image_loss(
    head: RegionHead,
    features,
    teachers,
    norm: str = "l1",
) -> LossResult:
    """Mean distillation distance of M proposals toward their teacher
    embeddings. The background embedding receives no gradient."""
    f = _as_matrix(features, head.d_in, "offline features")
    v = _as_matrix(teachers, head.d_out, "teacher embeddings")
    m = f.shape[0]
    if m == 0:
        raise DataFormatError("image loss needs at least one offline proposal")
    if v.shape[0] != m:
        raise DataFormatError(f"{m} features for {v.shape[0]} teachers")
    weights = np.full(m, 1.0 / m)
    return _image_loss_weighted(head.W, head.b, f, v, norm, weights)


def labels_to_indices(labels, clf: TextClassifier) -> np.ndarray:
    """Map category-id labels (-1 = background) to classifier indices."""
    y = np.asarray(labels, dtype=np.int64)
    index_of = {cid: i for i, cid in enumerate(clf.category_ids())}
    out = np.empty_like(y)
    for i, raw in enumerate(y):
        label = int(raw)
        if label == BACKGROUND_LABEL:
            out[i] = BACKGROUND_LABEL
        elif label in index_of:
            out[i] = index_of[label]
        else:
            raise DataFormatError(
                f"label {label} is not a category of the training classifier"
            )
    return out


def vild_loss(
    head: RegionHead,
    clf: TextClassifier,
    sample: TrainingSample,
    config: TrainConfig,
) -> LossResult:
    """Combined loss of one sample: text term plus distill_weight times
    the image term. A term with no proposals is skipped; sample labels
    are category ids and are mapped through the classifier."""
    if sample.n_online == 0 and sample.m_offline == 0:
        raise DataFormatError(f"image {sample.image_id}: sample has no proposals")
    parts: list[LossResult] = []
    if sample.n_online > 0:
        indices = labels_to_indices(sample.online_labels, clf)
        parts.append(vild_text_loss(head, clf, sample.online_features, indices))
    if sample.m_offline > 0 and config.distill_weight != 0.0:
        parts.append(
            vild_image_loss(
                head,
                sample.offline_features,
                sample.offline_teachers,
                config.distill_norm,
            ).scaled(config.distill_weight)
        )
    if not parts:
        d_out, d_in = head.W.shape
        return LossResult(
            loss=0.0,
            d_w=np.zeros((d_out, d_in)),
            d_b=np.zeros(d_out),
            d_bg=np.zeros(d_out),
        )
    if len(parts) == 1:
        return parts[0]
    total = parts[0]
    for extra in parts[1:]:
        total = LossResult(
            loss=total.loss + extra.loss,
            d_w=total.d_w + extra.d_w,
            d_b=total.d_b + extra.d_b,
            d_bg=total.d_bg + extra.d_bg,
        )
    return total


def learning_rate_at(iteration: int, total: int, base: float) -> float:
    """Step-decay schedule: base rate divided by 10 at each milestone
    fraction of the budget."""
    lr = base
    for fraction in DECAY_MILESTONES:
        if iteration >= math.ceil(fraction * total):
            lr /= 10.0
    return lr


@dataclass(eq=False)
class _FlatBatch:
    """Concatenated proposals: targets are softmax slots for the text
    batch and teacher embeddings for the image batch."""

    features: np.ndarray
    targets: np.ndarray
    weights: np.ndarray


def _flatten(
    samples: Sequence[TrainingSample],
    clf: TextClassifier,
    config: TrainConfig,
) -> tuple[_FlatBatch | None, _FlatBatch | None, int, int]:
    """Concatenate per-image proposals with weights 1/(images * per-image
    count), so the batch loss equals the mean of per-sample losses."""
    n_images = len(samples)
    on_f, on_s, on_w = [], [], []
    off_f, off_v, off_w = [], [], []
    d_in = None
    for s in samples:
        for arr in (s.online_features, s.offline_features):
            if arr.shape[0] > 0:
                if d_in is None:
                    d_in = arr.shape[1]
                elif arr.shape[1] != d_in:
                    raise DimensionMismatchError(
                        f"image {s.image_id}: feature dimension {arr.shape[1]} "
                        f"differs from {d_in}"
                    )
        if s.n_online and config.objective != "image":
            on_f.append(s.online_features)
            on_s.append(labels_to_indices(s.online_labels, clf) + 1)
            on_w.append(np.full(s.n_online, 1.0 / (n_images * s.n_online)))
        if s.m_offline and config.objective != "text":
            if s.offline_teachers.shape[1] != clf.dim:
                raise DimensionMismatchError(
                    f"image {s.image_id}: teacher dimension "
                    f"{s.offline_teachers.shape[1]} differs from classifier "
                    f"dimension {clf.dim}"
                )
            off_f.append(s.offline_features)
            off_v.append(s.offline_teachers)
            off_w.append(np.full(s.m_offline, 1.0 / (n_images * s.m_offline)))
    if d_in is None:
        raise DataFormatError("training data contains no proposals")
    text_batch = (
        _FlatBatch(np.concatenate(on_f), np.concatenate(on_s), np.concatenate(on_w))
        if on_f
        else None
    )
    image_batch = (
        _FlatBatch(np.concatenate(off_f), np.concatenate(off_v), np.concatenate(off_w))
        if off_f
        else None
    )
    return text_batch, image_batch, d_in, clf.dim


def train(
    samples: Sequence[TrainingSample],
    clf: TextClassifier,
    config: TrainConfig,
    *,
    on_iteration: Callable[[int, float], None] | None = None,
) -> RegionHead:
    """Full-batch gradient descent on the combined loss.

    The head is initialized from ``config.seed``; two runs with the same
    data and config produce bitwise-identical parameters. Raises
    NumericalError if the loss stops being finite.
    """
    if not samples:
        raise DataFormatError("training needs at least one sample")
    text_batch, image_batch, d_in, d_out = _flatten(samples, clf, config)
    if config.objective == "text" and text_batch is None:
        raise DataFormatError("objective 'text' needs labeled online proposals")
    if config.objective == "image" and image_batch is None:
        raise DataFormatError("objective 'image' needs offline proposals")

    rng = np.random.default_rng(config.seed)
    head = RegionHead.initialize(d_in, d_out, rng)
    weight = config.distill_weight if config.objective == "vild" else (
        1.0 if config.objective == "image" else 0.0
    )

    for iteration in range(config.iterations):
        loss = 0.0
        d_w = np.zeros_like(head.W)
        d_b = np.zeros_like(head.b)
        d_bg = np.zeros_like(head.e_bg)
        if text_batch is not None:
            part = _text_loss_weighted(
                head.W,
                head.b,
                head.e_bg,
                clf.embeddings,
                config.tau,
                text_batch.features,
                text_batch.targets,
                text_batch.weights,
            )
            loss += part.loss
            d_w += part.d_w
            d_b += part.d_b
            d_bg += part.d_bg
        if image_batch is not None and weight != 0.0:
            part = _image_loss_weighted(
                head.W,
                head.b,
                image_batch.features,
                image_batch.targets,
                config.distill_norm,
                image_batch.weights,
            )
            loss += weight * part.loss
            d_w += weight * part.d_w
            d_b += weight * part.d_b
        if not math.isfinite(loss):
            raise NumericalError(
                f"training diverged at iteration {iteration}: loss={loss}"
            )
        if on_iteration is not None:
            on_iteration(iteration, loss)
        lr = learning_rate_at(iteration, config.iterations, config.learning_rate)
        head.W -= lr * d_w
        head.b -= lr * d_b
        head.e_bg -= lr * d_bg
    return head
