"""Text-embedding classifiers over region embeddings.

A classifier holds one text embedding per category plus a learned
background embedding. A region embedding is scored by cosine similarity
against all of them, sharpened by a temperature softmax; slot 0 is
always background and slots 1..C follow the classifier's category
order.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence, Tuple

import numpy as np

from vild.boxes import Proposal
from vild.embeddings import as_vector, cosine_sim_many
from vild.errors import ConfigError, DataFormatError, DimensionMismatchError
from vild.postprocess import Detection

TAU_DEFAULT = 0.01
TAU_MIN = 1e-6

BACKGROUND_ID = "__background__"


@dataclass(frozen=True, eq=False)
class TextClassifier:
    """Ordered category text embeddings, a background embedding, and a
    softmax temperature."""

    embeddings: np.ndarray  # (C, D)
    ids: Tuple[str, ...]
    background: np.ndarray  # (D,)
    tau: float = TAU_DEFAULT

    def __post_init__(self):
        emb = np.asarray(self.embeddings, dtype=np.float64)
        bg = as_vector(self.background)
        if emb.ndim != 2:
            raise DimensionMismatchError(
                f"classifier embeddings must be (C, D), got shape {emb.shape}"
            )
        if emb.shape[0] != len(self.ids):
            raise DataFormatError(
                f"{emb.shape[0]} embeddings for {len(self.ids)} ids"
            )
        if len(set(self.ids)) != len(self.ids):
            raise DataFormatError("classifier ids must be unique")
        if BACKGROUND_ID in self.ids:
            raise DataFormatError(
                f"{BACKGROUND_ID} is reserved and cannot be a category id"
            )
        if emb.shape[0] == 0:
            raise DataFormatError("classifier needs at least one category")
        if emb.shape[1] != bg.shape[0]:
            raise DimensionMismatchError(
                f"background dimension {bg.shape[0]} does not match "
                f"category embeddings of dimension {emb.shape[1]}"
            )
        if not (np.all(np.isfinite(emb)) and np.all(np.isfinite(bg))):
            raise DataFormatError("classifier embeddings must be finite")
        if self.tau < TAU_MIN:
            raise ConfigError(f"tau must be >= {TAU_MIN}, got {self.tau}")
        object.__setattr__(self, "embeddings", emb)
        object.__setattr__(self, "background", bg)
        object.__setattr__(self, "ids", tuple(str(i) for i in self.ids))

    @property
    def dim(self) -> int:
        return int(self.embeddings.shape[1])

    def __len__(self) -> int:
        return int(self.embeddings.shape[0])

    def category_ids(self) -> list[int]:
        """Classifier ids as integer category ids."""
        out = []
        for s in self.ids:
            try:
                out.append(int(s))
            except ValueError as exc:
                raise DataFormatError(
                    f"classifier id {s!r} is not an integer category id"
                ) from exc
        return out

    @classmethod
    def from_embedding_table(
        cls,
        records: Mapping[str, np.ndarray],
        background: np.ndarray,
        *,
        ids: Sequence[str] | None = None,
        tau: float = TAU_DEFAULT,
    ) -> "TextClassifier":
        """Build a classifier from id-keyed embeddings.

        ``ids`` fixes the category order (default: mapping order). Every
        id must be present in ``records``.
        """
        wanted = list(records.keys()) if ids is None else [str(i) for i in ids]
        rows = []
        for key in wanted:
            if key not in records:
                raise DataFormatError(f"no embedding for id {key!r}")
            rows.append(as_vector(records[key]))
        return cls(
            embeddings=np.stack(rows),
            ids=tuple(wanted),
            background=background,
            tau=tau,
        )


@dataclass(frozen=True, eq=False)
class ScoreVector:
    """Logits and probabilities over background plus C categories.
    Index 0 is background; index i+1 is the classifier's category i."""

    logits: np.ndarray
    probs: np.ndarray


def softmax_temperature(logits, tau: float) -> np.ndarray:
    """Numerically stable softmax of ``logits / tau``."""
    if tau < TAU_MIN:
        raise ConfigError(f"tau must be >= {TAU_MIN}, got {tau}")
    z = as_vector(logits) / tau
    z = z - np.max(z)
    e = np.exp(z)
    return e / np.sum(e)


def score_region(clf: TextClassifier, region_embedding) -> ScoreVector:
    """Score one region embedding against a classifier.

    Logit 0 is the cosine similarity to the background embedding;
    logits 1..C are similarities to the category text embeddings.
    """
    e_r = as_vector(region_embedding)
    if e_r.shape[0] != clf.dim:
        raise DimensionMismatchError(
            f"region embedding dimension {e_r.shape[0]} does not match "
            f"classifier dimension {clf.dim}"
        )
    logits = np.empty(1 + len(clf), dtype=np.float64)
    logits[0] = cosine_sim_many(clf.background[None, :], e_r)[0]
    logits[1:] = cosine_sim_many(clf.embeddings, e_r)
    return ScoreVector(logits=logits, probs=softmax_temperature(logits, clf.tau))


def background_probability(clf: TextClassifier, region_embedding) -> float:
    """Probability mass the classifier puts on background."""
    return float(score_region(clf, region_embedding).probs[0])


def classify_regions(
    clf: TextClassifier,
    regions: Sequence[tuple[Proposal, np.ndarray]],
) -> list[Detection]:
    """Turn (proposal, region embedding) pairs into per-category
    detections; source_id is the region's index in the input."""
    category_ids = clf.category_ids()
    out: list[Detection] = []
    for source_id, (proposal, embedding) in enumerate(regions):
        probs = score_region(clf, embedding).probs
        for i, cid in enumerate(category_ids):
            out.append(
                Detection(
                    box=proposal.box,
                    category_id=cid,
                    score=float(probs[i + 1]),
                    source_id=source_id,
                )
            )
    return out


def expand_vocabulary(
    category_clf: TextClassifier,
    attribute_clf: TextClassifier,
    region_embedding,
) -> np.ndarray:
    """Joint category-attribute probabilities for one region.

    Each classifier induces an independent softmax over its own entries
    (background slot excluded); the result is their outer product, a
    (C, A) matrix summing to 1.
    """
    e_r = as_vector(region_embedding)
    p_cat = _category_softmax(category_clf, e_r)
    p_attr = _category_softmax(attribute_clf, e_r)
    return np.outer(p_cat, p_attr)


def _category_softmax(clf: TextClassifier, e_r: np.ndarray) -> np.ndarray:
    if e_r.shape[0] != clf.dim:
        raise DimensionMismatchError(
            f"region embedding dimension {e_r.shape[0]} does not match "
            f"classifier dimension {clf.dim}"
        )
    sims = cosine_sim_many(clf.embeddings, e_r)
    return softmax_temperature(sims, clf.tau)
