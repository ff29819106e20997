"""Detection post-processing: suppression, rescoring, and ensembling."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

from vild import kernels
from vild.boxes import Box, Proposal, boxes_to_array
from vild.errors import ConfigError, DataFormatError

# pipeline defaults
PER_CLASS_NMS_THRESHOLD = 0.6
CLASS_AGNOSTIC_NMS_THRESHOLD = 0.9
MAX_DETECTIONS = 300
MAX_PROPOSALS = 1000
ENSEMBLE_LAMBDA = 2.0 / 3.0


@dataclass(frozen=True)
class Detection:
    """One scored box for one category. ``source_id`` identifies the
    proposal the detection came from, unique per image."""

    box: Box
    category_id: int
    score: float
    source_id: int

    def __post_init__(self):
        if not math.isfinite(self.score):
            raise DataFormatError(f"detection score is not finite: {self.score}")


@dataclass(frozen=True)
class EnsembleConfig:
    """Geometric-mean ensembling weights.

    ``lam`` is the exponent on the text-trained model for base
    categories; novel categories swap the exponents toward the
    distillation-trained model.
    """

    base_ids: frozenset[int]
    lam: float = ENSEMBLE_LAMBDA

    def __post_init__(self):
        if not (0.0 <= self.lam <= 1.0):
            raise ConfigError(f"ensemble lambda must lie in [0, 1], got {self.lam}")
        object.__setattr__(self, "base_ids", frozenset(self.base_ids))


def _order(dets: Sequence[Detection]) -> list[Detection]:
    # deterministic total order: score desc, then source, then category
    return sorted(dets, key=lambda d: (-d.score, d.source_id, d.category_id))


def nms(
    dets: Sequence[Detection],
    iou_threshold: float,
    *,
    class_agnostic: bool = False,
    max_out: int | None = None,
) -> list[Detection]:
    """Greedy non-maximum suppression.

    Detections are processed in score-descending order (ties: lower
    source_id, then lower category_id). A detection is kept iff its IoU
    with every already-kept detection, of the same category when
    ``class_agnostic`` is false, stays below ``iou_threshold``. The kept
    list is truncated to ``max_out`` when given.
    """
    if not (0.0 < iou_threshold <= 1.0):
        raise ConfigError(f"NMS threshold must lie in (0, 1], got {iou_threshold}")
    if max_out is not None and max_out < 1:
        raise ConfigError(f"max_out must be >= 1, got {max_out}")
    ordered = _order(dets)
    if not ordered:
        return []
    if class_agnostic:
        kept = _nms_group(ordered, iou_threshold)
    else:
        by_cat: dict[int, list[Detection]] = {}
        for d in ordered:
            by_cat.setdefault(d.category_id, []).append(d)
        kept = []
        for cat in sorted(by_cat):
            kept.extend(_nms_group(by_cat[cat], iou_threshold))
        kept = _order(kept)
    if max_out is not None:
        kept = kept[:max_out]
    return kept


def _nms_group(ordered: Sequence[Detection], iou_threshold: float) -> list[Detection]:
    boxes = boxes_to_array([d.box for d in ordered])
    keep = kernels.nms_keep(boxes, iou_threshold)
    return [ordered[i] for i in keep]


def finalize(
    dets: Sequence[Detection],
    *,
    iou_threshold: float = PER_CLASS_NMS_THRESHOLD,
    max_detections: int = MAX_DETECTIONS,
) -> list[Detection]:
    """Standard per-image output stage: per-class NMS, then keep the top
    ``max_detections`` by score."""
    return nms(dets, iou_threshold, class_agnostic=False, max_out=max_detections)


def dedupe_proposals(
    proposals: Sequence[Proposal],
    *,
    iou_threshold: float = CLASS_AGNOSTIC_NMS_THRESHOLD,
    max_out: int = MAX_PROPOSALS,
) -> list[Proposal]:
    """Class-agnostic suppression of near-duplicate proposals by
    objectness, truncated to ``max_out``."""
    if not (0.0 < iou_threshold <= 1.0):
        raise ConfigError(f"NMS threshold must lie in (0, 1], got {iou_threshold}")
    if max_out < 1:
        raise ConfigError(f"max_out must be >= 1, got {max_out}")
    order = sorted(range(len(proposals)), key=lambda i: (-proposals[i].objectness, i))
    boxes = boxes_to_array([proposals[i].box for i in order])
    keep = kernels.nms_keep(boxes, iou_threshold)
    return [proposals[order[i]] for i in keep[:max_out]]


def objectness_rescore(score: float, objectness: float) -> float:
    """Geometric mean of a classification score and an objectness score."""
    if not (0.0 <= score <= 1.0):
        raise DataFormatError(f"score must lie in [0, 1], got {score}")
    if not (0.0 <= objectness <= 1.0):
        raise DataFormatError(f"objectness must lie in [0, 1], got {objectness}")
    return math.sqrt(score * objectness)


def ensemble_scores(
    p_text: float, p_image: float, category_id: int, cfg: EnsembleConfig
) -> float:
    """Weighted geometric mean of two model probabilities.

    Base categories weight the text-trained model by ``lam``; all other
    categories swap the exponents.
    """
    for name, p in (("p_text", p_text), ("p_image", p_image)):
        if not (0.0 <= p <= 1.0):
            raise DataFormatError(f"{name} must lie in [0, 1], got {p}")
    lam = cfg.lam if category_id in cfg.base_ids else 1.0 - cfg.lam
    return (p_text**lam) * (p_image ** (1.0 - lam))


def ensemble_detections(
    dets_text: Sequence[Detection],
    dets_image: Sequence[Detection],
    cfg: EnsembleConfig,
) -> list[Detection]:
    """Merge two detection lists by (source_id, category_id) and combine
    scores with :func:`ensemble_scores`.

    A pair missing from one list contributes probability 0 from that
    side. Boxes must agree for shared keys; the output is sorted by
    score descending.
    """
    a_map = _key_detections(dets_text, "text")
    b_map = _key_detections(dets_image, "image")
    out: list[Detection] = []
    for key in sorted(a_map.keys() | b_map.keys()):
        da = a_map.get(key)
        db = b_map.get(key)
        if da is not None and db is not None and da.box != db.box:
            raise DataFormatError(
                f"ensemble inputs disagree on the box for source {key[0]}, "
                f"category {key[1]}"
            )
        base = da if da is not None else db
        assert base is not None
        score = ensemble_scores(
            da.score if da is not None else 0.0,
            db.score if db is not None else 0.0,
            base.category_id,
            cfg,
        )
        out.append(
            Detection(
                box=base.box,
                category_id=base.category_id,
                score=score,
                source_id=base.source_id,
            )
        )
    return _order(out)


def _key_detections(
    dets: Sequence[Detection], side: str
) -> dict[tuple[int, int], Detection]:
    out: dict[tuple[int, int], Detection] = {}
    for d in dets:
        key = (d.source_id, d.category_id)
        if key in out:
            raise DataFormatError(
                f"duplicate (source_id, category_id) key {key} in {side} detections"
            )
        out[key] = d
    return out
