"""Detection evaluation: greedy matching, interpolated AP, and AR."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from vild import kernels
from vild.boxes import Box, Proposal, boxes_to_array
from vild.errors import ConfigError, DataFormatError
from vild.numfmt import quantize_floats
from vild.postprocess import MAX_DETECTIONS, Detection
from vild.vocab import Vocabulary

# IoU grid 0.50:0.95 step 0.05 and the 101-point recall grid
IOU_THRESHOLDS: np.ndarray = np.linspace(0.5, 0.95, 10)
RECALL_GRID: np.ndarray = np.linspace(0.0, 1.0, 101)
AR_KS = (100, 300, 1000)


@dataclass(frozen=True)
class GroundTruth:
    image_id: str
    category_id: int
    box: Box


@dataclass
class EvalReport:
    """Evaluation metrics; a metric is None when undefined for the data
    (for example no ground truth in that frequency bucket)."""

    ap: float | None = None
    ap50: float | None = None
    ap75: float | None = None
    ap_rare: float | None = None
    ap_common: float | None = None
    ap_frequent: float | None = None
    ar: dict[int, float] = field(default_factory=dict)
    per_category: dict[int, float] = field(default_factory=dict)

    def to_dict(self) -> dict:
        out: dict = {}
        for key, value in (
            ("AP", self.ap),
            ("AP50", self.ap50),
            ("AP75", self.ap75),
            ("AP_r", self.ap_rare),
            ("AP_c", self.ap_common),
            ("AP_f", self.ap_frequent),
        ):
            if value is not None:
                out[key] = value
        for k in sorted(self.ar):
            out[f"AR@{k}"] = self.ar[k]
        if self.per_category:
            out["per_category_AP"] = {
                str(cid): self.per_category[cid] for cid in sorted(self.per_category)
            }
        return out

    def to_json(self) -> str:
        return json.dumps(
            quantize_floats(self.to_dict()), sort_keys=True, separators=(",", ":")
        )

    def table(self) -> str:
        rows = []
        for key, value in self.to_dict().items():
            if key == "per_category_AP":
                continue
            rows.append((key, value))
        for cid in sorted(self.per_category):
            rows.append((f"AP[{cid}]", self.per_category[cid]))
        if not rows:
            return "(no metrics: empty evaluation)"
        width = max(len(k) for k, _ in rows)
        return "\n".join(f"{k:<{width}}  {v:.4f}" for k, v in rows)


def match_detections(
    dets: Sequence[Detection],
    gts: Sequence[GroundTruth],
    iou_threshold: float,
) -> list[tuple[Detection, GroundTruth | None]]:
    """Greedy one-to-one matching for a single image and category.

    Detections are processed in score-descending order (ties: lower
    source_id); each takes the unmatched ground truth with the highest
    IoU at or above the threshold, lower index on ties. Returns
    (detection, match-or-None) pairs in processing order.
    """
    ordered = sorted(dets, key=lambda d: (-d.score, d.source_id, d.category_id))
    if not ordered:
        return []
    ious = kernels.iou_matrix(
        boxes_to_array([d.box for d in ordered]),
        boxes_to_array([g.box for g in gts]),
    )
    assignment = kernels.greedy_match(ious, iou_threshold)
    return [
        (d, gts[assignment[i]] if assignment[i] >= 0 else None)
        for i, d in enumerate(ordered)
    ]


def average_precision(scores, tp_flags, num_gt: int) -> float | None:
    """101-point interpolated average precision.

    ``scores`` and ``tp_flags`` describe every detection of one category
    over the whole dataset; ``num_gt`` is that category's ground-truth
    count. Detections are ranked by score descending (stable, so equal
    scores keep input order); interpolated precision at each recall grid
    point is the maximum precision at any recall at or beyond it.
    Returns None when there is no ground truth.
    """
    if num_gt < 0:
        raise DataFormatError(f"num_gt must be >= 0, got {num_gt}")
    if num_gt == 0:
        return None
    s = np.asarray(scores, dtype=np.float64)
    flags = np.asarray(tp_flags, dtype=bool)
    if s.shape != flags.shape or s.ndim != 1:
        raise DataFormatError("scores and tp_flags must be equal-length 1-d arrays")
    if s.size == 0:
        return 0.0
    order = np.argsort(-s, kind="stable")
    flags = flags[order]
    tp = np.cumsum(flags)
    fp = np.cumsum(~flags)
    recall = tp / num_gt
    precision = tp / (tp + fp)
    # precision envelope: max precision at this recall or beyond
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    idx = np.searchsorted(recall, RECALL_GRID, side="left")
    interp = np.where(idx < recall.size, envelope[np.minimum(idx, recall.size - 1)], 0.0)
    return float(np.mean(interp))


def evaluate(
    dets_by_image: Mapping[str, Sequence[Detection]],
    gts: Sequence[GroundTruth],
    vocabulary: Vocabulary,
    *,
    proposals_by_image: Mapping[str, Sequence[Proposal]] | None = None,
    ar_ks: Sequence[int] = AR_KS,
    max_detections: int = MAX_DETECTIONS,
    iou_thresholds: Sequence[float] = tuple(IOU_THRESHOLDS),
) -> EvalReport:
    """Dataset evaluation over the vocabulary's categories.

    AP metrics average per-category 101-point AP over the IoU grid;
    only categories with ground truth contribute. Detections are capped
    at ``max_detections`` per image by score before matching. AR@k is
    computed from ``proposals_by_image`` when given.
    """
    if max_detections < 1:
        raise ConfigError(f"max_detections must be >= 1, got {max_detections}")
    known = set(vocabulary.ids())
    for g in gts:
        if g.category_id not in known:
            raise DataFormatError(f"ground truth uses unknown category id {g.category_id}")

    capped: dict[str, list[Detection]] = {}
    for image_id in sorted(dets_by_image):
        dets = sorted(
            dets_by_image[image_id],
            key=lambda d: (-d.score, d.source_id, d.category_id),
        )
        for d in dets:
            if d.category_id not in known:
                raise DataFormatError(
                    f"detection uses unknown category id {d.category_id}"
                )
        capped[image_id] = dets[:max_detections]

    gts_by_image_cat: dict[tuple[str, int], list[GroundTruth]] = {}
    num_gt: dict[int, int] = {cid: 0 for cid in known}
    for g in gts:
        gts_by_image_cat.setdefault((g.image_id, g.category_id), []).append(g)
        num_gt[g.category_id] += 1

    thresholds = [float(t) for t in iou_thresholds]
    n_thr = len(thresholds)
    # per category: detection scores and per-threshold hit flags
    cat_scores: dict[int, list[np.ndarray]] = {cid: [] for cid in known}
    cat_flags: dict[int, list[np.ndarray]] = {cid: [] for cid in known}

    for image_id in sorted(capped):
        by_cat: dict[int, list[Detection]] = {}
        for d in capped[image_id]:
            by_cat.setdefault(d.category_id, []).append(d)
        for cid in sorted(by_cat):
            dets = by_cat[cid]  # already score-ordered
            gt_list = gts_by_image_cat.get((image_id, cid), [])
            ious = kernels.iou_matrix(
                boxes_to_array([d.box for d in dets]),
                boxes_to_array([g.box for g in gt_list]),
            )
            flags = np.zeros((n_thr, len(dets)), dtype=bool)
            for ti, thr in enumerate(thresholds):
                assignment = kernels.greedy_match(ious, thr)
                flags[ti] = assignment >= 0
            cat_scores[cid].append(
                np.array([d.score for d in dets], dtype=np.float64)
            )
            cat_flags[cid].append(flags)

    per_category: dict[int, float] = {}
    per_category_by_thr: dict[int, list[float]] = {}
    for cid in sorted(known):
        if num_gt[cid] == 0:
            continue
        if cat_scores[cid]:
            scores = np.concatenate(cat_scores[cid])
            flags = np.concatenate(cat_flags[cid], axis=1)
        else:
            scores = np.zeros(0, dtype=np.float64)
            flags = np.zeros((n_thr, 0), dtype=bool)
        aps = []
        for ti in range(n_thr):
            ap_t = average_precision(scores, flags[ti], num_gt[cid])
            assert ap_t is not None
            aps.append(ap_t)
        per_category_by_thr[cid] = aps
        per_category[cid] = float(np.mean(aps))

    report = EvalReport(per_category=per_category)
    if per_category:
        cids = sorted(per_category)
        report.ap = float(np.mean([per_category[c] for c in cids]))
        ti50 = _threshold_index(thresholds, 0.5)
        ti75 = _threshold_index(thresholds, 0.75)
        if ti50 is not None:
            report.ap50 = float(np.mean([per_category_by_thr[c][ti50] for c in cids]))
        if ti75 is not None:
            report.ap75 = float(np.mean([per_category_by_thr[c][ti75] for c in cids]))
        for freq, attr in (
            ("rare", "ap_rare"),
            ("common", "ap_common"),
            ("frequent", "ap_frequent"),
        ):
            bucket = [c for c in cids if c in vocabulary.frequency_ids(freq)]
            if bucket:
                setattr(
                    report, attr, float(np.mean([per_category[c] for c in bucket]))
                )

    if proposals_by_image is not None:
        for k in ar_ks:
            value = average_recall_at_k(
                proposals_by_image, gts, k, iou_thresholds=thresholds
            )
            if value is not None:
                report.ar[int(k)] = value
    return report


def _threshold_index(thresholds: Sequence[float], wanted: float) -> int | None:
    for i, t in enumerate(thresholds):
        if abs(t - wanted) < 1e-9:
            return i
    return None


def average_recall_at_k(
    proposals_by_image: Mapping[str, Sequence[Proposal]],
    gts: Sequence[GroundTruth],
    k: int,
    *,
    category_ids: Sequence[int] | None = None,
    iou_thresholds: Sequence[float] = tuple(IOU_THRESHOLDS),
) -> float | None:
    """Class-agnostic average recall of the top-k proposals per image.

    Proposals are ranked by objectness; recall against the (optionally
    category-filtered) ground truth is averaged over the IoU grid.
    Returns None when there is no ground truth to recall.
    """
    if k < 1:
        raise ConfigError(f"k must be >= 1, got {k}")
    wanted = None if category_ids is None else set(category_ids)
    kept_gts = [g for g in gts if wanted is None or g.category_id in wanted]
    total = len(kept_gts)
    if total == 0:
        return None
    gts_by_image: dict[str, list[GroundTruth]] = {}
    for g in kept_gts:
        gts_by_image.setdefault(g.image_id, []).append(g)

    thresholds = [float(t) for t in iou_thresholds]
    matched = np.zeros(len(thresholds), dtype=np.int64)
    for image_id in sorted(gts_by_image):
        gt_list = gts_by_image[image_id]
        props = list(proposals_by_image.get(image_id, []))
        order = sorted(range(len(props)), key=lambda i: (-props[i].objectness, i))[:k]
        if not order:
            continue
        ious = kernels.iou_matrix(
            boxes_to_array([props[i].box for i in order]),
            boxes_to_array([g.box for g in gt_list]),
        )
        for ti, thr in enumerate(thresholds):
            assignment = kernels.greedy_match(ious, thr)
            matched[ti] += int(np.sum(assignment >= 0))
    return float(np.mean(matched / total))
