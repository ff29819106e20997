"""End-to-end pipeline: compose, train, infer, ensemble, finalize, eval.

Each stage is also reachable as a standalone CLI subcommand; a stage
failure aborts the run with the stage name prepended to the cause.
"""

from __future__ import annotations

from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np

from vild import formats
from vild.boxes import Proposal
from vild.classifier import TextClassifier, classify_regions
from vild.config import RunConfig
from vild.embeddings import compose_crop_ensemble, compose_text_embedding
from vild.errors import ConfigError, DataFormatError, NumericalError, VildError
from vild.evaluate import EvalReport, evaluate
from vild.postprocess import (
    Detection,
    EnsembleConfig,
    dedupe_proposals,
    ensemble_detections,
    nms,
    objectness_rescore,
)
from vild.training import RegionHead, TrainConfig, train
from vild.vocab import Vocabulary

CROP_SUFFIX_1X = ":1x"
CROP_SUFFIX_1P5X = ":1.5x"


@contextmanager
def _stage(name: str):
    try:
        yield
    except VildError as exc:
        raise type(exc)(f"stage {name}: {exc}") from exc


def require_file(path, what: str) -> Path:
    if path is None:
        raise ConfigError(f"no {what} configured")
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"missing {what} file: {p}")
    return p


def compose_text_table(per_prompt: formats.EmbeddingTable) -> formats.EmbeddingTable:
    """Collapse '<id>:<index>' per-prompt records into one record per id.

    Prompt indices within an id are averaged in index order and the
    mean renormalized; output ids keep first-appearance order.
    """
    groups: dict[str, list[tuple[int, np.ndarray]]] = {}
    for key, vec in per_prompt.records.items():
        base, sep, index = key.rpartition(":")
        if not sep or not base:
            raise DataFormatError(
                f"per-prompt record {key!r} is not of the form '<id>:<index>'"
            )
        try:
            idx = int(index)
        except ValueError as exc:
            raise DataFormatError(
                f"per-prompt record {key!r} has a non-integer prompt index"
            ) from exc
        groups.setdefault(base, []).append((idx, vec))
    if not groups:
        raise DataFormatError("no per-prompt records to compose")
    records: dict[str, np.ndarray] = {}
    for base, entries in groups.items():
        indices = [i for i, _ in entries]
        if len(set(indices)) != len(indices):
            raise DataFormatError(f"duplicate prompt index for id {base!r}")
        ordered = [vec for _, vec in sorted(entries, key=lambda e: e[0])]
        records[base] = compose_text_embedding(ordered)
    return formats.EmbeddingTable(dim=per_prompt.dim, records=records)


def compose_crop_table(crops: formats.EmbeddingTable) -> formats.EmbeddingTable:
    """Fuse '<id>:1x' and '<id>:1.5x' crop records into one per id."""
    ones: dict[str, np.ndarray] = {}
    bigs: dict[str, np.ndarray] = {}
    order: list[str] = []
    for key, vec in crops.records.items():
        if key.endswith(CROP_SUFFIX_1P5X):
            base = key[: -len(CROP_SUFFIX_1P5X)]
            target = bigs
        elif key.endswith(CROP_SUFFIX_1X):
            base = key[: -len(CROP_SUFFIX_1X)]
            target = ones
        else:
            raise DataFormatError(
                f"crop record {key!r} must end with '{CROP_SUFFIX_1X}' or "
                f"'{CROP_SUFFIX_1P5X}'"
            )
        if not base:
            raise DataFormatError(f"crop record {key!r} has an empty id")
        if base not in ones and base not in bigs:
            order.append(base)
        if base in target:
            raise DataFormatError(f"duplicate crop record {key!r}")
        target[base] = vec
    records: dict[str, np.ndarray] = {}
    for base in order:
        if base not in ones:
            raise DataFormatError(f"crop id {base!r} is missing its {CROP_SUFFIX_1X} record")
        if base not in bigs:
            raise DataFormatError(
                f"crop id {base!r} is missing its {CROP_SUFFIX_1P5X} record"
            )
        records[base] = compose_crop_ensemble(ones[base], bigs[base])
    return formats.EmbeddingTable(dim=crops.dim, records=records)


def build_classifier(
    vocabulary: Vocabulary,
    text_table: formats.EmbeddingTable,
    background: np.ndarray,
    tau: float,
    *,
    split: str | None = None,
) -> TextClassifier:
    """Classifier over the vocabulary (or one split), in vocabulary
    order, with embeddings looked up by category id."""
    cats = vocabulary.categories if split is None else vocabulary.subset(split)
    if not cats:
        raise DataFormatError(f"vocabulary has no {split or 'any'} categories")
    ids = [str(c.id) for c in cats]
    for cid in ids:
        if cid not in text_table:
            raise DataFormatError(f"no text embedding for category id {cid}")
    return TextClassifier.from_embedding_table(
        text_table.records, background, ids=ids, tau=tau
    )


def normalized_rows(matrix: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(matrix, axis=1)
    if np.any(norms == 0.0):
        raise NumericalError("region embedding collapsed to zero norm")
    return matrix / norms[:, None]


def infer_image(
    head: RegionHead,
    clf: TextClassifier,
    proposals: Sequence[Proposal],
    *,
    rescore: bool = False,
) -> list[Detection]:
    """Score one image's proposals: head embeddings, normalized, then
    classified per category; optional objectness rescoring."""
    if not proposals:
        return []
    features = np.stack([p.feature for p in proposals])
    embeddings = normalized_rows(head.region_embeddings(features))
    dets = classify_regions(clf, list(zip(proposals, embeddings)))
    if rescore:
        dets = [
            Detection(
                box=d.box,
                category_id=d.category_id,
                score=objectness_rescore(d.score, proposals[d.source_id].objectness),
                source_id=d.source_id,
            )
            for d in dets
        ]
    return dets


@dataclass(eq=False)
class PipelineResult:
    report: EvalReport
    head: RegionHead
    head_image: RegionHead | None = None
    detections: dict[str, list[Detection]] = field(default_factory=dict)
    losses: list[float] = field(default_factory=list)


def run_pipeline(
    config: RunConfig,
    *,
    on_progress: Callable[[str], None] | None = None,
) -> PipelineResult:
    """Execute the full pipeline described by a resolved RunConfig."""

    def progress(message: str) -> None:
        if on_progress is not None:
            on_progress(message)

    out_dir = Path(config.out_dir) if config.out_dir else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)

    def out_path(configured: str | None, default_name: str, what: str) -> Path:
        if configured is not None:
            return Path(configured)
        if out_dir is None:
            raise ConfigError(f"no {what} path configured and no out_dir to place it in")
        return out_dir / default_name

    with _stage("compose"):
        vocabulary = formats.read_vocabulary(require_file(config.vocab, "vocab"))
        if config.prompt_embeddings is not None:
            per_prompt = formats.read_embeddings(
                require_file(config.prompt_embeddings, "prompt_embeddings")
            )
            text_table = compose_text_table(per_prompt)
            composed_path = out_path(
                config.text_embeddings, "text_embeddings.emb", "text_embeddings"
            )
            formats.write_embeddings_text(composed_path, text_table)
            progress(f"composed text embeddings for {len(text_table)} ids")
        else:
            text_table = formats.read_embeddings(
                require_file(config.text_embeddings, "text_embeddings")
            )

    with _stage("train"):
        samples = formats.read_training_samples(
            require_file(config.train_data, "train_data")
        )
        losses: list[float] = []
        heads = _train_heads(config, vocabulary, text_table, samples, losses)
        head, head_image = heads
        formats.save_head(out_path(config.head, "head.bin", "head"), head)
        if head_image is not None:
            formats.save_head(
                _sibling(out_path(config.head, "head.bin", "head"), "_image"),
                head_image,
            )
        if out_dir is not None:
            formats.write_loss_log(out_dir / "loss_log.txt", losses)
        if losses:
            progress(
                f"trained on {len(samples)} images, final loss {losses[-1]:.6f}"
            )
        else:
            progress(f"trained on {len(samples)} images (0 iterations)")

    with _stage("infer"):
        proposals = formats.read_proposals(require_file(config.eval_data, "eval_data"))
        deduped = {
            image_id: dedupe_proposals(
                image_proposals,
                iou_threshold=config.nms_class_agnostic,
                max_out=config.max_proposals,
            )
            for image_id, image_proposals in proposals.items()
        }
        split = None if config.inference_vocabulary == "joint" else config.inference_vocabulary
        clf = build_classifier(
            vocabulary, text_table, head.e_bg, config.tau, split=split
        )
        dets_text: dict[str, list[Detection]] = {}
        dets_image: dict[str, list[Detection]] = {}
        for image_id in sorted(deduped):
            dets_text[image_id] = infer_image(
                head, clf, deduped[image_id], rescore=config.objectness_rescore
            )
            if head_image is not None:
                dets_image[image_id] = infer_image(
                    head_image,
                    clf,
                    deduped[image_id],
                    rescore=config.objectness_rescore,
                )
        progress(f"classified proposals on {len(deduped)} images")

    if config.ensemble:
        with _stage("ensemble"):
            ecfg = EnsembleConfig(
                base_ids=vocabulary.base_ids(), lam=config.ensemble_lambda
            )
            combined = {
                image_id: ensemble_detections(
                    dets_text[image_id], dets_image[image_id], ecfg
                )
                for image_id in sorted(dets_text)
            }
    else:
        combined = dets_text

    with _stage("finalize"):
        final = {
            image_id: nms(
                combined[image_id],
                config.nms_per_class,
                class_agnostic=False,
                max_out=config.max_detections,
            )
            for image_id in sorted(combined)
        }
        formats.write_detections(
            out_path(config.dets, "detections.jsonl", "dets"), final
        )

    with _stage("eval"):
        gts = formats.read_ground_truths(require_file(config.gt, "gt"))
        report = evaluate(
            final,
            gts,
            vocabulary,
            proposals_by_image=deduped,
            max_detections=config.max_detections,
        )
        report_path = out_path(config.report, "report.json", "report")
        Path(report_path).write_text(report.to_json() + "\n", encoding="utf-8")

    return PipelineResult(
        report=report,
        head=head,
        head_image=head_image,
        detections=final,
        losses=losses,
    )


def _sibling(path: Path, suffix: str) -> Path:
    return path.with_name(path.stem + suffix + path.suffix)


def _train_heads(
    config: RunConfig,
    vocabulary: Vocabulary,
    text_table: formats.EmbeddingTable,
    samples,
    losses: list[float],
) -> tuple[RegionHead, RegionHead | None]:
    """Train the head(s): one combined-objective head normally, or a
    text-only plus an image-only head in ensemble mode (the image head
    gets a shifted seed so the two initializations differ)."""
    # the background field is unused while training: the head's own
    # background embedding fills that slot and receives the gradients
    clf_base = build_classifier(
        vocabulary, text_table, np.zeros(text_table.dim), config.tau, split="base"
    )

    def capture(_iteration: int, loss: float) -> None:
        losses.append(loss)

    if not config.ensemble:
        tcfg = _train_config(config, config.objective, config.seed)
        return train(samples, clf_base, tcfg, on_iteration=capture), None
    head_text = train(
        samples, clf_base, _train_config(config, "text", config.seed), on_iteration=capture
    )
    head_image = train(samples, clf_base, _train_config(config, "image", config.seed + 1))
    return head_text, head_image


def _train_config(config: RunConfig, objective: str, seed: int) -> TrainConfig:
    return TrainConfig(
        tau=config.tau,
        distill_weight=config.distill_weight,
        distill_norm=config.distill_norm,
        learning_rate=config.learning_rate,
        iterations=config.iterations,
        seed=seed,
        objective=objective,
    )
