"""Open-vocabulary detection on precomputed embeddings.

Regions are scored by cosine similarity against category text embeddings
under a temperature softmax, with a learned background embedding. A small
linear region head is trained with cross-entropy on base categories plus
an embedding-distillation term toward precomputed per-region teachers,
which is what lets novel categories surface at inference time. The rest
of the package is post-processing (NMS, score ensembling, objectness
rescoring, vocabulary expansion) and COCO-style AP/AR evaluation, all on
plain numpy arrays at desk scale.
"""

from vild.boxes import Box, Proposal, iou
from vild.classifier import (
    TextClassifier,
    classify_regions,
    expand_vocabulary,
    score_region,
    softmax_temperature,
)
from vild.embeddings import (
    compose_crop_ensemble,
    compose_text_embedding,
    cosine_sim,
    l2_normalize,
)
from vild.errors import (
    ConfigError,
    DataFormatError,
    DimensionMismatchError,
    NormalizationError,
    NumericalError,
    VildError,
)
from vild.evaluate import EvalReport, average_precision, average_recall_at_k, evaluate
from vild.kernels import BACKEND
from vild.postprocess import (
    Detection,
    EnsembleConfig,
    ensemble_detections,
    ensemble_scores,
    nms,
    objectness_rescore,
)
from vild.prompts import PROMPT_TEMPLATES, render_prompts
from vild.synthetic import SyntheticConfig, gen_synthetic_benchmark
from vild.training import (
    RegionHead,
    TrainConfig,
    TrainingSample,
    train,
    vild_image_loss,
    vild_loss,
    vild_text_loss,
)
from vild.vocab import Category, Vocabulary

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "Box",
    "Category",
    "ConfigError",
    "DataFormatError",
    "Detection",
    "DimensionMismatchError",
    "EnsembleConfig",
    "EvalReport",
    "NormalizationError",
    "NumericalError",
    "PROMPT_TEMPLATES",
    "Proposal",
    "RegionHead",
    "SyntheticConfig",
    "TextClassifier",
    "TrainConfig",
    "TrainingSample",
    "VildError",
    "Vocabulary",
    "average_precision",
    "average_recall_at_k",
    "classify_regions",
    "compose_crop_ensemble",
    "compose_text_embedding",
    "cosine_sim",
    "ensemble_detections",
    "ensemble_scores",
    "evaluate",
    "expand_vocabulary",
    "gen_synthetic_benchmark",
    "iou",
    "l2_normalize",
    "nms",
    "objectness_rescore",
    "render_prompts",
    "score_region",
    "softmax_temperature",
    "train",
    "vild_image_loss",
    "vild_loss",
    "vild_text_loss",
]
