"""Synthetic desk-scale benchmark with a controlled base/novel split.

The generator draws a unit-norm true embedding per category. Text
embeddings, backbone features, and teacher embeddings are noisy views
of it: text and teacher embeddings live in the output space, features
are a fixed random linear mixing of the true embedding into the input
space. Base and novel categories use two independent mixings, so their
features occupy complementary input subspaces: supervision on base
labels alone leaves the novel feature subspace unconstrained. Novel
objects appear in training images only as online proposals labeled
background, while offline proposals cover all categories with teacher
embeddings, so a text-only head learns to suppress the novel subspace
and only a distilled head ties it to the embedding space.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from vild.boxes import Box, Proposal
from vild.errors import ConfigError
from vild.evaluate import GroundTruth
from vild.training import TrainingSample
from vild.vocab import Category, Vocabulary


@dataclass
class SyntheticConfig:
    seed: int = 0
    p_base: int = 20
    p_novel: int = 10
    d_in: int = 32
    d_out: int = 16
    train_images: int = 200
    eval_images: int = 40
    n_online: int = 8
    m_offline: int = 8
    objects_per_eval_image: int = 6
    distractors_per_eval_image: int = 4
    noise_text: float = 0.05
    noise_feature: float = 0.05
    noise_teacher: float = 0.05
    background_fraction: float = 0.25
    novel_online_fraction: float = 0.25
    canvas: float = 1000.0

    def __post_init__(self):
        if self.p_base < 1:
            raise ConfigError(f"p_base must be >= 1, got {self.p_base}")
        if self.p_novel < 0:
            raise ConfigError(f"p_novel must be >= 0, got {self.p_novel}")
        if self.d_in < 1 or self.d_out < 2:
            raise ConfigError(
                f"need d_in >= 1 and d_out >= 2, got {self.d_in}x{self.d_out}"
            )
        if self.train_images < 1 or self.eval_images < 1:
            raise ConfigError("need at least one training and one eval image")
        if self.n_online < 1 or self.m_offline < 0:
            raise ConfigError(
                f"need n_online >= 1 and m_offline >= 0, got "
                f"{self.n_online}/{self.m_offline}"
            )
        if self.objects_per_eval_image < 1:
            raise ConfigError("need at least one object per eval image")
        if self.distractors_per_eval_image < 0:
            raise ConfigError("distractors_per_eval_image must be >= 0")
        for name in ("noise_text", "noise_feature", "noise_teacher"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0")
        if not (0.0 <= self.background_fraction <= 1.0):
            raise ConfigError("background_fraction must lie in [0, 1]")
        if not (0.0 <= self.novel_online_fraction <= 1.0):
            raise ConfigError("novel_online_fraction must lie in [0, 1]")
        n_bg = round(self.n_online * self.background_fraction)
        n_novel = (
            round(self.n_online * self.novel_online_fraction) if self.p_novel else 0
        )
        if n_bg + n_novel >= self.n_online:
            raise ConfigError(
                "background and novel fractions leave no labeled base proposals"
            )
        if self.canvas <= 0:
            raise ConfigError(f"canvas must be > 0, got {self.canvas}")


@dataclass(eq=False)
class SyntheticBenchmark:
    vocabulary: Vocabulary
    text_embeddings: dict[str, np.ndarray]  # category id -> unit-norm vector
    true_embeddings: np.ndarray  # (C, d_out), unit rows
    mixing: np.ndarray  # (d_in, d_out), base-category feature mixing
    mixing_novel: np.ndarray  # (d_in, d_out), novel-category feature mixing
    train_samples: list[TrainingSample]
    eval_proposals: dict[str, list[Proposal]] = field(default_factory=dict)
    ground_truths: list[GroundTruth] = field(default_factory=list)


def _unit_rows(m: np.ndarray) -> np.ndarray:
    return m / np.linalg.norm(m, axis=1, keepdims=True)


def _noisy_unit(vec: np.ndarray, sigma: float, rng: np.random.Generator) -> np.ndarray:
    noisy = vec + sigma * rng.normal(size=vec.shape[0])
    return noisy / np.linalg.norm(noisy)


def _grid_cells(canvas: float, count: int) -> list[tuple[float, float, float, float]]:
    cols = math.ceil(math.sqrt(count))
    rows = math.ceil(count / cols)
    cw = canvas / cols
    ch = canvas / rows
    cells = []
    for r in range(rows):
        for c in range(cols):
            cells.append((c * cw, r * ch, cw, ch))
    return cells[:count]


def _object_box(
    cell: tuple[float, float, float, float], rng: np.random.Generator
) -> Box:
    x0, y0, cw, ch = cell
    # half-extent <= 0.30 + jitter 0.08 < 0.5: boxes never leave the cell
    wx = rng.uniform(0.35, 0.6) * cw
    wy = rng.uniform(0.35, 0.6) * ch
    cx = x0 + cw / 2 + rng.uniform(-0.08, 0.08) * cw
    cy = y0 + ch / 2 + rng.uniform(-0.08, 0.08) * ch
    return Box(cx - wx / 2, cy - wy / 2, cx + wx / 2, cy + wy / 2)


def _distractor_box(
    cell: tuple[float, float, float, float], rng: np.random.Generator
) -> Box:
    x0, y0, cw, ch = cell
    # small enough that IoU with any object box stays below 0.5
    wx = rng.uniform(0.08, 0.18) * cw
    wy = rng.uniform(0.08, 0.18) * ch
    cx = x0 + rng.uniform(0.15, 0.85) * cw
    cy = y0 + rng.uniform(0.15, 0.85) * ch
    return Box(cx - wx / 2, cy - wy / 2, cx + wx / 2, cy + wy / 2)


def gen_synthetic_benchmark(config: SyntheticConfig) -> SyntheticBenchmark:
    """Generate the full benchmark from one seed, deterministically."""
    rng = np.random.default_rng(config.seed)
    n_cats = config.p_base + config.p_novel

    categories = []
    for i in range(n_cats):
        novel = i >= config.p_base
        categories.append(
            Category(
                id=i,
                name=f"novel{i - config.p_base:02d}" if novel else f"base{i:02d}",
                split="novel" if novel else "base",
                frequency="rare" if novel else ("common" if i % 2 else "frequent"),
            )
        )
    vocabulary = Vocabulary(categories=tuple(categories))
    base_ids = np.array([c.id for c in vocabulary.base()], dtype=np.int64)
    novel_ids = np.array([c.id for c in vocabulary.novel()], dtype=np.int64)

    true_embeddings = _unit_rows(rng.normal(size=(n_cats, config.d_out)))
    text_embeddings = {
        str(cat.id): _noisy_unit(true_embeddings[i], config.noise_text, rng)
        for i, cat in enumerate(categories)
    }
    scale = 1.0 / math.sqrt(config.d_out)
    mixing = rng.normal(size=(config.d_in, config.d_out)) * scale
    mixing_novel = rng.normal(size=(config.d_in, config.d_out)) * scale

    def object_feature(cat_id: int) -> np.ndarray:
        m = mixing_novel if cat_id >= config.p_base else mixing
        clean = m @ true_embeddings[cat_id]
        return clean + config.noise_feature * rng.normal(size=config.d_in)

    def background_feature() -> np.ndarray:
        return rng.normal(size=config.d_in) / math.sqrt(config.d_out)

    n_bg = round(config.n_online * config.background_fraction)
    n_novel = (
        round(config.n_online * config.novel_online_fraction) if config.p_novel else 0
    )
    n_base = config.n_online - n_bg - n_novel

    train_samples = []
    for img in range(config.train_images):
        feats = np.empty((config.n_online, config.d_in))
        labels = np.empty(config.n_online, dtype=np.int64)
        row = 0
        for _ in range(n_bg):
            feats[row] = background_feature()
            labels[row] = -1
            row += 1
        for _ in range(n_novel):
            feats[row] = object_feature(int(rng.choice(novel_ids)))
            labels[row] = -1  # novel objects are unlabeled: annotated as background
            row += 1
        for _ in range(n_base):
            cid = int(rng.choice(base_ids))
            feats[row] = object_feature(cid)
            labels[row] = cid
            row += 1
        off_feats = np.empty((config.m_offline, config.d_in))
        off_teachers = np.empty((config.m_offline, config.d_out))
        for m in range(config.m_offline):
            cid = int(rng.integers(n_cats))
            off_feats[m] = object_feature(cid)
            off_teachers[m] = _noisy_unit(
                true_embeddings[cid], config.noise_teacher, rng
            )
        train_samples.append(
            TrainingSample(
                image_id=f"train{img:04d}",
                online_features=feats,
                online_labels=labels,
                offline_features=off_feats,
                offline_teachers=off_teachers,
            )
        )

    # every category appears equally often across eval images
    total_objects = config.eval_images * config.objects_per_eval_image
    pool = np.tile(np.arange(n_cats), math.ceil(total_objects / n_cats))[:total_objects]
    rng.shuffle(pool)

    cells = _grid_cells(config.canvas, config.objects_per_eval_image)
    eval_proposals: dict[str, list[Proposal]] = {}
    ground_truths: list[GroundTruth] = []
    for img in range(config.eval_images):
        image_id = f"eval{img:04d}"
        cats = pool[
            img * config.objects_per_eval_image : (img + 1)
            * config.objects_per_eval_image
        ]
        proposals: list[Proposal] = []
        for slot, cid in enumerate(cats):
            box = _object_box(cells[slot], rng)
            ground_truths.append(
                GroundTruth(image_id=image_id, category_id=int(cid), box=box)
            )
            proposals.append(
                Proposal(
                    box=box,
                    objectness=float(rng.uniform(0.7, 0.95)),
                    feature=object_feature(int(cid)),
                )
            )
        for _ in range(config.distractors_per_eval_image):
            cell = cells[int(rng.integers(len(cells)))]
            proposals.append(
                Proposal(
                    box=_distractor_box(cell, rng),
                    objectness=float(rng.uniform(0.05, 0.3)),
                    feature=background_feature(),
                )
            )
        eval_proposals[image_id] = proposals

    return SyntheticBenchmark(
        vocabulary=vocabulary,
        text_embeddings=text_embeddings,
        true_embeddings=true_embeddings,
        mixing=mixing,
        mixing_novel=mixing_novel,
        train_samples=train_samples,
        eval_proposals=eval_proposals,
        ground_truths=ground_truths,
    )


BENCHMARK_FILES = {
    "vocab": "vocab.jsonl",
    "text_embeddings": "text_embeddings.emb",
    "train_data": "train.jsonl",
    "eval_data": "eval_proposals.jsonl",
    "gt": "gt.jsonl",
    "config": "config.txt",
}


def write_benchmark(bench: SyntheticBenchmark, out_dir, run_config=None) -> dict[str, Path]:
    """Write a benchmark directory: data files plus a ready-to-run
    config.txt whose data paths are relative to the directory.

    ``run_config`` seeds the non-path config values (hyperparameters,
    seed, mode flags); its path fields are overwritten.
    """
    from vild import formats
    from vild.config import RunConfig, config_text

    directory = Path(out_dir)
    directory.mkdir(parents=True, exist_ok=True)
    formats.write_vocabulary(directory / BENCHMARK_FILES["vocab"], bench.vocabulary)
    table = formats.EmbeddingTable(
        dim=bench.true_embeddings.shape[1], records=dict(bench.text_embeddings)
    )
    formats.write_embeddings_text(directory / BENCHMARK_FILES["text_embeddings"], table)
    formats.write_training_samples(
        directory / BENCHMARK_FILES["train_data"], bench.train_samples
    )
    formats.write_proposals(
        directory / BENCHMARK_FILES["eval_data"], bench.eval_proposals
    )
    formats.write_ground_truths(directory / BENCHMARK_FILES["gt"], bench.ground_truths)

    run = RunConfig() if run_config is None else run_config
    run.vocab = BENCHMARK_FILES["vocab"]
    run.text_embeddings = BENCHMARK_FILES["text_embeddings"]
    run.train_data = BENCHMARK_FILES["train_data"]
    run.eval_data = BENCHMARK_FILES["eval_data"]
    run.gt = BENCHMARK_FILES["gt"]
    if run.out_dir is None:
        run.out_dir = "out"
    (directory / BENCHMARK_FILES["config"]).write_text(
        config_text(run), encoding="utf-8"
    )
    return {key: directory / name for key, name in BENCHMARK_FILES.items()}
