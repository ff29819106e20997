"""Category vocabularies with base/novel splits and frequency buckets."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator, Sequence

from vild.errors import DataFormatError

SPLITS = ("base", "novel")
FREQUENCIES = ("rare", "common", "frequent")


@dataclass(frozen=True)
class Category:
    id: int
    name: str
    synonyms: tuple[str, ...] = ()
    split: str = "base"
    frequency: str = "frequent"

    def __post_init__(self):
        if self.id < 0:
            raise DataFormatError(f"category id must be >= 0, got {self.id}")
        if not self.name:
            raise DataFormatError("category name must be non-empty")
        if self.split not in SPLITS:
            raise DataFormatError(
                f"category {self.id}: split must be one of {SPLITS}, got {self.split!r}"
            )
        if self.frequency not in FREQUENCIES:
            raise DataFormatError(
                f"category {self.id}: frequency must be one of {FREQUENCIES}, "
                f"got {self.frequency!r}"
            )


@dataclass
class Vocabulary:
    categories: tuple[Category, ...]
    attribute_sets: dict[str, tuple[str, ...]] = field(default_factory=dict)

    def __post_init__(self):
        self.categories = tuple(self.categories)
        seen: set[int] = set()
        for cat in self.categories:
            if cat.id in seen:
                raise DataFormatError(f"duplicate category id {cat.id}")
            seen.add(cat.id)
        self.attribute_sets = {k: tuple(v) for k, v in self.attribute_sets.items()}

    def __len__(self) -> int:
        return len(self.categories)

    def __iter__(self) -> Iterator[Category]:
        return iter(self.categories)

    def ids(self) -> list[int]:
        return [c.id for c in self.categories]

    def get(self, category_id: int) -> Category:
        for c in self.categories:
            if c.id == category_id:
                return c
        raise DataFormatError(f"unknown category id {category_id}")

    def __contains__(self, category_id: int) -> bool:
        return any(c.id == category_id for c in self.categories)

    def subset(self, split: str) -> list[Category]:
        if split not in SPLITS:
            raise DataFormatError(f"split must be one of {SPLITS}, got {split!r}")
        return [c for c in self.categories if c.split == split]

    def base(self) -> list[Category]:
        return self.subset("base")

    def novel(self) -> list[Category]:
        return self.subset("novel")

    def base_ids(self) -> frozenset[int]:
        return frozenset(c.id for c in self.base())

    def novel_ids(self) -> frozenset[int]:
        return frozenset(c.id for c in self.novel())

    def frequency_ids(self, frequency: str) -> frozenset[int]:
        if frequency not in FREQUENCIES:
            raise DataFormatError(
                f"frequency must be one of {FREQUENCIES}, got {frequency!r}"
            )
        return frozenset(c.id for c in self.categories if c.frequency == frequency)


def follows_benchmark_mapping(vocab: Vocabulary | Sequence[Category]) -> bool:
    """True when novel categories are exactly the rare ones."""
    cats = list(vocab)
    return all((c.split == "novel") == (c.frequency == "rare") for c in cats)
