"""Prompt rendering for text-embedding classifiers.

Category names are expanded into a fixed battery of 63 natural-language
prompt templates before text encoding; classifiers are then built from
the per-prompt embeddings averaged per category.
"""

from __future__ import annotations

from typing import Sequence

PROMPT_TEMPLATES: tuple[str, ...] = (
    "There is {article} {category} in the scene.",
    "There is the {category} in the scene.",
    "a photo of {article} {category} in the scene.",
    "a photo of the {category} in the scene.",
    "a photo of one {category} in the scene.",
    "itap of {article} {category}.",
    "itap of my {category}.",
    "itap of the {category}.",
    "a photo of {article} {category}.",
    "a photo of my {category}.",
    "a photo of the {category}.",
    "a photo of one {category}.",
    "a photo of many {category}.",
    "a good photo of {article} {category}.",
    "a good photo of the {category}.",
    "a bad photo of {article} {category}.",
    "a bad photo of the {category}.",
    "a photo of a nice {category}.",
    "a photo of the nice {category}.",
    "a photo of a cool {category}.",
    "a photo of the cool {category}.",
    "a photo of a weird {category}.",
    "a photo of the weird {category}.",
    "a photo of a small {category}.",
    "a photo of the small {category}.",
    "a photo of a large {category}.",
    "a photo of the large {category}.",
    "a photo of a clean {category}.",
    "a photo of the clean {category}.",
    "a photo of a dirty {category}.",
    "a photo of the dirty {category}.",
    "a bright photo of {article} {category}.",
    "a bright photo of the {category}.",
    "a dark photo of {article} {category}.",
    "a dark photo of the {category}.",
    "a photo of a hard to see {category}.",
    "a photo of the hard to see {category}.",
    "a low resolution photo of {article} {category}.",
    "a low resolution photo of the {category}.",
    "a cropped photo of {article} {category}.",
    "a cropped photo of the {category}.",
    "a close-up photo of {article} {category}.",
    "a close-up photo of the {category}.",
    "a jpeg corrupted photo of {article} {category}.",
    "a jpeg corrupted photo of the {category}.",
    "a blurry photo of {article} {category}.",
    "a blurry photo of the {category}.",
    "a pixelated photo of {article} {category}.",
    "a pixelated photo of the {category}.",
    "a black and white photo of the {category}.",
    "a black and white photo of {article} {category}.",
    "a plastic {category}.",
    "the plastic {category}.",
    "a toy {category}.",
    "the toy {category}.",
    "a plushie {category}.",
    "the plushie {category}.",
    "a cartoon {category}.",
    "the cartoon {category}.",
    "an embroidered {category}.",
    "the embroidered {category}.",
    "a painting of the {category}.",
    "a painting of a {category}.",
)

_VOWELS = frozenset("aeiou")


def article_for(name: str) -> str:
    """Indefinite article for ``name``: "an" before a vowel, else "a"."""
    if not name:
        raise ValueError("cannot pick an article for an empty name")
    return "an" if name[0].lower() in _VOWELS else "a"


def fill_template(template: str, name: str) -> str:
    """Substitute a category name (and its article) into one template."""
    out = template.replace("{category}", name)
    if "{article}" in out:
        out = out.replace("{article}", article_for(name))
    return out


def render_prompts(category_name: str, synonyms: Sequence[str] = ()) -> list[str]:
    """Render every template for a category name and its synonyms.

    Output order is template-major: all names under template 0, then all
    names under template 1, and so on. Length is
    ``len(PROMPT_TEMPLATES) * (1 + len(synonyms))``.
    """
    if not category_name:
        raise ValueError("category name must be non-empty")
    names = [category_name, *synonyms]
    for n in names:
        if not n:
            raise ValueError("synonyms must be non-empty strings")
    return [fill_template(t, n) for t in PROMPT_TEMPLATES for n in names]
