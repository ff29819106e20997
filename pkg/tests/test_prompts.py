import pytest

from vild.prompts import PROMPT_TEMPLATES, article_for, fill_template, render_prompts


def test_template_count():
    assert len(PROMPT_TEMPLATES) == 63
    assert len(set(PROMPT_TEMPLATES)) == 63


def test_every_template_mentions_the_category():
    for t in PROMPT_TEMPLATES:
        assert "{category}" in t


def test_article_for():
    assert article_for("apple") == "an"
    assert article_for("Elephant") == "an"
    assert article_for("dog") == "a"
    assert article_for("umbrella") == "an"
    assert article_for("zebra") == "a"
    with pytest.raises(ValueError):
        article_for("")


def test_fill_template_frozen():
    assert (
        fill_template("a photo of {article} {category}.", "apple")
        == "a photo of an apple."
    )
    assert (
        fill_template("a photo of {article} {category}.", "dog")
        == "a photo of a dog."
    )
    assert fill_template("itap of my {category}.", "cat") == "itap of my cat."


def test_render_prompts_count_and_order():
    out = render_prompts("dog")
    assert len(out) == 63
    assert out[0] == "There is a dog in the scene."
    assert out[-1] == "a painting of a dog."


def test_render_prompts_with_synonyms_template_major():
    out = render_prompts("dog", ["puppy", "hound"])
    assert len(out) == 63 * 3
    # template-major: all names under template 0 first
    assert out[0] == "There is a dog in the scene."
    assert out[1] == "There is a puppy in the scene."
    assert out[2] == "There is a hound in the scene."
    assert out[3] == "There is the dog in the scene."


def test_render_prompts_article_varies_per_name():
    out = render_prompts("orange", ["tangerine"])
    assert out[0] == "There is an orange in the scene."
    assert out[1] == "There is a tangerine in the scene."


def test_render_prompts_rejects_empty_names():
    with pytest.raises(ValueError):
        render_prompts("")
    with pytest.raises(ValueError):
        render_prompts("dog", [""])
