import json
import subprocess
import sys

import numpy as np
import pytest

from vild import formats
from vild.boxes import Box
from vild.cli import main
from vild.embeddings import compose_crop_ensemble
from vild.evaluate import GroundTruth
from vild.formats import EmbeddingTable
from vild.numfmt import quantize_float
from vild.pipeline import compose_text_table
from vild.postprocess import Detection
from vild.vocab import Category, Vocabulary


def write_vocab(path):
    vocab = Vocabulary(
        categories=(
            Category(id=0, name="mug", synonyms=("cup",), split="base"),
            Category(id=1, name="stapler", split="novel", frequency="rare"),
        )
    )
    formats.write_vocabulary(path, vocab)
    return vocab


def gen_args(out_dir, **extra):
    args = [
        "gen-synthetic",
        "--out-dir",
        str(out_dir),
        "--p-base",
        "4",
        "--p-novel",
        "2",
        "--d-in",
        "8",
        "--d-out",
        "4",
        "--train-images",
        "6",
        "--eval-images",
        "3",
        "--m-offline",
        "4",
        "--iterations",
        "40",
    ]
    for key, value in extra.items():
        args.extend([f"--{key}", str(value)])
    return args


def test_gen_synthetic_then_run(tmp_path, capsys):
    bench = tmp_path / "bench"
    assert main(gen_args(bench)) == 0
    out = capsys.readouterr().out
    assert "benchmark written" in out
    assert "vild run --config" in out
    assert main(["run", "--config", str(bench / "config.txt")]) == 0
    captured = capsys.readouterr()
    assert "AP" in captured.out
    assert "vild: trained on 6 images" in captured.err
    assert (bench / "out" / "report.json").is_file()
    report = json.loads((bench / "out" / "report.json").read_text())
    assert "AP" in report and "AP_r" in report


def test_compose_text_render_prompts(tmp_path, capsys):
    vocab_path = tmp_path / "vocab.jsonl"
    write_vocab(vocab_path)
    out = tmp_path / "prompts.txt"
    code = main(
        [
            "compose-text",
            "--vocab",
            str(vocab_path),
            "--render-out",
            str(out),
        ]
    )
    assert code == 0
    lines = out.read_text().splitlines()
    # 63 templates x (1 name + 1 synonym) for mug, 63 x 1 for stapler
    assert len(lines) == 63 * 2 + 63
    assert lines[0] == "0:0\tThere is a mug in the scene."
    assert lines[126] == "1:0\tThere is a stapler in the scene."


def test_compose_text_embeddings(tmp_path):
    rng = np.random.default_rng(111)
    per_prompt = EmbeddingTable(
        dim=3,
        records={f"{cid}:{i}": rng.normal(size=3) for cid in (0, 1) for i in range(4)},
    )
    src = tmp_path / "per_prompt.emb"
    dst = tmp_path / "text.emb"
    formats.write_embeddings_text(src, per_prompt)
    assert main(["compose-text", "--embeddings", str(src), "--out", str(dst)]) == 0
    back = formats.read_embeddings(dst)
    want = compose_text_table(formats.read_embeddings(src))
    assert back.ids() == want.ids()
    for key in back.ids():
        assert np.allclose(back[key], want[key], atol=1e-9)


def test_compose_text_requires_out(tmp_path, capsys):
    src = tmp_path / "per_prompt.emb"
    formats.write_embeddings_text(
        src, EmbeddingTable(dim=2, records={"0:0": np.ones(2)})
    )
    assert main(["compose-text", "--embeddings", str(src)]) == 2
    assert "vild: error:" in capsys.readouterr().err


def test_compose_crops(tmp_path):
    rng = np.random.default_rng(112)
    v1, v2 = rng.normal(size=(2, 3))
    src = tmp_path / "crops.emb"
    dst = tmp_path / "regions.emb"
    formats.write_embeddings_text(
        src, EmbeddingTable(dim=3, records={"r0:1x": v1, "r0:1.5x": v2})
    )
    assert main(["compose-crops", "--embeddings", str(src), "--out", str(dst)]) == 0
    back = formats.read_embeddings(dst)
    assert np.allclose(back["r0"], compose_crop_ensemble(v1, v2), atol=1e-9)


def test_train_infer_eval_chain(tmp_path, capsys):
    bench = tmp_path / "bench"
    assert main(gen_args(bench)) == 0
    config = str(bench / "config.txt")
    head = tmp_path / "head.bin"
    loss_log = tmp_path / "loss.txt"
    bundle = tmp_path / "clf.txt"
    code = main(
        [
            "train",
            "--config",
            config,
            "--out",
            str(head),
            "--loss-log",
            str(loss_log),
            "--classifier-out",
            str(bundle),
        ]
    )
    assert code == 0
    assert head.is_file()
    assert len(loss_log.read_text().splitlines()) == 40
    clf = formats.load_classifier(bundle)
    assert len(clf) == 6

    dets = tmp_path / "dets.jsonl"
    code = main(
        [
            "infer",
            "--head",
            str(head),
            "--text-embeddings",
            str(bench / "text_embeddings.emb"),
            "--vocab",
            str(bench / "vocab.jsonl"),
            "--data",
            str(bench / "eval_proposals.jsonl"),
            "--out",
            str(dets),
        ]
    )
    assert code == 0
    assert formats.read_detections(dets)

    report = tmp_path / "report.json"
    code = main(
        [
            "eval",
            "--dets",
            str(dets),
            "--gt",
            str(bench / "gt.jsonl"),
            "--vocab",
            str(bench / "vocab.jsonl"),
            "--proposals",
            str(bench / "eval_proposals.jsonl"),
            "--ar-ks",
            "1,10",
            "--report",
            str(report),
        ]
    )
    assert code == 0
    out = capsys.readouterr().out
    assert "AP" in out and "AR@1" in out
    data = json.loads(report.read_text())
    assert "AR@1" in data and "AR@10" in data


def test_infer_base_vocabulary(tmp_path):
    bench = tmp_path / "bench"
    assert main(gen_args(bench, iterations=10)) == 0
    head = tmp_path / "head.bin"
    assert main(["train", "--config", str(bench / "config.txt"), "--out", str(head)]) == 0
    dets = tmp_path / "dets.jsonl"
    code = main(
        [
            "infer",
            "--head",
            str(head),
            "--text-embeddings",
            str(bench / "text_embeddings.emb"),
            "--vocab",
            str(bench / "vocab.jsonl"),
            "--data",
            str(bench / "eval_proposals.jsonl"),
            "--out",
            str(dets),
            "--inference-vocabulary",
            "base",
        ]
    )
    assert code == 0
    for rows in formats.read_detections(dets).values():
        assert {d.category_id for d in rows} <= {0, 1, 2, 3}


def test_ensemble_command_frozen_score(tmp_path):
    box = Box(0, 0, 10, 10)
    d_text = tmp_path / "text.jsonl"
    d_image = tmp_path / "image.jsonl"
    formats.write_detections(
        d_text, {"img": [Detection(box=box, category_id=1, score=0.8, source_id=0)]}
    )
    formats.write_detections(
        d_image, {"img": [Detection(box=box, category_id=1, score=0.2, source_id=0)]}
    )
    ids = tmp_path / "base.txt"
    ids.write_text("1\n")
    out = tmp_path / "combined.jsonl"
    code = main(
        [
            "ensemble",
            "--dets-text",
            str(d_text),
            "--dets-image",
            str(d_image),
            "--base-ids",
            str(ids),
            "--out",
            str(out),
            "--no-finalize",
        ]
    )
    assert code == 0
    rows = formats.read_detections(out)["img"]
    assert len(rows) == 1
    # base category: text^(2/3) * image^(1/3)
    assert rows[0].score == quantize_float(0.8 ** (2 / 3) * 0.2 ** (1 / 3))


def test_expand_vocab_command(tmp_path):
    rng = np.random.default_rng(113)
    from vild.classifier import TextClassifier

    cats = TextClassifier(
        embeddings=rng.normal(size=(3, 4)),
        ids=("0", "1", "2"),
        background=rng.normal(size=4),
    )
    attrs = TextClassifier(
        embeddings=rng.normal(size=(2, 4)),
        ids=("shiny", "dull"),
        background=rng.normal(size=4),
    )
    cat_path, attr_path = tmp_path / "cats.txt", tmp_path / "attrs.txt"
    formats.save_classifier(cat_path, cats)
    formats.save_classifier(attr_path, attrs)
    regions = tmp_path / "regions.emb"
    formats.write_embeddings_text(
        regions,
        EmbeddingTable(dim=4, records={"r0": rng.normal(size=4), "r1": rng.normal(size=4)}),
    )
    out = tmp_path / "joint.jsonl"
    code = main(
        [
            "expand-vocab",
            "--categories",
            str(cat_path),
            "--attributes",
            str(attr_path),
            "--regions",
            str(regions),
            "--out",
            str(out),
        ]
    )
    assert code == 0
    lines = out.read_text().splitlines()
    assert len(lines) == 2
    row = json.loads(lines[0])
    assert row["region_id"] == "r0"
    assert row["categories"] == ["0", "1", "2"]
    assert row["attributes"] == ["shiny", "dull"]
    probs = np.array(row["probs"])
    assert probs.shape == (3, 2)
    assert abs(probs.sum() - 1.0) <= 1e-6  # file precision is 9 digits


def test_exit_code_config_error(tmp_path, capsys):
    assert main(["run", "--config", str(tmp_path / "missing.txt")]) == 2
    assert "missing config file" in capsys.readouterr().err
    bad = tmp_path / "bad.txt"
    bad.write_text("tau=fast\n")
    assert main(["run", "--config", str(bad)]) == 2
    assert "line 1: tau expects a float" in capsys.readouterr().err


def test_exit_code_data_format_error(tmp_path, capsys):
    bench = tmp_path / "bench"
    assert main(gen_args(bench, iterations=5)) == 0
    capsys.readouterr()
    (bench / "train.jsonl").write_text("{broken\n")
    assert main(["run", "--config", str(bench / "config.txt")]) == 3
    assert "stage train" in capsys.readouterr().err


def test_exit_code_numerical_error(tmp_path, capsys):
    src = tmp_path / "per_prompt.emb"
    formats.write_embeddings_text(
        src, EmbeddingTable(dim=2, records={"0:0": np.zeros(2)})
    )
    code = main(
        ["compose-text", "--embeddings", str(src), "--out", str(tmp_path / "o.emb")]
    )
    assert code == 4
    assert "vild: error:" in capsys.readouterr().err


def test_exit_code_unwritable_output(tmp_path, capsys):
    vocab_path = tmp_path / "vocab.jsonl"
    write_vocab(vocab_path)
    code = main(
        [
            "compose-text",
            "--vocab",
            str(vocab_path),
            "--render-out",
            str(tmp_path / "no" / "such" / "dir" / "p.txt"),
        ]
    )
    assert code == 2
    assert "missing file" in capsys.readouterr().err


def test_vild_threads_validation(tmp_path, capsys, monkeypatch):
    monkeypatch.setenv("VILD_THREADS", "abc")
    assert main(["run", "--config", str(tmp_path / "x.txt")]) == 2
    assert "VILD_THREADS" in capsys.readouterr().err
    monkeypatch.setenv("VILD_THREADS", "0")
    assert main(["run", "--config", str(tmp_path / "x.txt")]) == 2
    capsys.readouterr()
    monkeypatch.setenv("VILD_THREADS", "4")
    bench = tmp_path / "bench"
    assert main(gen_args(bench, iterations=5)) == 0
    assert main(["run", "--config", str(bench / "config.txt")]) == 0


def test_module_entrypoint_subprocess(tmp_path):
    result = subprocess.run(
        [sys.executable, "-m", "vild", "--help"],
        capture_output=True,
        text=True,
    )
    assert result.returncode == 0
    assert "compose-text" in result.stdout
    result = subprocess.run(
        [sys.executable, "-m", "vild"], capture_output=True, text=True
    )
    assert result.returncode == 2  # argparse usage error
    result = subprocess.run(
        [sys.executable, "-m", "vild", "eval", "--dets", "x", "--gt", "y", "--vocab", "z"],
        capture_output=True,
        text=True,
        cwd=tmp_path,
    )
    assert result.returncode == 2
    assert "vild: error:" in result.stderr
