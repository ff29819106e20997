"""Command-line interface.

One static binary with subcommands covering every pipeline stage:
compose-text, compose-crops, gen-synthetic, train, infer, ensemble,
expand-vocab, eval, and run. Exit codes: 0 success, 2 config error,
3 data-format error, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

import numpy as np

from vild import formats, pipeline
from vild.classifier import TAU_DEFAULT, expand_vocabulary
from vild.config import INFERENCE_VOCABULARIES, RunConfig, load_config
from vild.errors import ConfigError, VildError
from vild.evaluate import AR_KS, evaluate
from vild.numfmt import quantize_floats
from vild.postprocess import (
    CLASS_AGNOSTIC_NMS_THRESHOLD,
    ENSEMBLE_LAMBDA,
    MAX_DETECTIONS,
    MAX_PROPOSALS,
    PER_CLASS_NMS_THRESHOLD,
    EnsembleConfig,
    ensemble_detections,
    nms,
)
from vild.prompts import render_prompts
from vild.synthetic import SyntheticConfig, gen_synthetic_benchmark, write_benchmark
from vild.training import train


def _check_thread_cap() -> None:
    """VILD_THREADS caps this process's own worker parallelism. The
    implementation is single-threaded, so any positive value is a valid
    cap and never changes results."""
    raw = os.environ.get("VILD_THREADS")
    if raw is None:
        return
    try:
        value = int(raw)
    except ValueError:
        raise ConfigError(f"VILD_THREADS must be a positive integer, got {raw!r}")
    if value < 1:
        raise ConfigError(f"VILD_THREADS must be >= 1, got {value}")


def _require(path, what: str) -> Path:
    return pipeline.require_file(path, what)


def _cmd_compose_text(args) -> int:
    if args.render_out is not None:
        if args.vocab is None:
            raise ConfigError("--render-out needs --vocab for the category names")
        vocabulary = formats.read_vocabulary(_require(args.vocab, "vocab"))
        lines = []
        for cat in vocabulary:
            for index, prompt in enumerate(render_prompts(cat.name, cat.synonyms)):
                lines.append(f"{cat.id}:{index}\t{prompt}")
        Path(args.render_out).write_text("\n".join(lines) + "\n", encoding="utf-8")
        print(f"rendered prompts for {len(vocabulary)} categories to {args.render_out}")
        if args.embeddings is None:
            return 0
    if args.embeddings is None or args.out is None:
        raise ConfigError("compose-text needs --embeddings and --out")
    per_prompt = formats.read_embeddings(_require(args.embeddings, "embeddings"))
    table = pipeline.compose_text_table(per_prompt)
    formats.write_embeddings_text(args.out, table)
    print(f"composed {len(table)} text embeddings to {args.out}")
    return 0


def _cmd_compose_crops(args) -> int:
    crops = formats.read_embeddings(_require(args.embeddings, "embeddings"))
    table = pipeline.compose_crop_table(crops)
    formats.write_embeddings_text(args.out, table)
    print(f"composed {len(table)} region embeddings to {args.out}")
    return 0


def _cmd_gen_synthetic(args) -> int:
    scfg = SyntheticConfig(
        seed=args.seed,
        p_base=args.p_base,
        p_novel=args.p_novel,
        d_in=args.d_in,
        d_out=args.d_out,
        train_images=args.train_images,
        eval_images=args.eval_images,
        n_online=args.n_online,
        m_offline=args.m_offline,
        noise_text=args.noise_text,
        noise_feature=args.noise_feature,
        noise_teacher=args.noise_teacher,
        background_fraction=args.background_fraction,
        novel_online_fraction=args.novel_online_fraction,
    )
    bench = gen_synthetic_benchmark(scfg)
    run = RunConfig()
    run.seed = args.seed
    run.distill_weight = args.w
    run.iterations = args.iterations
    run.learning_rate = args.learning_rate
    run.tau = args.tau
    run.ensemble = args.ensemble
    paths = write_benchmark(bench, args.out_dir, run)
    print(
        f"benchmark written to {args.out_dir} "
        f"({len(bench.vocabulary)} categories, {len(bench.train_samples)} train "
        f"images, {len(bench.eval_proposals)} eval images)"
    )
    print(f"run it with: vild run --config {paths['config']}")
    return 0


def _cmd_train(args) -> int:
    config = load_config(args.config)
    if args.data is not None:
        config.train_data = args.data
    if args.out is not None:
        config.head = args.out
    if config.head is None:
        raise ConfigError("no head output path: pass --out or set head= in the config")
    vocabulary = formats.read_vocabulary(_require(config.vocab, "vocab"))
    text_table = formats.read_embeddings(
        _require(config.text_embeddings, "text_embeddings")
    )
    samples = formats.read_training_samples(_require(config.train_data, "train_data"))
    clf_base = pipeline.build_classifier(
        vocabulary, text_table, np.zeros(text_table.dim), config.tau, split="base"
    )
    losses: list[float] = []
    tcfg = pipeline._train_config(config, config.objective, config.seed)
    head = train(samples, clf_base, tcfg, on_iteration=lambda _i, l: losses.append(l))
    formats.save_head(config.head, head)
    if args.loss_log is not None:
        formats.write_loss_log(args.loss_log, losses)
    if args.classifier_out is not None:
        clf_full = pipeline.build_classifier(
            vocabulary, text_table, head.e_bg, config.tau
        )
        formats.save_classifier(args.classifier_out, clf_full)
    if losses:
        print(
            f"trained {tcfg.iterations} iterations on {len(samples)} images; "
            f"loss {losses[0]:.6f} -> {losses[-1]:.6f}"
        )
    else:
        print("initialized head without training (0 iterations)")
    print(f"head written to {config.head}")
    return 0


def _cmd_infer(args) -> int:
    head = formats.load_head(_require(args.head, "head"))
    vocabulary = formats.read_vocabulary(_require(args.vocab, "vocab"))
    text_table = formats.read_embeddings(
        _require(args.text_embeddings, "text_embeddings")
    )
    proposals = formats.read_proposals(_require(args.data, "data"))
    split = None if args.inference_vocabulary == "joint" else args.inference_vocabulary
    clf = pipeline.build_classifier(
        vocabulary, text_table, head.e_bg, args.tau, split=split
    )
    out: dict[str, list] = {}
    for image_id in sorted(proposals):
        props = proposals[image_id]
        if not args.no_dedupe:
            props = pipeline.dedupe_proposals(
                props, iou_threshold=args.dedupe_nms, max_out=args.max_proposals
            )
        dets = pipeline.infer_image(
            head, clf, props, rescore=args.objectness_rescore
        )
        if not args.no_finalize:
            dets = nms(
                dets, args.nms, class_agnostic=False, max_out=args.max_detections
            )
        out[image_id] = dets
    formats.write_detections(args.out, out)
    total = sum(len(v) for v in out.values())
    print(f"wrote {total} detections over {len(out)} images to {args.out}")
    return 0


def _cmd_ensemble(args) -> int:
    dets_text = formats.read_detections(_require(args.dets_text, "dets-text"))
    dets_image = formats.read_detections(_require(args.dets_image, "dets-image"))
    base_ids = formats.read_id_list(_require(args.base_ids, "base-ids"))
    cfg = EnsembleConfig(base_ids=frozenset(base_ids), lam=args.lam)
    out: dict[str, list] = {}
    for image_id in sorted(dets_text.keys() | dets_image.keys()):
        combined = ensemble_detections(
            dets_text.get(image_id, []), dets_image.get(image_id, []), cfg
        )
        if not args.no_finalize:
            combined = nms(
                combined, args.nms, class_agnostic=False, max_out=args.max_detections
            )
        out[image_id] = combined
    formats.write_detections(args.out, out)
    total = sum(len(v) for v in out.values())
    print(f"wrote {total} ensembled detections over {len(out)} images to {args.out}")
    return 0


def _cmd_expand_vocab(args) -> int:
    import json

    category_clf = formats.load_classifier(_require(args.categories, "categories"))
    attribute_clf = formats.load_classifier(_require(args.attributes, "attributes"))
    regions = formats.read_embeddings(_require(args.regions, "regions"))
    with open(args.out, "w", encoding="utf-8", newline="\n") as fh:
        for region_id in regions.ids():
            probs = expand_vocabulary(category_clf, attribute_clf, regions[region_id])
            row = {
                "region_id": region_id,
                "categories": list(category_clf.ids),
                "attributes": list(attribute_clf.ids),
                "probs": [list(map(float, row_)) for row_ in probs],
            }
            fh.write(
                json.dumps(quantize_floats(row), sort_keys=True, separators=(",", ":"))
            )
            fh.write("\n")
    print(
        f"wrote {len(regions)} joint distributions "
        f"({len(category_clf)}x{len(attribute_clf)}) to {args.out}"
    )
    return 0


def _cmd_eval(args) -> int:
    dets = formats.read_detections(_require(args.dets, "dets"))
    gts = formats.read_ground_truths(_require(args.gt, "gt"))
    vocabulary = formats.read_vocabulary(_require(args.vocab, "vocab"))
    proposals = None
    if args.proposals is not None:
        proposals = formats.read_proposals(_require(args.proposals, "proposals"))
    try:
        ar_ks = tuple(int(k) for k in args.ar_ks.split(","))
    except ValueError:
        raise ConfigError(f"--ar-ks expects comma-separated integers, got {args.ar_ks!r}")
    report = evaluate(
        dets,
        gts,
        vocabulary,
        proposals_by_image=proposals,
        ar_ks=ar_ks,
        max_detections=args.max_detections,
    )
    print(report.table())
    if args.report is not None:
        Path(args.report).write_text(report.to_json() + "\n", encoding="utf-8")
    return 0


def _cmd_run(args) -> int:
    config = load_config(args.config)
    result = pipeline.run_pipeline(
        config, on_progress=lambda msg: print(f"vild: {msg}", file=sys.stderr)
    )
    print(result.report.table())
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="vild",
        description=(
            "Open-vocabulary detection on precomputed embeddings: "
            "text-embedding classifiers, distillation training, "
            "post-processing, and AP/AR evaluation."
        ),
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser(
        "compose-text",
        help="average per-prompt embeddings into one embedding per category",
    )
    p.add_argument("--embeddings", help="per-prompt embedding file, ids '<id>:<index>'")
    p.add_argument("--out", help="output embedding file")
    p.add_argument("--render-out", help="write rendered prompt strings here instead")
    p.add_argument("--vocab", help="vocabulary file (for --render-out)")
    p.set_defaults(func=_cmd_compose_text)

    p = sub.add_parser(
        "compose-crops",
        help="fuse '<id>:1x' and '<id>:1.5x' crop embeddings per region",
    )
    p.add_argument("--embeddings", required=True, help="crop embedding file")
    p.add_argument("--out", required=True, help="output embedding file")
    p.set_defaults(func=_cmd_compose_crops)

    p = sub.add_parser(
        "gen-synthetic", help="generate the synthetic benchmark directory"
    )
    p.add_argument("--out-dir", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--p-base", type=int, default=20)
    p.add_argument("--p-novel", type=int, default=10)
    p.add_argument("--d-in", type=int, default=32)
    p.add_argument("--d-out", type=int, default=16)
    p.add_argument("--train-images", type=int, default=200)
    p.add_argument("--eval-images", type=int, default=40)
    p.add_argument("--n-online", type=int, default=8)
    p.add_argument("--m-offline", type=int, default=8)
    p.add_argument("--noise-text", type=float, default=0.05)
    p.add_argument("--noise-feature", type=float, default=0.05)
    p.add_argument("--noise-teacher", type=float, default=0.05)
    p.add_argument("--background-fraction", type=float, default=0.25)
    p.add_argument("--novel-online-fraction", type=float, default=0.25)
    p.add_argument("--w", type=float, default=0.5, help="distillation weight")
    p.add_argument("--iterations", type=int, default=2000)
    p.add_argument("--learning-rate", type=float, default=0.5)
    p.add_argument("--tau", type=float, default=TAU_DEFAULT)
    p.add_argument("--ensemble", action="store_true")
    p.set_defaults(func=_cmd_gen_synthetic)

    p = sub.add_parser("train", help="train a region head")
    p.add_argument("--config", required=True)
    p.add_argument("--data", help="override the config's train_data path")
    p.add_argument("--out", help="override the config's head output path")
    p.add_argument("--loss-log", help="write per-iteration losses here")
    p.add_argument(
        "--classifier-out",
        help="also export the joint-vocabulary classifier bundle",
    )
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("infer", help="classify proposals with a trained head")
    p.add_argument("--head", required=True)
    p.add_argument("--text-embeddings", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--data", required=True, help="proposals file")
    p.add_argument("--out", required=True, help="detections output file")
    p.add_argument("--tau", type=float, default=TAU_DEFAULT)
    p.add_argument(
        "--inference-vocabulary",
        choices=INFERENCE_VOCABULARIES,
        default="joint",
    )
    p.add_argument("--objectness-rescore", action="store_true")
    p.add_argument("--nms", type=float, default=PER_CLASS_NMS_THRESHOLD)
    p.add_argument("--max-detections", type=int, default=MAX_DETECTIONS)
    p.add_argument("--no-finalize", action="store_true")
    p.add_argument("--no-dedupe", action="store_true")
    p.add_argument("--dedupe-nms", type=float, default=CLASS_AGNOSTIC_NMS_THRESHOLD)
    p.add_argument("--max-proposals", type=int, default=MAX_PROPOSALS)
    p.set_defaults(func=_cmd_infer)

    p = sub.add_parser(
        "ensemble", help="combine text-head and image-head detections"
    )
    p.add_argument("--dets-text", required=True)
    p.add_argument("--dets-image", required=True)
    p.add_argument("--base-ids", required=True, help="file of base category ids")
    p.add_argument("--out", required=True)
    p.add_argument("--lambda", dest="lam", type=float, default=ENSEMBLE_LAMBDA)
    p.add_argument("--nms", type=float, default=PER_CLASS_NMS_THRESHOLD)
    p.add_argument("--max-detections", type=int, default=MAX_DETECTIONS)
    p.add_argument("--no-finalize", action="store_true")
    p.set_defaults(func=_cmd_ensemble)

    p = sub.add_parser(
        "expand-vocab",
        help="joint category-attribute probabilities for region embeddings",
    )
    p.add_argument("--categories", required=True, help="category classifier bundle")
    p.add_argument("--attributes", required=True, help="attribute classifier bundle")
    p.add_argument("--regions", required=True, help="region embedding file")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_expand_vocab)

    p = sub.add_parser("eval", help="evaluate detections against ground truth")
    p.add_argument("--dets", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--proposals", help="proposals file for AR@k")
    p.add_argument(
        "--ar-ks",
        default=",".join(str(k) for k in AR_KS),
        help="comma-separated k values for AR@k",
    )
    p.add_argument("--max-detections", type=int, default=MAX_DETECTIONS)
    p.add_argument("--report", help="write the report JSON here")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("run", help="run the full pipeline from a config file")
    p.add_argument("--config", required=True)
    p.set_defaults(func=_cmd_run)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        _check_thread_cap()
        return args.func(args)
    except VildError as exc:
        print(f"vild: error: {exc}", file=sys.stderr)
        return exc.exit_code
    except FileNotFoundError as exc:
        print(f"vild: error: missing file: {exc.filename}", file=sys.stderr)
        return ConfigError.exit_code


if __name__ == "__main__":
    sys.exit(main())
