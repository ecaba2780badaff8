"""Command-line entry point.

Every run writes a ``manifest.json`` into its output directory recording
the resolved configuration and seed; ``medspan replay manifest.json``
repeats the run exactly.  Exit codes: 0 success, 1 runtime failure,
2 usage error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import baseline as baseline_mod
from .checkpoint import load_checkpoint, save_checkpoint
from .data import (
    ATTRIBUTES,
    CLASSES,
    DatasetError,
    GeneratorConfig,
    generate,
    limit_span_labels,
    parse_dataset,
    split,
    write_dataset,
)
from .metrics import evaluate, segment_count
from .model import (
    EmbeddingSource,
    ExtractionThresholds,
    ModelConfig,
    ModelParams,
    make_oracle_predictor,
    make_predictor,
)
from .projections import ProjectionConfig
from .report import render_figures, write_report_files
from .training import TrainConfig, TrainingDiverged, train

__all__ = ["main", "run"]

_SEED_ENV = "MEDSPAN_SEED"


def _default_seed() -> int:
    raw = os.environ.get(_SEED_ENV)
    if raw is None:
        return 0
    try:
        return int(raw)
    except ValueError:
        raise SystemExit(f"{_SEED_ENV} must be an integer, got {raw!r}")


def _write_manifest(out_dir, argv: list[str], resolved: dict) -> None:
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "manifest.json"), "w") as fh:
        json.dump({"argv": argv, "resolved": resolved}, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _add_model_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--scorer", choices=("tascore", "additive"), default="tascore")
    p.add_argument("--projection", choices=("softmax", "fusedmax"), default="softmax")
    p.add_argument("--temperature", type=float, default=1.0)
    p.add_argument("--tv-weight", type=float, default=1.0)
    p.add_argument("--embed-dim", type=int, default=64)
    p.add_argument("--embeddings", default=None, help="precomputed embedding file (default: seeded frozen random)")
    p.add_argument("--classifier-hidden", type=int, default=512)
    p.add_argument("--tascore-dim", type=int, default=32)
    p.add_argument("--tascore-layers", type=int, default=2)
    p.add_argument("--dropout", type=float, default=0.2)
    p.add_argument("--max-seq-len", type=int, default=256)


def _model_config(args) -> ModelConfig:
    return ModelConfig(
        scorer=args.scorer,
        projection=ProjectionConfig(kind=args.projection, temperature=args.temperature, tv_weight=args.tv_weight),
        embed_dim=args.embed_dim,
        seed=args.seed,
        classifier_hidden=args.classifier_hidden,
        tascore_dim=args.tascore_dim,
        tascore_layers=args.tascore_layers,
        dropout_p=args.dropout,
        max_seq_len=args.max_seq_len,
    )


def _embedding_source(args):
    if getattr(args, "embeddings", None):
        return EmbeddingSource.from_file(args.embeddings)
    return None


def _build_parser() -> argparse.ArgumentParser:
    seed = _default_seed()
    parser = argparse.ArgumentParser(prog="medspan", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="write a synthetic dialogue dataset")
    g.add_argument("--n-examples", type=int, required=True)
    g.add_argument("--span-label-fraction", type=float, default=1.0)
    g.add_argument("--multi-medication-fraction", type=float, default=0.773)
    g.add_argument("--noise-frequency", type=float, default=0.22)
    g.add_argument("--noise-route", type=float, default=0.36)
    g.add_argument("--noise-change", type=float, default=0.15)
    g.add_argument("--class-distribution", choices=("table2", "uniform"), default="table2")
    g.add_argument("--seed", type=int, default=seed)
    g.add_argument("--split", default=None, help="three comma-separated fractions; writes train/valid/test files")
    g.add_argument("--limit-span-labels", type=int, default=None,
                   help="keep gold spans on only this many training examples")
    g.add_argument("--out-dir", required=True)

    t = sub.add_parser("train", help="train a model and write a checkpoint")
    t.add_argument("--data", required=True)
    t.add_argument("--validation", default=None)
    t.add_argument("--epochs", type=int, default=30)
    t.add_argument("--learning-rate", type=float, default=1e-3)
    t.add_argument("--lambda-id", type=float, default=1.0)
    t.add_argument("--optimizer", choices=("adam", "sgd"), default="adam")
    t.add_argument("--batch-size", type=int, default=32)
    t.add_argument("--fusedmax-star", action="store_true")
    t.add_argument("--swap-fraction", type=float, default=0.25)
    t.add_argument("--seed", type=int, default=seed)
    _add_model_flags(t)
    t.add_argument("--out-dir", required=True)

    e = sub.add_parser("evaluate", help="score a checkpoint (or the gold-echo debug model) on a dataset")
    e.add_argument("--data", required=True)
    e.add_argument("--model", required=True, help="checkpoint path, or 'oracle'")
    e.add_argument("--embeddings", default=None)
    e.add_argument("--seed", type=int, default=seed)
    e.add_argument("--out-dir", required=True)

    x = sub.add_parser("extract", help="write bracket-annotated extractions for a dataset")
    x.add_argument("--data", required=True)
    x.add_argument("--model", required=True, help="checkpoint path, or 'oracle'")
    x.add_argument("--embeddings", default=None)
    x.add_argument("--seed", type=int, default=seed)
    x.add_argument("--out-dir", required=True)

    b = sub.add_parser("baseline", help="score the phrase-matching baseline on a dataset")
    b.add_argument("--data", required=True)
    b.add_argument("--lexicon", default=None, help="TSV lexicon (attribute, class, phrase); default built-in")
    b.add_argument("--seed", type=int, default=seed)
    b.add_argument("--out-dir", required=True)

    r = sub.add_parser("replay", help="re-run the command recorded in a manifest")
    r.add_argument("manifest")

    return parser


# ---------------------------------------------------------------------------
# command bodies


def _cmd_generate(args, argv) -> int:
    cfg = GeneratorConfig(
        n_examples=args.n_examples,
        span_label_fraction=args.span_label_fraction,
        multi_medication_fraction=args.multi_medication_fraction,
        label_noise_rates={
            "frequency": args.noise_frequency,
            "route": args.noise_route,
            "change": args.noise_change,
        },
        class_distribution=args.class_distribution,
        seed=args.seed,
    )
    points = generate(cfg)
    os.makedirs(args.out_dir, exist_ok=True)
    written = {}
    if args.split:
        fractions = tuple(float(f) for f in args.split.split(","))
        tr, va, te = split(points, fractions, args.seed)
        if args.limit_span_labels is not None:
            tr = limit_span_labels(tr, args.limit_span_labels, args.seed)
        for name, part in (("train", tr), ("valid", va), ("test", te)):
            path = os.path.join(args.out_dir, f"{name}.jsonl")
            write_dataset(part, path)
            written[name] = len(part)
    else:
        if args.limit_span_labels is not None:
            points = limit_span_labels(points, args.limit_span_labels, args.seed)
        path = os.path.join(args.out_dir, "data.jsonl")
        write_dataset(points, path)
        written["data"] = len(points)
    _write_manifest(args.out_dir, argv, {"command": "generate", "config": vars(args)})
    for name, count in written.items():
        print(f"wrote {count} examples to {name}.jsonl")
    return 0


def _cmd_train(args, argv) -> int:
    train_points = parse_dataset(args.data)
    validation = parse_dataset(args.validation) if args.validation else None
    params = ModelParams.init(_model_config(args), embedding=_embedding_source(args))
    cfg = TrainConfig(
        epochs=args.epochs,
        learning_rate=args.learning_rate,
        lambda_id=args.lambda_id,
        optimizer=args.optimizer,
        batch_size=args.batch_size,
        fusedmax_star=args.fusedmax_star,
        swap_fraction=args.swap_fraction,
        seed=args.seed,
    )
    os.makedirs(args.out_dir, exist_ok=True)
    history_path = os.path.join(args.out_dir, "history.jsonl")

    def progress(record):
        print(
            f"epoch {record['epoch']:3d}  loss_c {record['loss_c']:.4f}  "
            f"loss_i {record['loss_i']:.4f}  [{record['projection']}]",
            flush=True,
        )

    result = train(train_points, params, cfg, validation=validation,
                   history_path=history_path, progress=progress)
    ckpt = os.path.join(args.out_dir, "model.ckpt")
    save_checkpoint(ckpt, result.params, result.thresholds)
    _write_manifest(args.out_dir, argv, {"command": "train", "config": vars(args)})
    print(f"wrote checkpoint to {ckpt}")
    return 0


def _load_predictor(args):
    if args.model == "oracle":
        return make_oracle_predictor()
    params, thresholds = load_checkpoint(args.model, embedding=_embedding_source(args))
    return make_predictor(params, thresholds)


def _cmd_evaluate(args, argv) -> int:
    dataset = parse_dataset(args.data)
    predict = _load_predictor(args)
    report = evaluate(predict, dataset)
    seg_counts = {attr: [] for attr in ATTRIBUTES}
    for point in dataset:
        if point.has_spans():
            _, masks, _ = predict(point)
            for attr in ATTRIBUTES:
                seg_counts[attr].append(segment_count(masks[attr]))
    paths = write_report_files(report, args.out_dir)
    figures = render_figures(report, args.out_dir, seg_counts if any(seg_counts.values()) else None)
    _write_manifest(args.out_dir, argv, {"command": "evaluate", "config": vars(args)})
    print(report.table())
    print(f"report: {paths['jsonl']}, {paths['tsv']}; figures: {', '.join(figures)}")
    return 0


def _annotate(tokens: list[str], masks: dict[str, np.ndarray]) -> str:
    opens: dict[int, list[str]] = {}
    closes: dict[int, list[str]] = {}
    for attr in ATTRIBUTES:
        m = np.asarray(masks[attr])
        inside = False
        for i, bit in enumerate(m.tolist() + [0]):
            if bit and not inside:
                opens.setdefault(i, []).append(f"[{attr}:")
                inside = True
            elif not bit and inside:
                closes.setdefault(i, []).append("]")
                inside = False
    parts: list[str] = []
    for i, tok in enumerate(tokens):
        parts.extend(closes.get(i, []))
        parts.extend(opens.get(i, []))
        parts.append(tok)
    parts.extend(closes.get(len(tokens), []))
    return " ".join(parts)


def _cmd_extract(args, argv) -> int:
    dataset = parse_dataset(args.data)
    predict = _load_predictor(args)
    os.makedirs(args.out_dir, exist_ok=True)
    text_path = os.path.join(args.out_dir, "extractions.txt")
    sidecar_path = os.path.join(args.out_dir, "extractions.jsonl")
    with open(text_path, "w") as txt, open(sidecar_path, "w") as side:
        for point in dataset:
            classes, masks, _ = predict(point)
            txt.write(f"# {point.id}\n{_annotate(point.tokens, masks)}\n\n")
            rec = {
                "id": point.id,
                "classes": {attr: CLASSES[attr][classes[attr]] for attr in ATTRIBUTES},
                "masks": {attr: np.asarray(masks[attr]).astype(int).tolist() for attr in ATTRIBUTES},
            }
            side.write(json.dumps(rec, sort_keys=True) + "\n")
    _write_manifest(args.out_dir, argv, {"command": "extract", "config": vars(args)})
    print(f"wrote {text_path} and {sidecar_path}")
    return 0


def _cmd_baseline(args, argv) -> int:
    dataset = parse_dataset(args.data)
    lexicon = baseline_mod.load_lexicon(args.lexicon) if args.lexicon else baseline_mod.default_lexicon()

    def predict(point):
        classes, masks, weights = {}, {}, {}
        for attr in ATTRIBUTES:
            mask, cls = baseline_mod.phrase_extract(point.tokens, attr, lexicon)
            masks[attr] = np.asarray(mask, dtype=np.int8)
            weights[attr] = masks[attr].astype(np.float64)
            classes[attr] = CLASSES[attr].index(cls if cls is not None else "None")
        return classes, masks, weights

    report = evaluate(predict, dataset)
    seg_counts = {attr: [segment_count(predict(p)[1][attr]) for p in dataset if p.has_spans()]
                  for attr in ATTRIBUTES}
    paths = write_report_files(report, args.out_dir)
    figures = render_figures(report, args.out_dir, seg_counts if any(seg_counts.values()) else None)
    _write_manifest(args.out_dir, argv, {"command": "baseline", "config": vars(args)})
    print(report.table())
    print(f"report: {paths['jsonl']}, {paths['tsv']}; figures: {', '.join(figures)}")
    return 0


_COMMANDS = {
    "generate": _cmd_generate,
    "train": _cmd_train,
    "evaluate": _cmd_evaluate,
    "extract": _cmd_extract,
    "baseline": _cmd_baseline,
}


def run(argv: list[str]) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    if args.command == "replay":
        with open(args.manifest) as fh:
            manifest = json.load(fh)
        return run(manifest["argv"])
    try:
        return _COMMANDS[args.command](args, list(argv))
    except (DatasetError, TrainingDiverged, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run(sys.argv[1:]))


if __name__ == "__main__":
    main()
