"""Command-line surface: preprocess, inspect-bias, train-toy, generate.

Configuration is a flat key=value file; every key has an identically
named CLI flag that overrides it.  All commands are deterministic under
a fixed seed: reruns produce byte-identical artifacts, metrics and
predictions.

Exit codes: 0 success, 1 input error, 2 internal invariant violation.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import dataclass, fields, replace
from pathlib import Path

import numpy as np

from . import model as m
from . import toytask
from .localness import AnswerSpan, CenterStrategy
from .numkit import DegenerateRowError, DimensionError
from .pipeline import (
    InputError,
    build_input_tokens,
    read_dataset,
    read_spans,
    run_preprocess,
)
from .synmask import RelationStrategy, mask_from_artifact, read_mask_artifact


@dataclass
class RunConfig:
    """Toy-scale run settings; keys mirror the CLI flags exactly."""

    strategy: str = "core_arguments"
    localness_layers: tuple[int, ...] = (1,)
    synmask_layers: tuple[int, ...] = (1, 2)
    center: str = "answer"
    ngram: int = 1
    alphas: tuple[float, ...] = (1.0,)
    seed: int = 7
    num_layers: int = 2
    num_heads: int = 2
    model_dim: int = 32
    ffn_dim: int = 64
    decoder_layers: int = 1
    epochs: int = 200
    lr: float = 0.25
    batch_size: int = 4
    examples: int = 32
    passage_len: int = 9
    symbols: int = 24
    max_len: int = 6


_INT_LIST_KEYS = {"localness_layers", "synmask_layers"}
_FLOAT_LIST_KEYS = {"alphas"}
_STR_KEYS = {"strategy", "center"}


def _parse_value(key: str, raw: str):
    raw = raw.strip()
    if key in _STR_KEYS:
        return raw
    if key in _INT_LIST_KEYS:
        if raw in ("", "none"):
            return ()
        return tuple(int(v) for v in raw.split(","))
    if key in _FLOAT_LIST_KEYS:
        return tuple(float(v) for v in raw.split(","))
    if key == "lr":
        return float(raw)
    return int(raw)


def load_run_config(path=None, overrides: dict | None = None) -> RunConfig:
    cfg = RunConfig()
    known = {f.name for f in fields(RunConfig)}
    if path is not None:
        with open(path, encoding="utf-8") as fh:
            for line_no, line in enumerate(fh, start=1):
                line = line.split("#", 1)[0].strip()
                if not line:
                    continue
                if "=" not in line:
                    raise InputError(f"{path}:{line_no}: expected key=value")
                key, raw = (part.strip() for part in line.split("=", 1))
                if key not in known:
                    raise InputError(f"{path}:{line_no}: unknown config key {key!r}")
                cfg = replace(cfg, **{key: _parse_value(key, raw)})
    for key, raw in (overrides or {}).items():
        if raw is not None:
            cfg = replace(cfg, **{key: _parse_value(key, raw)})
    return cfg


def _relation_strategy(cfg: RunConfig) -> RelationStrategy:
    try:
        return RelationStrategy(cfg.strategy)
    except ValueError:
        raise InputError(f"unknown strategy {cfg.strategy!r}") from None


def _center_strategy(cfg: RunConfig) -> CenterStrategy:
    if cfg.center == "answer":
        return CenterStrategy.ANSWER_CENTER
    if cfg.center == "predicted":
        return CenterStrategy.PREDICTED_CENTER
    raise InputError(f"unknown center strategy {cfg.center!r} (use answer|predicted)")


def _toy_dataset(cfg: RunConfig) -> toytask.ToyDataset:
    encoder = m.EncoderConfig(
        num_layers=cfg.num_layers,
        num_heads=cfg.num_heads,
        model_dim=cfg.model_dim,
        ffn_dim=cfg.ffn_dim,
        localness_layers=cfg.localness_layers,
        synmask_layers=cfg.synmask_layers,
    )
    return toytask.make_dataset(
        seed=cfg.seed,
        num_examples=cfg.examples,
        passage_len=cfg.passage_len,
        num_symbols=cfg.symbols,
        encoder=encoder,
        decoder_layers=cfg.decoder_layers,
        ngram=m.NGramLossConfig(cfg.ngram, cfg.alphas),
        center_strategy=_center_strategy(cfg),
        strategy=_relation_strategy(cfg),
    )


def _write_toy_inputs(dataset: toytask.ToyDataset, out_dir: Path) -> None:
    art_dir = out_dir / "artifacts"
    art_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "dataset.jsonl", "w", encoding="utf-8") as fh:
        for ex in dataset.examples:
            fh.write(json.dumps(ex.record, sort_keys=True) + "\n")
    with open(art_dir / "spans.jsonl", "w", encoding="utf-8") as fh:
        for ex in dataset.examples:
            fh.write(json.dumps(ex.span_entry, sort_keys=True) + "\n")
    for ex in dataset.examples:
        with open(art_dir / f"{ex.record['id']}.mask.json", "w", encoding="utf-8") as fh:
            json.dump(ex.artifact, fh, indent=1, sort_keys=True)
            fh.write("\n")


def cmd_preprocess(args) -> int:
    cfg = load_run_config(args.config, {"strategy": args.strategy})
    report = run_preprocess(
        args.dataset, args.parses, args.out_dir, _relation_strategy(cfg)
    )
    print(json.dumps(report, sort_keys=True))
    return 0


def cmd_train_toy(args) -> int:
    overrides = {
        key: getattr(args, key, None)
        for key in (f.name for f in fields(RunConfig))
    }
    cfg = load_run_config(args.config, overrides)
    out_dir = Path(args.out_dir)
    dataset = _toy_dataset(cfg)
    _write_toy_inputs(dataset, out_dir)

    def write_metrics(rows):
        with open(out_dir / "metrics.jsonl", "w", encoding="utf-8") as fh:
            for row in rows:
                fh.write(json.dumps(row, sort_keys=True) + "\n")

    try:
        params, metrics = toytask.train(
            dataset, cfg.epochs, cfg.lr, cfg.batch_size, cfg.seed
        )
    except m.TrainingDivergence as exc:
        last_good = getattr(exc, "last_good_params", None)
        if last_good is not None:
            m.save_checkpoint(
                out_dir / "checkpoint.json", last_good, dataset.config, dataset.vocab
            )
        write_metrics([])
        print(f"training diverged at epoch {getattr(exc, 'epoch', '?')}: {exc}", file=sys.stderr)
        raise
    m.save_checkpoint(out_dir / "checkpoint.json", params, dataset.config, dataset.vocab)
    write_metrics(metrics)
    final = metrics[-1] if metrics else {}
    print(json.dumps({"out_dir": str(out_dir), "final": final}, sort_keys=True))
    return 0


def _load_example(record, artifacts_dir: Path, spans: dict, vocab: dict, vocab_size: int):
    """SequenceBatch for one record, or None (with a warning) if artifacts are missing."""
    mask_path = artifacts_dir / f"{record.id}.mask.json"
    if not mask_path.exists():
        print(f"warning: no mask artifact for {record.id}, skipped", file=sys.stderr)
        return None
    if record.id not in spans:
        print(f"warning: no span entry for {record.id}, skipped", file=sys.stderr)
        return None
    tokens = build_input_tokens(record)
    artifact = read_mask_artifact(mask_path)
    if artifact["I"] != len(tokens):
        print(
            f"warning: artifact length {artifact['I']} != tokenized length "
            f"{len(tokens)} for {record.id}, skipped",
            file=sys.stderr,
        )
        return None
    span_doc = spans[record.id]
    unk = vocab.get(toytask.UNK, 0)
    return m.SequenceBatch(
        input_ids=[vocab.get(t, unk) for t in tokens],
        vocab_size=vocab_size,
        answer_span=AnswerSpan(span_doc["answer_start_token"], span_doc["answer_end_token"]),
        mask=mask_from_artifact(artifact),
    )


def cmd_generate(args) -> int:
    params, config, vocab = m.load_checkpoint(args.checkpoint)
    if vocab is None:
        raise InputError("checkpoint carries no vocabulary; cannot map tokens to ids")
    artifacts_dir = Path(args.artifacts)
    spans_path = artifacts_dir / "spans.jsonl"
    spans = read_spans(spans_path) if spans_path.exists() else {}
    inverse = {i: t for t, i in vocab.items()}
    records = read_dataset(args.dataset)
    with open(args.out, "w", encoding="utf-8") as fh:
        for record in records:
            batch = _load_example(record, artifacts_dir, spans, vocab, config.vocab_size)
            if batch is None:
                continue
            ids = m.generate(batch, params, config, args.max_len)
            prediction = " ".join(inverse.get(i, toytask.UNK) for i in ids)
            fh.write(json.dumps({"id": record.id, "prediction": prediction}, sort_keys=True) + "\n")
    return 0


def _inspect_doc(record, batch, config, params, row: int) -> dict:
    _, layer_records = m.encode_with_details(batch, config, params)
    seq_len = len(batch.input_ids)
    doc = {
        "example_id": record.id,
        "row": row,
        "I": seq_len,
        "answer_center": (batch.answer_span.start + batch.answer_span.end) / 2.0,
        "mask_row": [int(v) for v in batch.mask.visible[row]] if batch.mask is not None else None,
        "layers": [],
    }
    for rec in layer_records:
        layer_doc = {
            "layer": rec["layer"],
            "localness": rec["localness"],
            "synmask": rec["synmask"],
            "heads": [],
        }
        for h, head in enumerate(rec["heads"]):
            head_doc = {"head": h}
            if "gaussian" in head:
                head_doc["window"] = float(head["window"][row])
                head_doc["sigma"] = float(head["sigma"][row])
                head_doc["gaussian_row"] = [float(v) for v in head["gaussian"][row]]
            w = head["weights_local"][row]
            head_doc["weights_local_row"] = [float(v) for v in w]
            head_doc["weights_local_rowsum"] = float(w.sum())
            if "weights_mask" in head:
                wm = head["weights_mask"][row]
                head_doc["weights_mask_row"] = [float(v) for v in wm]
                head_doc["weights_mask_rowsum"] = float(wm.sum())
            layer_doc["heads"].append(head_doc)
        doc["layers"].append(layer_doc)
    return doc


def _write_inspect_csv(doc: dict, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["layer", "head", "series"] + [f"j{j}" for j in range(doc["I"])])
        if doc["mask_row"] is not None:
            writer.writerow([0, 0, "mask_row"] + doc["mask_row"])
        for layer in doc["layers"]:
            for head in layer["heads"]:
                for series in ("gaussian_row", "weights_local_row", "weights_mask_row"):
                    if series in head:
                        writer.writerow(
                            [layer["layer"], head["head"], series] + head[series]
                        )


def cmd_inspect_bias(args) -> int:
    records = {r.id: r for r in read_dataset(args.dataset)}
    if args.example_id not in records:
        raise InputError(f"unknown example id {args.example_id!r}")
    record = records[args.example_id]
    artifacts_dir = Path(args.artifacts)
    artifact_path = artifacts_dir / f"{record.id}.mask.json"
    if not artifact_path.exists():
        raise InputError(f"no mask artifact for {record.id} under {artifacts_dir}")
    spans = read_spans(artifacts_dir / "spans.jsonl")
    if record.id not in spans:
        raise InputError(f"no span entry for {record.id}")

    if args.checkpoint is not None:
        params, config, vocab = m.load_checkpoint(args.checkpoint)
        if vocab is None:
            raise InputError("checkpoint carries no vocabulary")
    else:
        cfg = load_run_config(args.config, {"seed": args.seed})
        dataset = _toy_dataset(cfg)
        config, vocab = dataset.config, dataset.vocab
        params = m.init_params(config, seed=cfg.seed)

    batch = _load_example(record, artifacts_dir, spans, vocab, config.vocab_size)
    if batch is None:
        raise InputError(f"artifacts for {record.id} are inconsistent with the record")
    row = args.row if args.row is not None else batch.answer_span.start
    if not (0 <= row < len(batch.input_ids)):
        raise InputError(f"row {row} outside [0, {len(batch.input_ids)})")
    doc = _inspect_doc(record, batch, config, params, row)
    if args.format == "csv":
        _write_inspect_csv(doc, args.out)
    else:
        with open(args.out, "w", encoding="utf-8") as fh:
            json.dump(doc, fh, indent=1, sort_keys=True)
            fh.write("\n")
    print(f"wrote {args.out}")
    return 0


def _add_run_config_flags(p: argparse.ArgumentParser) -> None:
    for f in fields(RunConfig):
        p.add_argument(f"--{f.name.replace('_', '-')}", dest=f.name, default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="strucattn",
        description="structure-aware attention toolkit (localness bias + syntactic mask)",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("preprocess", help="build mask artifacts from a dataset and parses")
    p.add_argument("--dataset", required=True)
    p.add_argument("--parses", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--config", default=None)
    p.add_argument("--strategy", default=None)
    p.set_defaults(handler=cmd_preprocess)

    p = sub.add_parser("train-toy", help="train on the synthetic neighborhood task")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--config", default=None)
    _add_run_config_flags(p)
    p.set_defaults(handler=cmd_train_toy)

    p = sub.add_parser("generate", help="greedy decoding over a dataset")
    p.add_argument("--dataset", required=True)
    p.add_argument("--artifacts", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--max-len", type=int, default=6)
    p.set_defaults(handler=cmd_generate)

    p = sub.add_parser("inspect-bias", help="dump Gaussian bias, mask and weights for one example")
    p.add_argument("--example-id", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--artifacts", required=True)
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--config", default=None)
    p.add_argument("--row", type=int, default=None)
    p.add_argument("--seed", default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--format", choices=("json", "csv"), default="json")
    p.set_defaults(handler=cmd_inspect_bias)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.handler(args)
    except (m.TrainingDivergence, DegenerateRowError, DimensionError) as exc:
        print(f"invariant violation: {exc}", file=sys.stderr)
        return 2
    except (InputError, m.ConfigurationError, FileNotFoundError, NotADirectoryError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
