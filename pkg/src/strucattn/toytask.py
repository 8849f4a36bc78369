"""Synthetic neighborhood task for desk-scale behavioral checks.

Each example is a random symbol passage with a marked answer span; the
target is the four tokens flanking the span (two on each side), which is
a deterministic function of the span's +-2 neighborhood.  Word-level
triples link every span token to those neighbors, so the visibility
mask concentrates exactly the information the target needs, and the
answer-centered Gaussian bias points every query at the same region.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import model as m
from .localness import AnswerSpan, CenterStrategy
from .model import EncoderConfig, ModelConfig, NGramLossConfig, SequenceBatch
from .synmask import (
    DependencyTriple,
    RelationStrategy,
    VisibilityMask,
    build_mask,
    filter_triples,
    mask_artifact_dict,
)

PAD, BOS, EOS, SEP, UNK = "<pad>", "<bos>", "<eos>", "[sep]", "<unk>"
SPECIALS = (PAD, BOS, EOS, SEP, UNK)

# Triples alternate over the core-argument labels so every strategy of
# interest keeps them.
_TRIPLE_LABELS = ("nsubj", "obj")


def make_vocab(num_symbols: int) -> dict[str, int]:
    vocab = {tok: i for i, tok in enumerate(SPECIALS)}
    for s in range(num_symbols):
        vocab[f"t{s:02d}"] = len(vocab)
    return vocab


@dataclass
class ToyExample:
    record: dict  # dataset.jsonl row: id, passage, answer, answer_start, question
    batch: SequenceBatch
    artifact: dict  # mask artifact JSON document
    span_entry: dict  # spans.jsonl row
    triples: list[DependencyTriple]


@dataclass
class ToyDataset:
    examples: list[ToyExample]
    vocab: dict[str, int]
    config: ModelConfig


def neighborhood_triples(span_start: int, span_end: int) -> list[DependencyTriple]:
    """Word-level triples tying each span word to its +-2 neighborhood."""
    neighbors = (span_start - 2, span_start - 1, span_end + 1, span_end + 2)
    triples = []
    for w in range(span_start, span_end + 1):
        for i, nb in enumerate(neighbors):
            triples.append(DependencyTriple(w, nb, _TRIPLE_LABELS[i % len(_TRIPLE_LABELS)]))
    return triples


def make_dataset(
    seed: int,
    num_examples: int = 32,
    passage_len: int = 9,
    num_symbols: int = 24,
    encoder: EncoderConfig | None = None,
    decoder_layers: int = 1,
    ngram: NGramLossConfig | None = None,
    center_strategy: CenterStrategy = CenterStrategy.ANSWER_CENTER,
    strategy: RelationStrategy = RelationStrategy.CORE_ARGUMENTS,
) -> ToyDataset:
    """Deterministic task instance: examples, artifacts, and model config."""
    rng = np.random.default_rng(seed)
    vocab = make_vocab(num_symbols)
    symbols = [f"t{s:02d}" for s in range(num_symbols)]
    if encoder is None:
        encoder = EncoderConfig(
            num_layers=2,
            num_heads=2,
            model_dim=32,
            ffn_dim=64,
            localness_layers=(1,),
            synmask_layers=(1, 2),
        )
    max_prefix = 2 + 1  # longest answer plus [SEP]
    config = ModelConfig(
        vocab_size=len(vocab),
        max_input_len=passage_len + max_prefix + 2,
        max_target_len=8,
        encoder=encoder,
        decoder_layers=decoder_layers,
        ngram=ngram or NGramLossConfig(),
        center_strategy=center_strategy,
    )

    examples: list[ToyExample] = []
    for n in range(num_examples):
        words = [symbols[i] for i in rng.integers(0, num_symbols, size=passage_len)]
        span_len = int(rng.integers(1, 3))
        s_p = int(rng.integers(2, passage_len - 2 - (span_len - 1)))
        e_p = s_p + span_len - 1

        answer_words = words[s_p : e_p + 1]
        prefix_len = len(answer_words) + 1
        tokens = answer_words + [SEP] + words
        target_words = [words[s_p - 2], words[s_p - 1], words[e_p + 1], words[e_p + 2]]

        span = AnswerSpan(prefix_len + s_p, prefix_len + e_p)
        triples = filter_triples(neighborhood_triples(s_p, e_p), strategy)
        alignment = [[prefix_len + w] for w in range(passage_len)]
        mask = build_mask(triples, passage_len, alignment, len(tokens))

        example_id = f"toy-{n:04d}"
        passage_text = " ".join(words)
        answer_text = " ".join(answer_words)
        answer_start = len(" ".join(words[:s_p])) + (1 if s_p else 0)
        record = {
            "id": example_id,
            "passage": passage_text,
            "answer": answer_text,
            "answer_start": answer_start,
            "question": " ".join(target_words),
        }
        batch = SequenceBatch(
            input_ids=[vocab[t] for t in tokens],
            vocab_size=len(vocab),
            answer_span=span,
            mask=mask,
            target_ids=[vocab[t] for t in target_words] + [vocab[EOS]],
        )
        span_entry = {
            "id": example_id,
            "answer_start_token": span.start,
            "answer_end_token": span.end,
            "key_sentence_index": 0,
            "selection": "containment",
            "I": len(tokens),
        }
        examples.append(
            ToyExample(
                record=record,
                batch=batch,
                artifact=mask_artifact_dict(example_id, mask, triples, strategy),
                span_entry=span_entry,
                triples=triples,
            )
        )
    return ToyDataset(examples, vocab, config)


def evaluate(
    examples: list[SequenceBatch],
    params: dict[str, np.ndarray],
    config: ModelConfig,
) -> dict[str, float]:
    """Teacher-forced loss / token accuracy / own-window localness mass.

    When the run has no localness layers the mass falls back to layer 1
    with the neutral untrained window D = I/2, so baseline runs still
    log a comparable statistic.
    """
    leaves = m._leaves(params)
    losses, accs, masses = [], [], []
    mass_layers = set(config.encoder.localness_layers) or {1}
    for ex in examples:
        loss_t, head0, records = m._example_forward(leaves, ex, config)
        losses.append(float(loss_t.value))
        pred = head0.argmax(axis=1)
        accs.append(float(np.mean(pred == np.asarray(ex.target_ids))))
        center = (ex.answer_span.start + ex.answer_span.end) / 2.0
        seq_len = len(ex.input_ids)
        for rec in records:
            if rec["layer"] not in mass_layers:
                continue
            for head in rec["heads"]:
                windows = head.get("window")
                if windows is None:
                    windows = np.full(seq_len, seq_len / 2.0)
                masses.append(m.window_mass(head["weights_local"], center, windows))
    return {
        "loss": float(np.mean(losses)),
        "token_acc": float(np.mean(accs)),
        "window_mass": float(np.mean(masses)),
    }


def train(
    dataset: ToyDataset,
    epochs: int,
    learning_rate: float,
    batch_size: int,
    seed: int,
) -> tuple[dict[str, np.ndarray], list[dict]]:
    """Plain-SGD training loop over seeded mini-batch permutations.

    Returns the final parameters and one metrics row per epoch.
    Raises TrainingDivergence (after keeping the last good parameters
    on the exception) if the loss goes non-finite.
    """
    config = dataset.config
    batches = [ex.batch for ex in dataset.examples]
    params = m.init_params(config, seed=seed)
    order_rng = np.random.default_rng(seed + 1)
    metrics: list[dict] = []
    for epoch in range(epochs):
        order = order_rng.permutation(len(batches))
        for at in range(0, len(order), batch_size):
            chunk = [batches[i] for i in order[at : at + batch_size]]
            try:
                params, _ = m.train_step(chunk, params, config, learning_rate)
            except m.TrainingDivergence as exc:
                exc.last_good_params = params  # type: ignore[attr-defined]
                exc.epoch = epoch  # type: ignore[attr-defined]
                raise
        stats = evaluate(batches, params, config)
        metrics.append({"epoch": epoch, **stats})
    return params, metrics
