"""Record-level preprocessing: tokens, answer span, key sentence, mask.

Consumes dataset rows (JSONL) and dependency parses (CoNLL-U blocks
anchored by ``# id = <record id>`` comments), and produces one mask
artifact per record plus a token-span sidecar used at inference time.

Input layout: the model sees ``answer [SEP] passage`` as one token
sequence, so every token index below is an offset into that
concatenation.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

from .keysent import (
    SentenceSplit,
    locate_key_sentence,
    split_sentences,
    tokenize,
    tokenize_with_spans,
)
from .localness import AnswerSpan
from .synmask import (
    DependencyTriple,
    RelationStrategy,
    VisibilityMask,
    build_mask,
    filter_triples,
    mask_artifact_dict,
)

SEP_TOKEN = "[sep]"


class InputError(ValueError):
    """Malformed or inconsistent user-supplied input files."""


@dataclass(frozen=True)
class DatasetRecord:
    id: str
    passage: str
    answer: str
    answer_start: int = -1
    question: str | None = None

    def __post_init__(self):
        if self.answer_start >= 0:
            found = self.passage[self.answer_start : self.answer_start + len(self.answer)]
            if found != self.answer:
                raise InputError(
                    f"record {self.id}: answer_start {self.answer_start} does not "
                    f"point at the answer (found {found!r})"
                )


def read_dataset(path) -> list[DatasetRecord]:
    records = []
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                doc = json.loads(line)
            except json.JSONDecodeError as exc:
                raise InputError(f"{path}:{line_no}: bad JSON ({exc})") from None
            try:
                records.append(
                    DatasetRecord(
                        id=str(doc["id"]),
                        passage=doc["passage"],
                        answer=doc["answer"],
                        answer_start=int(doc.get("answer_start", -1)),
                        question=doc.get("question"),
                    )
                )
            except KeyError as exc:
                raise InputError(f"{path}:{line_no}: missing field {exc}") from None
    return records


def read_conllu(path) -> dict[str, list[DependencyTriple]]:
    """Parse blocks keyed by their ``# id =`` comment.

    Only the ID, FORM, HEAD and DEPREL columns are used.  Multiword
    ranges (``1-2``) and empty nodes (``1.1``) are skipped; each
    remaining token with HEAD > 0 yields the triple
    (HEAD - 1, ID - 1, DEPREL).
    """
    blocks: dict[str, list[DependencyTriple]] = {}
    current_id: str | None = None
    current: list[DependencyTriple] = []

    def flush():
        nonlocal current_id, current
        if current_id is not None:
            blocks[current_id] = current
        current_id, current = None, []

    with open(path, encoding="utf-8") as fh:
        for line_no, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n")
            if not line.strip():
                flush()
                continue
            if line.startswith("#"):
                body = line[1:].strip()
                if body.startswith("id") and "=" in body:
                    current_id = body.split("=", 1)[1].strip()
                continue
            cols = line.split("\t")
            if len(cols) < 8:
                raise InputError(f"{path}:{line_no}: expected >=8 tab-separated columns")
            tok_id = cols[0]
            if "-" in tok_id or "." in tok_id:
                continue  # multiword range / empty node
            try:
                idx = int(tok_id)
                head = int(cols[6])
            except ValueError:
                raise InputError(f"{path}:{line_no}: non-integer ID or HEAD") from None
            if head > 0:
                try:
                    current.append(DependencyTriple(head - 1, idx - 1, cols[7]))
                except ValueError as exc:
                    raise InputError(f"{path}:{line_no}: {exc}") from None
    flush()
    return blocks


@dataclass
class PreprocessedRecord:
    record: DatasetRecord
    tokens: list[str]
    answer_span: AnswerSpan
    key_sentence_index: int
    selection: str  # containment | rouge_fallback
    kept_triples: list[DependencyTriple]
    dropped_triples: int
    mask: VisibilityMask

    def artifact(self, strategy: RelationStrategy) -> dict:
        return mask_artifact_dict(self.record.id, self.mask, self.kept_triples, strategy)

    def span_entry(self) -> dict:
        return {
            "id": self.record.id,
            "answer_start_token": self.answer_span.start,
            "answer_end_token": self.answer_span.end,
            "key_sentence_index": self.key_sentence_index,
            "selection": self.selection,
            "I": len(self.tokens),
        }


def build_input_tokens(record: DatasetRecord) -> list[str]:
    return tokenize(record.answer) + [SEP_TOKEN] + tokenize(record.passage)


def _passage_token_span(record: DatasetRecord) -> tuple[int, int]:
    """Answer span as passage-token indices.

    Char offsets win when present; otherwise the first exact occurrence
    of the answer token sequence in the passage is used.
    """
    toks = tokenize_with_spans(record.passage)
    if record.answer_start >= 0:
        end_char = record.answer_start + len(record.answer)
        hit = [
            i for i, (_, a, b) in enumerate(toks) if a < end_char and b > record.answer_start
        ]
        if hit:
            return hit[0], hit[-1]
    answer_toks = tokenize(record.answer)
    words = [t for t, _, _ in toks]
    for start in range(len(words) - len(answer_toks) + 1):
        if words[start : start + len(answer_toks)] == answer_toks:
            return start, start + len(answer_toks) - 1
    raise InputError(f"record {record.id}: answer not found in passage")


def _key_sentence_alignment(
    record: DatasetRecord, split: SentenceSplit, key_idx: int, prefix_len: int
) -> list[list[int]]:
    """Key-sentence word -> token indices in the concatenated sequence."""
    sent = split.sentences[key_idx]
    alignment = []
    for i, (_, a, b) in enumerate(tokenize_with_spans(record.passage)):
        if a >= sent.start and b <= sent.end:
            alignment.append([prefix_len + i])
    return alignment


def preprocess_record(
    record: DatasetRecord,
    parse: list[DependencyTriple],
    strategy: RelationStrategy,
) -> PreprocessedRecord:
    tokens = build_input_tokens(record)
    prefix_len = len(tokenize(record.answer)) + 1

    split = split_sentences(record.passage)
    key_idx = locate_key_sentence(split, record.answer, record.answer_start)
    sent = split.sentences[key_idx]
    contained = (
        record.answer_start >= 0
        and sent.start <= record.answer_start
        and record.answer_start + len(record.answer) <= sent.end
    )

    s_p, e_p = _passage_token_span(record)
    span = AnswerSpan(prefix_len + s_p, prefix_len + e_p)

    kept = filter_triples(parse, strategy)
    alignment = _key_sentence_alignment(record, split, key_idx, prefix_len)
    mask = build_mask(kept, len(alignment), alignment, len(tokens))
    return PreprocessedRecord(
        record=record,
        tokens=tokens,
        answer_span=span,
        key_sentence_index=key_idx,
        selection="containment" if contained else "rouge_fallback",
        kept_triples=kept,
        dropped_triples=len(parse) - len(kept),
        mask=mask,
    )


def run_preprocess(
    dataset_path,
    parses_path,
    out_dir,
    strategy: RelationStrategy,
) -> dict:
    """Whole-corpus preprocessing; returns the summary report.

    Records without a parse block are skipped and listed; artifacts and
    the span sidecar are written deterministically (no timestamps), so
    reruns are byte-identical.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    records = read_dataset(dataset_path)
    parses = read_conllu(parses_path)

    skipped: list[str] = []
    span_lines: list[str] = []
    containment = fallback = kept_total = dropped_total = 0
    for record in records:
        if record.id not in parses:
            skipped.append(record.id)
            continue
        pre = preprocess_record(record, parses[record.id], strategy)
        with open(out / f"{record.id}.mask.json", "w", encoding="utf-8") as fh:
            json.dump(pre.artifact(strategy), fh, indent=1, sort_keys=True)
            fh.write("\n")
        span_lines.append(json.dumps(pre.span_entry(), sort_keys=True))
        containment += pre.selection == "containment"
        fallback += pre.selection == "rouge_fallback"
        kept_total += len(pre.kept_triples)
        dropped_total += pre.dropped_triples
    with open(out / "spans.jsonl", "w", encoding="utf-8") as fh:
        fh.write("".join(line + "\n" for line in span_lines))

    report = {
        "strategy": strategy.value,
        "records": len(records),
        "processed": len(records) - len(skipped),
        "skipped": skipped,
        "containment": containment,
        "rouge_fallback": fallback,
        "triples_kept": kept_total,
        "triples_dropped": dropped_total,
    }
    with open(out / "report.json", "w", encoding="utf-8") as fh:
        json.dump(report, fh, indent=1, sort_keys=True)
        fh.write("\n")
    return report


def read_spans(path) -> dict[str, dict]:
    spans = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                doc = json.loads(line)
                spans[doc["id"]] = doc
    return spans
