"""Key-sentence selection: answer containment first, ROUGE-L fallback.

The key sentence is the passage sentence that contains the answer span
verbatim.  When no sentence contains it (mis-split passages), the
fallback picks the sentence most similar to the answer by ROUGE-L F1,
breaking ties toward the lowest index.
"""

from __future__ import annotations

import re
from dataclasses import dataclass


@dataclass(frozen=True)
class Sentence:
    start: int  # char offset into the passage
    end: int  # exclusive
    text: str


@dataclass(frozen=True)
class SentenceSplit:
    sentences: tuple[Sentence, ...]
    source: str


@dataclass(frozen=True)
class RougeLScore:
    precision: float
    recall: float
    f1: float


class NoSentenceError(ValueError):
    """The passage produced no sentences."""


_SENT_BOUNDARY = re.compile(r"[.!?]+(?=\s)")
_TOKEN = re.compile(r"\w+|[^\w\s]")


def tokenize(text: str) -> list[str]:
    """Lowercase tokens split on whitespace and punctuation boundaries."""
    return _TOKEN.findall(text.lower())


def tokenize_with_spans(text: str) -> list[tuple[str, int, int]]:
    """Tokens plus their (start, end) char offsets in the original text."""
    return [(m.group().lower(), m.start(), m.end()) for m in _TOKEN.finditer(text)]


def split_sentences(passage: str) -> SentenceSplit:
    """Sentence spans for a passage.

    Pre-split input (one sentence per line) is honored as-is; otherwise
    a simple fallback splits after {. ! ?} runs followed by whitespace.
    """
    sentences: list[Sentence] = []
    if "\n" in passage:
        at = 0
        for line in passage.split("\n"):
            stripped = line.strip()
            if stripped:
                start = at + line.index(stripped[0])
                sentences.append(Sentence(start, start + len(stripped), stripped))
            at += len(line) + 1
    else:
        at = 0
        for m in _SENT_BOUNDARY.finditer(passage):
            chunk = passage[at : m.end()]
            stripped = chunk.strip()
            if stripped:
                start = at + chunk.index(stripped[0])
                sentences.append(Sentence(start, start + len(stripped), stripped))
            at = m.end()
        tail = passage[at:].strip()
        if tail:
            start = at + passage[at:].index(tail[0])
            sentences.append(Sentence(start, start + len(tail), tail))
    return SentenceSplit(tuple(sentences), passage)


def lcs_length(a: list[str], b: list[str]) -> int:
    """Longest common subsequence length, standard dynamic program."""
    if not a or not b:
        return 0
    prev = [0] * (len(b) + 1)
    for x in a:
        curr = [0]
        for j, y in enumerate(b, start=1):
            if x == y:
                curr.append(prev[j - 1] + 1)
            else:
                curr.append(max(prev[j], curr[j - 1]))
        prev = curr
    return prev[-1]


def rouge_l(candidate: list[str], reference: list[str]) -> RougeLScore:
    """LCS-based ROUGE-L with F1 at beta = 1; empty input scores zero."""
    if not candidate or not reference:
        return RougeLScore(0.0, 0.0, 0.0)
    lcs = lcs_length(candidate, reference)
    p = lcs / len(candidate)
    r = lcs / len(reference)
    f1 = 2.0 * p * r / (p + r) if p + r > 0 else 0.0
    return RougeLScore(p, r, f1)


def locate_key_sentence(passage: SentenceSplit, answer: str, answer_start: int) -> int:
    """Index of the sentence containing the answer span, else the ROUGE-L argmax.

    Containment means [answer_start, answer_start + len(answer)) lies
    inside a single sentence's char span.  The fallback compares each
    sentence to the answer by ROUGE-L F1, lowest index winning ties.
    """
    if not passage.sentences:
        raise NoSentenceError("passage has no sentences")
    if not answer:
        raise ValueError("answer must be nonempty")
    answer_end = answer_start + len(answer)
    if answer_start >= 0:
        for idx, sent in enumerate(passage.sentences):
            if sent.start <= answer_start and answer_end <= sent.end:
                return idx
    answer_tokens = tokenize(answer)
    best_idx, best_f1 = 0, -1.0
    for idx, sent in enumerate(passage.sentences):
        f1 = rouge_l(tokenize(sent.text), answer_tokens).f1
        if f1 > best_f1:
            best_idx, best_f1 = idx, f1
    return best_idx
