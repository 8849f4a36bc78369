"""Dependency-triple filtering and subword-level visibility masks.

A key sentence's dependency triples declare which token pairs may see
each other.  Triples are filtered by a relation strategy, projected
from word level to subword level by full bipartite expansion, and
compiled into a symmetric, reflexive boolean visibility matrix over
the whole input sequence.  Everything outside the key sentence
(including the answer prefix) is self-visible only.

The mask becomes an additive attention bias: visible -> 0, blinded ->
NEG_INF.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Sequence

import numpy as np

from .attention import AttentionBias
from .numkit import NEG_INF, Matrix

# The label lists mix classic Stanford and UD spellings; parser aliases
# are normalized before strategy filtering.  "pred" matches nothing in
# standard UD output but is retained for completeness.
_ALIAS = {"dobj": "obj", "nsubj:pass": "nsubjpass", "csubj:pass": "csubjpass"}

CORE_ARGUMENT_LABELS = frozenset(
    {"pred", "subj", "nsubj", "nsubjpass", "csubj", "csubjpass", "obj", "dobj", "iobj", "xcomp"}
)
CORE_NOMINAL_LABELS = frozenset({"subj", "nsubj", "nsubjpass", "obj", "dobj", "iobj"})


class RelationStrategy(str, Enum):
    ALL_RELATIONS = "all_relations"
    CORE_ARGUMENTS = "core_arguments"
    CORE_NOMINAL = "core_nominal"

    @property
    def label_set(self) -> frozenset[str] | None:
        if self is RelationStrategy.ALL_RELATIONS:
            return None
        if self is RelationStrategy.CORE_ARGUMENTS:
            return CORE_ARGUMENT_LABELS
        return CORE_NOMINAL_LABELS


@dataclass(frozen=True)
class DependencyTriple:
    """(head word, dependent word, relation) with word indices into the key sentence."""

    head: int
    dep: int
    relation: str

    def __post_init__(self):
        if self.head == self.dep:
            raise ValueError(f"triple may not relate a word to itself (index {self.head})")


@dataclass
class VisibilityMask:
    """Symmetric, reflexive I x I boolean visibility matrix."""

    size: int
    visible: np.ndarray

    def visible_pairs(self) -> list[tuple[int, int]]:
        """Off-diagonal visible pairs as sorted (i, j) with i < j."""
        ii, jj = np.nonzero(np.triu(self.visible, k=1))
        return [(int(i), int(j)) for i, j in zip(ii, jj)]


def normalize_relation(label: str) -> str:
    label = label.lower()
    return _ALIAS.get(label, label)


def filter_triples(
    parse: Iterable[DependencyTriple], strategy: RelationStrategy
) -> list[DependencyTriple]:
    """Keep triples whose (alias-normalized) relation is in the strategy set.

    all_relations keeps everything, including labels unknown to the
    taxonomy; the narrower strategies silently drop them.
    """
    triples = list(parse)
    keep = strategy.label_set
    if keep is None:
        return triples
    return [t for t in triples if normalize_relation(t.relation) in keep]


def build_mask(
    triples: Sequence[DependencyTriple],
    word_count: int,
    alignment: Sequence[Sequence[int]],
    seq_len: int,
) -> VisibilityMask:
    """Compile word-level triples into a subword-level visibility mask.

    ``alignment[w]`` lists the subword token indices of key-sentence
    word w inside the full input sequence.  Each triple makes every
    subword of its head word mutually visible with every subword of its
    dependent word; subwords of one word always see each other; the
    diagonal is always visible (a softmax row needs at least one
    visible entry).
    """
    if len(alignment) < word_count:
        raise ValueError(f"alignment covers {len(alignment)} words, need {word_count}")
    for w, span in enumerate(alignment):
        for t in span:
            if not (0 <= t < seq_len):
                raise ValueError(f"word {w} maps to token {t} outside [0, {seq_len})")

    visible = np.zeros((seq_len, seq_len), dtype=bool)
    np.fill_diagonal(visible, True)
    for span in alignment:
        for a in span:
            for b in span:
                visible[a, b] = True
    for t in triples:
        if t.head >= word_count or t.dep >= word_count:
            raise ValueError(
                f"triple ({t.head}, {t.dep}, {t.relation!r}) references a word "
                f"beyond the {word_count}-word key sentence"
            )
        for a in alignment[t.head]:
            for b in alignment[t.dep]:
                visible[a, b] = True
                visible[b, a] = True
    return VisibilityMask(seq_len, visible)


def mask_to_bias(mask: VisibilityMask) -> AttentionBias:
    """Additive bias: visible -> 0.0, blinded -> NEG_INF."""
    bias = np.where(mask.visible, 0.0, NEG_INF)
    return AttentionBias.mask(bias)


def mask_artifact_dict(
    example_id: str,
    mask: VisibilityMask,
    triples: Sequence[DependencyTriple],
    strategy: RelationStrategy,
) -> dict:
    """JSON-serializable artifact: pair list form of the mask plus its provenance."""
    return {
        "example_id": example_id,
        "I": mask.size,
        "visible_pairs": [[i, j] for i, j in mask.visible_pairs()],
        "triples": [{"head": t.head, "dep": t.dep, "rel": t.relation} for t in triples],
        "strategy": strategy.value,
    }


def mask_from_artifact(artifact: dict) -> VisibilityMask:
    """Rebuild the boolean mask from its pair-list artifact."""
    size = int(artifact["I"])
    visible = np.zeros((size, size), dtype=bool)
    np.fill_diagonal(visible, True)
    for i, j in artifact["visible_pairs"]:
        visible[i, j] = True
        visible[j, i] = True
    return VisibilityMask(size, visible)


def write_mask_artifact(path, artifact: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(artifact, fh, indent=1, sort_keys=True)
        fh.write("\n")


def read_mask_artifact(path) -> dict:
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)
