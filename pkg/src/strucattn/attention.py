"""Scaled dot-product and multi-head attention with an additive bias slot.

Both structural mechanisms in this package are additive score biases:
the answer-centered Gaussian is added to the raw scores before the
sqrt(d) scaling, and the syntactic visibility mask is added to the raw
scores where the scaling then applies on top.  Either way the weights
are ``softmax((q k^T + bias) / sqrt(d))``; the ``placement`` tag on
:class:`AttentionBias` records which convention produced the bias.

Mask biases use the finite NEG_INF sentinel, so blinded positions
underflow to exactly zero weight (see ``numkit``).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Sequence

import numpy as np

from .numkit import (
    NEG_INF,
    DegenerateRowError,
    DimensionError,
    Matrix,
    matmul,
    softmax_rows,
)

_DEGENERATE_LEVEL = NEG_INF / 2.0


class BiasKind(str, Enum):
    NONE = "none"
    GAUSSIAN = "gaussian"
    MASK = "mask"


class BiasPlacement(str, Enum):
    INSIDE_SCALING = "inside_scaling"
    PRE_SCALING = "pre_scaling"


@dataclass(frozen=True)
class AttentionBias:
    """An additive I x I score bias tagged with its kind.

    Gaussian biases are nonpositive and enter inside the scaling;
    mask biases take values in {0, NEG_INF} and are added to the raw
    scores before scaling.
    """

    kind: BiasKind
    bias: Matrix | None = None
    placement: BiasPlacement = BiasPlacement.INSIDE_SCALING

    @staticmethod
    def none() -> "AttentionBias":
        return AttentionBias(BiasKind.NONE, None)

    @staticmethod
    def gaussian(bias: Matrix) -> "AttentionBias":
        bias = np.asarray(bias, dtype=np.float64)
        if bias.ndim != 2 or bias.shape[0] != bias.shape[1]:
            raise DimensionError(f"gaussian bias must be square, got {bias.shape}")
        if np.any(bias > 0):
            raise ValueError("gaussian bias must be nonpositive everywhere")
        return AttentionBias(BiasKind.GAUSSIAN, bias, BiasPlacement.INSIDE_SCALING)

    @staticmethod
    def mask(bias: Matrix) -> "AttentionBias":
        bias = np.asarray(bias, dtype=np.float64)
        if bias.ndim != 2 or bias.shape[0] != bias.shape[1]:
            raise DimensionError(f"mask bias must be square, got {bias.shape}")
        ok = (bias == 0.0) | (bias == NEG_INF)
        if not ok.all():
            raise ValueError("mask bias entries must be 0 or NEG_INF")
        return AttentionBias(BiasKind.MASK, bias, BiasPlacement.PRE_SCALING)


@dataclass
class MultiHeadParams:
    """Per-head q/k/v projections plus the shared output projection.

    w_q[h], w_k[h], w_v[h] have shape (model_dim, head_dim); w_o has
    shape (model_dim, model_dim) and acts on the head concatenation.
    """

    num_heads: int
    head_dim: int
    w_q: list = field(default_factory=list)
    w_k: list = field(default_factory=list)
    w_v: list = field(default_factory=list)
    w_o: Matrix | None = None

    @property
    def model_dim(self) -> int:
        return self.num_heads * self.head_dim


def attend(
    q: Matrix, k: Matrix, v: Matrix, bias: AttentionBias | None = None
) -> tuple[Matrix, Matrix]:
    """Biased scaled dot-product attention.

    Returns (output, weights).  Weights are kept because the bias
    inspection surface and the mask-zeroing checks need them; the cost
    is negligible at this scale.

    Raises DegenerateRowError when a mask leaves some query row with no
    visible key (checked on the raw biased scores, before scaling).
    """
    q = np.asarray(q, dtype=np.float64)
    k = np.asarray(k, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if q.shape[1] != k.shape[1]:
        raise DimensionError(f"q/k column mismatch: {q.shape} vs {k.shape}")
    if k.shape[0] != v.shape[0]:
        raise DimensionError(f"k/v row mismatch: {k.shape} vs {v.shape}")
    d = q.shape[1]

    scores = matmul(q, k.T)
    if bias is not None and bias.kind is not BiasKind.NONE:
        b = bias.bias
        if b.shape != scores.shape:
            raise DimensionError(f"bias shape {b.shape} does not match scores {scores.shape}")
        scores = scores + b
        if bias.kind is BiasKind.MASK:
            degenerate = np.nonzero(scores.max(axis=1) <= _DEGENERATE_LEVEL)[0]
            if degenerate.size:
                raise DegenerateRowError(
                    f"mask leaves row {int(degenerate[0])} with no visible position"
                )
    weights = softmax_rows(scores / math.sqrt(d))
    return matmul(weights, v), weights


def _resolve_head_biases(
    bias, num_heads: int
) -> Sequence[AttentionBias | None]:
    if bias is None or isinstance(bias, AttentionBias):
        return [bias] * num_heads
    biases = list(bias)
    if len(biases) != num_heads:
        raise DimensionError(f"got {len(biases)} per-head biases for {num_heads} heads")
    return biases


def multi_head_attend(
    x: Matrix,
    params: MultiHeadParams,
    bias: AttentionBias | Sequence[AttentionBias] | None = None,
) -> Matrix:
    """Multi-head self-attention over row-per-token input x.

    ``bias`` may be a single AttentionBias shared by all heads (the
    mask case) or one per head (the Gaussian case, where each head
    predicts its own window from its own projected query; see the
    localness module).
    """
    x = np.asarray(x, dtype=np.float64)
    if x.shape[1] != params.model_dim:
        raise DimensionError(
            f"input dim {x.shape[1]} != num_heads*head_dim {params.model_dim}"
        )
    head_biases = _resolve_head_biases(bias, params.num_heads)
    outputs = []
    for h in range(params.num_heads):
        q = matmul(x, params.w_q[h])
        k = matmul(x, params.w_k[h])
        v = matmul(x, params.w_v[h])
        out, _ = attend(q, k, v, head_biases[h])
        outputs.append(out)
    return matmul(np.concatenate(outputs, axis=1), params.w_o)
