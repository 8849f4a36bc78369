"""Answer-centered Gaussian bias: center, learned window size, bias matrix.

The bias matrix G rewards attention near the answer: entry (i, j) is
-(j - P_c)^2 / (2 sigma_i^2), where P_c is the midpoint of the answer
span and sigma_i is half of the per-token window size D_i.  D_i is
predicted from the (head-projected) query vector through a tiny
feed-forward map, so the window is learned end to end.

The predicted-center variant replaces the fixed answer midpoint with a
per-token learned center, mapped into [0, I] the same way D_i is.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from . import numkit
from .attention import AttentionBias, MultiHeadParams
from .numkit import Matrix, Vector

SIGMA_FLOOR = 1e-6


class CenterStrategy(str, Enum):
    ANSWER_CENTER = "answer"
    PREDICTED_CENTER = "predicted"


@dataclass(frozen=True)
class AnswerSpan:
    """Inclusive token span [start, end] of the answer in the full input sequence.

    Indices address the concatenated "answer [SEP] passage" sequence,
    i.e. they already include the answer-prefix offset.
    """

    start: int
    end: int

    def __post_init__(self):
        if not (0 <= self.start <= self.end):
            raise ValueError(f"invalid answer span [{self.start}, {self.end}]")


@dataclass
class LocalnessParams:
    """Learnable window/center predictors for one encoder layer.

    w_p: (head_dim, head_dim); u_d and u_p: (head_dim, 1).  u_p is used
    only under the predicted-center strategy.  Shared across heads
    within a layer; each head still derives its own window from its own
    projected query.
    """

    w_p: Matrix
    u_d: Matrix
    u_p: Matrix | None = None
    center_strategy: CenterStrategy = CenterStrategy.ANSWER_CENTER


def init_localness_params(
    head_dim: int,
    rng: np.random.Generator,
    center_strategy: CenterStrategy = CenterStrategy.ANSWER_CENTER,
) -> LocalnessParams:
    """Uniform(+-1/sqrt(d_h)) for w_p, zeros for u_d/u_p.

    Zero u_d makes every window start at the neutral D_i = I/2.
    """
    lim = 1.0 / np.sqrt(head_dim)
    w_p = rng.uniform(-lim, lim, size=(head_dim, head_dim))
    u_d = np.zeros((head_dim, 1))
    u_p = np.zeros((head_dim, 1)) if center_strategy is CenterStrategy.PREDICTED_CENTER else None
    return LocalnessParams(w_p, u_d, u_p, center_strategy)


def answer_center(span: AnswerSpan) -> float:
    """Midpoint (s + e) / 2 of the answer span, possibly half-integer."""
    return (span.start + span.end) / 2.0


def window_size(q_i: Vector, params: LocalnessParams, seq_len: int) -> float:
    """Window size D_i = I * sigmoid(u_d^T tanh(w_p q_i)), in (0, I)."""
    if seq_len < 1:
        raise ValueError("sequence length must be >= 1")
    q = np.asarray(q_i, dtype=np.float64).reshape(-1, 1)
    z = (params.u_d.T @ np.tanh(params.w_p @ q)).item()
    return seq_len * numkit.sigmoid(z).item()


def predicted_center(q_i: Vector, params: LocalnessParams, seq_len: int) -> float:
    """Per-token center I * sigmoid(u_p^T tanh(w_p q_i)).

    The raw u_p^T tanh(w_p q_i) score is unbounded; the sigmoid range
    mapping keeps the center inside the sequence, mirroring how the
    window size is bounded.
    """
    if params.center_strategy is not CenterStrategy.PREDICTED_CENTER:
        raise ValueError("predicted_center requires center_strategy=predicted")
    q = np.asarray(q_i, dtype=np.float64).reshape(-1, 1)
    p = (params.u_p.T @ np.tanh(params.w_p @ q)).item()
    return seq_len * numkit.sigmoid(p).item()


def gaussian_bias(center, sigmas: Vector, seq_len: int) -> Matrix:
    """Bias matrix G with G[i, j] = -(j - center_i)^2 / (2 sigma_i^2).

    ``center`` may be a scalar (answer-center strategy) or a length-I
    vector of per-row centers (predicted-center strategy).  Sigmas are
    floored at SIGMA_FLOOR before use.
    """
    sig = np.asarray(sigmas, dtype=np.float64).reshape(-1, 1)
    if sig.shape[0] != seq_len:
        raise numkit.DimensionError(f"need {seq_len} sigmas, got {sig.shape[0]}")
    if np.any(sig <= 0):
        raise ValueError("sigma must be positive")
    sig = np.maximum(sig, SIGMA_FLOOR)
    centers = np.asarray(center, dtype=np.float64).reshape(-1, 1)
    j = np.arange(seq_len, dtype=np.float64).reshape(1, -1)
    return -((j - centers) ** 2) / (2.0 * sig * sig)


def head_gaussian_biases(
    x: Matrix,
    mh: MultiHeadParams,
    params: LocalnessParams,
    span: AnswerSpan | None,
) -> list[AttentionBias]:
    """Per-head Gaussian biases for one layer, from each head's own queries.

    For the answer-center strategy the center is the span midpoint; for
    the predicted-center variant each row gets its own center derived
    from the same projected query that drives the window size.
    """
    x = np.asarray(x, dtype=np.float64)
    seq_len = x.shape[0]
    biases = []
    for h in range(mh.num_heads):
        q = numkit.matmul(x, mh.w_q[h])
        hidden = np.tanh(q @ params.w_p.T)
        z = hidden @ params.u_d
        d_i = seq_len * numkit.sigmoid(z)
        sigma = np.maximum(d_i / 2.0, SIGMA_FLOOR)
        if params.center_strategy is CenterStrategy.PREDICTED_CENTER:
            centers = seq_len * numkit.sigmoid(hidden @ params.u_p)
        else:
            if span is None:
                raise ValueError("answer-center strategy needs an answer span")
            centers = answer_center(span)
        biases.append(AttentionBias.gaussian(gaussian_bias(centers, sigma, seq_len)))
    return biases
