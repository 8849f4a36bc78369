"""Small trainable encoder-decoder assembling both attention mechanisms.

Each encoder layer runs two branches over shared q/k/v projections: a
localness branch whose scores carry the answer-centered Gaussian bias
(on configured layers), and a syntactic branch whose scores carry the
visibility-mask bias.  The branch outputs are summed before the
residual connection; with both mechanisms disabled the encoder reduces
exactly to a vanilla post-LN transformer encoder.

The decoder is a standard causal trunk with cross-attention to the
encoder output; n independent output heads predict the next n future
tokens, giving the weighted future-prediction loss.  Inference uses
head 0 only, greedily.

All training math runs on the autodiff tape so backprop covers every
parameter, including the window predictors inside the Gaussian bias.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from . import autodiff as ad
from .localness import SIGMA_FLOOR, AnswerSpan, CenterStrategy, answer_center
from .numkit import NEG_INF, Matrix
from .synmask import VisibilityMask

log = logging.getLogger(__name__)

LN_EPS = 1e-5
PROB_FLOOR = 1e-12


class ConfigurationError(ValueError):
    """Inconsistent model configuration or missing per-example inputs."""


class TrainingDivergence(RuntimeError):
    """The loss became non-finite during training."""


@dataclass
class EncoderConfig:
    """Encoder topology plus where each mechanism applies (1-based layers)."""

    num_layers: int = 12
    num_heads: int = 8
    model_dim: int = 512
    ffn_dim: int = 1024
    localness_layers: tuple[int, ...] = (1, 2, 3, 4)
    synmask_layers: tuple[int, ...] | None = None  # None = all layers

    def __post_init__(self):
        if self.model_dim % self.num_heads:
            raise ConfigurationError(
                f"model_dim {self.model_dim} not divisible by {self.num_heads} heads"
            )
        if self.synmask_layers is None:
            self.synmask_layers = tuple(range(1, self.num_layers + 1))
        self.localness_layers = tuple(self.localness_layers)
        self.synmask_layers = tuple(self.synmask_layers)
        for name, layers in (("localness", self.localness_layers), ("synmask", self.synmask_layers)):
            bad = [l for l in layers if not (1 <= l <= self.num_layers)]
            if bad:
                raise ConfigurationError(f"{name}_layers {bad} outside [1, {self.num_layers}]")

    @property
    def head_dim(self) -> int:
        return self.model_dim // self.num_heads


@dataclass
class NGramLossConfig:
    """Future-prediction depth n and per-offset weights alpha_0..alpha_{n-1}."""

    n: int = 1
    alphas: tuple[float, ...] = (1.0,)

    def __post_init__(self):
        self.alphas = tuple(float(a) for a in self.alphas)
        if self.n < 1 or len(self.alphas) != self.n:
            raise ConfigurationError(f"need n>=1 weights, got n={self.n}, alphas={self.alphas}")
        if any(a < 0 for a in self.alphas) or sum(self.alphas) <= 0:
            raise ConfigurationError("alphas must be nonnegative with positive sum")


@dataclass
class ModelConfig:
    vocab_size: int
    max_input_len: int
    max_target_len: int
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    decoder_layers: int = 1
    ngram: NGramLossConfig = field(default_factory=NGramLossConfig)
    center_strategy: CenterStrategy = CenterStrategy.ANSWER_CENTER
    bos_id: int = 1
    eos_id: int = 2


@dataclass
class SequenceBatch:
    """One tokenized example: input ids, answer span, mask, target ids."""

    input_ids: list[int]
    vocab_size: int
    answer_span: AnswerSpan | None = None
    mask: VisibilityMask | None = None
    target_ids: list[int] | None = None

    def __post_init__(self):
        for t in self.input_ids:
            if not (0 <= t < self.vocab_size):
                raise ValueError(f"input id {t} outside vocab of size {self.vocab_size}")
        if self.target_ids is not None:
            for t in self.target_ids:
                if not (0 <= t < self.vocab_size):
                    raise ValueError(f"target id {t} outside vocab of size {self.vocab_size}")
        if self.mask is not None and self.mask.size != len(self.input_ids):
            raise ValueError(
                f"mask size {self.mask.size} != input length {len(self.input_ids)}"
            )
        if self.answer_span is not None and self.answer_span.end >= len(self.input_ids):
            raise ValueError("answer span extends past the input sequence")


def init_params(config: ModelConfig, seed: int = 0) -> dict[str, np.ndarray]:
    """Seeded parameter dictionary; iteration order is fixed for reproducibility."""
    rng = np.random.default_rng(seed)
    enc = config.encoder
    d, dh, f = enc.model_dim, enc.head_dim, enc.ffn_dim
    params: dict[str, np.ndarray] = {}

    def linear(rows: int, cols: int) -> np.ndarray:
        lim = 1.0 / math.sqrt(rows)
        return rng.uniform(-lim, lim, size=(rows, cols))

    params["tok_emb"] = rng.uniform(-0.1, 0.1, size=(config.vocab_size, d))
    params["enc_pos"] = rng.uniform(-0.1, 0.1, size=(config.max_input_len, d))
    params["dec_pos"] = rng.uniform(-0.1, 0.1, size=(config.max_target_len, d))

    def attention_block(prefix: str):
        for h in range(enc.num_heads):
            params[f"{prefix}.h{h}.wq"] = linear(d, dh)
            params[f"{prefix}.h{h}.wk"] = linear(d, dh)
            params[f"{prefix}.h{h}.wv"] = linear(d, dh)
        params[f"{prefix}.wo"] = linear(d, d)

    def ln_block(prefix: str):
        params[f"{prefix}.g"] = np.ones((1, d))
        params[f"{prefix}.b"] = np.zeros((1, d))

    def ffn_block(prefix: str):
        params[f"{prefix}.w1"] = linear(d, f)
        params[f"{prefix}.b1"] = np.zeros((1, f))
        params[f"{prefix}.w2"] = linear(f, d)
        params[f"{prefix}.b2"] = np.zeros((1, d))

    for l in range(enc.num_layers):
        attention_block(f"enc{l}")
        if (l + 1) in enc.localness_layers:
            lim = 1.0 / math.sqrt(dh)
            params[f"enc{l}.loc.wp"] = rng.uniform(-lim, lim, size=(dh, dh))
            params[f"enc{l}.loc.ud"] = np.zeros((dh, 1))
            if config.center_strategy is CenterStrategy.PREDICTED_CENTER:
                params[f"enc{l}.loc.up"] = np.zeros((dh, 1))
        ln_block(f"enc{l}.ln1")
        ffn_block(f"enc{l}.ffn")
        ln_block(f"enc{l}.ln2")

    for l in range(config.decoder_layers):
        attention_block(f"dec{l}.self")
        ln_block(f"dec{l}.ln1")
        attention_block(f"dec{l}.cross")
        ln_block(f"dec{l}.ln2")
        ffn_block(f"dec{l}.ffn")
        ln_block(f"dec{l}.ln3")

    for j in range(config.ngram.n):
        params[f"out{j}.w"] = linear(d, config.vocab_size)
        params[f"out{j}.b"] = np.zeros((1, config.vocab_size))
    return params


def _leaves(params: Mapping[str, np.ndarray]) -> dict[str, ad.Tensor]:
    return {name: ad.const(arr) for name, arr in params.items()}


def _attend_heads(
    x_q: ad.Tensor,
    x_kv: ad.Tensor,
    leaves: Mapping[str, ad.Tensor],
    prefix: str,
    num_heads: int,
    head_dim: int,
    bias_const: ad.Tensor | None = None,
) -> ad.Tensor:
    """Plain multi-head attention on the tape (optional constant bias)."""
    inv_sqrt = 1.0 / math.sqrt(head_dim)
    outs = []
    for h in range(num_heads):
        q = ad.matmul(x_q, leaves[f"{prefix}.h{h}.wq"])
        k = ad.matmul(x_kv, leaves[f"{prefix}.h{h}.wk"])
        v = ad.matmul(x_kv, leaves[f"{prefix}.h{h}.wv"])
        scores = ad.matmul(q, ad.transpose(k))
        if bias_const is not None:
            scores = ad.add(scores, bias_const)
        w = ad.softmax_rows(ad.scale(scores, inv_sqrt))
        outs.append(ad.matmul(w, v))
    return ad.matmul(ad.concat_cols(outs), leaves[f"{prefix}.wo"])


def _ffn(x: ad.Tensor, leaves, prefix: str) -> ad.Tensor:
    hidden = ad.relu(ad.add(ad.matmul(x, leaves[f"{prefix}.w1"]), leaves[f"{prefix}.b1"]))
    return ad.add(ad.matmul(hidden, leaves[f"{prefix}.w2"]), leaves[f"{prefix}.b2"])


def _sublayer(x: ad.Tensor, delta: ad.Tensor, leaves, ln_prefix: str) -> ad.Tensor:
    return ad.layer_norm(
        ad.add(x, delta), leaves[f"{ln_prefix}.g"], leaves[f"{ln_prefix}.b"], eps=LN_EPS
    )


def _encoder_forward(
    leaves: Mapping[str, ad.Tensor], batch: SequenceBatch, config: ModelConfig
) -> tuple[ad.Tensor, list[dict]]:
    """Both-branch encoder on the tape.

    Returns the final representation and a per-layer record of the
    post-softmax weights, Gaussian biases, and windows for inspection.
    """
    enc = config.encoder
    seq_len = len(batch.input_ids)
    if seq_len > config.max_input_len:
        raise ConfigurationError(f"input length {seq_len} > max_input_len {config.max_input_len}")
    inv_sqrt = 1.0 / math.sqrt(enc.head_dim)

    mask_const: ad.Tensor | None = None
    if enc.synmask_layers:
        if batch.mask is None:
            raise ConfigurationError("synmask layers configured but the example has no mask")
        mask_const = ad.const(np.where(batch.mask.visible, 0.0, NEG_INF))

    predicted = config.center_strategy is CenterStrategy.PREDICTED_CENTER
    center = None
    if not predicted:
        if batch.answer_span is None:
            if enc.localness_layers:
                raise ConfigurationError("localness layers configured but the example has no span")
        else:
            center = answer_center(batch.answer_span)
    j_row = np.arange(seq_len, dtype=np.float64).reshape(1, -1)

    x = ad.add(
        ad.embed(leaves["tok_emb"], batch.input_ids),
        ad.embed(leaves["enc_pos"], list(range(seq_len))),
    )
    records: list[dict] = []
    for l in range(enc.num_layers):
        use_loc = (l + 1) in enc.localness_layers
        use_mask = (l + 1) in enc.synmask_layers
        rec = {"layer": l + 1, "localness": use_loc, "synmask": use_mask, "heads": []}
        local_heads, mask_heads = [], []
        for h in range(enc.num_heads):
            q = ad.matmul(x, leaves[f"enc{l}.h{h}.wq"])
            k = ad.matmul(x, leaves[f"enc{l}.h{h}.wk"])
            v = ad.matmul(x, leaves[f"enc{l}.h{h}.wv"])
            scores = ad.matmul(q, ad.transpose(k))
            head_rec: dict = {}
            local_scores = scores
            if use_loc:
                hidden = ad.tanh(ad.matmul(q, ad.transpose(leaves[f"enc{l}.loc.wp"])))
                z = ad.matmul(hidden, leaves[f"enc{l}.loc.ud"])
                d_i = ad.scale(ad.sigmoid(z), float(seq_len))
                sigma = ad.maximum_const(ad.scale(d_i, 0.5), SIGMA_FLOOR)
                if predicted:
                    centers = ad.scale(
                        ad.sigmoid(ad.matmul(hidden, leaves[f"enc{l}.loc.up"])), float(seq_len)
                    )
                    diff = ad.add(ad.const(j_row), ad.neg(centers))
                    gauss = ad.mul(ad.power(diff, 2.0), ad.scale(ad.power(sigma, -2.0), -0.5))
                else:
                    numer = ad.const(-0.5 * (j_row - center) ** 2)
                    gauss = ad.mul(numer, ad.power(sigma, -2.0))
                local_scores = ad.add(scores, gauss)
                head_rec["gaussian"] = gauss.value
                head_rec["window"] = d_i.value[:, 0]
                head_rec["sigma"] = sigma.value[:, 0]
            w_local = ad.softmax_rows(ad.scale(local_scores, inv_sqrt))
            local_heads.append(ad.matmul(w_local, v))
            head_rec["weights_local"] = w_local.value
            if use_mask:
                w_mask = ad.softmax_rows(ad.scale(ad.add(scores, mask_const), inv_sqrt))
                mask_heads.append(ad.matmul(w_mask, v))
                head_rec["weights_mask"] = w_mask.value
            rec["heads"].append(head_rec)
        branch = ad.matmul(ad.concat_cols(local_heads), leaves[f"enc{l}.wo"])
        if use_mask:
            knowledge = ad.matmul(ad.concat_cols(mask_heads), leaves[f"enc{l}.wo"])
            branch = ad.add(branch, knowledge)
        x = _sublayer(x, branch, leaves, f"enc{l}.ln1")
        x = _sublayer(x, _ffn(x, leaves, f"enc{l}.ffn"), leaves, f"enc{l}.ln2")
        records.append(rec)
    return x, records


def _decoder_forward(
    leaves: Mapping[str, ad.Tensor],
    enc_out: ad.Tensor,
    dec_input_ids: Sequence[int],
    config: ModelConfig,
) -> ad.Tensor:
    steps = len(dec_input_ids)
    if steps > config.max_target_len:
        raise ConfigurationError(f"target length {steps} > max_target_len {config.max_target_len}")
    enc = config.encoder
    causal = ad.const(np.triu(np.full((steps, steps), NEG_INF), k=1))
    x = ad.add(
        ad.embed(leaves["tok_emb"], list(dec_input_ids)),
        ad.embed(leaves["dec_pos"], list(range(steps))),
    )
    for l in range(config.decoder_layers):
        self_out = _attend_heads(
            x, x, leaves, f"dec{l}.self", enc.num_heads, enc.head_dim, causal
        )
        x = _sublayer(x, self_out, leaves, f"dec{l}.ln1")
        cross = _attend_heads(
            x, enc_out, leaves, f"dec{l}.cross", enc.num_heads, enc.head_dim
        )
        x = _sublayer(x, cross, leaves, f"dec{l}.ln2")
        x = _sublayer(x, _ffn(x, leaves, f"dec{l}.ffn"), leaves, f"dec{l}.ln3")
    return x


def _head_logits(leaves, trunk: ad.Tensor, j: int) -> ad.Tensor:
    return ad.add(ad.matmul(trunk, leaves[f"out{j}.w"]), leaves[f"out{j}.b"])


def _example_forward(
    leaves: Mapping[str, ad.Tensor], batch: SequenceBatch, config: ModelConfig
) -> tuple[ad.Tensor, np.ndarray, list[dict]]:
    """Teacher-forced loss tensor plus head-0 logits and encoder records."""
    targets = batch.target_ids
    if targets is None:
        raise ConfigurationError("training forward requires target_ids")
    horizon = len(targets)
    if horizon < config.ngram.n:
        raise ConfigurationError(
            f"target length {horizon} shorter than prediction depth n={config.ngram.n}"
        )
    enc_out, records = _encoder_forward(leaves, batch, config)
    dec_input = [config.bos_id] + list(targets[:-1])
    trunk = _decoder_forward(leaves, enc_out, dec_input, config)
    total: ad.Tensor | None = None
    head0_logits: np.ndarray | None = None
    for j, alpha in enumerate(config.ngram.alphas):
        logits = _head_logits(leaves, trunk, j)
        if j == 0:
            head0_logits = logits.value
        if alpha == 0.0:
            continue
        log_probs = ad.log_softmax_rows(logits)
        picked = ad.pick_rows(ad.slice_rows(log_probs, 0, horizon - j), list(targets[j:]))
        term = ad.scale(ad.sum_all(picked), -alpha)
        total = term if total is None else ad.add(total, term)
    return total, head0_logits, records


def encode(
    batch: SequenceBatch, config: ModelConfig, params: Mapping[str, np.ndarray]
) -> Matrix:
    """Final encoder representation (I x model_dim) for one example."""
    out, _ = _encoder_forward(_leaves(params), batch, config)
    return out.value


def encode_with_details(
    batch: SequenceBatch, config: ModelConfig, params: Mapping[str, np.ndarray]
) -> tuple[Matrix, list[dict]]:
    """Encoder output plus per-layer/head weights, Gaussian biases and windows."""
    out, records = _encoder_forward(_leaves(params), batch, config)
    return out.value, records


_clamp_warnings = 0


def clamp_warning_count() -> int:
    return _clamp_warnings


def reset_clamp_warnings() -> None:
    global _clamp_warnings
    _clamp_warnings = 0


def ngram_loss(
    distributions: Sequence[Matrix], targets: Sequence[int], config: NGramLossConfig
) -> float:
    """Weighted future-prediction loss from per-head probability matrices.

    ``distributions[j]`` holds, in row t, the probability over the
    vocabulary of the token t + j steps ahead (teacher forcing); only
    its first T - j rows enter the sum.  Zero probabilities at a target
    are clamped to PROB_FLOOR and counted.
    """
    global _clamp_warnings
    if len(distributions) != config.n:
        raise ValueError(f"expected {config.n} heads, got {len(distributions)}")
    horizon = len(targets)
    if horizon < config.n:
        raise ValueError(f"target length {horizon} < n={config.n}")
    total = 0.0
    clamped = 0
    for j, alpha in enumerate(config.alphas):
        dist = np.asarray(distributions[j], dtype=np.float64)
        for t in range(horizon - j):
            p = dist[t, targets[t + j]]
            if p < PROB_FLOOR:
                p = PROB_FLOOR
                clamped += 1
            total -= alpha * math.log(p)
    if clamped:
        _clamp_warnings += clamped
        log.warning("ngram_loss clamped %d zero probabilities", clamped)
    return total


def generate(
    batch: SequenceBatch,
    params: Mapping[str, np.ndarray],
    config: ModelConfig,
    max_len: int,
) -> list[int]:
    """Greedy decoding with the next-token head only; stops at eos or max_len.

    Deterministic: argmax ties resolve to the lowest token id.
    """
    leaves = _leaves(params)
    enc_out, _ = _encoder_forward(leaves, batch, config)
    produced: list[int] = []
    while len(produced) < max_len:
        dec_input = [config.bos_id] + produced
        trunk = _decoder_forward(leaves, enc_out, dec_input, config)
        logits = _head_logits(leaves, trunk, 0).value[-1]
        token = int(np.argmax(logits))
        if token == config.eos_id:
            break
        produced.append(token)
    return produced


def backprop_grads(
    batch: SequenceBatch | Sequence[SequenceBatch],
    params: Mapping[str, np.ndarray],
    config: ModelConfig,
) -> tuple[dict[str, np.ndarray], float]:
    """Mean loss over the batch and its gradient for every parameter."""
    examples = [batch] if isinstance(batch, SequenceBatch) else list(batch)
    if not examples:
        raise ValueError("empty batch")
    leaves = _leaves(params)
    total: ad.Tensor | None = None
    for ex in examples:
        loss_t, _, _ = _example_forward(leaves, ex, config)
        total = loss_t if total is None else ad.add(total, loss_t)
    total = ad.scale(total, 1.0 / len(examples))
    loss = float(total.value)
    total.backward()
    grads = {
        name: (leaf.grad if leaf.grad is not None else np.zeros_like(leaf.value))
        for name, leaf in leaves.items()
    }
    return grads, loss


def train_step(
    batch: SequenceBatch | Sequence[SequenceBatch],
    params: Mapping[str, np.ndarray],
    config: ModelConfig,
    learning_rate: float,
) -> tuple[dict[str, np.ndarray], float]:
    """One plain gradient-descent step on the mean batch loss.

    Gradient accumulation follows the batch order, so repeated runs are
    bit-identical.  Raises TrainingDivergence on a non-finite loss.
    """
    grads, loss = backprop_grads(batch, params, config)
    if not math.isfinite(loss):
        raise TrainingDivergence(f"non-finite loss {loss}")
    return (
        {name: params[name] - learning_rate * grads[name] for name in params},
        loss,
    )


def window_mass(weights: Matrix, center: float, windows: np.ndarray) -> float:
    """Mean post-softmax mass inside [center - D_i, center + D_i] per row."""
    weights = np.asarray(weights, dtype=np.float64)
    windows = np.asarray(windows, dtype=np.float64).reshape(-1)
    cols = np.arange(weights.shape[1], dtype=np.float64)
    inside = np.abs(cols.reshape(1, -1) - center) <= windows.reshape(-1, 1)
    return float((weights * inside).sum(axis=1).mean())


# --- checkpoint io ---------------------------------------------------------

CHECKPOINT_VERSION = 1


def config_to_dict(config: ModelConfig) -> dict:
    return {
        "vocab_size": config.vocab_size,
        "max_input_len": config.max_input_len,
        "max_target_len": config.max_target_len,
        "decoder_layers": config.decoder_layers,
        "bos_id": config.bos_id,
        "eos_id": config.eos_id,
        "center_strategy": config.center_strategy.value,
        "encoder": {
            "num_layers": config.encoder.num_layers,
            "num_heads": config.encoder.num_heads,
            "model_dim": config.encoder.model_dim,
            "ffn_dim": config.encoder.ffn_dim,
            "localness_layers": list(config.encoder.localness_layers),
            "synmask_layers": list(config.encoder.synmask_layers),
        },
        "ngram": {"n": config.ngram.n, "alphas": list(config.ngram.alphas)},
    }


def config_from_dict(doc: dict) -> ModelConfig:
    enc = doc["encoder"]
    return ModelConfig(
        vocab_size=doc["vocab_size"],
        max_input_len=doc["max_input_len"],
        max_target_len=doc["max_target_len"],
        encoder=EncoderConfig(
            num_layers=enc["num_layers"],
            num_heads=enc["num_heads"],
            model_dim=enc["model_dim"],
            ffn_dim=enc["ffn_dim"],
            localness_layers=tuple(enc["localness_layers"]),
            synmask_layers=tuple(enc["synmask_layers"]),
        ),
        decoder_layers=doc["decoder_layers"],
        ngram=NGramLossConfig(doc["ngram"]["n"], tuple(doc["ngram"]["alphas"])),
        center_strategy=CenterStrategy(doc["center_strategy"]),
        bos_id=doc["bos_id"],
        eos_id=doc["eos_id"],
    )


def save_checkpoint(
    path,
    params: Mapping[str, np.ndarray],
    config: ModelConfig,
    vocab: Mapping[str, int] | None = None,
) -> None:
    doc = {
        "version": CHECKPOINT_VERSION,
        "config": config_to_dict(config),
        "vocab": dict(vocab) if vocab is not None else None,
        "params": {
            name: {"shape": list(arr.shape), "data": arr.ravel().tolist()}
            for name, arr in params.items()
        },
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh)
        fh.write("\n")


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], ModelConfig, dict[str, int] | None]:
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {doc.get('version')!r}")
    params = {
        name: np.asarray(entry["data"], dtype=np.float64).reshape(entry["shape"])
        for name, entry in doc["params"].items()
    }
    return params, config_from_dict(doc["config"]), doc.get("vocab")
