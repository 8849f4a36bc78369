"""Structure-aware attention toolkit.

Two additive attention-bias mechanisms for answer-aware question
generation — an answer-centered Gaussian localness bias and a
dependency-triple visibility mask — inside a small trainable
encoder-decoder, with the preprocessing pipeline and a
finite-difference verification harness.
"""

from .attention import AttentionBias, BiasKind, BiasPlacement, MultiHeadParams, attend, multi_head_attend
from .keysent import RougeLScore, SentenceSplit, locate_key_sentence, rouge_l, split_sentences
from .localness import (
    AnswerSpan,
    CenterStrategy,
    LocalnessParams,
    answer_center,
    gaussian_bias,
    predicted_center,
    window_size,
)
from .model import (
    EncoderConfig,
    ModelConfig,
    NGramLossConfig,
    SequenceBatch,
    encode,
    generate,
    ngram_loss,
    train_step,
)
from .numkit import NEG_INF, Matrix, finite_diff_grad, matmul, softmax_rows
from .synmask import (
    DependencyTriple,
    RelationStrategy,
    VisibilityMask,
    build_mask,
    filter_triples,
    mask_to_bias,
)

__version__ = "0.1.0"
