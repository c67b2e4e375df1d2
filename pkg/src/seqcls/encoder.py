"""Transformer encoder over token ids.

Builds contextual embeddings from token embeddings plus a sinusoidal
positional table, refined by stacked layers of multi-head self-attention
and a position-wise feed-forward network, each wrapped in residual add
and layer normalization (post-norm by default, pre-norm behind a flag).
Padding positions are excluded from attention via an additive mask, and
a causal variant restricts each position to its prefix.

Also provides span masking and a denoising loss (vocabulary projection
tied to the input embedding matrix) for toy pretraining, plus a small
binary format for importing precomputed per-token embeddings produced
by any external encoder.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from . import tensor as tt
from .bpe import MASK_ID, TokenSequence
from .errors import DataError, DimensionError, ParameterError
from .rng import RandomSource
from .tensor import Tensor

NEG_INF = float("-inf")
_EMBEDDING_MAGIC = b"SQF1"


@dataclass
class EncoderConfig:
    d_model: int = 64
    n_heads: int = 4
    n_layers: int = 2
    vocab_size: int = 512
    max_len: int = 64
    dropout: float = 0.1
    causal: bool = False
    pre_norm: bool = False

    def __post_init__(self):
        if min(self.d_model, self.n_heads, self.vocab_size, self.max_len) < 1:
            raise ParameterError("encoder sizes must be >= 1")
        if self.n_layers < 0:
            raise ParameterError(f"layer count must be >= 0, got {self.n_layers}")
        if self.d_model % self.n_heads != 0:
            raise ParameterError(
                f"d_model {self.d_model} not divisible by {self.n_heads} heads"
            )
        if not 0.0 <= self.dropout < 1.0:
            raise ParameterError(f"dropout must be in [0, 1), got {self.dropout}")

    @property
    def head_dim(self) -> int:
        return self.d_model // self.n_heads

    @property
    def ffn_inner(self) -> int:
        return 4 * self.d_model


@dataclass
class AttentionParams:
    """Per-head Q/K/V projections (d_model x head_dim each) plus W_O."""

    wq: list[Tensor]
    wk: list[Tensor]
    wv: list[Tensor]
    wo: Tensor

    def named_parameters(self, prefix: str = ""):
        for i, (q, k, v) in enumerate(zip(self.wq, self.wk, self.wv)):
            yield f"{prefix}h{i}.wq", q
            yield f"{prefix}h{i}.wk", k
            yield f"{prefix}h{i}.wv", v
        yield f"{prefix}wo", self.wo


@dataclass
class FeedForwardParams:
    w1: Tensor
    b1: Tensor
    w2: Tensor
    b2: Tensor

    def named_parameters(self, prefix: str = ""):
        yield f"{prefix}w1", self.w1
        yield f"{prefix}b1", self.b1
        yield f"{prefix}w2", self.w2
        yield f"{prefix}b2", self.b2


@dataclass
class EncoderLayerParams:
    attn: AttentionParams
    ffn: FeedForwardParams
    ln1_gain: Tensor
    ln1_bias: Tensor
    ln2_gain: Tensor
    ln2_bias: Tensor

    def named_parameters(self, prefix: str = ""):
        yield from self.attn.named_parameters(prefix + "attn.")
        yield from self.ffn.named_parameters(prefix + "ffn.")
        yield f"{prefix}ln1.gain", self.ln1_gain
        yield f"{prefix}ln1.bias", self.ln1_bias
        yield f"{prefix}ln2.gain", self.ln2_gain
        yield f"{prefix}ln2.bias", self.ln2_bias


@dataclass
class EncoderParams:
    config: EncoderConfig
    embedding: Tensor
    positional: np.ndarray
    layers: list[EncoderLayerParams] = field(default_factory=list)

    def named_parameters(self, prefix: str = "encoder."):
        yield f"{prefix}embedding", self.embedding
        for i, layer in enumerate(self.layers):
            yield from layer.named_parameters(f"{prefix}layer{i}.")


@dataclass
class EmbeddingSequence:
    """Contextual vectors for one sequence, padded to a fixed row count."""

    vectors: Tensor
    source: str
    valid_len: int


def positional_table(max_len: int, d_model: int) -> np.ndarray:
    """Sinusoidal table: P[pos, 2i] = sin(pos/10000^(2i/d)), odd dims cos."""
    positions = np.arange(max_len, dtype=np.float64)[:, None]
    even = np.arange(0, d_model, 2, dtype=np.float64)
    angles = positions / np.power(10000.0, even / d_model)
    table = np.zeros((max_len, d_model), dtype=np.float64)
    table[:, 0::2] = np.sin(angles)
    table[:, 1::2] = np.cos(angles[:, : d_model // 2])
    return table


def positional_encoding(config: EncoderConfig, pos: int) -> np.ndarray:
    if not 0 <= pos < config.max_len:
        raise ParameterError(
            f"position {pos} outside table of size {config.max_len}"
        )
    return positional_table(config.max_len, config.d_model)[pos]


def additive_mask(n: int, valid_len: int | None = None,
                  causal: bool = False) -> np.ndarray:
    """0 where attention is allowed, -inf where it is blocked.

    Rows left with no allowed position are redirected to position 0 so
    the downstream softmax stays well defined.
    """
    mask = np.zeros((n, n), dtype=np.float64)
    if causal:
        rows, cols = np.indices((n, n))
        mask[cols > rows] = NEG_INF
    if valid_len is not None:
        if not 0 <= valid_len <= n:
            raise ParameterError(f"valid length {valid_len} outside [0, {n}]")
        mask[:, valid_len:] = NEG_INF
    dead = np.all(mask == NEG_INF, axis=1)
    mask[dead, 0] = 0.0
    return mask


def attention(q: Tensor, k: Tensor, v: Tensor,
              mask: np.ndarray | None = None) -> Tensor:
    """Scaled dot-product attention: softmax(QK^T/sqrt(d_k) + M)V."""
    if q.shape[1] != k.shape[1]:
        raise DimensionError(f"query width {q.shape} vs key width {k.shape}")
    if k.shape[0] != v.shape[0]:
        raise DimensionError(f"key rows {k.shape} vs value rows {v.shape}")
    d_k = q.shape[1]
    scores = tt.scale(tt.matmul(q, tt.transpose(k)), 1.0 / np.sqrt(d_k))
    if mask is not None:
        if mask.shape != scores.shape:
            raise DimensionError(f"mask {mask.shape} vs scores {scores.shape}")
        scores = tt.add(scores, Tensor(mask))
    weights = tt.softmax(scores, axis=-1)
    return tt.matmul(weights, v)


def multi_head_attention(params: AttentionParams, x: Tensor,
                         mask: np.ndarray | None = None) -> Tensor:
    if x.shape[1] != params.wq[0].shape[0]:
        raise DimensionError(
            f"input width {x.shape} vs projection {params.wq[0].shape}"
        )
    heads = []
    for wq, wk, wv in zip(params.wq, params.wk, params.wv):
        q = tt.matmul(x, wq)
        k = tt.matmul(x, wk)
        v = tt.matmul(x, wv)
        heads.append(attention(q, k, v, mask))
    stacked = heads[0] if len(heads) == 1 else tt.concat_all(heads, axis=1)
    return tt.matmul(stacked, params.wo)


def feed_forward(params: FeedForwardParams, x: Tensor) -> Tensor:
    inner = tt.relu(tt.add(tt.matmul(x, params.w1), params.b1))
    return tt.add(tt.matmul(inner, params.w2), params.b2)


def _layer_forward(layer: EncoderLayerParams, x: Tensor, mask: np.ndarray,
                   p: float, rng: RandomSource | None, training: bool,
                   pre_norm: bool) -> Tensor:
    if pre_norm:
        a = multi_head_attention(
            layer.attn, tt.layer_norm(x, layer.ln1_gain, layer.ln1_bias), mask)
        x = tt.add(x, tt.dropout(a, p, rng, training))
        f = feed_forward(
            layer.ffn, tt.layer_norm(x, layer.ln2_gain, layer.ln2_bias))
        return tt.add(x, tt.dropout(f, p, rng, training))
    a = tt.dropout(multi_head_attention(layer.attn, x, mask), p, rng, training)
    x = tt.layer_norm(tt.add(x, a), layer.ln1_gain, layer.ln1_bias)
    f = tt.dropout(feed_forward(layer.ffn, x), p, rng, training)
    return tt.layer_norm(tt.add(x, f), layer.ln2_gain, layer.ln2_bias)


def encoder_forward(model: EncoderParams, tokens: TokenSequence,
                    rng: RandomSource | None = None,
                    training: bool = False) -> EmbeddingSequence:
    """Embed, add positions, then run the layer stack with PADs masked out."""
    config = model.config
    ids = list(tokens.input_ids)
    for tid in ids:
        if not 0 <= tid < config.vocab_size:
            raise DataError(f"token id {tid} outside vocabulary of {config.vocab_size}")
    n = len(ids)
    if n > config.max_len:
        raise DimensionError(f"sequence length {n} exceeds max {config.max_len}")
    if training and config.dropout > 0.0 and rng is None:
        raise ParameterError("training-mode dropout requires a random source")
    x = tt.add(tt.gather_rows(model.embedding, ids), Tensor(model.positional[:n]))
    mask = additive_mask(n, valid_len=tokens.length, causal=config.causal)
    for layer in model.layers:
        x = _layer_forward(layer, x, mask, config.dropout, rng, training,
                           config.pre_norm)
    return EmbeddingSequence(vectors=x, source="internal", valid_len=tokens.length)


def init_encoder(config: EncoderConfig, rng: RandomSource) -> EncoderParams:
    """Uniform [-0.1, 0.1] embeddings; +-sqrt(6/(fan_in+fan_out)) weights."""

    def weight(fan_in: int, fan_out: int) -> Tensor:
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        return Tensor(rng.uniform(-limit, limit, (fan_in, fan_out)),
                      requires_grad=True)

    embedding = Tensor(rng.uniform(-0.1, 0.1, (config.vocab_size, config.d_model)),
                       requires_grad=True)
    layers = []
    for _ in range(config.n_layers):
        attn = AttentionParams(
            wq=[weight(config.d_model, config.head_dim) for _ in range(config.n_heads)],
            wk=[weight(config.d_model, config.head_dim) for _ in range(config.n_heads)],
            wv=[weight(config.d_model, config.head_dim) for _ in range(config.n_heads)],
            wo=weight(config.d_model, config.d_model),
        )
        ffn = FeedForwardParams(
            w1=weight(config.d_model, config.ffn_inner),
            b1=Tensor(np.zeros(config.ffn_inner), requires_grad=True),
            w2=weight(config.ffn_inner, config.d_model),
            b2=Tensor(np.zeros(config.d_model), requires_grad=True),
        )
        layers.append(EncoderLayerParams(
            attn=attn,
            ffn=ffn,
            ln1_gain=Tensor(np.ones(config.d_model), requires_grad=True),
            ln1_bias=Tensor(np.zeros(config.d_model), requires_grad=True),
            ln2_gain=Tensor(np.ones(config.d_model), requires_grad=True),
            ln2_bias=Tensor(np.zeros(config.d_model), requires_grad=True),
        ))
    return EncoderParams(
        config=config,
        embedding=embedding,
        positional=positional_table(config.max_len, config.d_model),
        layers=layers,
    )


def span_mask(tokens: TokenSequence, rng: RandomSource, mask_rate: float,
              mean_span: float = 3.0):
    """Corrupt ~mask_rate of the real tokens with non-overlapping MASK spans.

    Span lengths are geometric with the given mean; the total number of
    masked positions is exactly round(mask_rate * valid_len).  Returns
    the corrupted sequence and (position, original id) targets.
    """
    if not 0.0 <= mask_rate < 1.0:
        raise ParameterError(f"mask rate must be in [0, 1), got {mask_rate}")
    if mean_span < 1.0:
        raise ParameterError(f"mean span must be >= 1, got {mean_span}")
    valid = tokens.length
    budget = int(round(mask_rate * valid))
    ids = list(tokens.input_ids)
    if budget == 0:
        return TokenSequence(ids, list(tokens.attention_mask),
                             list(tokens.token_type_ids), valid), []
    chosen: set[int] = set()
    attempts = 0
    while len(chosen) < budget and attempts < 20 * valid:
        attempts += 1
        length = min(rng.geometric(1.0 / mean_span), budget - len(chosen))
        start = int(rng.integers(0, valid))
        span = range(start, min(start + length, valid))
        if any(pos in chosen for pos in span):
            continue
        chosen.update(span)
    for pos in range(valid):
        if len(chosen) >= budget:
            break
        chosen.add(pos)
    targets = [(pos, ids[pos]) for pos in sorted(chosen)]
    for pos, _ in targets:
        ids[pos] = MASK_ID
    return TokenSequence(ids, list(tokens.attention_mask),
                         list(tokens.token_type_ids), valid), targets


def denoising_loss(model: EncoderParams, corrupted: TokenSequence, targets,
                   rng: RandomSource | None = None,
                   training: bool = False) -> Tensor:
    """Mean NLL of the original ids at masked positions, logits tied to the embedding."""
    targets = list(targets)
    if not targets:
        raise ParameterError("denoising loss needs at least one masked position")
    states = encoder_forward(model, corrupted, rng, training)
    total = None
    for pos, original_id in targets:
        logits = tt.matvec(model.embedding, tt.row(states.vectors, pos))
        probs = tt.softmax(logits, axis=-1)
        nll = tt.neg(tt.log(tt.clip_min(tt.pick(probs, original_id), 1e-12)))
        total = nll if total is None else tt.add(total, nll)
    return tt.scale(total, 1.0 / len(targets))


def save_embeddings(path, samples) -> None:
    """Write (matrix, label) pairs: magic 'SQF1', u32 count, then per sample
    u32 n, u32 d, n*d little-endian f32 row-major, u32 label."""
    samples = list(samples)
    with open(path, "wb") as fh:
        fh.write(_EMBEDDING_MAGIC)
        fh.write(struct.pack("<I", len(samples)))
        for matrix, label in samples:
            arr = np.ascontiguousarray(matrix, dtype="<f4")
            if arr.ndim != 2:
                raise DimensionError(f"embedding matrix must be 2-D, got {arr.shape}")
            fh.write(struct.pack("<II", arr.shape[0], arr.shape[1]))
            fh.write(arr.tobytes())
            fh.write(struct.pack("<I", int(label)))


def load_embeddings(path) -> list[tuple[np.ndarray, int]]:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != _EMBEDDING_MAGIC:
        raise DataError(f"bad embedding file magic {blob[:4]!r}")
    offset = 4

    def take(fmt: str):
        nonlocal offset
        size = struct.calcsize(fmt)
        if offset + size > len(blob):
            raise DataError("truncated embedding file")
        values = struct.unpack_from(fmt, blob, offset)
        offset += size
        return values

    (count,) = take("<I")
    samples = []
    for _ in range(count):
        n, d = take("<II")
        end = offset + 4 * n * d
        if end > len(blob):
            raise DataError("truncated embedding file")
        matrix = np.frombuffer(blob[offset:end], dtype="<f4").reshape(n, d)
        offset = end
        (label,) = take("<I")
        samples.append((matrix.astype(np.float64), int(label)))
    if offset != len(blob):
        raise DataError("trailing bytes after last embedding sample")
    return samples
