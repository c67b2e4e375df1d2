"""Statistical n-gram language model with MLE counts and bits-per-token scoring.

Only observed n-grams are stored, so memory grows with the corpus
rather than with the |V|^N space of possible sequences.  Probabilities
are exact count ratios (``fractions.Fraction``), which keeps the
per-context distribution summing to 1 with no rounding.

Each sequence is padded on the left with N-1 BOS markers before
counting or scoring, so the first real token of every sample is scored
and windows never cross sample boundaries.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction

from .errors import DataError, ParameterError

BOS_MARKER = "<s>"


@dataclass
class NGramModel:
    order: int
    counts: dict[tuple, dict] = field(default_factory=dict)
    context_totals: dict[tuple, int] = field(default_factory=dict)
    vocabulary: set = field(default_factory=set)


def _padded(sequence, order: int) -> list:
    return [BOS_MARKER] * (order - 1) + list(sequence)


def fit(corpus, order: int) -> NGramModel:
    """Count every length-N window of every (BOS-padded) sequence."""
    if order < 1:
        raise ParameterError(f"n-gram order must be >= 1, got {order}")
    model = NGramModel(order)
    n_sequences = 0
    for sequence in corpus:
        n_sequences += 1
        seq = _padded(sequence, order)
        model.vocabulary.update(sequence)
        for i in range(order - 1, len(seq)):
            context = tuple(seq[i - order + 1:i])
            token = seq[i]
            by_token = model.counts.setdefault(context, {})
            by_token[token] = by_token.get(token, 0) + 1
            model.context_totals[context] = model.context_totals.get(context, 0) + 1
    if n_sequences == 0:
        raise DataError("empty corpus")
    return model


def probability(model: NGramModel, context, token) -> Fraction:
    """MLE count ratio; unseen contexts fall back to uniform over the vocabulary."""
    context = tuple(context)
    if len(context) != model.order - 1:
        raise ParameterError(
            f"context length {len(context)} does not match order {model.order}"
        )
    total = model.context_totals.get(context)
    if total is None:
        if not model.vocabulary:
            return Fraction(0)
        return Fraction(1, len(model.vocabulary))
    return Fraction(model.counts[context].get(token, 0), total)


def cross_entropy(model: NGramModel, corpus, smoothing: float = 2.0 ** -20) -> float:
    """Average bits per token: -(1/n) sum log2 max(P, smoothing)."""
    if smoothing <= 0:
        raise ParameterError(f"smoothing epsilon must be positive, got {smoothing}")
    total_bits = 0.0
    positions = 0
    for sequence in corpus:
        seq = _padded(sequence, model.order)
        for i in range(model.order - 1, len(seq)):
            p = probability(model, seq[i - model.order + 1:i], seq[i])
            total_bits -= math.log2(max(float(p), smoothing))
            positions += 1
    if positions == 0:
        raise DataError("no scoreable positions in corpus")
    return total_bits / positions
