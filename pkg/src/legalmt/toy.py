"""Synthetic copy-task data and the reduced model used for desk-scale runs."""

from __future__ import annotations

from .corpus import ParallelCorpus
from .model import ModelConfig
from .tensor import CounterRNG

LETTERS = "abcdefghijklmnopqrst"


def copy_corpus(n_pairs=64, lexicon_size=120, seed=0, split="train") -> ParallelCorpus:
    """Random sentences of 3-7 pseudo-words whose target equals the source."""
    rng = CounterRNG(seed)
    lexicon = []
    for _ in range(lexicon_size):
        n = 2 + int(rng.uniform((1,))[0] * 5)
        lexicon.append("".join(LETTERS[int(u * len(LETTERS))] for u in rng.uniform((n,))))
    sentences = []
    for _ in range(n_pairs):
        n = 3 + int(rng.uniform((1,))[0] * 5)
        sentences.append(" ".join(lexicon[int(u * lexicon_size)] for u in rng.uniform((n,))))
    return ParallelCorpus.from_texts(sentences, sentences, split=split)


def reduced_config(vocab_size=200, **overrides) -> ModelConfig:
    """2 layers, d_model 64, 8 heads.

    No label smoothing and no dropout: the copy task is pure memorization and
    both would only hold the loss up.
    """
    base = dict(num_layers=2, num_heads=8, d_model=64, d_ff=256, dropout=0.0, max_len=64,
                vocab_size=vocab_size, label_smoothing=0.0)
    base.update(overrides)
    return ModelConfig(**base)
