"""Corpus and sentence BLEU over :func:`mt_tokenize` tokens (case-sensitive)."""

from __future__ import annotations

import math
import warnings
from collections import Counter

from .tokenize import mt_tokenize


def ngrams(tokens, n):
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def bleu_stats(hyp: str, ref: str, max_n=4):
    """``(matches[n], totals[n], hyp_len, ref_len)`` with clipped n-gram matches."""
    h, r = mt_tokenize(hyp), mt_tokenize(ref)
    matches, totals = [], []
    for n in range(1, max_n + 1):
        hc, rc = ngrams(h, n), ngrams(r, n)
        matches.append(sum(min(c, rc[g]) for g, c in hc.items()))
        totals.append(max(len(h) - n + 1, 0))
    return matches, totals, len(h), len(r)


def brevity_penalty(hyp_len, ref_len):
    if hyp_len == 0:
        return 0.0
    return min(1.0, math.exp(1.0 - ref_len / hyp_len))


def bleu_from_stats(matches, totals, hyp_len, ref_len, smooth=False):
    max_n = len(matches)
    log_sum, k = 0.0, 0
    for m, t in zip(matches, totals):
        if m > 0:
            log_sum += math.log(m / t)
        elif smooth:
            # exponential smoothing; an order with no candidate n-grams counts as 1
            k += 1
            log_sum += math.log(1.0 / (2 ** k * max(t, 1)))
        else:
            return 0.0
    return 100.0 * brevity_penalty(hyp_len, ref_len) * math.exp(log_sum / max_n)


def bleu_corpus(pairs, max_n=4) -> float:
    """Pooled-count corpus BLEU, no smoothing.  ``pairs`` are ``(hyp, ref)``."""
    pairs = list(pairs)
    if not pairs:
        raise ValueError("BLEU needs at least one pair")
    matches, totals, hl, rl = [0] * max_n, [0] * max_n, 0, 0
    for hyp, ref in pairs:
        m, t, h, r = bleu_stats(hyp, ref, max_n)
        matches = [a + b for a, b in zip(matches, m)]
        totals = [a + b for a, b in zip(totals, t)]
        hl += h
        rl += r
    if hl == 0:
        warnings.warn("all hypotheses are empty; BLEU is 0", stacklevel=2)
        return 0.0
    return bleu_from_stats(matches, totals, hl, rl)


def sentence_bleu(hyp: str, ref: str, max_n=4) -> float:
    m, t, h, r = bleu_stats(hyp, ref, max_n)
    if h == 0:
        return 0.0
    return bleu_from_stats(m, t, h, r, smooth=True)
