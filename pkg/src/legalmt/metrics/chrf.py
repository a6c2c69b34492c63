"""chrF++: character 1..6-gram plus word 1..2-gram F-beta."""

from __future__ import annotations

from collections import Counter

from .tokenize import mt_tokenize


def _ngram_counts(seq, n):
    return Counter(tuple(seq[i:i + n]) for i in range(len(seq) - n + 1))


def chrf_stats(hyp: str, ref: str, char_order=6, word_order=2):
    """Per order ``(matches, hyp_total, ref_total)``; char orders first, then word orders."""
    hc, rc = "".join(hyp.split()), "".join(ref.split())
    hw, rw = mt_tokenize(hyp), mt_tokenize(ref)
    stats = []
    for seq_h, seq_r, top in ((hc, rc, char_order), (hw, rw, word_order)):
        for n in range(1, top + 1):
            a, b = _ngram_counts(seq_h, n), _ngram_counts(seq_r, n)
            stats.append((sum(min(c, b[g]) for g, c in a.items()), sum(a.values()), sum(b.values())))
    return stats


def chrf_from_stats(stats, beta=2.0):
    precisions, recalls = [], []
    for match, h_total, r_total in stats:
        if r_total == 0:
            continue  # order absent from the reference
        precisions.append(match / h_total if h_total else 0.0)
        recalls.append(match / r_total)
    if not precisions:
        return 0.0
    p = sum(precisions) / len(precisions)
    r = sum(recalls) / len(recalls)
    if p + r == 0:
        return 0.0
    b2 = beta * beta
    return 100.0 * (1 + b2) * p * r / (b2 * p + r)


def chrf_pp(pairs, char_order=6, word_order=2, beta=2.0) -> float:
    """Corpus chrF++ from n-gram counts pooled over all pairs."""
    pooled = None
    for hyp, ref in pairs:
        s = chrf_stats(hyp, ref, char_order, word_order)
        pooled = s if pooled is None else [tuple(a + b for a, b in zip(x, y)) for x, y in zip(pooled, s)]
    if pooled is None:
        raise ValueError("chrF++ needs at least one pair")
    return chrf_from_stats(pooled, beta)


def sentence_chrf_pp(hyp, ref, char_order=6, word_order=2, beta=2.0) -> float:
    return chrf_from_stats(chrf_stats(hyp, ref, char_order, word_order), beta)
