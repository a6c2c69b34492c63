"""ROUGE-N and ROUGE-L, averaged over pairs (Latin script lowercased)."""

from __future__ import annotations

from collections import Counter

from .tokenize import lower_latin, mt_tokenize


def rouge_tokens(text):
    return [lower_latin(t) for t in mt_tokenize(text)]


def _prf(overlap, hyp_total, ref_total):
    p = overlap / hyp_total if hyp_total else 0.0
    r = overlap / ref_total if ref_total else 0.0
    f = 2 * p * r / (p + r) if p + r else 0.0
    return {"precision": p, "recall": r, "f1": f}


def _mean(scores):
    if not scores:
        return {"precision": 0.0, "recall": 0.0, "f1": 0.0}
    return {k: sum(s[k] for s in scores) / len(scores) for k in ("precision", "recall", "f1")}


def rouge_n_pair(hyp, ref, n):
    """Per-pair scores, or None when the reference has no n-grams of order n."""
    h, r = rouge_tokens(hyp), rouge_tokens(ref)
    hc = Counter(tuple(h[i:i + n]) for i in range(len(h) - n + 1))
    rc = Counter(tuple(r[i:i + n]) for i in range(len(r) - n + 1))
    if not rc:
        return None
    overlap = sum(min(c, rc[g]) for g, c in hc.items())
    return _prf(overlap, sum(hc.values()), sum(rc.values()))


def rouge_n(pairs, n: int):
    if n < 1:
        raise ValueError("n must be >= 1")
    scores = [s for s in (rouge_n_pair(h, r, n) for h, r in pairs) if s is not None]
    return _mean(scores)


def lcs_length(a, b) -> int:
    if len(a) < len(b):
        a, b = b, a
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b, 1):
            cur.append(prev[j - 1] + 1 if x == y else max(prev[j], cur[j - 1]))
        prev = cur
    return prev[-1]


def rouge_l_pair(hyp, ref):
    h, r = rouge_tokens(hyp), rouge_tokens(ref)
    if not h or not r:
        return _prf(0, 1, 1)
    return _prf(lcs_length(h, r), len(h), len(r))


def rouge_l(pairs):
    pairs = list(pairs)
    if not pairs:
        raise ValueError("ROUGE-L needs at least one pair")
    return _mean([rouge_l_pair(h, r) for h, r in pairs])
