"""METEOR restricted to the exact-match stage.

The alignment links every possible exact token match (a maximum matching) and,
among those, picks the one with the fewest crossing links, then the fewest
chunks.  Equal tokens are always linked in order, so only the choice of which
surplus occurrences stay unlinked is searched.
"""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass
from itertools import combinations, product
from math import comb

from .tokenize import mt_tokenize

EXHAUSTIVE_LIMIT = 512


@dataclass(frozen=True)
class MeteorStats:
    matches: int
    hyp_len: int
    ref_len: int
    chunks: int

    def __add__(self, other):
        return MeteorStats(self.matches + other.matches, self.hyp_len + other.hyp_len,
                           self.ref_len + other.ref_len, self.chunks + other.chunks)


def count_chunks(links) -> int:
    links = sorted(links)
    chunks = 0
    prev = None
    for i, j in links:
        if prev is None or i != prev[0] + 1 or j != prev[1] + 1:
            chunks += 1
        prev = (i, j)
    return chunks


def count_crossings(links) -> int:
    links = sorted(links)
    js = [j for _, j in links]
    # inversions of the ref positions once sorted by hyp position
    return sum(1 for a in range(len(js)) for b in range(a + 1, len(js)) if js[a] > js[b])


def _type_options(hpos, rpos):
    """Every in-order linking of a token type that uses min(len) occurrences."""
    k = min(len(hpos), len(rpos))
    if len(hpos) == len(rpos):
        return [list(zip(hpos, rpos))]
    if len(hpos) > len(rpos):
        return [list(zip(sub, rpos)) for sub in combinations(hpos, k)]
    return [list(zip(hpos, sub)) for sub in combinations(rpos, k)]


def _nearest_option(hpos, rpos, n_h, n_r):
    """Heuristic single option: keep the surplus occurrences closest in relative position."""
    if len(hpos) > len(rpos):
        chosen = sorted(sorted(hpos, key=lambda i: min(abs(i / n_h - j / n_r) for j in rpos))[:len(rpos)])
        return list(zip(chosen, rpos))
    chosen = sorted(sorted(rpos, key=lambda j: min(abs(i / n_h - j / n_r) for i in hpos))[:len(hpos)])
    return list(zip(hpos, chosen))


def align(hyp_tokens, ref_tokens):
    """Exact-match alignment as a sorted list of ``(hyp_index, ref_index)`` links."""
    hp, rp = defaultdict(list), defaultdict(list)
    for i, t in enumerate(hyp_tokens):
        hp[t].append(i)
    for j, t in enumerate(ref_tokens):
        rp[t].append(j)
    shared = sorted(set(hp) & set(rp))
    if not shared:
        return []
    n_h, n_r = len(hyp_tokens), len(ref_tokens)

    fixed, free = [], []
    for t in shared:
        c = comb(max(len(hp[t]), len(rp[t])), min(len(hp[t]), len(rp[t])))
        if c == 1:
            fixed.extend(_type_options(hp[t], rp[t])[0])
        elif c <= EXHAUSTIVE_LIMIT:
            free.append(_type_options(hp[t], rp[t]))
        else:
            fixed.extend(_nearest_option(hp[t], rp[t], n_h, n_r))

    def key(links):
        return count_crossings(links), count_chunks(links), sorted(links)

    space = 1
    for opts in free:
        space *= len(opts)
    if space <= EXHAUSTIVE_LIMIT:
        best = min((fixed + [l for part in choice for l in part] for choice in product(*free)), key=key)
        return sorted(best)

    # coordinate descent over token types, starting from the first option of each
    pick = [0] * len(free)

    def build(p):
        return fixed + [l for opts, k in zip(free, p) for l in opts[k]]

    current = key(build(pick))
    improved = True
    while improved:
        improved = False
        for t, opts in enumerate(free):
            for k in range(len(opts)):
                if k == pick[t]:
                    continue
                trial = pick[:t] + [k] + pick[t + 1:]
                cand = key(build(trial))
                if cand < current:
                    pick, current, improved = trial, cand, True
    return sorted(build(pick))


def meteor_stats(hyp: str, ref: str) -> MeteorStats:
    h, r = mt_tokenize(hyp), mt_tokenize(ref)
    links = align(h, r)
    return MeteorStats(len(links), len(h), len(r), count_chunks(links))


def meteor_from_stats(s: MeteorStats, alpha=0.9, beta=3.0, gamma=0.5) -> float:
    if s.matches == 0:
        return 0.0
    p = s.matches / s.hyp_len
    r = s.matches / s.ref_len
    fmean = p * r / (alpha * p + (1 - alpha) * r)
    penalty = gamma * (s.chunks / s.matches) ** beta
    return fmean * (1 - penalty)


def meteor(pairs, alpha=0.9, beta=3.0, gamma=0.5) -> float:
    """Corpus METEOR: matches, lengths and chunks summed before the formulas."""
    total = MeteorStats(0, 0, 0, 0)
    any_pair = False
    for hyp, ref in pairs:
        total = total + meteor_stats(hyp, ref)
        any_pair = True
    if not any_pair:
        raise ValueError("METEOR needs at least one pair")
    return meteor_from_stats(total, alpha, beta, gamma)


def sentence_meteor(hyp, ref, alpha=0.9, beta=3.0, gamma=0.5) -> float:
    return meteor_from_stats(meteor_stats(hyp, ref), alpha, beta, gamma)
