"""Translation edit rate with greedy block shifts."""

from __future__ import annotations

from .tokenize import mt_tokenize

MAX_SHIFT_LEN = 10


def levenshtein(a, b) -> int:
    """Word-level edit distance (unit insert/delete/substitute)."""
    prev = list(range(len(b) + 1))
    for i, x in enumerate(a, 1):
        cur = [i]
        for j, y in enumerate(b, 1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (x != y)))
        prev = cur
    return prev[-1]


def apply_shift(seq, start, length, dest):
    """Move ``seq[start:start+length]`` so it begins at ``dest`` of the result."""
    block = seq[start:start + length]
    rest = seq[:start] + seq[start + length:]
    return rest[:dest] + block + rest[dest:]


def _candidates(hyp, ref, ref_spans):
    n = len(hyp)
    for length in range(1, min(MAX_SHIFT_LEN, n) + 1):
        for start in range(n - length + 1):
            block = hyp[start:start + length]
            for j in ref_spans.get(block, ()):
                dest = min(j, n - length)
                if dest != start:
                    yield length, start, dest


def ter_edits(hyp, ref, cache=None):
    """Greedy-shift TER numerator for token tuples: ``(edits, shifts)``.

    Each round takes the shift with the largest drop in edit distance (ties:
    shorter block, leftmost origin, leftmost destination) and keeps it only if
    the drop exceeds the one edit the shift itself costs.  Rounds are capped
    at ``10 * len(ref)``.  ``cache`` memoizes edit distances against ``ref``.
    """
    hyp, ref = tuple(hyp), tuple(ref)
    if cache is None:
        cache = {}

    def dist(seq):
        d = cache.get(seq)
        if d is None:
            d = cache[seq] = levenshtein(seq, ref)
        return d

    spans: dict = {}
    for length in range(1, min(MAX_SHIFT_LEN, len(ref)) + 1):
        for j in range(len(ref) - length + 1):
            spans.setdefault(ref[j:j + length], []).append(j)

    cur, cur_d, shifts = hyp, dist(hyp), 0
    for _ in range(10 * max(len(ref), 1)):
        if cur_d == 0:
            break
        best = None
        for length, start, dest in _candidates(cur, ref, spans):
            cand = apply_shift(cur, start, length, dest)
            gain = cur_d - dist(cand)
            key = (-gain, length, start, dest)
            if best is None or key < best[0]:
                best = (key, cand)
        if best is None or -best[0][0] <= 1:
            break
        cur, cur_d = best[1], cur_d + best[0][0]
        shifts += 1
    return shifts + cur_d, shifts


def ter_tokens(hyp_tokens, ref_tokens) -> float:
    edits, _ = ter_edits(hyp_tokens, ref_tokens)
    return edits / len(ref_tokens)


def ter(pairs) -> float:
    """Corpus TER x 100: total edits over total reference tokens."""
    edits = ref_len = 0
    for hyp, ref in pairs:
        r = mt_tokenize(ref)
        e, _ = ter_edits(mt_tokenize(hyp), r)
        edits += e
        ref_len += len(r)
    if ref_len == 0:
        raise ValueError("TER needs at least one non-empty reference")
    return 100.0 * edits / ref_len


def sentence_ter(hyp, ref) -> float:
    return ter([(hyp, ref)])
