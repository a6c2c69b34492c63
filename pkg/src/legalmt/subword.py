"""Byte-pair-encoding subword model shared by source and target text.

Words are split into characters and the first character of each word carries
the boundary marker ``▁``, so ``"ab cd"`` starts as ``▁a b ▁c d``.  Training
greedily merges the most frequent adjacent pair; frequency ties go to the
lexicographically smallest merged string.
"""

from __future__ import annotations

import hashlib
import heapq
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

MARKER = "▁"
UNK_RENDER = "⁇"  # ⁇
PAD, UNK, BOS, EOS = 0, 1, 2, 3
SPECIAL_PIECES = ("<pad>", "<unk>", "<s>", "</s>")
FORMAT_HEADER = "subword v1"


class SubwordConfigError(ValueError):
    pass


def word_symbols(word: str) -> list[str]:
    return [MARKER + word[0], *word[1:]] if word else []


@dataclass
class SubwordModel:
    pieces: list[str]  # index == id
    merges: list[tuple[str, str]]
    _piece_ids: dict = field(init=False, repr=False)
    _ranks: dict = field(init=False, repr=False)
    _cache: dict = field(init=False, repr=False, default_factory=dict)

    def __post_init__(self):
        if tuple(self.pieces[:4]) != SPECIAL_PIECES:
            raise SubwordConfigError("ids 0-3 must be the special pieces")
        self._piece_ids = {p: i for i, p in enumerate(self.pieces) if i >= 4}
        self._ranks = {pair: r for r, pair in enumerate(self.merges)}

    pad_id, unk_id, bos_id, eos_id = PAD, UNK, BOS, EOS

    @property
    def vocab_size(self) -> int:
        return len(self.pieces)

    @property
    def num_base(self) -> int:
        return len(self.pieces) - 4 - len(self.merges)

    def piece_id(self, piece: str) -> int:
        return self._piece_ids.get(piece, UNK)

    # ------------------------------------------------------------ encoding

    def _segment_word(self, word: str) -> tuple[int, ...]:
        hit = self._cache.get(word)
        if hit is not None:
            return hit
        syms = word_symbols(word)
        ranks = self._ranks
        while len(syms) > 1:
            best, best_rank = None, None
            for pair in zip(syms, syms[1:]):
                r = ranks.get(pair)
                if r is not None and (best_rank is None or r < best_rank):
                    best, best_rank = pair, r
            if best is None:
                break
            syms = _merge_symbols(syms, best)
        ids = tuple(self._piece_ids.get(s, UNK) for s in syms)
        if len(self._cache) < 200_000:
            self._cache[word] = ids
        return ids

    def encode(self, text: str, add_markers: bool = False, max_len: int | None = None) -> list[int]:
        """Token ids for already-normalized ``text``.

        With ``max_len`` the prefix is kept and the final slot is forced to
        ``</s>`` when markers are on.
        """
        ids: list[int] = []
        for word in text.split(" "):
            if word:
                ids.extend(self._segment_word(word))
        if add_markers:
            ids = [BOS, *ids, EOS]
        if max_len is not None and len(ids) > max_len:
            ids = ids[:max_len]
            if add_markers:
                ids[-1] = EOS
        return ids

    def decode(self, ids: Iterable[int]) -> str:
        parts = []
        n = len(self.pieces)
        for i in ids:
            i = int(i)
            if not 0 <= i < n:
                raise IndexError(f"token id {i} outside vocabulary of {n}")
            if i == UNK:
                parts.append(UNK_RENDER)
            elif i >= 4:
                parts.append(self.pieces[i])
        return "".join(parts).replace(MARKER, " ").strip(" ")

    # ---------------------------------------------------------- file format

    def dumps(self) -> str:
        lines = [f"{FORMAT_HEADER} {self.vocab_size}"]
        lines += [f"{i}\t{p}" for i, p in enumerate(self.pieces)]
        lines.append("#merges")
        lines += [f"{a}\t{b}" for a, b in self.merges]
        return "\n".join(lines) + "\n"

    def save(self, path) -> str:
        data = self.dumps().encode("utf-8")
        Path(path).write_bytes(data)
        return hashlib.sha256(data).hexdigest()

    @property
    def content_hash(self) -> str:
        return hashlib.sha256(self.dumps().encode("utf-8")).hexdigest()

    @classmethod
    def loads(cls, text: str) -> "SubwordModel":
        lines = text.split("\n")
        head = lines[0].split(" ")
        if " ".join(head[:2]) != FORMAT_HEADER or len(head) != 3:
            raise SubwordConfigError(f"bad subword model header: {lines[0]!r}")
        size = int(head[2])
        pieces = []
        for k, line in enumerate(lines[1:size + 1]):
            idx, _, piece = line.partition("\t")
            if int(idx) != k:
                raise SubwordConfigError(f"piece ids not dense at line {k + 2}")
            pieces.append(piece)
        if lines[size + 1] != "#merges":
            raise SubwordConfigError("missing #merges section")
        merges = [tuple(l.split("\t")) for l in lines[size + 2:] if l]
        return cls(pieces, merges)

    @classmethod
    def load(cls, path) -> "SubwordModel":
        return cls.loads(Path(path).read_bytes().decode("utf-8-sig"))


def _merge_symbols(syms, pair):
    a, b = pair
    out, i, n = [], 0, len(syms)
    while i < n:
        if i < n - 1 and syms[i] == a and syms[i + 1] == b:
            out.append(a + b)
            i += 2
        else:
            out.append(syms[i])
            i += 1
    return out


def _pairs(syms):
    return Counter(zip(syms, syms[1:]))


def train_subword(texts: Iterable[str], vocab_size: int) -> SubwordModel:
    """Learn BPE merges until ``vocab_size`` pieces exist or no pair repeats.

    Merges producing a string that is already a piece are skipped so every
    learned piece comes from exactly one merge rule.
    """
    word_freq: Counter = Counter()
    any_text = False
    for text in texts:
        any_text = True
        word_freq.update(w for w in text.split(" ") if w)
    if not any_text or not word_freq:
        raise SubwordConfigError("no training text")

    words = [word_symbols(w) for w in word_freq]
    freqs = list(word_freq.values())
    base = sorted({s for syms in words for s in syms})
    if vocab_size <= len(base) + len(SPECIAL_PIECES):
        raise SubwordConfigError(
            f"vocab_size {vocab_size} too small: need more than {len(base)} base symbols + 4 specials")

    counts: Counter = Counter()
    where: dict = defaultdict(set)
    for wi, syms in enumerate(words):
        for pair, c in _pairs(syms).items():
            counts[pair] += c * freqs[wi]
            where[pair].add(wi)

    heap = [(-c, a + b, a, b) for (a, b), c in counts.items()]
    heapq.heapify(heap)
    pieces = list(SPECIAL_PIECES) + base
    known = set(base)
    merges: list[tuple[str, str]] = []

    while len(pieces) < vocab_size and heap:
        negc, merged, a, b = heapq.heappop(heap)
        cur = counts.get((a, b), 0)
        if cur != -negc:
            if cur > 0:
                heapq.heappush(heap, (-cur, merged, a, b))
            continue
        if cur < 2:
            break
        if merged in known:
            counts.pop((a, b), None)
            continue
        merges.append((a, b))
        pieces.append(merged)
        known.add(merged)

        changed: Counter = Counter()
        for wi in where.pop((a, b), ()):
            syms = words[wi]
            if len(syms) < 2:
                continue
            new = _merge_symbols(syms, (a, b))
            if len(new) == len(syms):
                continue
            f = freqs[wi]
            for pair, c in _pairs(syms).items():
                changed[pair] -= c * f
            for pair, c in _pairs(new).items():
                changed[pair] += c * f
                where[pair].add(wi)
            words[wi] = new
        counts.pop((a, b), None)
        for pair, delta in changed.items():
            if pair == (a, b) or delta == 0:
                continue
            c = counts.get(pair, 0) + delta
            if c > 0:
                counts[pair] = c
                if delta > 0:
                    heapq.heappush(heap, (-c, pair[0] + pair[1], pair[0], pair[1]))
            else:
                counts.pop(pair, None)

    return SubwordModel(pieces, merges)
