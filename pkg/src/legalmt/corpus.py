"""Parallel English-Hindi corpora: loading, normalization and batching."""

from __future__ import annotations

import json
import logging
import unicodedata
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .tensor import CounterRNG

log = logging.getLogger(__name__)

SPLITS = ("train", "validation", "test")
POLICIES = ("strict", "drop")
BUCKET_WINDOW = 1024


class CorpusError(ValueError):
    pass


class CorpusParseError(CorpusError):
    def __init__(self, path, lineno, reason):
        super().__init__(f"{path}:{lineno}: {reason}")
        self.path = path
        self.lineno = lineno


def normalize_text(text: str) -> str:
    """NFC, control characters removed, whitespace runs collapsed to one space."""
    text = unicodedata.normalize("NFC", text)
    if any(unicodedata.category(c) == "Cc" and not c.isspace() for c in text):
        text = "".join(c for c in text if unicodedata.category(c) != "Cc" or c.isspace())
    return " ".join(text.split())


@dataclass(frozen=True)
class SentencePair:
    id: int
    source: str
    target: str


@dataclass(frozen=True)
class ParallelCorpus:
    pairs: tuple
    split: str = "train"
    source_lang: str = "en"
    target_lang: str = "hi"
    dropped: int = 0

    def __post_init__(self):
        if self.split not in SPLITS:
            raise CorpusError(f"split must be one of {SPLITS}, got {self.split!r}")
        for k, p in enumerate(self.pairs):
            if p.id != k:
                raise CorpusError(f"pair ids must be 0..n-1 in order; position {k} has id {p.id}")

    def __len__(self):
        return len(self.pairs)

    def __iter__(self):
        return iter(self.pairs)

    @property
    def sources(self):
        return [p.source for p in self.pairs]

    @property
    def targets(self):
        return [p.target for p in self.pairs]

    @classmethod
    def from_texts(cls, sources, targets, **kw):
        if len(sources) != len(targets):
            raise CorpusError(f"{len(sources)} sources vs {len(targets)} targets")
        pairs = []
        for s, t in zip(sources, targets):
            s, t = normalize_text(s), normalize_text(t)
            if not s or not t:
                raise CorpusError("empty sentence after normalization")
            pairs.append(SentencePair(len(pairs), s, t))
        return cls(tuple(pairs), **kw)


def _parse_line(line, fmt):
    if fmt == "tsv":
        fields = line.split("\t")
        if len(fields) != 2:
            raise ValueError(f"expected 2 tab-separated fields, found {len(fields)}")
        return fields
    obj = json.loads(line)
    if not isinstance(obj, dict) or "source" not in obj or "target" not in obj:
        raise ValueError('expected an object with "source" and "target"')
    if not isinstance(obj["source"], str) or not isinstance(obj["target"], str):
        raise ValueError("source and target must be strings")
    return obj["source"], obj["target"]


def load_parallel(path, format: str = "tsv", split: str = "train", policy: str = "drop",
                  source_lang: str = "en", target_lang: str = "hi") -> ParallelCorpus:
    """Read a TSV or JSONL parallel file.

    Under ``policy="drop"`` malformed lines and pairs that normalize to an
    empty side are skipped and counted in ``ParallelCorpus.dropped``; under
    ``"strict"`` the first one raises :class:`CorpusParseError`.
    """
    if format not in ("tsv", "jsonl"):
        raise CorpusError(f"unknown format {format!r}")
    if policy not in POLICIES:
        raise CorpusError(f"unknown cleaning policy {policy!r}")
    raw = Path(path).read_bytes().decode("utf-8-sig")

    pairs, dropped = [], 0
    lines = raw.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    for lineno, line in enumerate(lines, start=1):
        line = line.rstrip("\r")
        try:
            src, tgt = _parse_line(line, format)
            src, tgt = normalize_text(src), normalize_text(tgt)
            if not src or not tgt:
                raise ValueError("empty source or target")
        except ValueError as exc:
            if policy == "strict":
                raise CorpusParseError(path, lineno, str(exc)) from None
            dropped += 1
            continue
        pairs.append(SentencePair(len(pairs), src, tgt))
    if dropped:
        log.warning("%s: dropped %d malformed line(s)", path, dropped)
    return ParallelCorpus(tuple(pairs), split, source_lang, target_lang, dropped)


def write_parallel(corpus: ParallelCorpus, path, format: str = "tsv"):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for p in corpus.pairs:
            if format == "tsv":
                fh.write(f"{p.source}\t{p.target}\n")
            else:
                fh.write(json.dumps({"source": p.source, "target": p.target}, ensure_ascii=False) + "\n")


@dataclass(frozen=True)
class Batch:
    source_ids: np.ndarray
    target_ids: np.ndarray
    source_mask: np.ndarray
    target_mask: np.ndarray
    pair_ids: np.ndarray  # corpus ids of the rows, for provenance

    def __len__(self):
        return self.source_ids.shape[0]


def _pad(rows, pad_id):
    width = max(len(r) for r in rows)
    ids = np.full((len(rows), width), pad_id, dtype=np.int64)
    for i, r in enumerate(rows):
        ids[i, :len(r)] = r
    return ids, ids != pad_id


def make_batches(corpus: ParallelCorpus, model, batch_size: int, max_len: int,
                 shuffle_seed: int | None = None) -> list[Batch]:
    """Tokenize, wrap in ``<s> ... </s>``, truncate to ``max_len`` and pad per batch.

    Pairs are sorted by source length inside consecutive windows of 1024 pairs
    before being cut into batches.  With a seed, pair order is shuffled first
    and batch order afterwards, both deterministically.
    """
    if batch_size < 1:
        raise CorpusError("batch_size must be positive")
    if max_len < 2:
        raise CorpusError("max_len must leave room for <s> and </s>")
    if len(corpus) == 0:
        raise CorpusError("cannot batch an empty corpus")

    src = [model.encode(p.source, add_markers=True, max_len=max_len) for p in corpus.pairs]
    tgt = [model.encode(p.target, add_markers=True, max_len=max_len) for p in corpus.pairs]

    order = np.arange(len(corpus))
    rng = CounterRNG(shuffle_seed) if shuffle_seed is not None else None
    if rng is not None:
        order = rng.permutation(len(corpus))
    bucketed = []
    for start in range(0, len(order), BUCKET_WINDOW):
        window = order[start:start + BUCKET_WINDOW]
        bucketed.extend(sorted(window.tolist(), key=lambda i: len(src[i])))

    batches = []
    for start in range(0, len(bucketed), batch_size):
        rows = bucketed[start:start + batch_size]
        s_ids, s_mask = _pad([src[i] for i in rows], model.pad_id)
        t_ids, t_mask = _pad([tgt[i] for i in rows], model.pad_id)
        batches.append(Batch(s_ids, t_ids, s_mask, t_mask, np.array(rows, dtype=np.int64)))
    if rng is not None:
        batches = [batches[i] for i in rng.permutation(len(batches))]
    return batches


def corpus_stats(corpora) -> list[tuple[str, int]]:
    return [(c.split, len(c)) for c in corpora]


def format_stats(rows) -> str:
    width = max(len("split"), *(len(name) for name, _ in rows))
    lines = [f"{'split':<{width}}  pairs"]
    lines += [f"{name:<{width}}  {n}" for name, n in rows]
    return "\n".join(lines)
