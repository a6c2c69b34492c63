"""Greedy and beam-search generation.

Decoders talk to a *scorer*: any object whose ``log_probs(prefixes)`` returns
next-token log-probabilities ``[n, V]`` for equal-length prefixes that start
with ``<s>``.  ``TransformerModel.scorer(src_ids)`` provides one; tests plug in
hand-wired scorers.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .corpus import normalize_text
from .subword import BOS, EOS

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class DecodeConfig:
    strategy: str = "beam"
    beam_size: int = 4
    length_penalty_alpha: float = 0.6
    max_len: int | None = None  # None: the model's max_len - 1 generated tokens

    def __post_init__(self):
        if self.strategy not in ("greedy", "beam"):
            raise ValueError(f"unknown strategy {self.strategy!r}")
        if self.beam_size < 1:
            raise ValueError("beam_size must be >= 1")
        if self.length_penalty_alpha < 0:
            raise ValueError("length_penalty_alpha must be >= 0")
        if self.max_len is not None and self.max_len < 1:
            raise ValueError("max_len must be positive")


@dataclass(frozen=True)
class Hypothesis:
    ids: tuple  # generated tokens, <s> excluded
    log_prob: float
    finished: bool

    @property
    def truncated(self):
        """Stopped by the length limit rather than by ``</s>``."""
        return not self.ids or self.ids[-1] != EOS

    def score(self, alpha):
        return length_normalized(self.log_prob, len(self.ids), alpha)


def length_normalized(log_prob, length, alpha):
    return log_prob / (max(length, 1) ** alpha)


def _scorer(model, src_ids):
    return model.scorer(src_ids) if hasattr(model, "scorer") else model


def _limit(scorer, cfg):
    if cfg.max_len is not None:
        return cfg.max_len
    return getattr(scorer, "max_len", 256) - 1


def greedy_decode(model, src_ids, cfg: DecodeConfig = DecodeConfig(strategy="greedy")) -> Hypothesis:
    scorer = _scorer(model, src_ids)
    limit = _limit(scorer, cfg)
    ids, total = [], 0.0
    while len(ids) < limit:
        lp = scorer.log_probs([[BOS, *ids]])[0]
        tok = int(np.argmax(lp))  # first maximum == lowest id among ties
        ids.append(tok)
        total += float(lp[tok])
        if tok == EOS:
            break
    return Hypothesis(tuple(ids), total, True)


def beam_search(model, src_ids, cfg: DecodeConfig = DecodeConfig()) -> list[Hypothesis]:
    """Beam search returning up to ``beam_size`` finished hypotheses, best first.

    Expansions are ranked by cumulative log-probability (ties: lower parent
    rank, then lower token id).  A ``</s>`` expansion ranked inside the top k
    enters a pool that keeps the k best finished hypotheses.  The search
    stops when the pool is full and the best live beam, normalized at its
    current length, cannot beat the pool's worst; at the length limit live
    beams join the pool as truncated.  Ranking uses ``log_prob / len ** alpha``.
    """
    scorer = _scorer(model, src_ids)
    limit = _limit(scorer, cfg)
    k, alpha = cfg.beam_size, cfg.length_penalty_alpha
    live = [((), 0.0)]
    done: list[Hypothesis] = []

    def finish(hyp):
        done.append(hyp)
        if len(done) > k:
            # drop the worst; on ties the later arrival goes
            worst = min(range(len(done)), key=lambda i: (done[i].score(alpha), -i))
            done.pop(worst)

    for length in range(1, limit + 1):
        lp = scorer.log_probs([[BOS, *ids] for ids, _ in live])
        totals = np.array([s for _, s in live])[:, None] + lp
        flat = totals.reshape(-1)
        # stable sort on -score keeps (parent, token) order among ties
        order = np.argsort(-flat, kind="stable")[: 2 * k]
        nxt = []
        for rank, j in enumerate(order):
            parent, tok = divmod(int(j), lp.shape[1])
            ids = live[parent][0] + (tok,)
            score = float(flat[j])
            if tok == EOS:
                # only ends that made the top k compete; lower ones would
                # have been pruned in a k-wide beam anyway
                if rank < k:
                    finish(Hypothesis(ids, score, True))
            elif len(nxt) < k:
                nxt.append((ids, score))
        live = nxt
        if not live:
            break
        if len(done) >= k:
            best_live = length_normalized(live[0][1], length, alpha)
            if best_live <= min(h.score(alpha) for h in done):
                break
    else:
        for ids, score in live:
            finish(Hypothesis(ids, score, True))
    return sorted(done, key=lambda h: -h.score(alpha))


def decode_ids(model, src_ids, cfg: DecodeConfig) -> Hypothesis:
    if cfg.strategy == "greedy":
        return greedy_decode(model, src_ids, cfg)
    return beam_search(model, src_ids, cfg)[0]


def sequence_log_prob(model, src_ids, ids) -> float:
    """Teacher-forced sum of step log-probabilities of ``ids`` (fresh forward passes)."""
    scorer = _scorer(model, src_ids)
    total = 0.0
    for t, tok in enumerate(ids):
        total += float(scorer.log_probs([[BOS, *ids[:t]]])[0][tok])
    return total


def translate_corpus(model, subword, sentences, cfg: DecodeConfig, checkpoint_hash=None) -> tuple[list[str], int]:
    """Translate ``sentences`` in order.  Returns ``(outputs, failures)``.

    A sentence that raises during decoding yields ``""`` so the output stays
    line-aligned with the input; the failure is counted and logged.
    """
    if checkpoint_hash is not None and checkpoint_hash != subword.content_hash:
        raise ValueError("model and subword model hashes differ")
    max_len = model.config.max_len if hasattr(model, "config") else None
    outputs, failures = [], 0
    for n, sentence in enumerate(sentences):
        try:
            src = subword.encode(normalize_text(sentence), add_markers=True, max_len=max_len)
            hyp = decode_ids(model, src, cfg)
            outputs.append(subword.decode(hyp.ids))
        except Exception as exc:  # noqa: BLE001 - alignment beats aborting
            log.warning("sentence %d failed to translate: %s", n, exc)
            outputs.append("")
            failures += 1
    return outputs, failures
