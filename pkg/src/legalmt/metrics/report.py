"""Evaluation reports in the results-table column order."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

from .bleu import bleu_corpus, sentence_bleu
from .chrf import chrf_pp, sentence_chrf_pp
from .meteor import meteor, sentence_meteor
from .rouge import rouge_l, rouge_l_pair, rouge_n, rouge_n_pair
from .ter import sentence_ter, ter
from .tokenize import TOKENIZER_TAG

# (column header, report key, multiplier for the table); None key = not computed
TABLE_COLUMNS = [
    ("BLEU", "bleu", 1),
    ("chrF++", "chrf_pp", 1),
    ("TER", "ter", 1),
    ("ROUGE-1", "rouge1", 100),
    ("ROUGE-2", "rouge2", 100),
    ("ROUGE-L", "rougeL", 100),
    ("BERTScore", None, 1),
    ("METEOR", "meteor", 100),
    ("COMET", None, 1),
]

METRIC_PARAMS = {
    "tokenizer": TOKENIZER_TAG,
    "case": {"bleu": "sensitive", "chrf_pp": "sensitive", "ter": "sensitive",
             "rouge": "latin-lowercased", "meteor": "sensitive"},
    "bleu": {"max_n": 4, "corpus_smoothing": "none", "sentence_smoothing": "exp"},
    "chrf_pp": {"char_order": 6, "word_order": 2, "beta": 2, "whitespace": "removed"},
    "ter": {"shift_search": "greedy", "max_shift_len": 10, "round_cap": "10*len(ref)", "scale": 100},
    "rouge": {"aggregate": "mean-over-pairs", "n": [1, 2]},
    "meteor": {"alpha": 0.9, "beta": 3, "gamma": 0.5, "stages": ["exact"], "aggregate": "pooled"},
}


class AlignmentError(ValueError):
    pass


@dataclass
class EvalReport:
    bleu: float
    chrf_pp: float
    ter: float
    rouge1: float
    rouge2: float
    rougeL: float
    meteor: float
    metadata: dict = field(default_factory=dict)
    per_sentence: list | None = None

    @property
    def scores(self):
        return {k: getattr(self, k) for k in ("bleu", "chrf_pp", "ter", "rouge1", "rouge2", "rougeL", "meteor")}

    def to_json(self) -> str:
        return json.dumps(asdict(self), ensure_ascii=False, indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text) -> "EvalReport":
        return cls(**json.loads(text))

    def table_row(self, label="system"):
        cells = [label]
        for _, key, mult in TABLE_COLUMNS:
            cells.append("n/a" if key is None else f"{getattr(self, key) * mult:.2f}")
        return cells


def format_table(rows) -> str:
    """Align ``[(label, EvalReport), ...]`` under the results-table headers."""
    header = ["Model"] + [h for h, _, _ in TABLE_COLUMNS]
    body = [r.table_row(label) for label, r in rows]
    widths = [max(len(row[i]) for row in [header, *body]) for i in range(len(header))]

    def fmt(row):
        return "  ".join(c.ljust(w) if i == 0 else c.rjust(w) for i, (c, w) in enumerate(zip(row, widths)))

    return "\n".join([fmt(header), "  ".join("-" * w for w in widths), *map(fmt, body)])


def evaluate_pairs(hyps, refs, per_sentence=False) -> EvalReport:
    hyps, refs = list(hyps), list(refs)
    if len(hyps) != len(refs):
        raise AlignmentError(f"hypothesis has {len(hyps)} lines but reference has {len(refs)}")
    if not refs:
        raise AlignmentError("nothing to evaluate: no lines")
    if any(not r.strip() for r in refs):
        raise AlignmentError("reference contains an empty line")
    pairs = list(zip(hyps, refs))
    report = EvalReport(
        bleu=bleu_corpus(pairs),
        chrf_pp=chrf_pp(pairs),
        ter=ter(pairs),
        rouge1=rouge_n(pairs, 1)["f1"],
        rouge2=rouge_n(pairs, 2)["f1"],
        rougeL=rouge_l(pairs)["f1"],
        meteor=meteor(pairs),
        metadata={"params": METRIC_PARAMS, "corpus_size": len(pairs),
                  "rouge_detail": {"rouge1": rouge_n(pairs, 1), "rouge2": rouge_n(pairs, 2),
                                   "rougeL": rouge_l(pairs)},
                  "neural_metrics": "not computed (BERTScore, COMET)"},
    )
    if per_sentence:
        rows = []
        for h, r in pairs:
            r2 = rouge_n_pair(h, r, 2)
            rows.append({"bleu": sentence_bleu(h, r), "chrf_pp": sentence_chrf_pp(h, r), "ter": sentence_ter(h, r),
                         "rouge1": rouge_n_pair(h, r, 1)["f1"], "rouge2": None if r2 is None else r2["f1"],
                         "rougeL": rouge_l_pair(h, r)["f1"], "meteor": sentence_meteor(h, r)})
        report.per_sentence = rows
    return report


def read_lines(path):
    text = Path(path).read_bytes().decode("utf-8-sig")
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    return [l.rstrip("\r") for l in lines]


def evaluate(hyp_file, ref_file, per_sentence=False) -> EvalReport:
    hyps, refs = read_lines(hyp_file), read_lines(ref_file)
    if len(hyps) != len(refs):
        raise AlignmentError(f"{hyp_file} has {len(hyps)} lines but {ref_file} has {len(refs)}")
    report = evaluate_pairs(hyps, refs, per_sentence)
    report.metadata["files"] = {"hypothesis": str(hyp_file), "reference": str(ref_file)}
    return report
