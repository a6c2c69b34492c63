from .bleu import bleu_corpus, sentence_bleu
from .chrf import chrf_pp, sentence_chrf_pp
from .meteor import meteor, sentence_meteor
from .report import AlignmentError, EvalReport, evaluate, evaluate_pairs, format_table
from .rouge import rouge_l, rouge_n
from .ter import levenshtein, sentence_ter, ter
from .tokenize import mt_tokenize

__all__ = [
    "mt_tokenize", "bleu_corpus", "sentence_bleu", "chrf_pp", "sentence_chrf_pp", "ter", "sentence_ter",
    "levenshtein", "rouge_n", "rouge_l", "meteor", "sentence_meteor", "EvalReport", "evaluate",
    "evaluate_pairs", "format_table", "AlignmentError",
]
