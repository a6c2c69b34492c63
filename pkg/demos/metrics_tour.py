"""Score a handful of legal sentences with every metric and render the results table."""

from legalmt.metrics import evaluate_pairs, format_table, sentence_bleu, ter
from legalmt.metrics.ter import ter_edits

refs = [
    "The court dismissed the appeal with costs.",
    "न्यायालय ने कहा कि आदेश शून्य था।",
    "Section 4 of this Act shall apply.",
]
close = [
    "The court dismissed the appeal with costs.",
    "न्यायालय ने कहा आदेश शून्य था।",
    "Section 4 of the Act applies.",
]
loose = [
    "appeal dismissed",
    "आदेश शून्य",
    "the Act applies",
]

rows = [("close", evaluate_pairs(close, refs)), ("loose", evaluate_pairs(loose, refs))]
print(format_table(rows))

print("\nsentence BLEU per pair:", [round(sentence_bleu(h, r), 2) for h, r in zip(close, refs)])

hyp, ref = "on 5 May the order was passed", "the order was passed on 5 May"
edits, shifts = ter_edits(hyp.split(), ref.split())
print(f"\nTER {ter([(hyp, ref)]):.1f}: {edits} edits of which {shifts} block shifts")
print(rows[0][1].metadata["params"])
