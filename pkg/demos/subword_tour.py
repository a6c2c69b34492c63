"""Train a small joint English/Hindi BPE model and look at how it segments text."""

from legalmt.subword import train_subword

texts = [
    "the appeal is dismissed with costs",
    "the petition is allowed and the order is set aside",
    "the court held that the order was void",
    "अपील खारिज की जाती है",
    "याचिका स्वीकार की जाती है और आदेश रद्द किया जाता है",
    "न्यायालय ने कहा कि आदेश शून्य था",
]

# past 86 pieces no pair repeats in this tiny corpus, so training stops early
for vocab in (64, 75, 200):
    model = train_subword(texts, vocab)
    print(f"\nvocab {model.vocab_size}: {len(model.merges)} merges over {model.num_base} base symbols")
    print("  first merges:", model.merges[:5])
    for text in ("the order is void", "आदेश रद्द किया जाता है", "the zebra"):
        ids = model.encode(text)
        pieces = [model.pieces[i] for i in ids]
        print(f"  {text!r:32} -> {len(ids):2d} pieces {pieces}  round trip {model.decode(ids)!r}")
