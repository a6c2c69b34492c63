"""Overfit the reduced model on a 64-sentence copy task, then decode greedily and with a beam.

Takes well under a minute on one CPU core.
"""

import math
import time

from legalmt.corpus import make_batches
from legalmt.decode import DecodeConfig, beam_search, translate_corpus
from legalmt.model import TransformerModel
from legalmt.subword import train_subword
from legalmt.toy import copy_corpus, reduced_config
from legalmt.train import TrainConfig, evaluate_loss, train

corpus = copy_corpus()
subword = train_subword(corpus.sources + corpus.targets, 200)
model = TransformerModel(reduced_config(subword.vocab_size), seed=0)
print(f"{len(corpus)} pairs, vocab {subword.vocab_size}, e.g. {corpus.sources[0]!r}")

start_loss = evaluate_loss(model, make_batches(corpus, subword, 32, 64), label_smoothing=0.0)
print(f"loss before training {start_loss:.3f} (ln V = {math.log(subword.vocab_size):.3f})")

cfg = TrainConfig.from_preset("scratch", learning_rate=2e-3, schedule="constant", max_epochs=300,
                              max_len=64, batch_size=32)
t0 = time.perf_counter()
result = train(model, corpus, subword, cfg,
               epoch_callback=lambda r: r.epoch % 50 == 0 and print(f"  epoch {r.epoch:3d} loss {r.train_loss:.4f}"))
print(f"trained in {time.perf_counter() - t0:.0f}s")

model.eval()
outputs, failures = translate_corpus(model, subword, corpus.sources, DecodeConfig(strategy="greedy"))
exact = sum(o == t for o, t in zip(outputs, corpus.targets))
print(f"greedy exact copies: {exact}/{len(corpus)}")

src = subword.encode(corpus.sources[1], add_markers=True)
for hyp in beam_search(model, src, DecodeConfig(beam_size=3)):
    print(f"  beam  {hyp.log_prob:8.4f}  {subword.decode(hyp.ids)!r}")
