"""English-Hindi legal machine translation workbench.

Subword tokenization, a numpy encoder-decoder Transformer with its own
reverse-mode autodiff, Adam/AdamW training, beam decoding and string-based MT
metrics.
"""

__version__ = "0.1.0"
