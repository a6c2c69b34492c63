"""Tape gradients against central differences, from one op up to a whole Transformer loss."""

import numpy as np

from legalmt import tensor as T
from legalmt.gradcheck import check_gradients
from legalmt.model import ModelConfig, TransformerModel
from legalmt.tensor import CounterRNG, Tape, Tensor, backward

rs = np.random.default_rng(0)

# f(x) = sum(x * x), so df/dx = 2x
x = Tensor([3.0], requires_grad=True, dtype=np.float64)
with Tape() as tape:
    y = T.sum_all(T.mul(x, x))
backward(y, tape)
print("d/dx x^2 at 3 =", x.grad[0])

a = Tensor(rs.normal(size=(3, 5)), requires_grad=True, dtype=np.float64)
gain = Tensor(rs.normal(size=5), requires_grad=True, dtype=np.float64)
bias = Tensor(rs.normal(size=5), requires_grad=True, dtype=np.float64)
weights = Tensor(rs.normal(size=(3, 5)), dtype=np.float64)
for name, fn, inputs in [
    ("softmax", lambda: T.sum_all(T.mul(T.softmax(a), weights)), [a]),
    ("layer_norm", lambda: T.sum_all(T.mul(T.layer_norm(a, gain, bias), weights)), [a, gain, bias]),
    ("cross_entropy", lambda: T.cross_entropy(a, np.array([0, 3, 4]), label_smoothing=0.1), [a]),
]:
    print(f"{name:14} worst relative error {max(check_gradients(fn, inputs)):.2e}")

cfg = ModelConfig(num_layers=1, num_heads=2, d_model=8, d_ff=16, vocab_size=11, max_len=16)
model = TransformerModel(cfg, seed=3, dtype=np.float64).train()
src = np.array([[2, 5, 6, 7, 3], [2, 8, 9, 3, 0]])
tgt = np.array([[2, 7, 6, 5, 3], [2, 9, 8, 3, 0]])
mask = src != 0


def loss():
    model.rng = CounterRNG(77)  # identical dropout masks on every evaluation
    return model.loss(src, mask, tgt, tgt != 0)


errors = check_gradients(loss, model.parameters())
print(f"full model ({len(errors)} parameter tensors) worst relative error {max(errors):.2e}")
