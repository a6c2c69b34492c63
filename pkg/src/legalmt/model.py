"""Compact pre-layer-norm encoder-decoder Transformer on top of :mod:`legalmt.tensor`."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from . import tensor as T
from .tensor import CounterRNG, Tensor

MASK_PENALTY = -1e9


@dataclass(frozen=True)
class ModelConfig:
    num_layers: int = 4
    num_heads: int = 8
    d_model: int = 128
    d_ff: int = 512
    dropout: float = 0.1
    max_len: int = 256
    vocab_size: int = 32000
    label_smoothing: float = 0.1
    tie_embeddings: bool = True
    shared_embeddings: bool = True

    def __post_init__(self):
        if self.num_layers < 1 or self.num_heads < 1 or self.d_model < 1 or self.d_ff < 1:
            raise ValueError("layer, head and width sizes must be positive")
        if self.d_model % self.num_heads:
            raise ValueError(f"d_model {self.d_model} not divisible by num_heads {self.num_heads}")
        if self.max_len < 2:
            raise ValueError("max_len must be at least 2")
        if self.vocab_size < 5:
            raise ValueError("vocab_size must be at least 5")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must be in [0, 1)")
        if not 0.0 <= self.label_smoothing < 1.0:
            raise ValueError("label_smoothing must be in [0, 1)")

    @property
    def head_dim(self):
        return self.d_model // self.num_heads

    def to_dict(self):
        return asdict(self)


def _attn_shapes(prefix, d):
    # no key bias: it shifts every score in a row equally and never gets a gradient
    out = {}
    for w in ("q", "k", "v", "o"):
        out[f"{prefix}.w{w}"] = (d, d)
        if w != "k":
            out[f"{prefix}.b{w}"] = (d,)
    return out


def _ln_shapes(prefix, d):
    return {f"{prefix}.gain": (d,), f"{prefix}.bias": (d,)}


def _ff_shapes(prefix, d, d_ff):
    return {f"{prefix}.w1": (d, d_ff), f"{prefix}.b1": (d_ff,),
            f"{prefix}.w2": (d_ff, d), f"{prefix}.b2": (d,)}


def parameter_manifest(cfg: ModelConfig) -> dict[str, tuple]:
    """Ordered ``name -> shape`` for every trainable tensor."""
    d, V = cfg.d_model, cfg.vocab_size
    shapes: dict[str, tuple] = {}
    if cfg.shared_embeddings:
        shapes["embed"] = (V, d)
    else:
        shapes["src_embed"] = (V, d)
        shapes["tgt_embed"] = (V, d)
    for i in range(cfg.num_layers):
        p = f"enc.{i}"
        shapes.update(_ln_shapes(f"{p}.ln1", d))
        shapes.update(_attn_shapes(f"{p}.self", d))
        shapes.update(_ln_shapes(f"{p}.ln2", d))
        shapes.update(_ff_shapes(f"{p}.ff", d, cfg.d_ff))
    shapes.update(_ln_shapes("enc.ln_final", d))
    for i in range(cfg.num_layers):
        p = f"dec.{i}"
        shapes.update(_ln_shapes(f"{p}.ln1", d))
        shapes.update(_attn_shapes(f"{p}.self", d))
        shapes.update(_ln_shapes(f"{p}.ln2", d))
        shapes.update(_attn_shapes(f"{p}.cross", d))
        shapes.update(_ln_shapes(f"{p}.ln3", d))
        shapes.update(_ff_shapes(f"{p}.ff", d, cfg.d_ff))
    shapes.update(_ln_shapes("dec.ln_final", d))
    if not cfg.tie_embeddings:
        shapes["out_proj"] = (d, V)
    return shapes


def count_parameters(cfg: ModelConfig) -> int:
    return sum(int(np.prod(s)) for s in parameter_manifest(cfg).values())


def is_decayed(name: str) -> bool:
    """Weight matrices get decoupled weight decay; biases, norms and embeddings do not."""
    leaf = name.rsplit(".", 1)[-1]
    return leaf in ("wq", "wk", "wv", "wo", "w1", "w2") or name == "out_proj"


def sinusoidal_positions(length, d, dtype=np.float32):
    pos = np.arange(length)[:, None]
    i = np.arange(0, d, 2)[None, :]
    angle = pos / np.power(10000.0, i / d)
    pe = np.zeros((length, d))
    pe[:, 0::2] = np.sin(angle)
    pe[:, 1::2] = np.cos(angle[:, : d // 2])
    return pe.astype(dtype)


def attention(q, k, v, mask=None):
    """Scaled dot-product attention over ``[B, h, T, dk]`` tensors.

    ``mask`` is boolean, broadcastable to ``[B, h, Tq, Tk]``, True where a key
    may be attended; other scores get -1e9 before the softmax.
    """
    dk = q.shape[-1]
    scores = T.scale(T.matmul(q, T.transpose(k)), 1.0 / math.sqrt(dk))
    if mask is not None:
        scores = T.masked_fill(scores, mask, MASK_PENALTY)
    return T.matmul(T.softmax(scores, axis=-1), v)


def causal_mask(t):
    return np.tril(np.ones((t, t), dtype=bool))


class TransformerModel:
    def __init__(self, config: ModelConfig, seed: int = 0, dtype=np.float32, params=None):
        self.config = config
        self.dtype = np.dtype(dtype)
        self.training = False
        self.rng = CounterRNG(seed + 1)  # dropout stream; init uses seed itself
        manifest = parameter_manifest(config)
        if params is None:
            params = self._init_params(manifest, CounterRNG(seed))
        self.params: dict[str, Tensor] = {}
        for name, shape in manifest.items():
            arr = np.asarray(params[name], dtype=self.dtype)
            if arr.shape != tuple(shape):
                raise ValueError(f"parameter {name}: expected shape {shape}, got {arr.shape}")
            self.params[name] = Tensor(arr.copy(), requires_grad=True, name=name)
        self._pe = sinusoidal_positions(config.max_len, config.d_model, self.dtype)

    def _init_params(self, manifest, rng):
        d = self.config.d_model
        out = {}
        for name, shape in manifest.items():
            leaf = name.rsplit(".", 1)[-1]
            if "embed" in name:
                out[name] = rng.normal(shape, std=d ** -0.5)
            elif leaf == "gain":
                out[name] = np.ones(shape)
            elif len(shape) == 2:
                limit = math.sqrt(6.0 / (shape[0] + shape[1]))
                out[name] = (rng.uniform(shape) * 2.0 - 1.0) * limit
            else:
                out[name] = np.zeros(shape)
        return out

    # ------------------------------------------------------------- plumbing

    def parameters(self):
        return list(self.params.values())

    def named_parameters(self):
        return list(self.params.items())

    def train(self, mode=True):
        self.training = mode
        return self

    def eval(self):
        return self.train(False)

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def state_dict(self):
        return {k: v.data.copy() for k, v in self.params.items()}

    def load_state_dict(self, state):
        for k, p in self.params.items():
            p.data[...] = state[k]

    @property
    def src_embed(self):
        return self.params["embed" if self.config.shared_embeddings else "src_embed"]

    @property
    def tgt_embed(self):
        return self.params["embed" if self.config.shared_embeddings else "tgt_embed"]

    # -------------------------------------------------------------- layers

    def _drop(self, x):
        return T.dropout(x, self.config.dropout, self.rng, self.training)

    def _ln(self, x, prefix):
        return T.layer_norm(x, self.params[f"{prefix}.gain"], self.params[f"{prefix}.bias"], 1e-5)

    def _linear(self, x, w, b):
        return T.add(T.matmul(x, self.params[w]), self.params[b])

    def _split_heads(self, x):
        b, t, _ = x.shape
        h = self.config.num_heads
        return T.transpose(T.reshape(x, (b, t, h, self.config.head_dim)), (0, 2, 1, 3))

    def _merge_heads(self, x):
        b, _, t, _ = x.shape
        return T.reshape(T.transpose(x, (0, 2, 1, 3)), (b, t, self.config.d_model))

    def _mha(self, x, memory, mask, prefix):
        q = self._split_heads(self._linear(x, f"{prefix}.wq", f"{prefix}.bq"))
        k = self._split_heads(T.matmul(memory, self.params[f"{prefix}.wk"]))
        v = self._split_heads(self._linear(memory, f"{prefix}.wv", f"{prefix}.bv"))
        ctx = self._merge_heads(attention(q, k, v, mask))
        return self._linear(ctx, f"{prefix}.wo", f"{prefix}.bo")

    def _ff(self, x, prefix):
        hidden = T.relu(self._linear(x, f"{prefix}.w1", f"{prefix}.b1"))
        return self._linear(hidden, f"{prefix}.w2", f"{prefix}.b2")

    def _embed(self, table, ids):
        t = ids.shape[1]
        if t > self.config.max_len:
            raise ValueError(f"sequence length {t} exceeds max_len {self.config.max_len}")
        x = T.scale(T.embedding(table, ids), math.sqrt(self.config.d_model))
        x = T.add(x, Tensor(self._pe[:t], dtype=self.dtype))
        return self._drop(x)

    # ------------------------------------------------------------- forward

    def encode(self, src_ids, src_mask):
        src_ids = np.asarray(src_ids)
        key_mask = np.asarray(src_mask, dtype=bool)[:, None, None, :]
        x = self._embed(self.src_embed, src_ids)
        for i in range(self.config.num_layers):
            p = f"enc.{i}"
            x = T.add(x, self._drop(self._self_attn(x, key_mask, p)))
            x = T.add(x, self._drop(self._ff(self._ln(x, f"{p}.ln2"), f"{p}.ff")))
        return self._ln(x, "enc.ln_final")

    def _self_attn(self, x, mask, p):
        h = self._ln(x, f"{p}.ln1")
        return self._mha(h, h, mask, f"{p}.self")

    def decode(self, memory, src_mask, tgt_ids, tgt_mask=None):
        """Logits ``[B, T_tgt, V]`` given encoder output ``memory``."""
        tgt_ids = np.asarray(tgt_ids)
        t = tgt_ids.shape[1]
        self_mask = causal_mask(t)[None, None, :, :]
        if tgt_mask is not None:
            self_mask = self_mask & np.asarray(tgt_mask, dtype=bool)[:, None, None, :]
        cross_mask = np.asarray(src_mask, dtype=bool)[:, None, None, :]
        y = self._embed(self.tgt_embed, tgt_ids)
        for i in range(self.config.num_layers):
            p = f"dec.{i}"
            y = T.add(y, self._drop(self._self_attn(y, self_mask, p)))
            y = T.add(y, self._drop(self._mha(self._ln(y, f"{p}.ln2"), memory, cross_mask, f"{p}.cross")))
            y = T.add(y, self._drop(self._ff(self._ln(y, f"{p}.ln3"), f"{p}.ff")))
        y = self._ln(y, "dec.ln_final")
        if self.config.tie_embeddings:
            # tied output: rescale so initial logits stay near zero
            y = T.scale(y, self.config.d_model ** -0.5)
            return T.matmul(y, T.transpose(self.tgt_embed))
        return T.matmul(y, self.params["out_proj"])

    def forward(self, src_ids, src_mask, tgt_ids, tgt_mask=None):
        memory = self.encode(src_ids, src_mask)
        return self.decode(memory, src_mask, tgt_ids, tgt_mask)

    __call__ = forward

    def loss(self, batch_or_src, src_mask=None, tgt_ids=None, tgt_mask=None, label_smoothing=None):
        """Teacher-forced cross-entropy: predict ``tgt[:, 1:]`` from ``tgt[:, :-1]``."""
        if src_mask is None:
            b = batch_or_src
            src_ids, src_mask, tgt_ids, tgt_mask = b.source_ids, b.source_mask, b.target_ids, b.target_mask
        else:
            src_ids = batch_or_src
        tgt_ids = np.asarray(tgt_ids)
        tgt_mask = np.asarray(tgt_mask, dtype=bool)
        ls = self.config.label_smoothing if label_smoothing is None else label_smoothing
        logits = self.forward(src_ids, src_mask, tgt_ids[:, :-1], tgt_mask[:, :-1])
        gold = np.where(tgt_mask[:, 1:], tgt_ids[:, 1:], -100)
        flat = T.reshape(logits, (-1, self.config.vocab_size))
        return T.cross_entropy(flat, gold.reshape(-1), ls, ignore_id=-100)

    # ------------------------------------------------------------- decoding

    def scorer(self, src_ids):
        return _ModelScorer(self, src_ids)


class _ModelScorer:
    """Next-token log-probabilities for decoding one source sentence."""

    def __init__(self, model: TransformerModel, src_ids):
        self.model = model
        src = np.asarray(src_ids, dtype=np.int64).reshape(1, -1)
        self.src_mask = np.ones_like(src, dtype=bool)
        was = model.training
        model.eval()
        try:
            self.memory = model.encode(src, self.src_mask)
        finally:
            model.train(was)
        self.vocab_size = model.config.vocab_size
        self.max_len = model.config.max_len

    def log_probs(self, prefixes):
        """``prefixes``: equal-length id lists starting with <s>; returns ``[n, V]``."""
        prefixes = np.asarray(prefixes, dtype=np.int64)
        n = prefixes.shape[0]
        mem = Tensor(np.broadcast_to(self.memory.data, (n, *self.memory.shape[1:])), dtype=self.model.dtype)
        mask = np.broadcast_to(self.src_mask, (n, self.src_mask.shape[1]))
        was = self.model.training
        self.model.eval()
        try:
            logits = self.model.decode(mem, mask, prefixes).data[:, -1, :]
        finally:
            self.model.train(was)
        return T.log_softmax_array(logits.astype(np.float64), axis=-1)
