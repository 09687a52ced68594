"""Parameter storage and the transformer sublayers built on :mod:`htencoder.tensor`.

Layers are plain functions over a :class:`ParameterStore` and a name prefix,
so parameter paths read like ``enc.shared.layer0.attn.Wq``.
"""

from __future__ import annotations

import math
from typing import Dict, Iterator, Optional

import numpy as np

from . import tensor as T
from .errors import ConfigError, DimensionError
from .tensor import Tensor


class ParameterStore:
    """Named trainable tensors plus Adam state."""

    def __init__(self, dtype=np.float64):
        self.dtype = np.dtype(dtype)
        self.params: Dict[str, Tensor] = {}
        self.step = 0
        self.m: Dict[str, np.ndarray] = {}
        self.v: Dict[str, np.ndarray] = {}

    def add(self, name: str, value: np.ndarray) -> Tensor:
        if name in self.params:
            raise KeyError(f"parameter {name!r} already exists")
        t = Tensor(np.asarray(value, dtype=self.dtype), requires_grad=True)
        self.params[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self.params[name]

    def __contains__(self, name: str) -> bool:
        return name in self.params

    def __iter__(self) -> Iterator[str]:
        return iter(self.params)

    def __len__(self) -> int:
        return len(self.params)

    def items(self):
        return self.params.items()

    def names(self) -> list:
        return list(self.params)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def num_scalars(self) -> int:
        return sum(p.data.size for p in self.params.values())

    def rename(self, mapping: Dict[str, str]) -> "ParameterStore":
        """New store sharing the same arrays under new names (unmapped names kept)."""
        out = ParameterStore(self.dtype)
        for name, p in self.params.items():
            new = mapping.get(name, name)
            if new in out.params:
                raise KeyError(f"rename collision on {new!r}")
            out.params[new] = p
        out.step = self.step
        out.m = {mapping.get(k, k): v for k, v in self.m.items()}
        out.v = {mapping.get(k, k): v for k, v in self.v.items()}
        return out

    def copy(self) -> "ParameterStore":
        out = ParameterStore(self.dtype)
        for name, p in self.params.items():
            out.params[name] = Tensor(p.data.copy(), requires_grad=True)
        out.step = self.step
        out.m = {k: v.copy() for k, v in self.m.items()}
        out.v = {k: v.copy() for k, v in self.v.items()}
        return out


# ---------------------------------------------------------------------------
# initialisation
# ---------------------------------------------------------------------------


def _uniform(rng: np.random.Generator, fan_in: int, shape) -> np.ndarray:
    bound = 1.0 / math.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


def init_linear(store: ParameterStore, name: str, n_in: int, n_out: int, rng, bias: bool = True) -> None:
    store.add(f"{name}.W", _uniform(rng, n_in, (n_in, n_out)))
    if bias:
        store.add(f"{name}.b", np.zeros(n_out))


def init_layer_norm(store: ParameterStore, name: str, dim: int) -> None:
    store.add(f"{name}.gain", np.ones(dim))
    store.add(f"{name}.bias", np.zeros(dim))


def init_attention(store: ParameterStore, name: str, hidden: int, rng) -> None:
    for proj in ("q", "k", "v", "o"):
        store.add(f"{name}.W{proj}", _uniform(rng, hidden, (hidden, hidden)))
        store.add(f"{name}.b{proj}", np.zeros(hidden))


def init_ffn(store: ParameterStore, name: str, hidden: int, inner: int, rng) -> None:
    init_linear(store, f"{name}.fc1", hidden, inner, rng)
    init_linear(store, f"{name}.fc2", inner, hidden, rng)


def init_encoder_layer(store, name, hidden, inner, rng) -> None:
    init_attention(store, f"{name}.attn", hidden, rng)
    init_layer_norm(store, f"{name}.ln1", hidden)
    init_ffn(store, f"{name}.ffn", hidden, inner, rng)
    init_layer_norm(store, f"{name}.ln2", hidden)


def init_decoder_layer(store, name, hidden, inner, rng) -> None:
    init_attention(store, f"{name}.self_attn", hidden, rng)
    init_layer_norm(store, f"{name}.ln1", hidden)
    init_attention(store, f"{name}.cross_attn", hidden, rng)
    init_layer_norm(store, f"{name}.ln2", hidden)
    init_ffn(store, f"{name}.ffn", hidden, inner, rng)
    init_layer_norm(store, f"{name}.ln3", hidden)


# ---------------------------------------------------------------------------
# sublayers
# ---------------------------------------------------------------------------


def linear(x: Tensor, store: ParameterStore, name: str) -> Tensor:
    out = x @ store[f"{name}.W"]
    if f"{name}.b" in store:
        out = out + store[f"{name}.b"]
    return out


def multi_head_attention(
    q_in: Tensor,
    k_in: Tensor,
    v_in: Tensor,
    mask,
    heads: int,
    store: ParameterStore,
    name: str,
    dropout: float = 0.0,
    rng: Optional[np.random.Generator] = None,
) -> Tensor:
    """Scaled dot-product attention with a shared boolean mask across heads.

    Inputs are (Lq, H)/(Lk, H) or batched (B, Lq, H)/(B, Lk, H).  ``mask`` is
    (Lq, Lk) or (B, Lq, Lk).
    """
    hidden = q_in.shape[-1]
    if hidden % heads:
        raise ConfigError(f"hidden size {hidden} is not divisible by {heads} heads")
    if k_in.shape[-1] != hidden or v_in.shape[-1] != hidden:
        raise DimensionError("query/key/value widths disagree")
    unbatched = q_in.ndim == 2
    if unbatched:
        q_in, k_in, v_in = (t.reshape(1, *t.shape) for t in (q_in, k_in, v_in))
    B, Lq, _ = q_in.shape
    Lk = k_in.shape[1]
    d = hidden // heads

    def split(x, L):
        return x.reshape(B, L, heads, d).transpose(0, 2, 1, 3)

    q = split(q_in @ store[f"{name}.Wq"] + store[f"{name}.bq"], Lq)
    k = split(k_in @ store[f"{name}.Wk"] + store[f"{name}.bk"], Lk)
    v = split(v_in @ store[f"{name}.Wv"] + store[f"{name}.bv"], Lk)
    scores = (q @ k.transpose(0, 1, 3, 2)) * (1.0 / math.sqrt(d))
    mask = np.asarray(mask, dtype=bool)
    if mask.ndim == 2:
        mask = mask[None, None]
    elif mask.ndim == 3:
        mask = mask[:, None]
    if mask.shape[-2:] != (Lq, Lk):
        raise DimensionError(f"mask shape {mask.shape[-2:]} does not match ({Lq}, {Lk})")
    weights = T.dropout(T.masked_softmax(scores, mask), dropout, rng)
    ctx = (weights @ v).transpose(0, 2, 1, 3).reshape(B, Lq, hidden)
    out = ctx @ store[f"{name}.Wo"] + store[f"{name}.bo"]
    return out.reshape(Lq, hidden) if unbatched else out


def position_wise_ffn(x: Tensor, store: ParameterStore, name: str, dropout: float = 0.0, rng=None) -> Tensor:
    h = T.relu(linear(x, store, f"{name}.fc1"))
    h = T.dropout(h, dropout, rng)
    return linear(h, store, f"{name}.fc2")


def layer_norm(x: Tensor, store: ParameterStore, name: str) -> Tensor:
    return T.layer_norm(x, store[f"{name}.gain"], store[f"{name}.bias"])


def encoder_layer(x: Tensor, mask, heads: int, store: ParameterStore, name: str, dropout=0.0, rng=None) -> Tensor:
    """Post-norm encoder layer: attention -> add & norm -> FFN -> add & norm."""
    a = multi_head_attention(x, x, x, mask, heads, store, f"{name}.attn", dropout, rng)
    x = layer_norm(x + a, store, f"{name}.ln1")
    f = position_wise_ffn(x, store, f"{name}.ffn", dropout, rng)
    return layer_norm(x + f, store, f"{name}.ln2")


def decoder_layer(y: Tensor, memory: Tensor, self_mask, cross_mask, heads: int, store, name: str, dropout=0.0, rng=None) -> Tensor:
    s = multi_head_attention(y, y, y, self_mask, heads, store, f"{name}.self_attn", dropout, rng)
    y = layer_norm(y + s, store, f"{name}.ln1")
    c = multi_head_attention(y, memory, memory, cross_mask, heads, store, f"{name}.cross_attn", dropout, rng)
    y = layer_norm(y + c, store, f"{name}.ln2")
    f = position_wise_ffn(y, store, f"{name}.ffn", dropout, rng)
    return layer_norm(y + f, store, f"{name}.ln3")
