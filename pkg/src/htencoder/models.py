"""Response-generation models built around the hierarchical encoder.

One token-embedding table is shared by the encoder and every decoder.
Single-decoder variants keep their decoder under ``dec``; the joint model
has ``dec_belief``, ``dec_act`` and ``dec_resp`` plus three weight-only link
maps that carry mean token embeddings between them.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, Optional, Tuple

import numpy as np

from . import nn
from . import tensor as T
from .config import ModelConfig, ModelVariant
from .corpus import PAD, SOS, ContextBatch
from .encoder import EncodedContext, encode, init_encoder
from .errors import ConfigError, DimensionError, NonFiniteError
from .masking import causal_mask, pe_table
from .nn import ParameterStore
from .optim import AdamConfig, adam_step
from .tensor import Tensor

JOINT_DECODERS = ("dec_belief", "dec_act", "dec_resp")
JOINT_LINKS = ("link.belief_act", "link.belief_resp", "link.act_resp")


@dataclass
class JointOutput:
    belief_logits: Tensor
    act_logits: Tensor
    response_logits: Tensor


def mean_token_embedding(token_ids, table: Tensor, pad_id: Optional[int] = PAD) -> Tensor:
    """Average embedding rows of ``token_ids``.

    A 1-D sequence gives an (E,) tensor; a padded (B, T) batch gives (B, 1, E)
    with ``pad_id`` entries excluded.
    """
    ids = np.asarray(token_ids, dtype=np.int64)
    single = ids.ndim == 1
    ids2 = ids[None] if single else ids
    valid = np.ones(ids2.shape, dtype=bool) if pad_id is None else ids2 != pad_id
    counts = valid.sum(axis=1)
    if ids2.shape[1] == 0 or np.any(counts == 0):
        raise ValueError("mean of an empty token sequence")
    weights = (valid / counts[:, None])[..., None].astype(table.dtype)
    out = (T.embedding(table, ids2) * Tensor(weights)).sum(axis=1, keepdims=True)
    return out.reshape(table.shape[1]) if single else out


def _tile(x: Tensor, n: int) -> Tensor:
    """Broadcast a batch-1 tensor to batch n (differentiable)."""
    if x.shape[0] == n:
        return x
    if x.shape[0] != 1:
        raise DimensionError(f"cannot tile batch {x.shape[0]} to {n}")
    return x + Tensor(np.zeros((n,) + (1,) * (x.ndim - 1), dtype=x.dtype))


class DialogModel:
    """A model variant plus its parameters."""

    def __init__(self, cfg: ModelConfig, seed: int = 0, store: Optional[ParameterStore] = None):
        cfg.validate()
        self.cfg = cfg
        self.enc_cfg = cfg.encoder_config()
        if store is None:
            store = ParameterStore(np.dtype(cfg.dtype))
            self._init_params(store, np.random.default_rng(seed))
        self.store = store

    # -- parameters ---------------------------------------------------------

    @property
    def decoders(self) -> Tuple[str, ...]:
        return JOINT_DECODERS if self.cfg.variant.joint else ("dec",)

    def _init_params(self, store: ParameterStore, rng) -> None:
        c = self.cfg
        store.add("emb.tokens", rng.uniform(-1.0, 1.0, size=(c.vocab_size, c.embed)))
        init_encoder(store, self.enc_cfg, rng, "enc")
        for name in self.decoders:
            if c.embed != c.hidden:
                nn.init_linear(store, f"{name}.in_proj", c.embed, c.hidden, rng)
            for i in range(c.n_decoder):
                nn.init_decoder_layer(store, f"{name}.layer{i}", c.hidden, c.ffn_inner, rng)
            nn.init_linear(store, f"{name}.out", c.hidden, c.vocab_size, rng)
        if c.variant.act_conditioning:
            nn.init_linear(store, "act_emb", c.act_dim, c.embed, rng)
        if c.variant.joint:
            for link in JOINT_LINKS:
                nn.init_linear(store, link, c.embed, c.embed, rng, bias=False)

    @property
    def table(self) -> Tensor:
        return self.store["emb.tokens"]

    # -- forward pieces -----------------------------------------------------

    def encode(self, batch: ContextBatch, rng=None, capture: bool = False) -> EncodedContext:
        if batch.ids.shape[1] > self.cfg.max_context_len:
            raise DimensionError(
                f"context of {batch.ids.shape[1]} tokens exceeds max_context_len={self.cfg.max_context_len}"
            )
        x = T.embedding(self.table, batch.ids)
        masks = None
        if self.cfg.m_shared or self.cfg.n_context:
            ut = batch.masks(None) if self.cfg.m_shared else None
            ct = batch.masks(self.cfg.ct_scheme) if self.cfg.n_context else None
            masks = (ut, ct)
        return encode(x, batch.layouts, self.enc_cfg, self.store, "enc", rng, capture, masks)

    def embed_act(self, act) -> Tensor:
        """Affine act embedding: (act_dim,) -> (E,), or (B, act_dim) -> (B, 1, E)."""
        act = np.asarray(act, dtype=self.store.dtype)
        if act.shape[-1] != self.cfg.act_dim:
            raise DimensionError(f"act vector has {act.shape[-1]} entries, expected {self.cfg.act_dim}")
        single = act.ndim == 1
        out = nn.linear(Tensor(act.reshape(-1, 1, self.cfg.act_dim)), self.store, "act_emb")
        return out.reshape(self.cfg.embed) if single else out

    def decode(self, name: str, enc: EncodedContext, prefix_ids, cond: Optional[Tensor] = None, rng=None) -> Tensor:
        """Logits (B, T, V) for every prefix position of decoder ``name``."""
        c = self.cfg
        ids = np.atleast_2d(np.asarray(prefix_ids, dtype=np.int64))
        B, Tn = ids.shape
        if Tn == 0:
            raise DimensionError("empty decoder prefix")
        if np.any(ids[:, 0] != SOS):
            raise ValueError("decoder prefix must start with the start-of-sequence token")
        memory = _tile(enc.hidden, B)
        key_valid = enc.key_valid if enc.key_valid.shape[0] == B else np.repeat(enc.key_valid, B, axis=0)
        y = T.embedding(self.table, ids)
        if cond is not None:
            y = y + cond
        y = y + Tensor(pe_table(np.arange(Tn), c.embed).astype(y.dtype))
        if c.embed != c.hidden:
            y = nn.linear(y, self.store, f"{name}.in_proj")
        self_mask = causal_mask(Tn)
        cross_mask = np.broadcast_to(key_valid[:, None, :], (B, Tn, key_valid.shape[1]))
        for i in range(c.n_decoder):
            y = nn.decoder_layer(y, memory, self_mask, cross_mask, c.heads, self.store, f"{name}.layer{i}", c.dropout, rng)
        return nn.linear(y, self.store, f"{name}.out")

    def forward_response(self, batch: ContextBatch, target_prefix=None, act=None, rng=None,
                         enc: Optional[EncodedContext] = None) -> Tensor:
        """Next-token logits for the response decoder of a single-decoder variant.

        ``act`` defaults to the batch's act vectors for act-conditioned variants.
        """
        if self.cfg.variant.joint:
            raise ConfigError("use forward_joint for the joint model")
        if enc is None:
            enc = self.encode(batch, rng)
        prefix = batch.response_in if target_prefix is None else target_prefix
        cond = None
        if self.cfg.variant.act_conditioning:
            act = batch.acts if act is None else act
            if act is None:
                raise ValueError(f"{self.cfg.variant.value} needs an act vector")
            cond = self.embed_act(np.atleast_2d(act))
        return self.decode("dec", enc, prefix, cond, rng)

    def link_conditions(self, belief_seq, act_seq) -> Tuple[Tensor, Tensor]:
        """Decoder-input offsets for the act and response decoders."""
        mb = mean_token_embedding(np.atleast_2d(belief_seq), self.table)
        ma = mean_token_embedding(np.atleast_2d(act_seq), self.table)
        s = self.store
        act_cond = mb @ s["link.belief_act.W"]
        resp_cond = mb @ s["link.belief_resp.W"] + ma @ s["link.act_resp.W"]
        return act_cond, resp_cond

    def forward_joint(self, batch: ContextBatch, belief_prefix=None, act_prefix=None, response_prefix=None,
                      belief_seq=None, act_seq=None, rng=None, enc: Optional[EncodedContext] = None) -> JointOutput:
        """Logits of all three decoders from one encoder pass.

        The mean-embedding links use ``belief_seq``/``act_seq`` when given
        (decoded sequences at inference), else the batch's gold targets.
        """
        if not self.cfg.variant.joint:
            raise ConfigError(f"{self.cfg.variant.value} is not a joint model")
        if enc is None:
            enc = self.encode(batch, rng)
        belief_prefix = batch.belief_in if belief_prefix is None else belief_prefix
        act_prefix = batch.act_in if act_prefix is None else act_prefix
        response_prefix = batch.response_in if response_prefix is None else response_prefix
        belief_seq = batch.belief_out if belief_seq is None else belief_seq
        act_seq = batch.act_out if act_seq is None else act_seq
        act_cond, resp_cond = self.link_conditions(belief_seq, act_seq)
        return JointOutput(
            self.decode("dec_belief", enc, belief_prefix, None, rng),
            self.decode("dec_act", enc, act_prefix, act_cond, rng),
            self.decode("dec_resp", enc, response_prefix, resp_cond, rng),
        )

    # -- training -------------------------------------------------------------

    def loss(self, batch: ContextBatch, rng=None) -> Tuple[Tensor, Dict[str, float]]:
        if self.cfg.variant.joint:
            out = self.forward_joint(batch, rng=rng)
            parts = {
                "belief": T.cross_entropy(out.belief_logits, batch.belief_out, PAD),
                "act": T.cross_entropy(out.act_logits, batch.act_out, PAD),
                "response": T.cross_entropy(out.response_logits, batch.response_out, PAD),
            }
            total = parts["belief"] + parts["act"] + parts["response"]
        else:
            logits = self.forward_response(batch, rng=rng)
            total = T.cross_entropy(logits, batch.response_out, PAD)
            parts = {"response": total}
        return total, {k: v.item() for k, v in parts.items()}


def build_model(variant_or_cfg, seed: int = 0, strict_bounds: bool = False, **overrides) -> DialogModel:
    """Model from a ModelConfig, or from a variant name using its preset."""
    from .config import preset

    cfg = variant_or_cfg if isinstance(variant_or_cfg, ModelConfig) else preset(variant_or_cfg, **overrides)
    cfg.validate(strict_bounds=strict_bounds)
    return DialogModel(cfg, seed=seed)


def training_step(model: DialogModel, batch: ContextBatch, opt: AdamConfig = AdamConfig(), rng=None) -> Dict[str, float]:
    """Forward, backward and one Adam update; returns the loss components."""
    model.store.zero_grad()
    try:
        total, parts = model.loss(batch, rng)
    except NonFiniteError as exc:
        raise NonFiniteError(f"training step {model.store.step + 1}: {exc}") from exc
    T.backward(total)
    adam_step(model.store, opt.lr, (opt.beta1, opt.beta2), opt.eps)
    parts["loss"] = total.item()
    return parts
