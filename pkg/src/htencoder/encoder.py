"""The hierarchical transformer encoder.

An (M+N)-layer post-norm encoder whose first M ("shared") layers run under
the block-diagonal UT-Mask with within-utterance positions, and whose last N
("context") layers run under a CT-Mask after global positions are added
again.  Parameters live under ``{prefix}.shared.layer{i}`` and
``{prefix}.context.layer{j}``.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from . import nn
from .config import HtEncoderConfig
from .errors import ConversionError, DimensionError
from .masking import (
    CtScheme,
    UtteranceLayout,
    build_ct_mask,
    build_ut_mask,
    global_pe,
    local_pe,
    pad_mask,
)
from .nn import ParameterStore
from .tensor import Tensor


@dataclass
class EncodedContext:
    hidden: Tensor  # (B, L, H)
    layouts: List[UtteranceLayout]
    key_valid: np.ndarray  # (B, L) bool
    activations: Optional[List[Tensor]] = field(default=None, repr=False)
    # output of the shared layers; only kept when capture=True and M >= 1
    phase1: Optional[Tensor] = field(default=None, repr=False)


def init_encoder(store: ParameterStore, cfg: HtEncoderConfig, rng, prefix: str = "enc") -> None:
    if cfg.embed != cfg.hidden:
        nn.init_linear(store, f"{prefix}.in_proj", cfg.embed, cfg.hidden, rng)
    for i in range(cfg.m_shared):
        nn.init_encoder_layer(store, f"{prefix}.shared.layer{i}", cfg.hidden, cfg.ffn_inner, rng)
    for j in range(cfg.n_context):
        nn.init_encoder_layer(store, f"{prefix}.context.layer{j}", cfg.hidden, cfg.ffn_inner, rng)


def batch_masks(layouts: Sequence[UtteranceLayout], length: int, scheme: Optional[CtScheme]) -> np.ndarray:
    """Stack per-example masks into (B, L, L), padding excluded from every real row.

    ``scheme=None`` gives the UT-Mask.
    """
    out = np.empty((len(layouts), length, length), dtype=bool)
    for b, lay in enumerate(layouts):
        m = build_ut_mask(lay) if scheme is None else build_ct_mask(lay, scheme)
        out[b] = pad_mask(m, length)
    return out


def _local_pe_batch(layouts, length, d) -> np.ndarray:
    out = np.zeros((len(layouts), length, d))
    for b, lay in enumerate(layouts):
        out[b, : lay.total] = local_pe(lay, d)
    return out


def encode(
    embedded: Tensor,
    layouts,
    cfg: HtEncoderConfig,
    store: ParameterStore,
    prefix: str = "enc",
    rng: Optional[np.random.Generator] = None,
    capture: bool = False,
    masks: Optional[tuple] = None,
) -> EncodedContext:
    """Run the two-phase encoder.

    ``embedded`` is (L, E) with a single layout, or (B, L, E) with one layout
    per row.  ``rng`` enables dropout; pass None for deterministic runs.
    ``masks`` may supply precomputed (ut, ct) stacks.
    """
    if isinstance(layouts, UtteranceLayout):
        layouts = [layouts]
    unbatched = embedded.ndim == 2
    x = embedded.reshape(1, *embedded.shape) if unbatched else embedded
    B, L, E = x.shape
    if len(layouts) != B:
        raise DimensionError(f"{len(layouts)} layouts for a batch of {B}")
    if E != cfg.embed:
        raise DimensionError(f"embedding width {E} != configured {cfg.embed}")
    for lay in layouts:
        if lay.total > L or (unbatched and lay.total != L):
            raise DimensionError(f"layout covers {lay.total} tokens but input has {L}")
    valid = np.zeros((B, L), dtype=bool)
    for b, lay in enumerate(layouts):
        valid[b, : lay.total] = True

    dtype = x.dtype
    if cfg.m_shared:
        x = x + Tensor(_local_pe_batch(layouts, L, E).astype(dtype))
    else:
        x = x + Tensor(global_pe(L, E).astype(dtype))
    if cfg.embed != cfg.hidden:
        x = nn.linear(x, store, f"{prefix}.in_proj")

    ut, ct = masks if masks is not None else (None, None)
    acts = [] if capture else None
    phase1 = None
    if cfg.m_shared:
        if ut is None:
            ut = batch_masks(layouts, L, None)
        for i in range(cfg.m_shared):
            x = nn.encoder_layer(x, ut, cfg.heads, store, f"{prefix}.shared.layer{i}", cfg.dropout, rng)
            if capture:
                acts.append(x)
        phase1 = x
    if cfg.n_context:
        if ct is None:
            ct = batch_masks(layouts, L, cfg.ct_scheme)
        if cfg.m_shared and cfg.pe_reinjection:
            x = x + Tensor(global_pe(L, cfg.hidden).astype(dtype))
        for j in range(cfg.n_context):
            x = nn.encoder_layer(x, ct, cfg.heads, store, f"{prefix}.context.layer{j}", cfg.dropout, rng)
            if capture:
                acts.append(x)

    if unbatched:
        x = x.reshape(L, cfg.hidden)
        if capture:
            acts = [a.reshape(L, cfg.hidden) for a in acts]
            phase1 = phase1.reshape(L, cfg.hidden) if phase1 is not None else None
    return EncodedContext(x, list(layouts), valid, acts, phase1 if capture else None)


# ---------------------------------------------------------------------------
# standard encoder and conversion
# ---------------------------------------------------------------------------


def init_standard_encoder(store, num_layers, hidden, ffn_inner, rng, prefix="enc") -> None:
    for i in range(num_layers):
        nn.init_encoder_layer(store, f"{prefix}.layer{i}", hidden, ffn_inner, rng)


def standard_encode(x: Tensor, heads: int, num_layers: int, store, prefix="enc", mask=None) -> Tensor:
    """Plain encoder over (L, H) input: absolute PE at the input, all-ones mask."""
    L, H = x.shape
    if mask is None:
        mask = np.ones((L, L), dtype=bool)
    x = x + Tensor(global_pe(L, H).astype(x.dtype))
    for i in range(num_layers):
        x = nn.encoder_layer(x, mask, heads, store, f"{prefix}.layer{i}")
    return x


_LAYER = re.compile(r"^(?P<prefix>.+?)\.layer(?P<idx>\d+)\.(?P<rest>.+)$")


def convert_standard_encoder(standard: ParameterStore, m_shared: int, n_context: int, prefix: str = "enc") -> ParameterStore:
    """Relabel layers 0..M-1 as shared and M..M+N-1 as context; arrays are shared, not copied."""
    layers = set()
    for name in standard:
        hit = _LAYER.match(name)
        if hit and hit["prefix"] == prefix:
            layers.add(int(hit["idx"]))
    if layers != set(range(m_shared + n_context)):
        raise ConversionError(
            f"standard encoder has {len(layers)} layers, expected M+N = {m_shared + n_context}"
        )
    mapping = {}
    for name in standard:
        hit = _LAYER.match(name)
        if not hit or hit["prefix"] != prefix:
            continue
        i = int(hit["idx"])
        if i < m_shared:
            mapping[name] = f"{prefix}.shared.layer{i}.{hit['rest']}"
        else:
            mapping[name] = f"{prefix}.context.layer{i - m_shared}.{hit['rest']}"
    return standard.rename(mapping)
