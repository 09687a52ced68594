"""Utterance layouts, UT/CT attention masks and sinusoidal positional encodings.

Everything here is index algebra on numpy arrays; nothing is differentiable.
A mask entry ``bits[i, j]`` is True when query token ``i`` may attend key
token ``j``.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ConfigError, EmptyContextError


class CtScheme(str, enum.Enum):
    HIER = "HIER"
    HIER_CLS = "HIER_CLS"
    FULL = "FULL"

    @classmethod
    def parse(cls, name: str) -> "CtScheme":
        key = name.strip().upper().replace("-", "_")
        try:
            return cls(key)
        except ValueError:
            raise ConfigError(f"unknown CT-mask scheme {name!r}; expected one of {[s.value for s in cls]}")


@dataclass(frozen=True)
class UtteranceLayout:
    lengths: tuple
    utt_index: np.ndarray  # C_I
    rel_pos: np.ndarray  # P_I

    @property
    def total(self) -> int:
        return int(self.utt_index.size)

    @property
    def num_utterances(self) -> int:
        return len(self.lengths)

    def __eq__(self, other):
        return isinstance(other, UtteranceLayout) and self.lengths == other.lengths

    def __hash__(self):
        return hash(self.lengths)


def build_layout(lengths: Sequence[int]) -> UtteranceLayout:
    """C_I repeats utterance index i l_i times; P_I counts 0..l_i-1 within each utterance."""
    lengths = tuple(int(n) for n in lengths)
    if any(n < 0 for n in lengths):
        raise ConfigError(f"negative utterance length in {lengths}")
    if sum(lengths) == 0:
        raise EmptyContextError("context has no tokens")
    counts = np.asarray(lengths, dtype=np.int64)
    utt_index = np.repeat(np.arange(len(lengths)), counts)
    starts = np.repeat(np.cumsum(counts) - counts, counts)
    rel_pos = np.arange(utt_index.size) - starts
    return UtteranceLayout(lengths, utt_index, rel_pos)


def build_ut_mask(layout: UtteranceLayout) -> np.ndarray:
    """Block-diagonal UT-Mask via the indicator 1(2 C_IR == C_IR^T + C_IR)."""
    c = layout.utt_index
    c_ir = np.repeat(c[None, :], c.size, axis=0)
    return 2 * c_ir == (c_ir.T + c_ir)


def same_utterance_mask(layout: UtteranceLayout) -> np.ndarray:
    """Direct predicate C_I[i] == C_I[j]; the cross-check for :func:`build_ut_mask`."""
    c = layout.utt_index
    return c[:, None] == c[None, :]


def cls_positions(layout: UtteranceLayout) -> np.ndarray:
    return np.flatnonzero(layout.rel_pos == 0)


def build_ct_mask(layout: UtteranceLayout, scheme: CtScheme) -> np.ndarray:
    scheme = CtScheme(scheme)
    n = layout.total
    c = layout.utt_index
    if scheme is CtScheme.FULL:
        return np.ones((n, n), dtype=bool)
    if scheme is CtScheme.HIER:
        last = c[-1] == c
        return same_utterance_mask(layout) | last[:, None] | last[None, :]
    if any(n_i == 0 for n_i in layout.lengths):
        raise ConfigError("HIER_CLS needs a CLS token in every utterance; got a zero-length utterance")
    is_cls = layout.rel_pos == 0
    return np.where(is_cls[:, None], is_cls[None, :], same_utterance_mask(layout))


def causal_mask(n: int) -> np.ndarray:
    return np.tril(np.ones((n, n), dtype=bool))


def pad_mask(mask: np.ndarray, size: int) -> np.ndarray:
    """Embed an n x n mask into size x size; padding rows attend only themselves."""
    n = mask.shape[0]
    out = np.zeros((size, size), dtype=bool)
    out[:n, :n] = mask
    idx = np.arange(n, size)
    out[idx, idx] = True
    return out


# ---------------------------------------------------------------------------
# positional encodings
# ---------------------------------------------------------------------------


def sinusoidal_pe(positions, d: int) -> np.ndarray:
    """Row k holds sin/cos of positions[k] / 10000^(2i/d) in interleaved columns."""
    if d % 2:
        raise ConfigError(f"sinusoidal PE needs an even dimension, got {d}")
    positions = np.asarray(positions, dtype=np.int64)
    if positions.size and positions.min() < 0:
        raise ConfigError("positions must be non-negative")
    rates = np.power(10000.0, -np.arange(0, d, 2) / d)
    angles = positions[:, None].astype(np.float64) * rates[None, :]
    pe = np.empty((positions.size, d))
    pe[:, 0::2] = np.sin(angles)
    pe[:, 1::2] = np.cos(angles)
    return pe


def pe_table(positions, d: int) -> np.ndarray:
    """Sinusoidal PE for any width; odd widths drop the last column of width d+1."""
    return sinusoidal_pe(positions, d + d % 2)[:, :d]


def local_pe(layout: UtteranceLayout, d: int) -> np.ndarray:
    return pe_table(layout.rel_pos, d)


def global_pe(length: int, d: int) -> np.ndarray:
    return pe_table(np.arange(length), d)


def mask_to_text(mask: np.ndarray) -> str:
    return "\n".join(" ".join("1" if b else "0" for b in row) for row in mask)


def mask_to_bitstrings(mask: np.ndarray) -> list:
    return ["".join("1" if b else "0" for b in row) for row in mask]
