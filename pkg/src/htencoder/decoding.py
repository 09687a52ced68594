"""Greedy and beam-search generation."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence

import numpy as np

from .corpus import CLS, EOS, PAD, SOS, ContextBatch
from .errors import ConfigError
from .models import DialogModel
from .tensor import Tensor, log_softmax_np, no_grad

BANNED = (PAD, SOS, CLS)


@dataclass
class Hypothesis:
    tokens: List[int]  # includes the closing EOS when one was emitted
    log_prob: float
    finished: bool = True

    @property
    def response(self) -> List[int]:
        return self.tokens[:-1] if self.tokens and self.tokens[-1] == EOS else list(self.tokens)

    def score(self, length_alpha: float = 0.0) -> float:
        if length_alpha == 0.0:
            return self.log_prob
        return self.log_prob / max(len(self.tokens), 1) ** length_alpha


class Stepper:
    """Next-token log-probabilities for one context and one decoder."""

    def __init__(self, model: DialogModel, batch: ContextBatch, decoder: str = "dec",
                 cond: Optional[Tensor] = None, enc=None):
        if len(batch) != 1:
            raise ValueError("decoding works on single-example batches; use batch.take(i)")
        self.model = model
        self.decoder = decoder
        with no_grad():
            self.enc = enc if enc is not None else model.encode(batch)
            if cond is None and decoder == "dec" and model.cfg.variant.act_conditioning:
                cond = model.embed_act(batch.acts)
        self.cond = cond

    def log_probs(self, prefixes: Sequence[Sequence[int]]) -> np.ndarray:
        ids = np.array([[SOS] + list(p) for p in prefixes], dtype=np.int64)
        with no_grad():
            logits = self.model.decode(self.decoder, self.enc, ids, self.cond)
        return log_softmax_np(logits.data[:, -1, :])


def _stepper(model, batch, stepper):
    if stepper is not None:
        return stepper
    if model.cfg.variant.joint:
        raise ConfigError("joint models decode through decode_joint")
    return Stepper(model, batch)


def greedy_decode(model: DialogModel, batch: ContextBatch, max_len: int = 40, stepper: Optional[Stepper] = None) -> Hypothesis:
    """Argmax each step (lowest id wins ties) until EOS or ``max_len`` tokens."""
    if max_len < 1:
        raise ConfigError("max_len must be >= 1")
    step = _stepper(model, batch, stepper)
    tokens: List[int] = []
    total = 0.0
    for _ in range(max_len):
        lp = step.log_probs([tokens])[0]
        masked = lp.copy()
        masked[list(BANNED)] = -np.inf
        tok = int(np.argmax(masked))
        tokens.append(tok)
        total += float(lp[tok])
        if tok == EOS:
            break
    return Hypothesis(tokens, total, True)


def beam_search(model: DialogModel, batch: ContextBatch, width: int = 5, max_len: int = 40,
                length_alpha: float = 0.0, stepper: Optional[Stepper] = None) -> List[Hypothesis]:
    """Beam search; returns every retired hypothesis, best first.

    The ``width`` best expansions survive each step; those ending in EOS are
    retired to the pool, and whatever is alive at ``max_len`` is retired too.
    Ranking is ``log_prob / len**length_alpha`` with ties broken by token ids.
    """
    if width < 1:
        raise ConfigError("beam width must be >= 1")
    if max_len < 1:
        raise ConfigError("max_len must be >= 1")
    step = _stepper(model, batch, stepper)
    live = [Hypothesis([], 0.0, False)]
    pool: List[Hypothesis] = []
    for _ in range(max_len):
        lp = step.log_probs([h.tokens for h in live])
        allowed = lp.copy()
        allowed[:, list(BANNED)] = -np.inf
        cands = []
        for h, row, full in zip(live, allowed, lp):
            # per-row top `width` by (-logp, token id) is enough to fill the beam
            order = np.lexsort((np.arange(row.size), -row))[:width]
            for tok in order:
                if np.isfinite(row[tok]):
                    cands.append((h.log_prob + float(full[tok]), h.tokens + [int(tok)]))
        cands.sort(key=lambda c: (-c[0], c[1]))
        live = []
        for logp, toks in cands[:width]:
            if toks[-1] == EOS:
                pool.append(Hypothesis(toks, logp, True))
            else:
                live.append(Hypothesis(toks, logp, False))
        if not live:
            break
    pool.extend(Hypothesis(h.tokens, h.log_prob, True) for h in live)
    pool.sort(key=lambda h: (-h.score(length_alpha), h.tokens))
    return pool


def decode_joint(model: DialogModel, batch: ContextBatch, width: int = 5, max_len: int = 40,
                 length_alpha: float = 0.0) -> Dict[str, List[Hypothesis]]:
    """Belief, then act, then response; each later decoder sees the best earlier sequence."""
    if not model.cfg.variant.joint:
        raise ConfigError(f"{model.cfg.variant.value} is not a joint model")
    if len(batch) != 1:
        raise ValueError("decoding works on single-example batches")

    def run(stepper):
        if width == 1:
            return [greedy_decode(model, batch, max_len, stepper)]
        return beam_search(model, batch, width, max_len, length_alpha, stepper)

    with no_grad():
        enc = model.encode(batch)
    belief = run(Stepper(model, batch, "dec_belief", None, enc))
    with no_grad():
        act_cond, _ = model.link_conditions([belief[0].tokens], [belief[0].tokens])
    act = run(Stepper(model, batch, "dec_act", act_cond, enc))
    with no_grad():
        _, resp_cond = model.link_conditions([belief[0].tokens], [act[0].tokens])
    response = run(Stepper(model, batch, "dec_resp", resp_cond, enc))
    return {"belief": belief, "act": act, "response": response}


def generate(model: DialogModel, batch: ContextBatch, width: int = 5, max_len: int = 40,
             length_alpha: float = 0.0, greedy: bool = False) -> Dict[str, List[Hypothesis]]:
    """Uniform entry point: {'response': [...]} plus belief/act for the joint model."""
    if model.cfg.variant.joint:
        return decode_joint(model, batch, 1 if greedy else width, max_len, length_alpha)
    if greedy:
        return {"response": [greedy_decode(model, batch, max_len)]}
    return {"response": beam_search(model, batch, width, max_len, length_alpha)}


def rescore(model: DialogModel, batch: ContextBatch, tokens: Sequence[int], decoder: str = "dec",
            cond: Optional[Tensor] = None) -> float:
    """Teacher-forced log-probability of ``tokens`` (EOS included if present)."""
    if not tokens:
        return 0.0
    prefix = np.array([[SOS] + list(tokens[:-1])], dtype=np.int64)
    with no_grad():
        if decoder == "dec":
            logits = model.forward_response(batch, prefix)
        else:
            logits = model.decode(decoder, model.encode(batch), prefix, cond)
    lp = log_softmax_np(logits.data[0])
    return float(lp[np.arange(len(tokens)), list(tokens)].sum())
