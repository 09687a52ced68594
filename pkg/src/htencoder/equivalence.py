"""Self-tests: hierarchical equivalence of the shared phase and gradient checks.

The equivalence oracle encodes every utterance on its own (all-ones mask,
positions restarting at 0) with the same layer parameters and compares the
result with the rows of the batched, UT-masked run.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional

import numpy as np

from . import nn
from .config import HtEncoderConfig, ModelVariant, tiny
from .corpus import RESERVED, Example, Vocab, make_batch
from .encoder import batch_masks, encode, init_encoder
from .gradcheck import finite_difference_check
from .masking import CtScheme, build_layout, sinusoidal_pe
from .models import DialogModel
from .nn import ParameterStore
from .tensor import Tensor, no_grad

TINY_ACT_LABELS = ["restaurant", "hotel", "inform", "request", "food", "area"]


def encode_alone(x: np.ndarray, cfg: HtEncoderConfig, store: ParameterStore, prefix: str = "enc") -> np.ndarray:
    """Independent oracle: one utterance (l, H) through the shared layers without any masking."""
    n = x.shape[0]
    h = Tensor(x + sinusoidal_pe(np.arange(n), cfg.hidden))
    full = np.ones((n, n), dtype=bool)
    for i in range(cfg.m_shared):
        h = nn.encoder_layer(h, full, cfg.heads, store, f"{prefix}.shared.layer{i}")
    return h.data


def equivalence_case(rng: np.random.Generator, lengths, hidden: int, heads: int, m_shared: int,
                     corrupt: bool = False) -> float:
    """Max |phase-1 output - per-utterance oracle| for one random layout."""
    cfg = HtEncoderConfig(m_shared=m_shared, n_context=1, hidden=hidden, heads=heads, embed=hidden,
                          ffn_inner=2 * hidden, dropout=0.0, ct_scheme=CtScheme.HIER)
    store = ParameterStore()
    init_encoder(store, cfg, rng)
    layout = build_layout(lengths)
    x = rng.normal(size=(layout.total, hidden))
    masks = None
    if corrupt:
        ut = batch_masks([layout], layout.total, None)
        ut[0, -1, 0] = ut[0, 0, -1] = True  # first and last token sit in different utterances
        masks = (ut, None)
    with no_grad():
        enc = encode(Tensor(x), layout, cfg, store, capture=True, masks=masks)
    phase1 = enc.phase1.data
    worst = 0.0
    start = 0
    for n in layout.lengths:
        if n:
            with no_grad():
                alone = encode_alone(x[start : start + n], cfg, store)
            worst = max(worst, float(np.abs(phase1[start : start + n] - alone).max()))
        start += n
    return worst


def random_lengths(rng, max_utts: int = 5, max_len: int = 8, min_utts: int = 1) -> List[int]:
    while True:
        lengths = rng.integers(1, max_len + 1, size=int(rng.integers(min_utts, max_utts + 1))).tolist()
        if sum(lengths):
            return lengths


def run_equivalence(cases: int = 100, seed: int = 0, corrupt: bool = False) -> float:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(cases):
        hidden = int(rng.choice([8, 16]))
        m_shared = int(rng.integers(1, 3))
        lengths = random_lengths(rng, min_utts=2 if corrupt else 1)
        worst = max(worst, equivalence_case(rng, lengths, hidden, 2, m_shared, corrupt))
    return worst


def tiny_batch(variant, seed: int = 0, n_examples: int = 2, max_context: int = 10, vocab_size: int = 20):
    """Random tokens over a ``vocab_size`` vocabulary, contexts of at most ``max_context`` ids."""
    variant = ModelVariant.parse(variant)
    vocab = Vocab(list(RESERVED) + [f"w{i}" for i in range(vocab_size - len(RESERVED))])
    words = vocab.itos[len(RESERVED):]
    rng = np.random.default_rng(seed)
    per_utt_extra = 1 if variant.uses_cls else 0
    examples = []
    for k in range(n_examples):
        ctx, budget = [], max_context
        for _ in range(int(rng.integers(1, 4))):
            n = int(rng.integers(1, 4))
            if n + per_utt_extra > budget:
                break
            ctx.append([words[i] for i in rng.integers(len(words), size=n)])
            budget -= n + per_utt_extra
        if not ctx:
            ctx = [[words[0]]]
        resp = [words[i] for i in rng.integers(len(words), size=int(rng.integers(1, 4)))]
        belief = [words[i] for i in rng.integers(len(words), size=2)]
        act = list(rng.choice(TINY_ACT_LABELS, size=2, replace=False))
        examples.append(Example("tiny", 2 * k + 1, ctx, resp, belief, act))
    return make_batch(examples, vocab, variant, act_labels=TINY_ACT_LABELS), vocab


def tiny_model(variant, seed: int = 0) -> DialogModel:
    variant = ModelVariant.parse(variant)
    overrides = {"embed": 12} if variant.act_conditioning else {}
    return DialogModel(tiny(variant, **overrides), seed=seed)


def gradient_check_variant(variant, seed: int = 0, samples: int = 50, epsilon: float = 1e-5) -> float:
    model = tiny_model(variant, seed)
    batch, _ = tiny_batch(variant, seed)
    return finite_difference_check(lambda: model.loss(batch)[0], model.store, epsilon, samples, seed)


def run_gradient_checks(seed: int = 0, samples: int = 50) -> Dict[str, float]:
    return {v.value: gradient_check_variant(v, seed, samples) for v in ModelVariant}


@dataclass
class EquivReport:
    equivalence_dev: float
    gradient_errors: Dict[str, float] = field(default_factory=dict)
    equivalence_tol: float = 1e-9
    gradient_tol: float = 1e-4

    @property
    def passed(self) -> bool:
        return self.equivalence_dev < self.equivalence_tol and all(
            e < self.gradient_tol for e in self.gradient_errors.values()
        )

    def lines(self) -> List[str]:
        ok = self.equivalence_dev < self.equivalence_tol
        out = [f"{'PASS' if ok else 'FAIL'} hierarchical equivalence: max deviation {self.equivalence_dev:.3e} "
               f"(tol {self.equivalence_tol:g})"]
        for name, err in self.gradient_errors.items():
            tag = "PASS" if err < self.gradient_tol else "FAIL"
            out.append(f"{tag} gradient check {name}: max relative error {err:.3e} (tol {self.gradient_tol:g})")
        out.append("PASS" if self.passed else "FAIL")
        return out


def equiv_check(seed: int = 0, cases: int = 100, samples: int = 50, corrupt: bool = False,
                gradients: bool = True) -> EquivReport:
    report = EquivReport(run_equivalence(cases, seed, corrupt))
    if gradients:
        report.gradient_errors = run_gradient_checks(seed, samples)
    return report
