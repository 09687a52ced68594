"""BLEU, Entity-F1, Inform/Success and the combined score.

Inform and Success are simplified, annotation-driven versions: a dialog is
informed when its generated responses jointly mention every goal entity, and
successful when it is informed and every requested slot shows up as a
``[<domain>_<slot>]`` placeholder.
"""

from __future__ import annotations

import json
import math
import re
from collections import Counter
from dataclasses import asdict, dataclass, field
from typing import Iterable, List, Optional, Sequence, Set

from .errors import AnnotationError

PLACEHOLDER = re.compile(r"^\[[^\[\]]+\]$")


@dataclass
class EvalReport:
    bleu: float
    entity_f1: float
    inform: float
    success: float
    score: float = field(init=False)
    n_turns: int = 0
    n_dialogs: int = 0

    def __post_init__(self):
        self.score = combined_score(self.bleu, self.inform, self.success)

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def table(self) -> str:
        head = f"{'BLEU':>8} {'Entity-F1':>10} {'Inform':>8} {'Success':>8} {'Score':>8}"
        row = f"{self.bleu:8.2f} {self.entity_f1:10.2f} {self.inform:8.2f} {self.success:8.2f} {self.score:8.2f}"
        return head + "\n" + row


def combined_score(bleu: float, inform: float, success: float) -> float:
    return bleu + 0.5 * (inform + success)


def _ngrams(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def bleu(references: Sequence[Sequence[str]], hypotheses: Sequence[Sequence[str]], max_n: int = 4) -> float:
    """Corpus BLEU-4 (uniform weights, clipped counts, brevity penalty, no smoothing), 0-100."""
    if len(references) != len(hypotheses):
        raise ValueError("references and hypotheses differ in length")
    if not hypotheses:
        raise ValueError("empty hypothesis set")
    matches = [0] * max_n
    totals = [0] * max_n
    ref_len = hyp_len = 0
    for ref, hyp in zip(references, hypotheses):
        ref_len += len(ref)
        hyp_len += len(hyp)
        for n in range(1, max_n + 1):
            h = _ngrams(hyp, n)
            r = _ngrams(ref, n)
            matches[n - 1] += sum(min(c, r[g]) for g, c in h.items())
            totals[n - 1] += max(len(hyp) - n + 1, 0)
    if hyp_len == 0 or min(matches) == 0:
        return 0.0
    log_p = sum(math.log(m / t) for m, t in zip(matches, totals)) / max_n
    bp = 1.0 if hyp_len > ref_len else math.exp(1.0 - ref_len / hyp_len)
    return 100.0 * bp * math.exp(log_p)


def extract_entities(tokens: Iterable[str], lexicon: Optional[Set[str]] = None) -> List[str]:
    if lexicon is None:
        return [t for t in tokens if PLACEHOLDER.match(t)]
    return [t for t in tokens if t in lexicon]


def entity_f1(references, hypotheses, entity_lexicon: Optional[Set[str]] = None) -> float:
    """Micro-averaged F1 over entity multisets; 100 when neither side has entities."""
    tp = n_hyp = n_ref = 0
    for ref, hyp in zip(references, hypotheses):
        r = Counter(extract_entities(ref, entity_lexicon))
        h = Counter(extract_entities(hyp, entity_lexicon))
        tp += sum((r & h).values())
        n_ref += sum(r.values())
        n_hyp += sum(h.values())
    if n_ref == 0 and n_hyp == 0:
        return 100.0
    if tp == 0:
        return 0.0
    p, r = tp / n_hyp, tp / n_ref
    return 100.0 * 2 * p * r / (p + r)


@dataclass
class DialogResult:
    dialog_id: str
    responses: List[List[str]]
    goal_entities: Optional[Set[str]]
    requested: Optional[Set[str]] = None

    def mentioned(self) -> Set[str]:
        return {t for r in self.responses for t in r}


def _check(results: Sequence[DialogResult], need_requested: bool) -> None:
    for res in results:
        if res.goal_entities is None:
            raise AnnotationError(f"dialog {res.dialog_id}: no goal_entities annotation")
        if need_requested and res.requested is None:
            raise AnnotationError(f"dialog {res.dialog_id}: no requested-slot annotation")


def is_informed(res: DialogResult) -> bool:
    return set(res.goal_entities) <= res.mentioned()


def slot_mentioned(slot: str, tokens: Set[str]) -> bool:
    return any(PLACEHOLDER.match(t) and (t[1:-1] == slot or t[1:-1].endswith("_" + slot)) for t in tokens)


def is_successful(res: DialogResult) -> bool:
    mentioned = res.mentioned()
    return is_informed(res) and all(slot_mentioned(s, mentioned) for s in res.requested)


def inform_rate(results: Sequence[DialogResult]) -> float:
    _check(results, need_requested=False)
    if not results:
        return 0.0
    return 100.0 * sum(is_informed(r) for r in results) / len(results)


def success_rate(results: Sequence[DialogResult]) -> float:
    """Informed dialogs that also mention every requested slot (unannotated = no requests)."""
    _check(results, need_requested=False)
    if not results:
        return 0.0
    fixed = [r if r.requested is not None else DialogResult(r.dialog_id, r.responses, r.goal_entities, set())
             for r in results]
    return 100.0 * sum(is_successful(r) for r in fixed) / len(fixed)
