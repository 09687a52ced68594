"""Dialog ingestion, vocabulary, per-turn examples and padded batches.

Corpus files are JSONL, one dialog per line::

    {"id": "d0", "turns": [{"spk": "user", "text": ["i", "want", ...],
                            "goal_entities": [...], "requested": [...]},
                           {"spk": "sys", "text": [...], "belief": [...], "act": [...]}]}

``text`` may also be a whitespace-separated string; it is split on load and
always written back as a token list.
"""

from __future__ import annotations

import json
import logging
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .config import ModelVariant
from .errors import AnnotationError, CorpusError
from .masking import CtScheme, UtteranceLayout, build_layout

log = logging.getLogger(__name__)

PAD, SOS, EOS, UNK, CLS = 0, 1, 2, 3, 4
RESERVED = ("[PAD]", "[SOS]", "[EOS]", "[UNK]", "[CLS]")
SPEAKERS = ("user", "sys")
_OPTIONAL = ("belief", "act", "goal_entities", "requested")


@dataclass
class Turn:
    spk: str
    text: List[str]
    belief: Optional[List[str]] = None
    act: Optional[List[str]] = None
    goal_entities: Optional[List[str]] = None
    requested: Optional[List[str]] = None

    def to_json(self) -> dict:
        d = {"spk": self.spk, "text": list(self.text)}
        for key in _OPTIONAL:
            val = getattr(self, key)
            if val is not None:
                d[key] = list(val)
        return d


@dataclass
class Dialog:
    id: str
    turns: List[Turn]

    def to_json(self) -> dict:
        return {"id": self.id, "turns": [t.to_json() for t in self.turns]}

    def _union(self, key) -> Optional[set]:
        vals = [getattr(t, key) for t in self.turns if getattr(t, key) is not None]
        if not vals:
            return None
        return set().union(*vals)

    @property
    def goal_entities(self) -> Optional[set]:
        return self._union("goal_entities")

    @property
    def requested(self) -> Optional[set]:
        return self._union("requested")


def _tokens(value, where: str) -> List[str]:
    if isinstance(value, str):
        return value.split()
    if isinstance(value, list) and all(isinstance(v, str) for v in value):
        return list(value)
    raise CorpusError(f"{where}: expected a token list or string")


def parse_dialog(record: dict, where: str = "record") -> Dialog:
    if not isinstance(record, dict) or "id" not in record or "turns" not in record:
        raise CorpusError(f"{where}: dialog needs 'id' and 'turns'")
    turns = []
    for k, raw in enumerate(record["turns"]):
        loc = f"{where}, turn {k}"
        if not isinstance(raw, dict) or "spk" not in raw or "text" not in raw:
            raise CorpusError(f"{loc}: turn needs 'spk' and 'text'")
        expected = SPEAKERS[k % 2]
        if raw["spk"] != expected:
            raise CorpusError(f"{loc}: expected speaker {expected!r}, got {raw['spk']!r} (turns alternate, user first)")
        text = _tokens(raw["text"], loc)
        if not text:
            raise CorpusError(f"{loc}: empty utterance")
        extra = set(raw) - {"spk", "text", *_OPTIONAL}
        if extra:
            raise CorpusError(f"{loc}: unknown keys {sorted(extra)}")
        opts = {key: _tokens(raw[key], f"{loc} {key}") for key in _OPTIONAL if key in raw}
        turns.append(Turn(raw["spk"], text, **opts))
    return Dialog(str(record["id"]), turns)


def load_dialogs(path) -> List[Dialog]:
    dialogs = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusError(f"{path}:{lineno}: malformed JSON ({exc.msg})") from None
            dialogs.append(parse_dialog(record, f"{path}:{lineno}"))
    return dialogs


def dialog_to_line(dialog: Dialog) -> str:
    return json.dumps(dialog.to_json(), ensure_ascii=False)


def save_dialogs(dialogs: Iterable[Dialog], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for d in dialogs:
            fh.write(dialog_to_line(d) + "\n")


# ---------------------------------------------------------------------------
# vocabulary
# ---------------------------------------------------------------------------


class Vocab:
    def __init__(self, tokens: Sequence[str]):
        tokens = list(tokens)
        if tuple(tokens[:5]) != RESERVED:
            raise CorpusError("vocabulary must start with the reserved tokens")
        if len(set(tokens)) != len(tokens):
            raise CorpusError("duplicate token in vocabulary")
        self.itos = tokens
        self.stoi = {t: i for i, t in enumerate(tokens)}

    def __len__(self):
        return len(self.itos)

    def __eq__(self, other):
        return isinstance(other, Vocab) and self.itos == other.itos

    def __contains__(self, token):
        return token in self.stoi

    def encode(self, tokens: Sequence[str]) -> List[int]:
        return [self.stoi.get(t, UNK) for t in tokens]

    def decode(self, ids: Sequence[int], strip: bool = True) -> List[str]:
        out = []
        for i in ids:
            i = int(i)
            if strip and i == EOS:
                break
            if strip and i in (PAD, SOS):
                continue
            out.append(self.itos[i])
        return out


def corpus_tokens(dialogs: Iterable[Dialog]) -> Counter:
    counts = Counter()
    for d in dialogs:
        for t in d.turns:
            counts.update(t.text)
            if t.belief:
                counts.update(t.belief)
            if t.act:
                counts.update(t.act)
    return counts


def build_vocab(dialogs: Iterable[Dialog], max_size: int = 1505) -> Vocab:
    """Most frequent tokens first, ties broken lexicographically, capped at max_size."""
    if max_size <= 5:
        raise CorpusError("max_size must exceed the 5 reserved tokens")
    counts = corpus_tokens(dialogs)
    for tok in RESERVED:
        counts.pop(tok, None)
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    keep = [tok for tok, _ in ranked[: max_size - len(RESERVED)]]
    return Vocab(list(RESERVED) + keep)


# ---------------------------------------------------------------------------
# act labels
# ---------------------------------------------------------------------------


def default_act_labels() -> List[str]:
    path = Path(__file__).with_name("data") / "act_labels.txt"
    return load_act_labels(path)


def load_act_labels(path) -> List[str]:
    labels = [ln.strip() for ln in Path(path).read_text(encoding="utf-8").splitlines()]
    labels = [ln for ln in labels if ln and not ln.startswith("#")]
    if len(set(labels)) != len(labels):
        raise CorpusError(f"{path}: duplicate act label")
    return labels


def act_vector(labels: Optional[Sequence[str]], inventory: Sequence[str]) -> np.ndarray:
    vec = np.zeros(len(inventory))
    if not labels:
        return vec
    index = {lab: i for i, lab in enumerate(inventory)}
    for lab in labels:
        if lab not in index:
            raise AnnotationError(f"act label {lab!r} not in the act inventory")
        vec[index[lab]] = 1.0
    return vec


# ---------------------------------------------------------------------------
# examples and batches
# ---------------------------------------------------------------------------


@dataclass
class Example:
    dialog_id: str
    turn: int  # index of the target system turn within dialog.turns
    context: List[List[str]]
    response: List[str]
    belief: Optional[List[str]] = None
    act: Optional[List[str]] = None


def make_examples(dialog: Dialog, turn_cutoff: Optional[int] = None) -> List[Example]:
    """One example per system turn S_t with context [U_1, S_1, ..., U_t].

    ``turn_cutoff`` keeps only the first that many examples.
    """
    out = []
    for k, turn in enumerate(dialog.turns):
        if turn.spk != "sys":
            continue
        ctx = [list(t.text) for t in dialog.turns[:k]]
        out.append(Example(dialog.id, k, ctx, list(turn.text), turn.belief, turn.act))
        if turn_cutoff is not None and len(out) >= turn_cutoff:
            break
    return out


def dialogs_to_examples(dialogs: Iterable[Dialog]) -> List[Example]:
    return [ex for d in dialogs for ex in make_examples(d)]


@dataclass
class ContextBatch:
    ids: np.ndarray  # (B, L) padded context token ids
    layouts: List[UtteranceLayout]
    response_in: np.ndarray  # (B, T) SOS + response
    response_out: np.ndarray  # (B, T) response + EOS
    acts: Optional[np.ndarray] = None  # (B, act_dim)
    belief_in: Optional[np.ndarray] = None
    belief_out: Optional[np.ndarray] = None
    act_in: Optional[np.ndarray] = None
    act_out: Optional[np.ndarray] = None
    examples: List[Example] = field(default_factory=list, repr=False)
    _masks: Dict = field(default_factory=dict, repr=False)

    def __len__(self):
        return self.ids.shape[0]

    @property
    def key_valid(self) -> np.ndarray:
        valid = np.zeros(self.ids.shape, dtype=bool)
        for b, lay in enumerate(self.layouts):
            valid[b, : lay.total] = True
        return valid

    def masks(self, scheme: Optional[CtScheme]) -> np.ndarray:
        """Padded (B, L, L) mask stack; ``None`` selects the UT-Mask.  Cached."""
        from .encoder import batch_masks

        key = None if scheme is None else CtScheme(scheme)
        if key not in self._masks:
            self._masks[key] = batch_masks(self.layouts, self.ids.shape[1], key)
        return self._masks[key]

    def take(self, index: int) -> "ContextBatch":
        """Single-example batch (no padding) for row ``index``."""
        n = self.layouts[index].total
        rows = slice(index, index + 1)

        def trim(arr):
            if arr is None:
                return None
            row = arr[rows]
            keep = int((row != PAD).sum())
            return row[:, : max(keep, 1)]

        return ContextBatch(
            ids=self.ids[rows, :n].copy(),
            layouts=[self.layouts[index]],
            response_in=trim(self.response_in),
            response_out=trim(self.response_out),
            acts=None if self.acts is None else self.acts[rows],
            belief_in=trim(self.belief_in),
            belief_out=trim(self.belief_out),
            act_in=trim(self.act_in),
            act_out=trim(self.act_out),
            examples=self.examples[rows],
        )


def _pad(rows: List[List[int]]) -> np.ndarray:
    width = max(len(r) for r in rows)
    out = np.full((len(rows), width), PAD, dtype=np.int64)
    for i, r in enumerate(rows):
        out[i, : len(r)] = r
    return out


def _truncate(utts: List[List[int]], max_len: int, where: str) -> List[List[int]]:
    total = sum(len(u) for u in utts)
    if total <= max_len:
        return utts
    utts = list(utts)
    while len(utts) > 1 and sum(len(u) for u in utts) > max_len:
        utts.pop(0)
    if sum(len(u) for u in utts) > max_len:
        utts = [utts[0][:max_len]]
    log.warning("%s: context of %d tokens truncated to %d (oldest utterances dropped)",
                where, total, sum(len(u) for u in utts))
    return utts


def encode_context(context: Sequence[Sequence[str]], vocab: Vocab, use_cls: bool,
                   max_len: Optional[int] = None, where: str = "context") -> List[List[int]]:
    utts = [([CLS] if use_cls else []) + vocab.encode(u) for u in context]
    if max_len is not None:
        utts = _truncate(utts, max_len, where)
    return utts


def seq_pair(ids: Sequence[int]) -> Tuple[List[int], List[int]]:
    """(decoder input, decoder target) for teacher forcing."""
    return [SOS] + list(ids), list(ids) + [EOS]


def make_batch(examples: Sequence[Example], vocab: Vocab, variant, max_context_len: Optional[int] = None,
               act_labels: Optional[Sequence[str]] = None) -> ContextBatch:
    variant = ModelVariant.parse(variant)
    ctx_rows, layouts, r_in, r_out = [], [], [], []
    acts, b_in, b_out, a_in, a_out = [], [], [], [], []
    for ex in examples:
        utts = encode_context(ex.context, vocab, variant.uses_cls, max_context_len,
                              f"{ex.dialog_id}/{ex.turn}")
        layouts.append(build_layout([len(u) for u in utts]))
        ctx_rows.append([i for u in utts for i in u])
        i, o = seq_pair(vocab.encode(ex.response))
        r_in.append(i)
        r_out.append(o)
        if variant.act_conditioning:
            acts.append(act_vector(ex.act, act_labels if act_labels is not None else default_act_labels()))
        if variant.joint:
            i, o = seq_pair(vocab.encode(ex.belief or []))
            b_in.append(i)
            b_out.append(o)
            i, o = seq_pair(vocab.encode(ex.act or []))
            a_in.append(i)
            a_out.append(o)
    batch = ContextBatch(ids=_pad(ctx_rows), layouts=layouts, response_in=_pad(r_in),
                         response_out=_pad(r_out), examples=list(examples))
    if variant.act_conditioning:
        batch.acts = np.stack(acts)
    if variant.joint:
        batch.belief_in, batch.belief_out = _pad(b_in), _pad(b_out)
        batch.act_in, batch.act_out = _pad(a_in), _pad(a_out)
    return batch


def batch_examples(examples: Sequence[Example], batch_size: int, vocab: Vocab, variant,
                   max_context_len: Optional[int] = None, act_labels=None) -> List[ContextBatch]:
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    return [
        make_batch(examples[i : i + batch_size], vocab, variant, max_context_len, act_labels)
        for i in range(0, len(examples), batch_size)
    ]
