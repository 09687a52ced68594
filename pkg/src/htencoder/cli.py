"""Command-line entry point.

Subcommands: train, generate, evaluate, mask-dump, equiv-check, synth.
Exit codes: 0 success, 1 validation error, 2 numeric failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional

from .checkpoint import load_checkpoint, save_checkpoint
from .config import ModelVariant, desk, preset, tiny
from .corpus import (
    UNK,
    Vocab,
    build_vocab,
    default_act_labels,
    dialogs_to_examples,
    load_act_labels,
    load_dialogs,
    make_batch,
    save_dialogs,
)
from .decoding import generate
from .equivalence import equiv_check
from .errors import AlignmentError, CompatibilityError, ConfigError, HtEncoderError, NumericFailure
from .masking import CtScheme, build_ct_mask, build_layout, build_ut_mask, mask_to_bitstrings, mask_to_text
from .metrics import DialogResult, EvalReport, bleu, entity_f1, inform_rate, success_rate
from .models import DialogModel
from .synthetic import SynthConfig, generate_synthetic_corpus
from .training import TrainConfig, split_dialogs, train

log = logging.getLogger("htencoder")

EXIT_OK, EXIT_INVALID, EXIT_NUMERIC = 0, 1, 2
MAX_UNK_RATIO = 0.5
SIZES = {"full": preset, "desk": desk, "tiny": tiny}


@dataclass
class RunConfig:
    """Flat run settings; a JSON config file uses the same keys."""

    variant: str = "HIER"
    size: str = "desk"
    m_shared: Optional[int] = None
    n_context: Optional[int] = None
    n_decoder: Optional[int] = None
    hidden: Optional[int] = None
    heads: Optional[int] = None
    embed: Optional[int] = None
    ffn_inner: Optional[int] = None
    dropout: Optional[float] = None
    ct_scheme: Optional[str] = None
    pe_reinjection: Optional[bool] = None
    max_context_len: Optional[int] = None
    max_vocab: int = 1505
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    epochs: int = 30
    patience: int = 3
    batch_size: int = 16
    val_fraction: float = 0.1
    seed: int = 0
    corpus: Optional[str] = None
    act_labels: Optional[str] = None
    checkpoint: Optional[str] = None
    output: Optional[str] = None

    MODEL_KEYS = ("m_shared", "n_context", "n_decoder", "hidden", "heads", "embed", "ffn_inner",
                  "dropout", "ct_scheme", "pe_reinjection", "max_context_len")

    def model_config(self, vocab_size: int, act_dim: int, strict_bounds: bool = False):
        if self.size not in SIZES:
            raise ConfigError(f"size must be one of {sorted(SIZES)}, got {self.size!r}")
        overrides = {k: getattr(self, k) for k in self.MODEL_KEYS if getattr(self, k) is not None}
        cfg = SIZES[self.size](self.variant, vocab_size=vocab_size, act_dim=act_dim, **overrides)
        cfg.validate(strict_bounds)
        return cfg

    def train_config(self) -> TrainConfig:
        return TrainConfig(self.epochs, self.patience, self.batch_size, self.lr, self.beta1, self.beta2,
                           self.eps, self.seed)


RUN_FIELDS = {f.name for f in dataclasses.fields(RunConfig)}


def resolve_config(args: argparse.Namespace) -> RunConfig:
    """Defaults, then the JSON file, then any flag given on the command line."""
    values = {}
    if args.config:
        with open(args.config, encoding="utf-8") as fh:
            raw = json.load(fh)
        if not isinstance(raw, dict):
            raise ConfigError("config file must hold a JSON object")
        unknown = set(raw) - RUN_FIELDS
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        values.update(raw)
    for key in RUN_FIELDS:
        flag = getattr(args, key, None)
        if flag is not None:
            values[key] = flag
    return RunConfig(**values)


def _act_labels(path: Optional[str]) -> List[str]:
    return load_act_labels(path) if path else default_act_labels()


def _write_jsonl(path: Optional[str], records) -> None:
    fh = open(path, "w", encoding="utf-8") if path else sys.stdout
    try:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
    finally:
        if path:
            fh.close()


def _read_jsonl(path: str) -> List[dict]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if line.strip():
                try:
                    out.append(json.loads(line))
                except json.JSONDecodeError as exc:
                    raise AlignmentError(f"{path}:{lineno}: malformed JSON ({exc.msg})") from None
    return out


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_train(args) -> int:
    rc = resolve_config(args)
    if not rc.corpus or not rc.checkpoint:
        raise ConfigError("train needs --corpus and --checkpoint")
    dialogs = load_dialogs(rc.corpus)
    train_d, val_d = split_dialogs(dialogs, rc.val_fraction)
    if not train_d:
        raise ConfigError("no training dialogs after the validation split")
    vocab = build_vocab(train_d, rc.max_vocab)
    labels = _act_labels(rc.act_labels)
    cfg = rc.model_config(len(vocab), len(labels), args.strict_bounds)
    model = DialogModel(cfg, seed=rc.seed)
    log_path = rc.output or str(rc.checkpoint) + ".log.jsonl"
    with open(log_path, "w", encoding="utf-8") as fh:
        header = {"event": "start", "config": cfg.to_dict(), "train_dialogs": len(train_d),
                  "val_dialogs": len(val_d), "vocab_size": len(vocab), "seed": rc.seed}
        fh.write(json.dumps(header, sort_keys=True) + "\n")

        def on_epoch(entry):
            fh.write(json.dumps({"event": "epoch", **entry}, sort_keys=True) + "\n")
            fh.flush()
            print(f"epoch {entry['epoch']:3d}  train {entry['train_loss']:.4f}  "
                  f"val {'-' if entry['val_loss'] is None else format(entry['val_loss'], '.4f')}")

        result = train(model, dialogs_to_examples(train_d), dialogs_to_examples(val_d), vocab,
                       rc.train_config(), labels, on_epoch)
        model = DialogModel(cfg, store=result.best_store)
        save_checkpoint(rc.checkpoint, model, vocab, labels,
                        {"best_epoch": result.best_epoch, "best_loss": result.best_loss,
                         "val_fraction": rc.val_fraction})
        fh.write(json.dumps({"event": "end", "best_epoch": result.best_epoch, "best_loss": result.best_loss,
                             "stopped_early": result.stopped_early}, sort_keys=True) + "\n")
    print(f"best epoch {result.best_epoch} loss {result.best_loss:.4f} -> {rc.checkpoint}")
    return EXIT_OK


def check_compatible(vocab: Vocab, examples) -> None:
    """Refuse corpora the checkpoint vocabulary barely covers."""
    total = unk = 0
    for ex in examples:
        for utt in ex.context + [ex.response]:
            ids = vocab.encode(utt)
            total += len(ids)
            unk += sum(i == UNK for i in ids)
    if total and unk / total > MAX_UNK_RATIO:
        raise CompatibilityError(f"{unk}/{total} corpus tokens are unknown to the checkpoint vocabulary")


def _select_split(dialogs, split: str, fraction: float):
    if split == "all":
        return dialogs
    train_d, val_d = split_dialogs(dialogs, fraction)
    return train_d if split == "train" else val_d


def cmd_generate(args) -> int:
    model, meta = load_checkpoint(args.checkpoint)
    if not meta.get("vocab"):
        raise CompatibilityError("checkpoint carries no vocabulary")
    vocab = Vocab(meta["vocab"])
    if len(vocab) != model.cfg.vocab_size:
        raise CompatibilityError("checkpoint vocabulary does not match its embedding table")
    labels = meta.get("act_labels") or default_act_labels()
    dialogs = _select_split(load_dialogs(args.corpus), args.split, meta.get("val_fraction", 0.1))
    examples = dialogs_to_examples(dialogs)
    if args.limit is not None:
        examples = examples[: args.limit]
    check_compatible(vocab, examples)

    def run(ex):
        batch = make_batch([ex], vocab, model.cfg.variant, model.cfg.max_context_len, labels)
        out = generate(model, batch, args.width, args.max_len, args.length_alpha, args.greedy)
        rec = {
            "dialog_id": ex.dialog_id,
            "turn": ex.turn,
            "context": [" ".join(u) for u in ex.context],
            "hypotheses": [{"tokens": vocab.decode(h.tokens), "score": h.score(args.length_alpha)}
                           for h in out["response"][: args.nbest]],
        }
        for key in ("belief", "act"):
            if key in out:
                rec[key] = vocab.decode(out[key][0].tokens)
        return rec

    with ThreadPoolExecutor(max_workers=max(1, args.jobs)) as pool:
        records = list(pool.map(run, examples))
    _write_jsonl(args.output, records)
    log.info("wrote %d generations", len(records))
    return EXIT_OK


def evaluate_generations(records: List[dict], dialogs) -> EvalReport:
    by_id = {d.id: d for d in dialogs}
    refs, hyps, seen = [], [], set()
    per_dialog = {}
    for rec in records:
        did, turn = rec.get("dialog_id"), rec.get("turn")
        key = (did, turn)
        if did not in by_id:
            raise AlignmentError(f"generation for unknown dialog {did!r}")
        dialog = by_id[did]
        if not isinstance(turn, int) or not 0 <= turn < len(dialog.turns) or dialog.turns[turn].spk != "sys":
            raise AlignmentError(f"{did}: turn {turn!r} is not a system turn")
        if key in seen:
            raise AlignmentError(f"{did}: duplicate generation for turn {turn}")
        seen.add(key)
        if not rec.get("hypotheses"):
            raise AlignmentError(f"{did}/{turn}: no hypotheses")
        hyp = list(rec["hypotheses"][0]["tokens"])
        refs.append(list(dialog.turns[turn].text))
        hyps.append(hyp)
        per_dialog.setdefault(did, []).append(hyp)
    if not records:
        raise AlignmentError("no generations to evaluate")
    results = [DialogResult(did, resp, by_id[did].goal_entities, by_id[did].requested)
               for did, resp in per_dialog.items()]
    return EvalReport(bleu(refs, hyps), entity_f1(refs, hyps), inform_rate(results), success_rate(results),
                      n_turns=len(refs), n_dialogs=len(results))


def cmd_evaluate(args) -> int:
    report = evaluate_generations(_read_jsonl(args.generations), load_dialogs(args.corpus))
    if args.output:
        Path(args.output).write_text(report.to_json() + "\n", encoding="utf-8")
        Path(args.output).with_suffix(".txt").write_text(report.table() + "\n", encoding="utf-8")
    print(report.table())
    return EXIT_OK


def parse_lengths(text: str) -> List[int]:
    try:
        lengths = [int(x) for x in text.replace(" ", "").split(",") if x != ""]
    except ValueError:
        raise ConfigError(f"lengths must be comma-separated integers, got {text!r}") from None
    if not lengths:
        raise ConfigError("no lengths given")
    return lengths


def mask_dump(lengths: List[int], scheme: CtScheme) -> dict:
    layout = build_layout(lengths)
    ut = build_ut_mask(layout)
    ct = build_ct_mask(layout, scheme)
    return {
        "lengths": list(lengths),
        "scheme": scheme.value,
        "n": layout.total,
        "c_i": layout.utt_index.tolist(),
        "p_i": layout.rel_pos.tolist(),
        "ut_rows": mask_to_bitstrings(ut),
        "ct_rows": mask_to_bitstrings(ct),
        "_text": f"UT-Mask\n{mask_to_text(ut)}\n\nCT-Mask ({scheme.value})\n{mask_to_text(ct)}",
    }


def cmd_mask_dump(args) -> int:
    dump = mask_dump(parse_lengths(args.lengths), CtScheme.parse(args.scheme))
    text = dump.pop("_text")
    print(text)
    if args.json:
        Path(args.json).write_text(json.dumps(dump, sort_keys=True) + "\n", encoding="utf-8")
    return EXIT_OK


def cmd_equiv_check(args) -> int:
    if args.dropout > 0 and not args.test_mode:
        raise ConfigError("equivalence needs deterministic layers; dropout > 0 requires --test-mode "
                          "(which switches dropout off)")
    report = equiv_check(args.seed, args.cases, args.samples, args.corrupt_mask, not args.skip_gradients)
    for line in report.lines():
        print(line)
    return EXIT_OK if report.passed else EXIT_NUMERIC


def cmd_synth(args) -> int:
    dialogs = generate_synthetic_corpus(args.seed, args.n_dialogs, SynthConfig.from_json(args.grammar))
    if args.output:
        save_dialogs(dialogs, args.output)
    else:
        _write_jsonl(None, (d.to_json() for d in dialogs))
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def _bool(text: str) -> bool:
    if text.lower() in ("1", "true", "yes", "on"):
        return True
    if text.lower() in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"not a boolean: {text!r}")


class _Parser(argparse.ArgumentParser):
    """Usage errors are validation errors, so they exit 1 rather than argparse's 2."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INVALID, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="htencoder", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    t = sub.add_parser("train", help="train a variant and write the best checkpoint")
    t.add_argument("--config", help="JSON file with RunConfig keys; flags override it")
    t.add_argument("--variant", choices=[v.value for v in ModelVariant])
    t.add_argument("--size", choices=sorted(SIZES), help="base dimensions before overrides")
    for key, typ in (("m_shared", int), ("n_context", int), ("n_decoder", int), ("hidden", int),
                     ("heads", int), ("embed", int), ("ffn_inner", int), ("dropout", float),
                     ("max_context_len", int), ("max_vocab", int), ("lr", float), ("beta1", float),
                     ("beta2", float), ("eps", float), ("epochs", int), ("patience", int),
                     ("batch_size", int), ("val_fraction", float)):
        t.add_argument("--" + key.replace("_", "-"), dest=key, type=typ)
    t.add_argument("--ct-scheme", dest="ct_scheme", choices=[s.value for s in CtScheme])
    t.add_argument("--pe-reinjection", dest="pe_reinjection", type=_bool)
    t.add_argument("--corpus")
    t.add_argument("--act-labels", dest="act_labels")
    t.add_argument("--checkpoint")
    t.add_argument("--output", help="training log (JSONL); default <checkpoint>.log.jsonl")
    t.add_argument("--seed", type=int)
    t.add_argument("--strict-bounds", action="store_true", help="enforce hyper-parameter search ranges")
    t.add_argument("--jobs", type=int, default=1, help="unused by training; accepted for uniformity")
    t.set_defaults(func=cmd_train)

    g = sub.add_parser("generate", help="decode responses for every system turn")
    g.add_argument("--checkpoint", required=True)
    g.add_argument("--corpus", required=True)
    g.add_argument("--output")
    g.add_argument("--width", type=int, default=5)
    g.add_argument("--greedy", action="store_true")
    g.add_argument("--max-len", dest="max_len", type=int, default=40)
    g.add_argument("--length-alpha", dest="length_alpha", type=float, default=0.0)
    g.add_argument("--nbest", type=int, default=1, help="hypotheses kept per record")
    g.add_argument("--split", choices=("all", "train", "val"), default="all")
    g.add_argument("--limit", type=int)
    g.add_argument("--seed", type=int, default=0, help="decoding is deterministic; kept for uniformity")
    g.add_argument("--jobs", type=int, default=1)
    g.set_defaults(func=cmd_generate)

    e = sub.add_parser("evaluate", help="score generations against the corpus")
    e.add_argument("--generations", required=True)
    e.add_argument("--corpus", required=True)
    e.add_argument("--output", help="report JSON; the text table goes next to it as .txt")
    e.add_argument("--jobs", type=int, default=1)
    e.set_defaults(func=cmd_evaluate)

    m = sub.add_parser("mask-dump", help="print the UT-Mask and a CT-Mask for a layout")
    m.add_argument("--lengths", required=True, help="comma-separated utterance lengths, e.g. 0,1,2")
    m.add_argument("--scheme", default="HIER", help="HIER, HIER_CLS or FULL")
    m.add_argument("--json", help="write the JSON sidecar here")
    m.set_defaults(func=cmd_mask_dump)

    q = sub.add_parser("equiv-check", help="hierarchical-equivalence and gradient self-test")
    q.add_argument("--seed", type=int, default=0)
    q.add_argument("--cases", type=int, default=100)
    q.add_argument("--samples", type=int, default=50)
    q.add_argument("--dropout", type=float, default=0.0)
    q.add_argument("--test-mode", dest="test_mode", action="store_true", help="force dropout off")
    q.add_argument("--skip-gradients", dest="skip_gradients", action="store_true")
    q.add_argument("--corrupt-mask", dest="corrupt_mask", action="store_true", help=argparse.SUPPRESS)
    q.set_defaults(func=cmd_equiv_check)

    s = sub.add_parser("synth", help="write a synthetic task-oriented corpus")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--n-dialogs", dest="n_dialogs", type=int, default=200)
    s.add_argument("--grammar", help="JSON grammar overriding the built-in domains")
    s.add_argument("--output")
    s.set_defaults(func=cmd_synth)
    return p


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except NumericFailure as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (HtEncoderError, ValueError, OSError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
