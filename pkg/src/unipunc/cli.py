"""``unipunc`` command line: train, eval, punctuate, stats.

Exit codes: 0 success, 1 runtime/model error, 2 usage/input error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import tensor as T
from .acoustic import FeatureFileError, load_features, read_header
from .bootstrapper import Label
from .data import CorpusError, Sample, collate, corpus_stats, corpus_words, load_corpus, make_batches, render
from .encoder import Vocabulary, build_vocabulary, tokenize
from .metrics import evaluate
from .model import ModelConfig, UniPunc
from .train import CheckpointError, TrainConfig, Trainer, TrainingError, load_checkpoint

log = logging.getLogger("unipunc")


class UsageError(Exception):
    pass


class ModelError(Exception):
    pass


# flag name -> (section, config key)
OVERRIDES = {
    "lr": ("train", "base_lr"),
    "warmup": ("train", "warmup_steps"),
    "batch_size": ("train", "batch_size"),
    "max_steps": ("train", "max_steps"),
    "eval_interval": ("train", "eval_interval"),
    "seed": ("train", "seed"),
    "d_model": ("model", "d_model"),
    "heads": ("model", "heads"),
    "layers": ("model", "boot_layers"),
    "enc_layers": ("model", "enc_layers"),
    "ve_len": ("model", "ve_len"),
    "dropout": ("model", "dropout"),
}
CONFIG_KEYS = set(OVERRIDES) | {"corpus", "eval", "features_root", "vocab", "checkpoint", "out", "min_count"}


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="unipunc", description="Multimodal punctuation restoration.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON file of option values (flags take precedence)")
        p.add_argument("--features-root", help="directory feature paths are relative to")
        p.add_argument("--seed", type=int)

    p = sub.add_parser("train", help="train a model")
    common(p)
    p.add_argument("--corpus")
    p.add_argument("--eval")
    p.add_argument("--vocab", help="existing vocabulary file (default: build from --corpus)")
    p.add_argument("--min-count", type=int)
    p.add_argument("--out", help="run directory")
    p.add_argument("--checkpoint", help="checkpoint to resume from")
    p.add_argument("--lr", type=float, help="peak learning rate")
    p.add_argument("--warmup", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--max-steps", type=int)
    p.add_argument("--eval-interval", type=int)
    p.add_argument("--d-model", type=int)
    p.add_argument("--heads", type=int)
    p.add_argument("--layers", type=int, help="fusion (bootstrapper) layers")
    p.add_argument("--enc-layers", type=int)
    p.add_argument("--ve-len", type=int)
    p.add_argument("--dropout", type=float)

    p = sub.add_parser("eval", help="score a checkpoint on a corpus")
    common(p)
    p.add_argument("--corpus")
    p.add_argument("--checkpoint")
    p.add_argument("--vocab")
    p.add_argument("--json", help="write the report as JSON to this path ('-' for stdout)")
    p.add_argument("--macro", action="store_true", help="also report macro averages")
    for flag in ("--d-model", "--heads", "--layers", "--enc-layers", "--ve-len"):
        p.add_argument(flag, type=int, help="must match the checkpoint")

    p = sub.add_parser("punctuate", help="punctuate plain text lines")
    common(p)
    p.add_argument("--input", required=True, help="text file; optional TAB + feature path per line")
    p.add_argument("--checkpoint")
    p.add_argument("--vocab")
    p.add_argument("--out", help="output file (default stdout)")

    p = sub.add_parser("stats", help="corpus statistics")
    common(p)
    p.add_argument("--corpus")
    p.add_argument("--json", help="write the statistics as JSON to this path ('-' for stdout)")
    return ap


def _options(args: argparse.Namespace) -> dict:
    """Merge config file values under explicit flags."""
    opts: dict = {}
    if getattr(args, "config", None):
        path = Path(args.config)
        if not path.is_file():
            raise UsageError(f"config file not found: {path}")
        try:
            loaded = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise UsageError(f"{path}: invalid JSON ({exc.msg})") from None
        if not isinstance(loaded, dict):
            raise UsageError(f"{path}: expected a JSON object")
        unknown = set(loaded) - CONFIG_KEYS
        if unknown:
            raise UsageError(f"{path}: unknown config keys {sorted(unknown)}")
        opts.update(loaded)
    for key, value in vars(args).items():
        if value is not None and key not in ("command", "config", "verbose"):
            opts[key] = value
    return opts


def _require_file(opts: dict, key: str, what: str) -> Path:
    if not opts.get(key):
        raise UsageError(f"--{key.replace('_', '-')} is required ({what})")
    path = Path(opts[key])
    if not path.is_file():
        raise UsageError(f"{what} not found: {path}")
    return path


def _sections(opts: dict) -> tuple[dict, dict]:
    model, train = {}, {}
    for key, (section, name) in OVERRIDES.items():
        if key in opts:
            (model if section == "model" else train)[name] = opts[key]
    return model, train


def _feat_dim(samples: list[Sample], default: int = 80) -> int:
    for s in samples:
        if s.has_audio:
            return read_header(s.feature_path)[1]
    return default


def _load_model(opts: dict) -> tuple[UniPunc, Vocabulary]:
    ckpt_path = _require_file(opts, "checkpoint", "checkpoint")
    vocab_path = Path(opts.get("vocab") or ckpt_path.parent / "vocab.txt")
    if not vocab_path.is_file():
        raise UsageError(f"vocabulary not found: {vocab_path}")
    ckpt = load_checkpoint(ckpt_path)
    cfg = ModelConfig.from_dict(ckpt.meta["model"])
    model_over, _ = _sections(opts)
    clash = {k: (v, getattr(cfg, k)) for k, v in model_over.items() if getattr(cfg, k) != v}
    if clash:
        detail = ", ".join(f"{k}: requested {a}, checkpoint {b}" for k, (a, b) in clash.items())
        raise ModelError(f"configuration does not match checkpoint ({detail})")
    vocab = Vocabulary.load(vocab_path)
    if len(vocab) != cfg.vocab_size:
        raise ModelError(f"vocabulary has {len(vocab)} entries, checkpoint expects {cfg.vocab_size}")
    model = UniPunc(cfg)
    ckpt.restore(model.params)
    return model, vocab


def _emit_json(target: str, payload: str) -> None:
    if target == "-":
        print(payload)
    else:
        Path(target).write_text(payload + "\n", encoding="utf-8")


def cmd_train(opts: dict) -> int:
    corpus_path = _require_file(opts, "corpus", "training corpus")
    eval_path = _require_file(opts, "eval", "evaluation corpus") if opts.get("eval") else None
    if not opts.get("out"):
        raise UsageError("--out is required (run directory)")
    out = Path(opts["out"])
    if opts.get("vocab"):
        vocab = Vocabulary.load(_require_file(opts, "vocab", "vocabulary"))
    else:
        vocab = build_vocabulary(corpus_words(corpus_path), opts.get("min_count", 1))
    root = opts.get("features_root")
    train_samples = load_corpus(corpus_path, vocab, root)
    eval_samples = load_corpus(eval_path, vocab, root) if eval_path else None
    model_over, train_over = _sections(opts)
    cfg = ModelConfig(vocab_size=len(vocab), feat_dim=_feat_dim(train_samples), **model_over)
    tcfg = TrainConfig(**train_over)
    out.mkdir(parents=True, exist_ok=True)
    vocab.save(out / "vocab.txt")
    (out / "config.json").write_text(
        json.dumps({"model": cfg.to_dict(), "train": vars(tcfg)}, indent=2, default=list) + "\n",
        encoding="utf-8")
    model = UniPunc(cfg, seed=tcfg.seed)
    trainer = Trainer(model, tcfg, train_samples, eval_samples, out)
    if opts.get("checkpoint"):
        trainer.resume(_require_file(opts, "checkpoint", "checkpoint"))
    metrics_path = out / "metrics.jsonl"
    mode = "a" if opts.get("checkpoint") else "w"
    try:
        with open(metrics_path, mode, encoding="utf-8") as fh:
            def on_log(record):
                fh.write(json.dumps(record, sort_keys=True) + "\n")
                fh.flush()
            trainer.run(on_log)
    finally:
        for tmp in out.glob("*.upck.tmp"):
            tmp.unlink()
    print(f"trained {trainer.step} steps; best overall F1 {max(trainer.best_f1, 0.0):.4f}; outputs in {out}")
    return 0


def cmd_eval(opts: dict) -> int:
    corpus_path = _require_file(opts, "corpus", "evaluation corpus")
    model, vocab = _load_model(opts)
    samples = load_corpus(corpus_path, vocab, opts.get("features_root"))
    rep = evaluate(model, make_batches(samples, 16))
    macro = bool(opts.get("macro"))
    print(rep.table(macro))
    if opts.get("json"):
        _emit_json(opts["json"], rep.to_json(macro))
    return 0


def cmd_punctuate(opts: dict) -> int:
    in_path = _require_file(opts, "input", "input text")
    model, vocab = _load_model(opts)
    root = Path(opts["features_root"]) if opts.get("features_root") else in_path.parent
    lines_out = []
    with open(in_path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            text, _, feat = line.rstrip("\n").partition("\t")
            words = text.lower().split()
            if not words:
                log.warning("%s:%d: empty line skipped", in_path, lineno)
                continue
            feat_path = str(root / feat.strip()) if feat.strip() else None
            try:
                features = load_features(feat_path) if feat_path else None
            except (OSError, ValueError) as exc:
                raise UsageError(f"{in_path}:{lineno}: {exc}") from None
            sample = Sample(tokenize(" ".join(words), vocab), (Label.NONE,) * len(words), feat_path, features)
            labels = model.predict(collate([sample]))[0]
            lines_out.append(render(words, labels))
    text = "".join(l + "\n" for l in lines_out)
    if opts.get("out"):
        Path(opts["out"]).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return 0


def cmd_stats(opts: dict) -> int:
    corpus_path = _require_file(opts, "corpus", "corpus")
    vocab = build_vocabulary(corpus_words(corpus_path))
    stats = corpus_stats(load_corpus(corpus_path, vocab, opts.get("features_root"), load_audio=False))
    print(stats.table())
    if opts.get("json"):
        _emit_json(opts["json"], json.dumps(stats.as_dict(), indent=2))
    return 0


COMMANDS = {"train": cmd_train, "eval": cmd_eval, "punctuate": cmd_punctuate, "stats": cmd_stats}


def main(argv=None) -> int:
    parser = _parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](_options(args))
    except (UsageError, CorpusError, FeatureFileError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ModelError, CheckpointError, TrainingError, T.NonFiniteError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
