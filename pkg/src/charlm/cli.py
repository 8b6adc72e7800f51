"""Command line entry point: ``charlm <subcommand> ...``.

Exit codes: 0 success, 1 runtime failure, 2 usage error.
"""
import argparse
import difflib
import hashlib
import json
import os
import sys
import time
from pathlib import Path

from . import __version__
from .checkpoint import load_checkpoint, restore_model
from .corpus import (DEFAULT_MIN_COUNT, DEFAULT_VAL_FRACTION, build_corpus, load_corpus,
                     split_stream, write_corpus)
from .errors import CharLMError
from .generation import DEFAULT_TEMPERATURE, SamplerConfig, generate
from .presets import PRESETS, load_preset
from .training import evaluate, train
from .validator import score, validate_text

RUN_MANIFEST = "run_manifest.json"

# flag -> config field for `train` overrides
TRAIN_FLAGS = {
    "--seq-len": ("seq_len", int),
    "--batch-size": ("batch_size", int),
    "--layers": ("num_layers", int),
    "--embedding": ("embedding_dim", int),
    "--hidden": ("hidden_dim", int),
    "--heads": ("num_heads", int),
    "--dropout": ("dropout", float),
    "--mem-len": ("mem_len", int),
    "--ffn": ("ffn_dim", int),
    "--lr": ("lr", float),
    "--schedule": ("schedule", str),
    "--warmup": ("warmup_steps", int),
    "--clip": ("clip_norm", float),
    "--val-fraction": ("val_fraction", float),
    "--eval-interval": ("eval_interval", int),
    "--log-interval": ("log_interval", int),
    "--checkpoint-interval": ("checkpoint_interval", int),
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """Raises instead of exiting so dispatch owns the exit code."""

    def error(self, message):
        raise UsageError(f"{self.prog}: error: {message}")


def _suggest(message, parser):
    if "unrecognized arguments" not in message:
        return message
    known = set()
    stack = [parser]
    while stack:
        p = stack.pop()
        for action in p._actions:
            known.update(action.option_strings)
            if isinstance(action, argparse._SubParsersAction):
                stack.extend(action.choices.values())
    bad = message.split("unrecognized arguments:", 1)[1].split()
    hints = []
    for token in bad:
        flag = token.split("=", 1)[0]
        close = difflib.get_close_matches(flag, sorted(known), n=1)
        if close:
            hints.append(f"did you mean {close[0]!r} instead of {flag!r}?")
    return "\n".join([message] + hints)


def determinism_requested(args=None):
    return bool(getattr(args, "deterministic", False)) or os.environ.get("CHARLM_DETERMINISM") == "1"


def file_digest(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def tree_digests(directory, pattern="**/*"):
    root = Path(directory)
    return {p.relative_to(root).as_posix(): file_digest(p)
            for p in sorted(root.glob(pattern)) if p.is_file()}


def write_run_manifest(out_dir, subcommand, config, seed, inputs, deterministic):
    manifest = {
        "subcommand": subcommand,
        "config": config,
        "seed": seed,
        "tool_version": __version__,
        "inputs": inputs,
        "deterministic": deterministic,
        "started_at": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
        "argv": sys.argv[1:],
    }
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / RUN_MANIFEST).write_text(json.dumps(manifest, indent=1, sort_keys=True))
    return manifest


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_build_corpus(args):
    config = {"min_count": args.min_count, "val_fraction": args.val_fraction}
    write_run_manifest(args.output, "build-corpus", config, None,
                       tree_digests(args.input, "**/*.tex"), determinism_requested(args))
    stream = build_corpus(args.input, min_count=args.min_count)
    write_corpus(stream, args.output, args.val_fraction)
    print(f"{len(stream)} characters, vocabulary {len(stream.vocab)}, "
          f"{len(stream.source_manifest)} documents -> {args.output}")
    return 0


def resolve_train_config(args):
    """Overlay preset < config file < command line flags."""
    overrides = {}
    if args.config_file:
        data = json.loads(Path(args.config_file).read_text())
        if not isinstance(data, dict):
            raise CharLMError("config file must hold a JSON object")
        overrides.update(data)
    for flag, (field, _) in TRAIN_FLAGS.items():
        value = getattr(args, flag[2:].replace("-", "_"))
        if value is not None:
            overrides[field] = value
    if args.steps is not None:
        overrides["steps"] = args.steps
    if args.seed is not None:
        overrides["seed"] = args.seed
    return load_preset(args.config, overrides)


def cmd_train(args):
    deterministic = determinism_requested(args)
    model_config, train_config = resolve_train_config(args)
    inputs = tree_digests(args.corpus)
    inputs["corpus_dir"] = str(Path(args.corpus).resolve())
    write_run_manifest(args.out, "train",
                       {"preset": args.config, "model": model_config.to_dict(),
                        "train": train_config.to_dict()},
                       train_config.seed, inputs, deterministic)
    stream, val_fraction = load_corpus(args.corpus)
    if "val_fraction" not in _explicit(args):
        train_config = train_config.replace(val_fraction=val_fraction)

    def report(step, ce):
        if step % train_config.log_interval == 0:
            print(f"step {step} train bpc {ce / 0.6931471805599453:.4f}", flush=True)

    result = train(model_config, train_config, stream, args.out, deterministic, report)
    best = result.best_val / 0.6931471805599453 if result.best_val < float("inf") else None
    print(f"done: {train_config.steps} steps, best validation bpc "
          f"{'n/a' if best is None else f'{best:.4f}'} -> {args.out}")
    return 0


def _explicit(args):
    fields = set()
    if args.config_file:
        fields.update(json.loads(Path(args.config_file).read_text()))
    if args.val_fraction is not None:
        fields.add("val_fraction")
    return fields


def _corpus_for(checkpoint_path, corpus_arg):
    if corpus_arg:
        return corpus_arg
    manifest = Path(checkpoint_path).parent / RUN_MANIFEST
    if manifest.exists():
        return json.loads(manifest.read_text())["inputs"]["corpus_dir"]
    raise CharLMError("no --corpus given and no run manifest next to the checkpoint")


def cmd_evaluate(args):
    stream, val_fraction = load_corpus(_corpus_for(args.checkpoint, args.corpus))
    ckpt = load_checkpoint(args.checkpoint, expected_vocab=stream.vocab)
    if ckpt.train_config is not None:
        val_fraction = ckpt.train_config.val_fraction
    train_ids, val_ids = split_stream(stream, val_fraction)
    ids = val_ids if args.split == "validation" else train_ids
    metrics = evaluate(restore_model(ckpt), ids, args.split, ckpt.step)
    print(json.dumps({"split": args.split, "step": ckpt.step, "chars": int(len(ids)),
                      "ce_nats": metrics.ce_nats, "bpc": metrics.bpc}, sort_keys=True))
    return 0


def cmd_generate(args):
    ckpt = load_checkpoint(args.checkpoint)
    sampler = SamplerConfig(temperature=args.temperature, max_chars=args.length,
                            prefix=args.prefix, seed=args.seed, greedy=args.greedy,
                            stop_sequence=args.stop)
    text = generate(restore_model(ckpt), ckpt.vocab, sampler)
    if args.output:
        Path(args.output).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text + "\n")
    if args.validate:
        report = validate_text(text)
        print("--- validation ---")
        print(report.to_json(indent=1))
    return 0


def cmd_validate(args):
    reports = []
    for path in args.files:
        text = Path(path).read_bytes().decode("utf-8")
        report = validate_text(text)
        reports.append(report)
        if args.json:
            continue
        for d in report.defects:
            print(f"{path}:{d.byte_offset}: {d.code}: {d.detail}")
    if args.json:
        doc = {"files": {p: r.to_dict() for p, r in zip(args.files, reports)}}
        if args.summary:
            doc["summary"] = score(reports)
        print(json.dumps(doc, indent=1, sort_keys=True))
    elif args.summary:
        s = score(reports)
        print(f"{s['samples']} files, {s['defects']} defects, "
              f"{s['defects_per_kb']:.3f} defects/KB, clean {s['clean_fraction']:.1%}")
        for code, n in s["histogram"].items():
            print(f"  {code}: {n}")
    return 0 if all(r.ok for r in reports) else 1


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def build_parser():
    parser = _Parser(prog="charlm", description="Character-level LaTeX language models.")
    parser.add_argument("--version", action="version", version=f"charlm {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("build-corpus", help="flatten and clean a directory of .tex files")
    p.add_argument("--input", required=True, help="directory of .tex sources")
    p.add_argument("--output", required=True, help="output directory")
    p.add_argument("--min-count", type=int, default=DEFAULT_MIN_COUNT,
                   help="drop characters seen fewer times (default %(default)s)")
    p.add_argument("--val-fraction", type=float, default=DEFAULT_VAL_FRACTION)
    p.set_defaults(func=cmd_build_corpus)

    p = sub.add_parser("train", help="train a model on a built corpus")
    p.add_argument("--config", required=True, metavar="PRESET",
                   help="preset name: " + ", ".join(sorted(PRESETS)))
    p.add_argument("--corpus", required=True, help="directory written by build-corpus")
    p.add_argument("--out", required=True, help="run directory")
    p.add_argument("--steps", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--config-file", help="JSON object of config overrides")
    p.add_argument("--deterministic", action="store_true",
                   help="single-threaded BLAS, zero elapsed times (also CHARLM_DETERMINISM=1)")
    for flag, (field, kind) in TRAIN_FLAGS.items():
        p.add_argument(flag, type=kind, help=f"override {field}")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="cross entropy and bpc of a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", choices=("train", "validation"), default="validation")
    p.add_argument("--corpus", help="corpus directory (default: from the run manifest)")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("generate", help="sample text from a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--prefix", default="")
    p.add_argument("--length", type=int, default=1000)
    p.add_argument("--temperature", type=float, default=DEFAULT_TEMPERATURE)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--greedy", action="store_true")
    p.add_argument("--stop", help="stop once this string has been generated")
    p.add_argument("--output", help="write the text here instead of stdout")
    p.add_argument("--validate", action="store_true", help="append a validator report")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("validate", help="structural LaTeX checks")
    p.add_argument("files", nargs="+", metavar="FILE")
    p.add_argument("--summary", action="store_true")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_validate)
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(_suggest(str(exc), parser), file=sys.stderr)
        return 2
    except SystemExit as exc:       # --help / --version
        return exc.code or 0
    try:
        return args.func(args)
    except (CharLMError, OSError, ValueError, KeyError) as exc:
        print(f"charlm {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
