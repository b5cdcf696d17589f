"""Command-line entry point: corpus generation, splitting, training,
evaluation, gradient checks, the experiment matrix, and LF tokenization.

Exit codes: 0 success, 2 usage/configuration error, 3 data or checkpoint
integrity error, 4 numeric invariant failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import subprocess
import sys
from pathlib import Path
from types import SimpleNamespace

import numpy as np

from . import model as mdl
from . import trainer as tr
from .checkpoint import (CheckpointError, load_checkpoint, restore_params,
                         save_checkpoint)
from .corpus import (ConfigurationError, DatasetError, LOGICAL_FORMS,
                     build_gazetteer, build_paragraph_context, build_templates,
                     generate_corpus, instantiate_questions, lf_tokenize,
                     read_dataset, write_dataset)
from .model import ModelConfig
from .splits import SplitAssignment, SplitError, filter_examples, \
    leakage_audit, make_assignment
from .tensor import GradientError
from .textpipe import EncodingError, Vocab
from .trainer import TrainConfig, TrainError

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_INTEGRITY = 3
EXIT_NUMERIC = 4


class CliError(Exception):
    def __init__(self, message: str, code: int = EXIT_USAGE):
        super().__init__(message)
        self.code = code


# ---------------------------------------------------------------------------
# Config plumbing: flat dotted keys, JSON file + key=value overrides.
# ---------------------------------------------------------------------------

def _parse_value(raw: str):
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        return raw


def load_overrides(config_path, sets) -> dict:
    merged: dict = {}
    if config_path:
        try:
            with open(config_path, encoding="utf-8") as fh:
                merged.update(json.load(fh))
        except (OSError, json.JSONDecodeError) as exc:
            raise CliError(f"cannot read config {config_path}: {exc}")
    for item in sets or []:
        if "=" not in item:
            raise CliError(f"--set expects key=value, got {item!r}")
        key, _, raw = item.partition("=")
        merged[key.strip()] = _parse_value(raw)
    return merged


def _apply_prefixed(cls, prefix: str, overrides: dict, **base):
    fields = {f.name for f in dataclasses.fields(cls)}
    for key, value in overrides.items():
        scope, _, name = key.partition(".")
        if scope != prefix:
            continue
        if name not in fields:
            raise CliError(f"unknown {prefix} config key {name!r}")
        base[name] = value
    try:
        return cls(**base)
    except (TypeError, ValueError) as exc:
        raise CliError(f"bad {prefix} config: {exc}")


def _git_describe() -> str:
    try:
        out = subprocess.run(
            ["git", "describe", "--always", "--dirty"],
            capture_output=True, text=True, timeout=10)
        if out.returncode == 0:
            return out.stdout.strip()
    except OSError:
        pass
    return "unknown"


def write_manifest(out_dir: Path, command: str, resolved: dict,
                   seed: int | None):
    manifest = {
        "command": command,
        "argv": sys.argv[1:],
        "resolved_config": resolved,
        "seed": seed,
        "git_describe": _git_describe(),
    }
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)


def _emit(payload: dict, as_json: bool, human: str):
    print(json.dumps(payload, sort_keys=True) if as_json else human)


# ---------------------------------------------------------------------------
# Subcommands.
# ---------------------------------------------------------------------------

def cmd_gen_data(args) -> int:
    if args.num_notes < 1:
        raise CliError("--num-notes must be positive")
    out = Path(args.out)
    notes = generate_corpus(seed=args.seed, num_notes=args.num_notes,
                            facts_per_note=args.facts_per_note,
                            distractor_rate=args.distractor_rate)
    examples = instantiate_questions(notes, build_templates())
    if args.setting == "paragraph":
        by_id = {n.note_id: n for n in notes}
        rng = np.random.default_rng(args.seed + 1)
        examples = [build_paragraph_context(ex, by_id[ex.note_id], rng)
                    for ex in examples]
    try:
        out.mkdir(parents=True, exist_ok=True)
        write_dataset(examples, out / "corpus.jsonl")
    except OSError as exc:
        raise CliError(f"cannot write to {out}: {exc}")
    build_gazetteer().save(out / "gazetteer.json")
    vocab = Vocab.build([ex.question for ex in examples]
                        + [ex.context_text for ex in examples])
    vocab.save(out / "vocab.txt")
    resolved = {"seed": args.seed, "num_notes": args.num_notes,
                "setting": args.setting,
                "facts_per_note": args.facts_per_note,
                "distractor_rate": args.distractor_rate,
                "n_examples": len(examples), "vocab_size": len(vocab)}
    write_manifest(out, "gen-data", resolved, args.seed)
    _emit(resolved, args.json,
          f"wrote {len(examples)} examples ({args.setting} setting), "
          f"vocab of {len(vocab)} to {out}")
    return EXIT_OK


def _load_examples(path):
    return list(read_dataset(path))


def cmd_split(args) -> int:
    examples = _load_examples(args.data)
    note_ids = sorted({ex.note_id for ex in examples})
    notes = [SimpleNamespace(note_id=i) for i in note_ids]
    assignment = make_assignment(notes, build_templates(), args.mode,
                                 seed=args.seed, train_frac=args.train_frac)
    train, val, test = filter_examples(examples, assignment)
    audit = leakage_audit(train, val + test, assignment)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    assignment.save(out / "split.json")
    for name, part in (("train", train), ("val", val), ("test", test)):
        with open(out / f"{name}_ids.txt", "w", encoding="utf-8") as fh:
            fh.writelines(ex.id + "\n" for ex in part)
    resolved = {"mode": args.mode, "seed": args.seed,
                "train_frac": args.train_frac,
                "sizes": {"train": len(train), "val": len(val),
                          "test": len(test)},
                "leakage": audit}
    write_manifest(out, "split", resolved, args.seed)
    _emit(resolved, args.json,
          f"split {args.mode}: train={len(train)} val={len(val)} "
          f"test={len(test)}; leakage audit: {audit}")
    return EXIT_OK


def _resolve_split(args, examples):
    assignment = SplitAssignment.load(args.split)
    return filter_examples(examples, assignment)


def _build_model_config(overrides: dict, vocab: Vocab) -> ModelConfig:
    return _apply_prefixed(ModelConfig, "model", overrides,
                           vocab_size=len(vocab))


def _build_train_config(overrides: dict, **base) -> TrainConfig:
    return _apply_prefixed(TrainConfig, "train", overrides, **base)


def cmd_train(args) -> int:
    overrides = load_overrides(args.config, args.set)
    examples = _load_examples(args.data)
    vocab = Vocab.load(args.vocab)
    model_config = _build_model_config(overrides, vocab)
    train_config = _build_train_config(overrides, seed=args.seed,
                                       system=args.system)
    train_ex, val_ex, _ = _resolve_split(args, examples)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if train_config.system == "evidence":
        rng = np.random.default_rng(train_config.seed + 3)
        train_pairs, _, _ = tr.encode_evidence_examples(
            tr.make_evidence_examples(train_ex, rng), vocab,
            model_config.max_seq_len)
        val_pairs, _, _ = tr.encode_evidence_examples(
            tr.make_evidence_examples(val_ex, rng), vocab,
            model_config.max_seq_len)
    else:
        train_pairs = tr.encode_examples(train_ex, vocab,
                                         model_config.max_seq_len)
        val_pairs = tr.encode_examples(val_ex, vocab,
                                       model_config.max_seq_len)
    result = tr.train(train_pairs, val_pairs, model_config, train_config,
                      log_path=out / "train_log.jsonl")
    result.model_config.save(out / "model_config.json")
    save_checkpoint(out / "model.ckpt", result.params,
                    result.model_config.digest())
    resolved = {"model": dataclasses.asdict(result.model_config),
                "train": dataclasses.asdict(train_config)}
    write_manifest(out, "train", resolved, train_config.seed)
    summary = {"best_val_f1": result.best_val_f1,
               "steps": len(result.log),
               "stopped_early": result.stopped_early,
               "aborted": result.aborted}
    _emit(summary, args.json,
          f"trained {train_config.system}: best val F1 "
          f"{result.best_val_f1:.4f} over {len(result.log)} steps"
          + (" [ABORTED: non-finite loss]" if result.aborted else ""))
    if result.aborted:
        raise CliError("training aborted on non-finite loss", EXIT_NUMERIC)
    return EXIT_OK


def cmd_eval(args) -> int:
    run_dir = Path(args.run)
    config = ModelConfig.load(run_dir / "model_config.json")
    arrays, digest = load_checkpoint(run_dir / "model.ckpt")
    if digest != config.digest():
        raise CliError(
            f"checkpoint/config digest mismatch: checkpoint carries "
            f"{digest}, config is {config.digest()}", EXIT_INTEGRITY)
    params = mdl.init_params(config, seed=0)
    restore_params(params, arrays)
    examples = _load_examples(args.data)
    vocab = Vocab.load(args.vocab)
    parts = dict(zip(("train", "val", "test"),
                     _resolve_split(args, examples)))
    chosen = parts[args.subset]
    if config.mode == "evidence":
        rng = np.random.default_rng(args.seed)
        pairs, _, _ = tr.encode_evidence_examples(
            tr.make_evidence_examples(chosen, rng), vocab, config.max_seq_len)
    else:
        pairs = tr.encode_examples(chosen, vocab, config.max_seq_len)
    report = tr.evaluate_pairs(params, config, pairs)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        report.save(out / "report.json")
        if report.confusion:
            report.save_confusion_csv(out / "confusion.csv")
        write_manifest(out, "eval",
                       {"run": str(run_dir), "subset": args.subset},
                       args.seed)
    print(json.dumps(report.to_json(), sort_keys=True))
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    worst_name, worst = None, 0.0
    for seed in range(args.seeds):
        report = mdl.fragment_gradchecks(seed=seed, tolerance=args.tolerance)
        for frag, frag_report in report.items():
            if frag == "all_passed":
                continue
            for pname, entry in frag_report.items():
                if pname == "all_passed":
                    continue
                if entry["max_rel_err"] > worst:
                    worst = entry["max_rel_err"]
                    worst_name = f"{frag}/{pname}"
        if not report["all_passed"]:
            _emit({"passed": False, "seed": seed, "worst": worst,
                   "worst_param": worst_name}, args.json,
                  f"gradcheck FAILED at seed {seed} "
                  f"(worst {worst:.3e} at {worst_name})")
            raise CliError("gradient check failed", EXIT_NUMERIC)
    _emit({"passed": True, "seeds": args.seeds, "worst": worst,
           "worst_param": worst_name}, args.json,
          f"gradcheck passed over {args.seeds} seeds "
          f"(worst rel err {worst:.3e} at {worst_name})")
    return EXIT_OK


def cmd_run_matrix(args) -> int:
    overrides = load_overrides(args.config, args.set)
    examples = _load_examples(args.data)
    vocab = Vocab.load(args.vocab)
    model_config = _build_model_config(overrides, vocab)
    train_config = _build_train_config(overrides)
    note_ids = sorted({ex.note_id for ex in examples})
    notes = [SimpleNamespace(note_id=i) for i in note_ids]
    templates = build_templates()
    splits_by_mode = {
        mode: filter_examples(
            examples, make_assignment(notes, templates, mode,
                                      seed=args.split_seed))
        for mode in ("pl", "r")
    }
    seeds = [int(s) for s in args.seeds.split(",")]
    out = Path(args.out)
    result = tr.run_matrix(splits_by_mode, vocab, model_config, train_config,
                           seeds, out_dir=out)
    resolved = {"model": dataclasses.asdict(model_config),
                "train": dataclasses.asdict(train_config),
                "seeds": seeds, "split_seed": args.split_seed}
    write_manifest(out, "run-matrix", resolved, args.split_seed)
    if args.json:
        cells = {f"{system}/{mode}": cell
                 for (system, mode), cell in result["cells"].items()}
        print(json.dumps(cells, sort_keys=True))
    else:
        print(result["table"], end="")
    return EXIT_OK


def cmd_lf_tokenize(args) -> int:
    if args.lf_id is not None:
        if not 0 <= args.lf_id < len(LOGICAL_FORMS):
            raise CliError(f"lf id must be in [0, {len(LOGICAL_FORMS)})")
        text = LOGICAL_FORMS[args.lf_id].lf_string
    elif args.text is not None:
        text = args.text
    else:
        raise CliError("provide an LF string or --lf-id")
    tokens = lf_tokenize(text)
    _emit({"lf": text, "tokens": dict(tokens)}, args.json,
          f"{text}\n" + "\n".join(f"  {t} x{c}" for t, c in
                                  sorted(tokens.items())))
    return EXIT_OK


# ---------------------------------------------------------------------------
# Parser.
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="entqa",
        description="Entity-enriched multi-task extractive QA pipeline.")
    sub = parser.add_subparsers(dest="subcommand", required=True)

    def common(p):
        p.add_argument("--json", action="store_true",
                       help="machine-readable JSON on stdout")

    p = sub.add_parser("gen-data", help="generate a synthetic corpus")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--num-notes", type=int, default=100)
    p.add_argument("--setting", choices=("sentence", "paragraph"),
                   default="sentence")
    p.add_argument("--facts-per-note", type=int, default=6)
    p.add_argument("--distractor-rate", type=float, default=0.4)
    p.add_argument("--out", required=True)
    common(p)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("split", help="write a train/val/test assignment")
    p.add_argument("--mode", choices=("pl", "r"), required=True)
    p.add_argument("--train-frac", type=float, default=0.7)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--data", required=True, help="corpus JSONL")
    p.add_argument("--out", required=True)
    common(p)
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("train", help="train one system")
    p.add_argument("--data", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--split", required=True, help="split.json path")
    p.add_argument("--system", choices=tr.SYSTEMS, default="multitask")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--config", help="JSON config with dotted keys")
    p.add_argument("--set", action="append", metavar="KEY=VALUE")
    p.add_argument("--out", required=True)
    common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a trained run")
    p.add_argument("--run", required=True,
                   help="training output directory (checkpoint + config)")
    p.add_argument("--data", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--split", required=True)
    p.add_argument("--subset", choices=("train", "val", "test"),
                   default="test")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    common(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck", help="finite-difference gradient audit")
    p.add_argument("--seeds", type=int, default=10)
    p.add_argument("--tolerance", type=float, default=1e-4)
    common(p)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("run-matrix", help="four-system comparison table")
    p.add_argument("--data", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--seeds", default="0,1,2", help="comma-separated")
    p.add_argument("--split-seed", type=int, default=0)
    p.add_argument("--config")
    p.add_argument("--set", action="append", metavar="KEY=VALUE")
    p.add_argument("--out", required=True)
    common(p)
    p.set_defaults(func=cmd_run_matrix)

    p = sub.add_parser("lf-tokenize", help="tokenize a logical form")
    p.add_argument("text", nargs="?")
    p.add_argument("--lf-id", type=int)
    common(p)
    p.set_defaults(func=cmd_lf_tokenize)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except (DatasetError, CheckpointError, EncodingError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INTEGRITY
    except GradientError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ConfigurationError, SplitError, TrainError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
