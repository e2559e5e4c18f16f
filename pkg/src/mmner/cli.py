"""Command line: ``mmner {train,eval,tag,verify,stats}``.

Settings come from three places, later ones winning: a ``--config`` file of
``key=value`` lines, then explicit flags, then ``--set key=value``. Keys that
name a run option (``epochs``, ``lr``, ``batch_size``, ``seed``, ``model``,
``use_crf``, ``corpus``, ...) set that option; any other key overrides a field
of the model configuration (``glove_dim=100``, ``fusion_lstm=50``, ...).
Blank lines and lines starting with ``#`` are ignored.

Relative data paths are resolved against ``$MMNER_DATA_ROOT`` when that is set.
Without ``--corpus`` the bundled synthetic corpus is used.

Exit status: 0 ok, 1 usage or configuration error, 2 data error (missing or
malformed file, checkpoint mismatch, diverged training), 3 verification failure.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
import time
from pathlib import Path

from . import __version__
from . import data as bundled
from .autodiff import config_hash
from .errors import ConfigError, MmnerError
from .metrics import evaluate, report_format, report_keyvalues
from .seqdata import (compare_tmn_statistics, load_embeddings, parse_conll, parse_sidecar,
                      parse_tmn, preprocess_text, Example)
from .training import (MODEL_KINDS, TrainingError, build_model, load_model, model_config,
                       predict_batched, save_model, train)

log = logging.getLogger("mmner")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_VERIFY = 0, 1, 2, 3
DATA_ROOT_ENV = "MMNER_DATA_ROOT"

RUN_KEYS = {
    "model": str, "use_crf": bool, "corpus": str, "format": str, "sidecar": str, "dev": str,
    "glove": str, "fasttext": str, "vocab": str, "epochs": int, "lr": float,
    "batch_size": int, "seed": int, "checkpoint": str, "figures": str,
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _bool(text: str) -> bool:
    return str(text).strip().lower() in ("1", "true", "yes", "on")


def read_config_file(path) -> dict:
    out = {}
    with open(path, encoding="utf-8") as fh:
        for n, raw in enumerate(fh, 1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{n}: expected key=value, got {line!r}")
            key, value = line.split("=", 1)
            out[key.strip().replace("-", "_")] = value.strip()
    return out


def parse_assignments(items) -> dict:
    out = {}
    for item in items or ():
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, value = item.split("=", 1)
        out[key.strip().replace("-", "_")] = value.strip()
    return out


def resolve_settings(args) -> tuple:
    """Merge config file, flags and --set; returns (run options, model overrides)."""
    merged = {}
    if getattr(args, "config", None):
        merged.update(read_config_file(resolve_path(args.config)))
    for key in RUN_KEYS:
        value = getattr(args, key, None)
        if value is not None:
            merged[key] = value
    merged.update(parse_assignments(getattr(args, "set", None)))
    run, overrides = {}, {}
    for key, value in merged.items():
        if key in RUN_KEYS:
            kind = RUN_KEYS[key]
            try:
                run[key] = _bool(value) if kind is bool else kind(value)
            except ValueError:
                raise ConfigError(f"{key}: cannot read {value!r} as {kind.__name__}") from None
        else:
            overrides[key] = value
    if getattr(args, "no_regularizers", False):
        overrides["regularizers"] = "false"
    run.setdefault("model", "cwi")
    run.setdefault("use_crf", False)
    run.setdefault("epochs", 10)
    run.setdefault("lr", 8e-5)
    run.setdefault("batch_size", 8)
    run.setdefault("seed", 0)
    run.setdefault("format", "tmn")
    if run["model"] not in MODEL_KINDS:
        raise ConfigError(f"unknown model {run['model']!r}; choose from {', '.join(MODEL_KINDS)}")
    return run, overrides


def resolve_path(path) -> Path:
    p = Path(path).expanduser()
    root = os.environ.get(DATA_ROOT_ENV)
    if not p.is_absolute() and root and not p.exists():
        p = Path(root) / p
    if not p.exists():
        raise FileNotFoundError(f"no such file: {p}")
    return p


# -- data loading ---------------------------------------------------------
def load_examples(path, fmt: str, sidecar_path=None, strict: bool = True) -> list:
    sidecar = None
    if sidecar_path:
        with open(resolve_path(sidecar_path), encoding="utf-8") as fh:
            sidecar = parse_sidecar(fh)
    with open(resolve_path(path), encoding="utf-8") as fh:
        if fmt == "conll":
            examples = parse_conll(fh, strict=strict)
        elif fmt == "tmn":
            # without a sidecar every sentence simply has no image words
            examples = parse_tmn(fh, sidecar, strict=strict and sidecar is not None)
        else:
            raise ConfigError(f"unknown corpus format {fmt!r} (tmn or conll)")
    if sidecar is not None and fmt == "conll":
        for ex in examples:
            ex.image_words = sorted(sidecar.get(ex.id, []), key=lambda lp: -lp[1])
    return examples


def load_corpus(run, strict, key="corpus"):
    if run.get(key):
        return load_examples(run[key], run["format"], run.get("sidecar"), strict)
    if key == "dev":
        return None
    return bundled.load_corpus()


def load_resources(run, cfg_dims):
    """(glove, fasttext, vocab) for the selected model; bundled files by default."""
    if run["model"].startswith("msb"):
        from .msb import SubwordVocab

        return None, None, SubwordVocab.load(resolve_path(run.get("vocab") or bundled.VOCAB))
    seed = run["seed"]
    tables = []
    for key, default, dim in (("glove", bundled.GLOVE, cfg_dims[0]),
                              ("fasttext", bundled.FASTTEXT, cfg_dims[1])):
        with open(resolve_path(run.get(key) or default), encoding="utf-8") as fh:
            tables.append(load_embeddings(fh, dim, seed))
    return tables[0], tables[1], None


# -- commands -------------------------------------------------------------
def cmd_train(args, out) -> int:
    run, overrides = resolve_settings(args)
    if not run.get("checkpoint"):
        raise UsageError("train needs --checkpoint")
    train_set = load_corpus(run, args.strict)
    dev_set = load_corpus(run, args.strict, "dev")
    dims = (200, 300)
    if not run["model"].startswith("msb"):
        cfg = model_config(run["model"], run["use_crf"], run["seed"], overrides)
        dims = (cfg.glove_dim, cfg.fasttext_dim)
    glove, fasttext, vocab = load_resources(run, dims)
    model = build_model(run["model"], train_set, glove=glove, fasttext=fasttext, vocab=vocab,
                        use_crf=run["use_crf"], seed=run["seed"], overrides=overrides)
    chash = config_hash(model.config.to_dict())
    out.write(f"# model={run['model']} seed={run['seed']} config_hash={chash} "
              f"epochs={run['epochs']} lr={run['lr']} batch_size={run['batch_size']} "
              f"train={len(train_set)} dev={len(dev_set) if dev_set else 0}\n")
    out.write("epoch\tloss\ttrain_f1\tdev_f1\n")

    def fmt(v):
        return "-" if v is None else f"{v:.6f}"

    def on_epoch(e):
        out.write(f"{e.epoch}\t{e.loss:.6f}\t{fmt(e.train_f1)}\t{fmt(e.dev_f1)}\n")
        out.flush()

    history = train(model, train_set, dev_set, epochs=run["epochs"], lr=run["lr"],
                    batch_size=run["batch_size"], seed=run["seed"], on_epoch=on_epoch)
    tokens = {tok for ex in train_set + (dev_set or []) for tok in ex.tokens}
    save_model(model, run["checkpoint"], sorted(tokens),
               {"seed": run["seed"], "epochs": run["epochs"], "lr": run["lr"],
                "batch_size": run["batch_size"], "version": __version__})
    out.write(f"# checkpoint {run['checkpoint']}\n")
    if run.get("figures") and history:
        from .plots import plot_training

        path = Path(run["figures"])
        path.mkdir(parents=True, exist_ok=True)
        out.write(f"# figure {plot_training(history, path / 'training.png')}\n")
    return EXIT_OK


def _load_checked(args, run, overrides):
    """Load the checkpoint; when --model is given, its config hash must match."""
    expect_kind = expect_hash = None
    if args.model is not None or overrides:
        from .autodiff import load_checkpoint

        header, _ = load_checkpoint(run["checkpoint"])
        saved = header["config"]
        seed = run["seed"] if args.seed is not None else saved.get("seed", 0)
        cfg = model_config(run["model"], run["use_crf"], seed, overrides,
                           vocab_size=saved.get("vocab_size"))
        expect_kind, expect_hash = run["model"], config_hash(cfg.to_dict())
    return load_model(run["checkpoint"], expect_kind, expect_hash, force=args.force)


def cmd_eval(args, out) -> int:
    run, overrides = resolve_settings(args)
    if not run.get("checkpoint"):
        raise UsageError("eval needs --checkpoint")
    model, _ = _load_checked(args, run, overrides)
    examples = load_corpus(run, args.strict)
    pred = predict_batched(model, examples)
    report = evaluate([ex.tags for ex in examples], pred)
    out.write(report_format(report))
    if args.keyvalues:
        out.write(report_keyvalues(report))
    if run.get("figures"):
        from .plots import plot_report

        path = Path(run["figures"])
        path.mkdir(parents=True, exist_ok=True)
        fig = plot_report(report, path / "report.png", title=model.selector)
        out.write(f"# figure {fig}\n")
    return EXIT_OK


def read_tag_input(stream, fmt, sidecar=None, strict=True) -> list:
    """Sentences to tag. ``text``: one sentence per line, whitespace tokens, URLs
    dropped; ids are ``line-N`` for sidecar lookup. ``tmn``/``conll``: tagged files."""
    if fmt == "text":
        examples = []
        for n, raw in enumerate(stream, 1):
            tokens = preprocess_text(raw)
            if tokens:
                ex_id = f"line-{n}"
                pairs = sorted((sidecar or {}).get(ex_id, []), key=lambda lp: -lp[1])
                examples.append(Example(ex_id, tokens, [], pairs))
        return examples
    if fmt == "conll":
        return parse_conll(stream, strict)
    return parse_tmn(stream, sidecar, strict and sidecar is not None)


def cmd_tag(args, out) -> int:
    run, overrides = resolve_settings(args)
    if not run.get("checkpoint"):
        raise UsageError("tag needs --checkpoint")
    model, _ = _load_checked(args, run, overrides)
    sidecar = None
    if run.get("sidecar"):
        with open(resolve_path(run["sidecar"]), encoding="utf-8") as fh:
            sidecar = parse_sidecar(fh)
    fmt = args.input_format
    if args.input in (None, "-"):
        examples = read_tag_input(sys.stdin, fmt, sidecar, args.strict)
    else:
        with open(resolve_path(args.input), encoding="utf-8") as fh:
            examples = read_tag_input(fh, fmt, sidecar, args.strict)
    for ex, tags in zip(examples, predict_batched(model, examples)):
        for tok, tag in zip(ex.tokens, tags):
            out.write(f"{tok}\t{tag}\n")
        out.write("\n")
    return EXIT_OK


def cmd_verify(args, out) -> int:
    from . import verify

    vocab = None
    if not args.skip_tokenizer:
        from .msb import SubwordVocab

        vocab = SubwordVocab.load(resolve_path(args.vocab or bundled.VOCAB))
    t0 = time.perf_counter()
    results = verify.run_checks(seeds=args.seeds, vocab=vocab, corrupt=args.corrupt_gradients,
                                echo=lambda line: (out.write(line + "\n"), out.flush()))
    failed = [r for r in results if not r.passed]
    out.write(f"{len(results) - len(failed)}/{len(results)} checks passed "
              f"in {time.perf_counter() - t0:.1f}s\n")
    return EXIT_VERIFY if failed else EXIT_OK


def cmd_stats(args, out) -> int:
    """Entity counts per split; with --tmn-dir, compared against the published TMN table."""
    if args.tmn_dir:
        root = resolve_path(args.tmn_dir)
        splits = {}
        for name in ("train", "dev", "test"):
            with open(root / f"{name}.txt", encoding="utf-8") as fh:
                splits[name] = parse_tmn(fh, None, strict=False)
        passed, lines = compare_tmn_statistics(splits)
        out.write("\n".join(lines) + "\n")
        out.write(("PASS" if passed else "FAIL") + "\n")
        return EXIT_OK if passed else EXIT_VERIFY
    from .seqdata import dataset_statistics

    run, _ = resolve_settings(args)
    stats = dataset_statistics(load_corpus(run, args.strict))
    out.write("\t".join(stats) + "\n" + "\t".join(str(v) for v in stats.values()) + "\n")
    return EXIT_OK


# -- argument parsing -----------------------------------------------------
def _data_flags(p, corpus_help="training corpus (default: bundled synthetic corpus)"):
    p.add_argument("--corpus", help=corpus_help)
    p.add_argument("--format", choices=("tmn", "conll"), help="corpus format (default tmn)")
    p.add_argument("--sidecar", help="image-word TSV: id, then up to 5 label/probability pairs")
    p.add_argument("--strict", dest="strict", action="store_true", default=True,
                   help="reject illegal BIO2 input (default)")
    p.add_argument("--lenient", dest="strict", action="store_false",
                   help="repair illegal I- tags with a warning")


def _model_flags(p):
    p.add_argument("--model", choices=MODEL_KINDS)
    p.add_argument("--use-crf", dest="use_crf", action="store_const", const=True,
                   help="CRF output layer for msb models (cwi always uses one)")
    p.add_argument("--seed", type=int)
    p.add_argument("--config", help="key=value settings file")
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override a run option or model setting; repeatable")
    p.add_argument("--no-regularizers", action="store_true",
                   help="replace targeted dropout, SineRelu and group norm with identity")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="mmner", description="Multimodal named entity recognition on tweets.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("train", help="train a model and write a checkpoint")
    _model_flags(p)
    _data_flags(p)
    p.add_argument("--dev", help="development corpus (same format) for per-epoch dev F1")
    p.add_argument("--glove", help="200-d GloVe text file (cwi)")
    p.add_argument("--fasttext", help="300-d fastText text file (cwi)")
    p.add_argument("--vocab", help="subword vocabulary, one piece per line (msb)")
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--checkpoint")
    p.add_argument("--figures", help="directory for training.png")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="span-level report for a checkpoint on a tagged corpus")
    _model_flags(p)
    _data_flags(p, "tagged corpus to score (default: bundled synthetic corpus)")
    p.add_argument("--checkpoint")
    p.add_argument("--force", action="store_true", help="accept a config hash mismatch")
    p.add_argument("--keyvalues", action="store_true", help="also print key=value lines")
    p.add_argument("--figures", help="directory for report.png")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("tag", help="tag sentences; prints token<TAB>tag")
    _model_flags(p)
    p.add_argument("--checkpoint")
    p.add_argument("--force", action="store_true")
    p.add_argument("--input", help="input file (default stdin)")
    p.add_argument("--input-format", choices=("text", "tmn", "conll"), default="text")
    p.add_argument("--sidecar")
    p.add_argument("--strict", dest="strict", action="store_true", default=True)
    p.add_argument("--lenient", dest="strict", action="store_false")
    p.set_defaults(func=cmd_tag)

    p = sub.add_parser("verify", help="gradient and oracle checks")
    p.add_argument("--seeds", type=int, default=20, help="seeds per gradient case")
    p.add_argument("--vocab", help="vocabulary for the tokenizer round trip")
    p.add_argument("--skip-tokenizer", action="store_true")
    p.add_argument("--corrupt-gradients", action="store_true", help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("stats", help="entity statistics of a corpus")
    _data_flags(p, "corpus (default: bundled synthetic corpus)")
    p.add_argument("--tmn-dir", help="directory with train.txt, dev.txt, test.txt")
    p.add_argument("--config")
    p.add_argument("--set", action="append")
    p.set_defaults(func=cmd_stats)
    return parser


def main(argv=None, out=None) -> int:
    out = out or sys.stdout
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args, out)
    except (UsageError, ConfigError) as err:
        print(f"mmner: {err}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, MmnerError, TrainingError) as err:
        print(f"mmner: {err}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
