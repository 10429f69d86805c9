"""Command-line entry point: ``nndwl <command> [options]``.

Exit codes: 0 success, 2 input error, 3 numerical divergence.
Every command that writes an artifact also writes a JSON run manifest next
to it; ``nndwl replay MANIFEST`` re-runs the recorded command.
"""

import argparse
import hashlib
import json
import logging
import sys
from contextlib import contextmanager
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .corpus import (SOURCE, TARGET, NgramConfig, Vocabulary, build_vocabulary,
                     featurize_source, featurize_target, load_parallel_corpus, read_sentences)
from .exceptions import DivergenceError, InputError
from .network import ModelMetadata, cross_entropy, forward, load_model, save_model
from .scoring import (OOV_SKIP, OOV_UNK, POSITIONAL, UNIQUE, PhraseTable, RescoreStats,
                      precompute, rescore_nbest, restrict_target_vocab, score_phrase_table,
                      write_nbest)
from .training import TrainingConfig, TrainingDiverged, parse_hidden, read_config_file, train

logger = logging.getLogger("nndwl")

EXIT_OK, EXIT_INPUT, EXIT_DIVERGED = 0, 2, 3
CHUNK = 256

# CLI flag (dest) -> TrainingConfig field
_TRAIN_FLAGS = {
    "lr": "learning_rate", "batch": "batch_size", "epochs": "epochs", "l2": "l2",
    "dropout": "dropout", "seed": "seed", "hidden": "hidden_dims", "init_scale": "init_scale",
    "bias": "use_bias",
}


def file_digest(path):
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


@dataclass
class RunManifest:
    command: str
    config: dict
    inputs: dict = field(default_factory=dict)
    seed: object = None
    version: str = __version__

    def save(self, path):
        Path(path).write_text(json.dumps(asdict(self), indent=2, sort_keys=True) + "\n",
                              encoding="utf-8")

    @classmethod
    def load(cls, path):
        try:
            return cls(**json.loads(Path(path).read_text(encoding="utf-8")))
        except (OSError, ValueError, TypeError) as e:
            raise InputError(f"cannot read manifest {path}: {e}") from None


def _manifest(args, inputs, seed=None):
    config = {k: v for k, v in vars(args).items() if k not in ("func", "verbose")}
    digests = {name: {"path": str(p), "sha256": file_digest(p)} for name, p in inputs.items()
               if p is not None}
    return RunManifest(args.command, config, digests, seed)


def _require(*paths):
    for p in paths:
        if p is not None and not Path(p).is_file():
            raise InputError(f"file not found: {p}")


@contextmanager
def _output(path):
    if path is None or path == "-":
        yield sys.stdout
    else:
        with open(path, "w", encoding="utf-8") as f:
            yield f


def _load_vocabs(args, model=None):
    _require(args.src_vocab, args.tgt_vocab)
    ngrams = model.metadata.ngram_config if model is not None else None
    sv = Vocabulary.load(args.src_vocab, side=SOURCE, ngram_config=ngrams)
    tv = Vocabulary.load(args.tgt_vocab, side=TARGET)
    if model is not None:
        meta = model.metadata
        for label, vocab, expected in (("source", sv, meta.source_vocab_sha256),
                                       ("target", tv, meta.target_vocab_sha256)):
            if expected and vocab.content_hash() != expected:
                raise InputError(f"{label} vocabulary does not match the one the model was trained with "
                                 f"(hash {vocab.content_hash()[:12]} != {expected[:12]})")
        if (len(sv), len(tv)) != (model.input_dim, model.output_dim):
            raise InputError(f"vocabulary sizes ({len(sv)}, {len(tv)}) do not match model dims "
                             f"({model.input_dim}, {model.output_dim})")
    return sv, tv


def _load_model(path):
    _require(path)
    return load_model(path)


# ---------------------------------------------------------------- build-vocab

def cmd_build_vocab(args):
    corpus = load_parallel_corpus(args.src, args.tgt)
    ngrams = NgramConfig(args.bigrams, args.trigrams)
    stats = {"sentences": 0, "source_tokens": 0, "target_tokens": 0}

    def source_side():
        for pair in corpus:
            stats["sentences"] += 1
            stats["source_tokens"] += len(pair.source)
            yield pair.source

    def target_side():
        for pair in corpus:
            stats["target_tokens"] += len(pair.target)
            yield pair.target

    sv = build_vocabulary(source_side(), args.src_cutoff or None, ngrams, side=SOURCE)
    tv = build_vocabulary(target_side(), args.tgt_cutoff or None, side=TARGET)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    sv.save(out / "source.vocab")
    tv.save(out / "target.vocab")
    _manifest(args, {"src": args.src, "tgt": args.tgt}).save(
        args.manifest or out / "build-vocab.manifest.json")

    for key, value in (("sentences", stats["sentences"]), ("skipped", corpus.skipped),
                       ("source_tokens", stats["source_tokens"]),
                       ("target_tokens", stats["target_tokens"]),
                       ("source_vocab", len(sv)), ("target_vocab", len(tv))):
        print(f"{key}\t{value}")
    return EXIT_OK


# ---------------------------------------------------------------------- train

def resolve_training_config(args):
    """Defaults < config file < explicit CLI flags."""
    config = TrainingConfig()
    if args.config:
        _require(args.config)
        config = TrainingConfig.from_mapping(read_config_file(args.config), base=config)
    overrides = {}
    for flag, name in _TRAIN_FLAGS.items():
        value = getattr(args, flag, None)
        if value is not None:
            overrides[name] = value
    try:
        return TrainingConfig.from_mapping(overrides, base=config)
    except ValueError as e:
        raise InputError(str(e)) from None


def _featurize_pairs(corpus, sv, tv):
    return [(featurize_source(p.source, sv), featurize_target(p.target, tv)) for p in corpus]


def cmd_train(args):
    config = resolve_training_config(args)
    sv, tv = _load_vocabs(args)
    train_pairs = _featurize_pairs(load_parallel_corpus(args.src, args.tgt), sv, tv)
    valid_pairs = _featurize_pairs(load_parallel_corpus(args.valid_src, args.valid_tgt), sv, tv)
    meta = ModelMetadata(sv.content_hash(), tv.content_hash(), sv.ngram_config.max_bigrams,
                         sv.ngram_config.max_trigrams, config.seed)
    log_path = args.log or f"{args.model}.log"
    # the manifest records the fully resolved configuration
    args.resolved_config = config.to_dict()
    logger.info("training %s on %d pairs (valid %d), dims %d -> %s -> %d", args.model,
                len(train_pairs), len(valid_pairs), len(sv), list(config.hidden_dims), len(tv))

    with open(log_path, "w", encoding="utf-8") as log:
        def report(r):
            line = r.to_line()
            print(line, flush=True)
            log.write(line + "\n")
            log.flush()

        try:
            best, _ = train(train_pairs, valid_pairs, config, metadata=meta,
                            snapshot_dir=args.snapshot_dir, on_epoch=report)
        except TrainingDiverged as e:
            if e.best_model is not None:
                save_model(e.best_model, args.model)
                logger.error("%s; kept best snapshot in %s", e, args.model)
            else:
                logger.error("%s; no finished epoch to keep", e)
            return EXIT_DIVERGED
    save_model(best, args.model)
    _manifest(args, {"src": args.src, "tgt": args.tgt, "valid_src": args.valid_src,
                     "valid_tgt": args.valid_tgt, "src_vocab": args.src_vocab,
                     "tgt_vocab": args.tgt_vocab, "config": args.config},
              seed=config.seed).save(args.manifest or f"{args.model}.manifest.json")
    return EXIT_OK


# ----------------------------------------------------------------------- eval

def cmd_eval(args):
    model = _load_model(args.model)
    sv, tv = _load_vocabs(args, model)
    corpus = load_parallel_corpus(args.src, args.tgt)
    losses = []
    n_out = model.output_dim
    tp, fp, fn = np.zeros(n_out), np.zeros(n_out), np.zeros(n_out)
    chunk = []

    def flush():
        p = np.atleast_2d(forward(model, [s for s, _ in chunk]).output)
        labels = [t for _, t in chunk]
        losses.append(cross_entropy(p, labels))
        if args.per_word:
            truth = np.zeros_like(p, dtype=bool)
            for r, t in enumerate(labels):
                truth[r, list(t.active)] = True
            pred = p > args.threshold
            tp[:] += (pred & truth).sum(axis=0)
            fp[:] += (pred & ~truth).sum(axis=0)
            fn[:] += (~pred & truth).sum(axis=0)
        chunk.clear()

    for pair in corpus:
        chunk.append((featurize_source(pair.source, sv), featurize_target(pair.target, tv)))
        if len(chunk) == CHUNK:
            flush()
    if chunk:
        flush()
    if not losses:
        raise InputError("evaluation corpus has no usable sentence pairs")
    mean_ce = float(np.mean(np.concatenate(losses)))

    with _output(args.out) as out:
        out.write(f"pairs\t{sum(len(l) for l in losses)}\n")
        out.write(f"mean_cross_entropy\t{mean_ce!r}\n")
        if args.per_word:
            out.write("word\tprecision\trecall\tsupport\n")
            for i in range(n_out):
                prec = tp[i] / (tp[i] + fp[i]) if tp[i] + fp[i] else float("nan")
                rec = tp[i] / (tp[i] + fn[i]) if tp[i] + fn[i] else float("nan")
                out.write(f"{tv.token(i)}\t{prec:.6f}\t{rec:.6f}\t{int(tp[i] + fn[i])}\n")
    if args.out not in (None, "-") or args.manifest:
        _manifest(args, {"model": args.model, "src": args.src, "tgt": args.tgt}).save(
            args.manifest or f"{args.out}.manifest.json")
    return EXIT_OK


# ----------------------------------------------------------------- precompute

def cmd_precompute(args):
    model = _load_model(args.model)
    sv, tv = _load_vocabs(args, model)
    _require(args.phrase_table)
    table = PhraseTable.load(args.phrase_table)
    with _output(args.out) as out:
        for line_no, tokens in read_sentences(args.src):
            sid = line_no - 1
            if not tokens:
                logger.warning("line %d: empty source sentence, nothing to precompute", line_no)
                continue
            scores = precompute(model, featurize_source(tokens, sv),
                                restrict_target_vocab(tokens, table), tv, source_id=sid)
            if args.phrase_pairs:
                for (src, tgt), lp in sorted(score_phrase_table(scores, tokens, table).items()):
                    out.write(f"{sid} ||| {' '.join(src)} ||| {' '.join(tgt)} ||| {lp!r}\n")
            else:
                for w in sorted(scores.probs):
                    out.write(f"{sid}\t{w}\t{scores.probs[w]!r}\n")
    if args.out not in (None, "-") or args.manifest:
        _manifest(args, {"model": args.model, "src": args.src, "phrase_table": args.phrase_table}
                  ).save(args.manifest or f"{args.out}.manifest.json")
    return EXIT_OK


# -------------------------------------------------------------------- rescore

def cmd_rescore(args):
    model = _load_model(args.model)
    sv, tv = _load_vocabs(args, model)
    _require(args.src, args.nbest, args.phrase_table)
    sources = [tokens for _, tokens in read_sentences(args.src)]
    table = PhraseTable.load(args.phrase_table) if args.phrase_table else None
    stats = RescoreStats()
    with open(args.nbest, encoding="utf-8") as nbest, _output(args.out) as out:
        write_nbest(rescore_nbest(model, sources, nbest, sv, tv, table=table, mode=args.mode,
                                  weight=args.weight, oov=args.oov, stats=stats), out)
    logger.info("rescored %d hypotheses for %d sentences", stats.hypotheses, stats.sentences)
    if args.out not in (None, "-") or args.manifest:
        _manifest(args, {"model": args.model, "src": args.src, "nbest": args.nbest,
                         "phrase_table": args.phrase_table}
                  ).save(args.manifest or f"{args.out}.manifest.json")
    return EXIT_OK


# --------------------------------------------------------------------- replay

def cmd_replay(args):
    manifest = RunManifest.load(args.manifest_file)
    for name, rec in manifest.inputs.items():
        _require(rec["path"])
        if file_digest(rec["path"]) != rec["sha256"]:
            raise InputError(f"input {name} ({rec['path']}) changed since the manifest was written")
    config = dict(manifest.config)
    config.pop("resolved_config", None)
    parser = build_parser()
    sub = parser.parse_args([manifest.command] + _required_argv(manifest.command, config))
    for key, value in config.items():
        setattr(sub, key, value)
    return sub.func(sub)


def _required_argv(command, config):
    # satisfy argparse's required options; real values are set afterwards
    required = {
        "build-vocab": ["src", "tgt", "out_dir"],
        "train": ["src", "tgt", "valid_src", "valid_tgt", "src_vocab", "tgt_vocab", "model"],
        "eval": ["model", "src_vocab", "tgt_vocab", "src", "tgt"],
        "precompute": ["model", "src_vocab", "tgt_vocab", "src", "phrase_table"],
        "rescore": ["model", "src_vocab", "tgt_vocab", "src", "nbest"],
    }.get(command)
    if required is None:
        raise InputError(f"manifest names unknown command {command!r}")
    argv = []
    for key in required:
        argv += ["--" + key.replace("_", "-"), str(config.get(key, "_"))]
    return argv


# --------------------------------------------------------------------- parser

def _add_model_io(p, with_tgt=False):
    p.add_argument("--model", required=True, help="model file")
    p.add_argument("--src-vocab", required=True)
    p.add_argument("--tgt-vocab", required=True)
    p.add_argument("--src", required=True, help="source corpus, one sentence per line")
    if with_tgt:
        p.add_argument("--tgt", required=True, help="target corpus, line-aligned with --src")


def build_parser():
    parser = argparse.ArgumentParser(prog="nndwl", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    subs = parser.add_subparsers(dest="command", required=True)

    p = subs.add_parser("build-vocab", help="build source/target vocabularies")
    p.add_argument("--src", required=True)
    p.add_argument("--tgt", required=True)
    p.add_argument("--src-cutoff", type=int, default=0, help="most frequent source words (0: all)")
    p.add_argument("--tgt-cutoff", type=int, default=0, help="most frequent target words (0: all)")
    p.add_argument("--bigrams", type=int, default=0, help="most frequent source bigrams")
    p.add_argument("--trigrams", type=int, default=0, help="most frequent source trigrams")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--manifest")
    p.set_defaults(func=cmd_build_vocab)

    p = subs.add_parser("train", help="train a model")
    p.add_argument("--src", required=True)
    p.add_argument("--tgt", required=True)
    p.add_argument("--valid-src", required=True)
    p.add_argument("--valid-tgt", required=True)
    p.add_argument("--src-vocab", required=True)
    p.add_argument("--tgt-vocab", required=True)
    p.add_argument("--model", required=True, help="output model file")
    p.add_argument("--config", help="key=value file with training options")
    p.add_argument("--hidden", type=parse_hidden,
                   help='hidden layer sizes, e.g. "1000,500,1000"; "" for none')
    p.add_argument("--batch", help='minibatch size, or "full"')
    p.add_argument("--lr", type=float)
    p.add_argument("--epochs", type=int)
    p.add_argument("--l2", type=float)
    p.add_argument("--dropout", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--init-scale", type=float)
    p.add_argument("--bias", action="store_const", const=True, help="add bias units")
    p.add_argument("--snapshot-dir", help="write every improving epoch here")
    p.add_argument("--log", help="epoch log file (default: MODEL.log)")
    p.add_argument("--manifest")
    p.set_defaults(func=cmd_train)

    p = subs.add_parser("eval", help="mean cross-entropy on a parallel corpus")
    _add_model_io(p, with_tgt=True)
    p.add_argument("--per-word", action="store_true", help="per-word precision/recall")
    p.add_argument("--threshold", type=float, default=0.5,
                   help="presence threshold; a probability equal to it counts as absent")
    p.add_argument("--out")
    p.add_argument("--manifest")
    p.set_defaults(func=cmd_eval)

    p = subs.add_parser("precompute", help="per-sentence word or phrase-pair scores")
    _add_model_io(p)
    p.add_argument("--phrase-table", required=True)
    p.add_argument("--phrase-pairs", action="store_true", help="emit phrase-pair scores")
    p.add_argument("--out")
    p.add_argument("--manifest")
    p.set_defaults(func=cmd_precompute)

    p = subs.add_parser("rescore", help="add the nndwl feature to an n-best list")
    _add_model_io(p)
    p.add_argument("--nbest", required=True)
    p.add_argument("--phrase-table")
    p.add_argument("--mode", choices=(UNIQUE, POSITIONAL), default=POSITIONAL)
    p.add_argument("--weight", type=float, default=1.0,
                   help="feature weight added to the total; rescoring a rescored list "
                        "replaces the old feature assuming the same weight")
    p.add_argument("--oov", choices=(OOV_UNK, OOV_SKIP), default=OOV_UNK,
                   help="scoring of hypothesis words outside the restricted vocabulary")
    p.add_argument("--out")
    p.add_argument("--manifest")
    p.set_defaults(func=cmd_rescore)

    p = subs.add_parser("replay", help="re-run a command from its manifest")
    p.add_argument("manifest_file")
    p.set_defaults(func=cmd_replay)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except DivergenceError as e:
        logger.error("%s", e)
        return EXIT_DIVERGED
    except (InputError, ValueError, OSError) as e:
        logger.error("%s", e)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
