"""Parallel corpus loading, vocabularies and sparse binary sentence features.

Sentences are pre-tokenized, whitespace-separated text. A sentence becomes a
:class:`FeatureVector`, the set of vocabulary indices present in it. Source
vectors may also carry adjacent bigram/trigram features, which live in the
same vocabulary as ordinary words under an encoded token.
"""

import hashlib
import logging
from collections import Counter
from dataclasses import dataclass
from itertools import islice
from pathlib import Path
from typing import Iterable, Iterator, Optional, Sequence

from .exceptions import CorpusError, InputError

logger = logging.getLogger(__name__)

UNK = "<unk>"
UNK_INDEX = 0
# ASCII unit separator; str.split() treats it as whitespace, so it never
# occurs inside a token.
JOINER = "\x1f"

SOURCE = "source"
TARGET = "target"


@dataclass(frozen=True)
class SentencePair:
    source: tuple
    target: tuple
    line_no: int


@dataclass(frozen=True)
class NgramConfig:
    max_bigrams: int = 0
    max_trigrams: int = 0

    def __post_init__(self):
        if self.max_bigrams < 0 or self.max_trigrams < 0:
            raise ValueError("n-gram counts must be >= 0")
        if self.max_trigrams > 0 and self.max_bigrams == 0:
            raise ValueError("trigram features require bigram features (max_bigrams > 0)")

    @property
    def enabled(self):
        return self.max_bigrams > 0 or self.max_trigrams > 0


NO_NGRAMS = NgramConfig(0, 0)


@dataclass(frozen=True)
class FeatureVector:
    """Binary presence vector stored as its strictly increasing active indices."""

    active: tuple
    dim: int

    def __post_init__(self):
        prev = -1
        for i in self.active:
            if i <= prev:
                raise ValueError("active indices must be strictly increasing")
            prev = i
        if self.active and (self.active[0] < 0 or self.active[-1] >= self.dim):
            raise ValueError(f"active index out of range for dim {self.dim}")

    @classmethod
    def from_indices(cls, indices, dim):
        return cls(tuple(sorted(set(indices))), dim)

    def __len__(self):
        return len(self.active)

    def __contains__(self, index):
        return index in self.active

    def to_dense(self):
        import numpy as np

        out = np.zeros(self.dim)
        out[list(self.active)] = 1.0
        return out


class ParallelCorpus:
    """Line-aligned source/target files, iterated lazily as :class:`SentencePair`.

    Line counts are checked up front. Lines where either side is empty are
    skipped; ``skipped`` holds the count after a full iteration.
    """

    def __init__(self, source_path, target_path):
        self.source_path = Path(source_path)
        self.target_path = Path(target_path)
        for p in (self.source_path, self.target_path):
            if not p.is_file():
                raise CorpusError(f"corpus file not found: {p}")
        n_src = _count_lines(self.source_path)
        n_tgt = _count_lines(self.target_path)
        if n_src != n_tgt:
            raise CorpusError(
                f"line count mismatch {n_src} vs {n_tgt} "
                f"({self.source_path} vs {self.target_path})"
            )
        self.n_lines = n_src
        self.skipped = 0

    def __iter__(self) -> Iterator[SentencePair]:
        self.skipped = 0
        with open(self.source_path, "rb") as fs, open(self.target_path, "rb") as ft:
            for line_no, (raw_s, raw_t) in enumerate(zip(fs, ft), start=1):
                src = _decode(raw_s, self.source_path, line_no).split()
                tgt = _decode(raw_t, self.target_path, line_no).split()
                if not src or not tgt:
                    self.skipped += 1
                    logger.warning("skipping line %d: empty %s side", line_no,
                                   "source" if not src else "target")
                    continue
                yield SentencePair(tuple(src), tuple(tgt), line_no)


def load_parallel_corpus(source_path, target_path) -> ParallelCorpus:
    return ParallelCorpus(source_path, target_path)


def read_sentences(path) -> Iterator[tuple]:
    """Yield ``(line_no, tokens)`` for every line of a monolingual file."""
    path = Path(path)
    if not path.is_file():
        raise CorpusError(f"corpus file not found: {path}")
    with open(path, "rb") as f:
        for line_no, raw in enumerate(f, start=1):
            yield line_no, tuple(_decode(raw, path, line_no).split())


def _count_lines(path):
    n = 0
    last = b"\n"
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            n += chunk.count(b"\n")
            last = chunk[-1:]
    if last != b"\n":
        n += 1
    return n


def _decode(raw, path, line_no):
    try:
        return raw.decode("utf-8")
    except UnicodeDecodeError as e:
        raise CorpusError(f"{path}:{line_no}: invalid UTF-8 ({e.reason})") from None


def extract_ngrams(tokens: Sequence[str], ngram_config: NgramConfig) -> list:
    """Encoded adjacent bigrams followed by adjacent trigrams.

    >>> extract_ngrams(["a", "b", "c"], NgramConfig(1, 1))
    ['a\\x1fb', 'b\\x1fc', 'a\\x1fb\\x1fc']
    """
    out = []
    if ngram_config.max_bigrams > 0:
        out.extend(JOINER.join(tokens[i:i + 2]) for i in range(len(tokens) - 1))
    if ngram_config.max_trigrams > 0:
        out.extend(JOINER.join(tokens[i:i + 3]) for i in range(len(tokens) - 2))
    return out


def ngram_order(token):
    return token.count(JOINER) + 1


def _top(counter, limit):
    ranked = sorted(counter.items(), key=lambda kv: (-kv[1], kv[0]))
    return ranked if limit is None else ranked[:limit]


class Vocabulary:
    """Frequency-ranked token index with index 0 reserved for ``<unk>``.

    ``entries`` excludes the unknown token; ``entries[i - 1]`` is the
    ``(token, count)`` pair at index ``i``.
    """

    def __init__(self, entries, side=SOURCE, ngram_config=NO_NGRAMS):
        if side not in (SOURCE, TARGET):
            raise ValueError(f"side must be {SOURCE!r} or {TARGET!r}")
        if side == TARGET and ngram_config.enabled:
            raise ValueError("target vocabularies carry no n-gram features")
        self.entries = tuple((str(t), int(c)) for t, c in entries)
        self.side = side
        self.ngram_config = ngram_config
        self._index = {UNK: UNK_INDEX}
        for i, (tok, _) in enumerate(self.entries, start=1):
            if tok in self._index:
                raise ValueError(f"duplicate vocabulary token {tok!r}")
            self._index[tok] = i

    def __len__(self):
        return len(self.entries) + 1

    def __contains__(self, token):
        return token in self._index

    def __eq__(self, other):
        return (isinstance(other, Vocabulary) and self.entries == other.entries
                and self.side == other.side and self.ngram_config == other.ngram_config)

    def __repr__(self):
        return f"Vocabulary(side={self.side!r}, size={len(self)}, ngram_config={self.ngram_config})"

    def lookup(self, token):
        return self._index.get(token, UNK_INDEX)

    def get(self, token):
        """Index of ``token`` or ``None`` when it is out of vocabulary."""
        return self._index.get(token)

    def token(self, index):
        return UNK if index == UNK_INDEX else self.entries[index - 1][0]

    @property
    def tokens(self):
        return [UNK] + [t for t, _ in self.entries]

    def to_bytes(self):
        lines = [f"0\t{UNK}\t0\n"]
        lines.extend(f"{i}\t{t}\t{c}\n" for i, (t, c) in enumerate(self.entries, start=1))
        return "".join(lines).encode("utf-8")

    def content_hash(self):
        return hashlib.sha256(self.to_bytes()).hexdigest()

    def save(self, path):
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path, side=SOURCE, ngram_config=None):
        """Read a vocabulary TSV file.

        When ``ngram_config`` is None it is inferred from the n-gram entries
        present in the file (target files never carry any).
        """
        path = Path(path)
        if not path.is_file():
            raise InputError(f"vocabulary file not found: {path}")
        entries = []
        line_no = 0
        with open(path, "rb") as f:
            for line_no, raw in enumerate(f, start=1):
                line = _decode(raw, path, line_no).rstrip("\n")
                parts = line.split("\t")
                if len(parts) != 3:
                    raise InputError(f"{path}:{line_no}: expected index<TAB>token<TAB>count")
                idx, tok, count = parts
                try:
                    idx, count = int(idx), int(count)
                except ValueError:
                    raise InputError(f"{path}:{line_no}: non-integer index or count") from None
                if idx != line_no - 1:
                    raise InputError(f"{path}:{line_no}: index {idx} out of sequence")
                if idx == 0:
                    if tok != UNK:
                        raise InputError(f"{path}:1: first entry must be {UNK}")
                    continue
                entries.append((tok, count))
        if line_no == 0:
            raise InputError(f"{path}: empty vocabulary file")
        if ngram_config is None:
            if side == TARGET:
                ngram_config = NO_NGRAMS
            else:
                orders = Counter(ngram_order(t) for t, _ in entries)
                ngram_config = NgramConfig(orders[2], orders[3] if orders[2] else 0)
        return cls(entries, side=side, ngram_config=ngram_config)


def build_vocabulary(corpus: Iterable[Sequence[str]], word_cutoff: Optional[int] = None,
                     ngram_config: NgramConfig = NO_NGRAMS, side=SOURCE) -> Vocabulary:
    """Count tokens (and n-grams) and keep the most frequent ones.

    Words, bigrams and trigrams are ranked separately so n-grams never
    displace words; the selected items are then merged into one list by
    descending count, ties in ascending token order. ``word_cutoff=None``
    keeps every word.
    """
    if word_cutoff is not None and word_cutoff < 0:
        raise ValueError("word_cutoff must be >= 0 or None")
    words = Counter()
    grams = {2: Counter(), 3: Counter()}
    n = 0
    for tokens in corpus:
        n += 1
        words.update(t for t in tokens if t != UNK)
        if ngram_config.enabled:
            for g in extract_ngrams(tokens, ngram_config):
                grams[ngram_order(g)][g] += 1
    if n == 0:
        raise CorpusError("cannot build a vocabulary from an empty corpus")
    selected = _top(words, word_cutoff)
    selected += _top(grams[2], ngram_config.max_bigrams)
    selected += _top(grams[3], ngram_config.max_trigrams)
    selected.sort(key=lambda kv: (-kv[1], kv[0]))
    return Vocabulary(selected, side=side, ngram_config=ngram_config)


def featurize_source(tokens: Sequence[str], vocab: Vocabulary) -> FeatureVector:
    """Presence vector of words and n-grams.

    Unknown words fire index 0; unknown n-grams fire nothing.
    """
    if vocab.side != SOURCE:
        raise InputError("featurize_source needs a source vocabulary")
    if not tokens:
        raise InputError("empty sentence")
    active = {vocab.lookup(t) for t in tokens}
    for g in extract_ngrams(tokens, vocab.ngram_config):
        i = vocab.get(g)
        if i is not None:
            active.add(i)
    return FeatureVector(tuple(sorted(active)), len(vocab))


def featurize_target(tokens: Sequence[str], vocab: Vocabulary) -> FeatureVector:
    if vocab.side != TARGET:
        raise InputError("featurize_target needs a target vocabulary")
    if not tokens:
        raise InputError("empty sentence")
    return FeatureVector(tuple(sorted({vocab.lookup(t) for t in tokens})), len(vocab))


def featurize_corpus(pairs: Iterable[SentencePair], source_vocab, target_vocab, limit=None):
    """Featurize sentence pairs into ``(source, target)`` FeatureVector tuples."""
    return [(featurize_source(p.source, source_vocab), featurize_target(p.target, target_vocab))
            for p in islice(pairs, limit)]
