"""Sentence- and phrase-level lexical translation scores, and n-best rescoring.

All scores are natural-log probabilities. Per-word probabilities come from a
single forward pass per source sentence (:func:`precompute`), restricted to the
target words that can actually appear in a translation of that sentence.
"""

import logging
import math
from collections import Counter, OrderedDict, defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, Iterator, List, Optional, Sequence, TextIO, Tuple

import numpy as np

from .corpus import UNK_INDEX, FeatureVector, Vocabulary, featurize_source
from .exceptions import DimensionError, InputError
from .network import EPS, NetworkModel, forward

logger = logging.getLogger(__name__)

FEATURE_NAME = "nndwl"
UNIQUE = "unique"
POSITIONAL = "positional"
OOV_UNK = "unk"
OOV_SKIP = "skip"


class PhraseTable:
    """Source phrase -> set of target phrases, both as token tuples."""

    def __init__(self, entries: Iterable[Tuple[Sequence[str], Sequence[str]]] = ()):
        self._table: Dict[tuple, set] = defaultdict(set)
        self.max_source_len = 0
        for src, tgt in entries:
            self.add(src, tgt)

    def add(self, source, target):
        source, target = tuple(source), tuple(target)
        if not source or not target:
            raise InputError("phrase table entries must be non-empty")
        self._table[source].add(target)
        self.max_source_len = max(self.max_source_len, len(source))

    def __len__(self):
        return sum(len(v) for v in self._table.values())

    def get(self, source):
        return self._table.get(tuple(source), set())

    @classmethod
    def load(cls, path):
        """Read ``src ||| tgt ||| ...`` lines; fields after the second are ignored."""
        table = cls()
        path = Path(path)
        if not path.is_file():
            raise InputError(f"phrase table not found: {path}")
        with open(path, "rb") as f:
            for line_no, raw in enumerate(f, start=1):
                try:
                    line = raw.decode("utf-8")
                except UnicodeDecodeError:
                    raise InputError(f"{path}:{line_no}: invalid UTF-8") from None
                if not line.strip():
                    continue
                fields = line.split(" ||| ")
                if len(fields) < 2:
                    raise InputError(f"{path}:{line_no}: expected 'source ||| target ||| ...'")
                src, tgt = fields[0].split(), fields[1].split()
                if not src or not tgt:
                    raise InputError(f"{path}:{line_no}: empty phrase")
                table.add(src, tgt)
        return table


def restrict_target_vocab(source_tokens: Sequence[str], table: PhraseTable) -> set:
    """Words of every target phrase whose source phrase occurs contiguously in the sentence."""
    words = set()
    tokens = tuple(source_tokens)
    for i in range(len(tokens)):
        for n in range(1, min(table.max_source_len, len(tokens) - i) + 1):
            for tgt in table.get(tokens[i:i + n]):
                words.update(tgt)
    return words


@dataclass(frozen=True)
class PrecomputedScores:
    source_id: object
    probs: Dict[str, float]
    restricted_vocab: frozenset
    unk_logprob: float

    def logprob(self, word, oov=OOV_UNK):
        """Log-probability of ``word``; ``None`` when skipped under ``oov='skip'``."""
        lp = self.probs.get(word)
        if lp is not None:
            return lp
        if oov == OOV_UNK:
            return self.unk_logprob
        if oov == OOV_SKIP:
            return None
        raise KeyError(word)

    def missing(self, tokens):
        return [w for w in tokens if w not in self.probs]


def _log_clamped(p):
    return np.log(np.clip(p, EPS, 1.0 - EPS))


def precompute(model: NetworkModel, source: FeatureVector, restricted: Iterable[str],
               target_vocab: Vocabulary, source_id=None, output=None) -> PrecomputedScores:
    """One forward pass, then ``ln p(w|s)`` for every restricted word.

    Words outside ``target_vocab`` take the unknown-index probability.
    ``output`` may pass an already computed output vector for ``source``.
    """
    if source.dim != model.input_dim:
        raise DimensionError(f"source dim {source.dim} != model input dim {model.input_dim}")
    if len(target_vocab) != model.output_dim:
        raise DimensionError(
            f"target vocabulary size {len(target_vocab)} != model output dim {model.output_dim}")
    if output is None:
        output = forward(model, source).output
    logp = _log_clamped(output)
    restricted = frozenset(restricted)
    probs = {w: float(logp[target_vocab.lookup(w)]) for w in restricted}
    return PrecomputedScores(source_id, probs, restricted, float(logp[UNK_INDEX]))


def _terms(scores, tokens, oov):
    terms = []
    for w in tokens:
        lp = scores.logprob(w, oov)
        if lp is not None:
            terms.append(lp)
    return terms


def score_sentence_unique(scores: PrecomputedScores, target_tokens: Sequence[str], oov=OOV_UNK) -> float:
    """Sum of log-probabilities over the distinct words of the sentence."""
    return math.fsum(_terms(scores, dict.fromkeys(target_tokens), oov))


def score_sentence_positional(scores: PrecomputedScores, target_tokens: Sequence[str], oov=OOV_UNK) -> float:
    """Sum of log-probabilities over every token occurrence."""
    return math.fsum(_terms(scores, target_tokens, oov))


def score_phrase_pair(scores: PrecomputedScores, target_phrase: Sequence[str], oov=OOV_UNK) -> float:
    # positional semantics make phrase scores additive over a segmentation
    return score_sentence_positional(scores, target_phrase, oov)


def score_sentence(scores, target_tokens, mode=POSITIONAL, oov=OOV_UNK):
    if mode == UNIQUE:
        return score_sentence_unique(scores, target_tokens, oov)
    if mode == POSITIONAL:
        return score_sentence_positional(scores, target_tokens, oov)
    raise ValueError(f"unknown scoring mode {mode!r}")


def score_phrase_table(scores: PrecomputedScores, source_tokens, table: PhraseTable, oov=OOV_UNK):
    """Scores of every phrase pair applicable to the sentence.

    Returns ``{(source_phrase, target_phrase): logprob}``.
    """
    tokens = tuple(source_tokens)
    out = {}
    for i in range(len(tokens)):
        for n in range(1, min(table.max_source_len, len(tokens) - i) + 1):
            src = tokens[i:i + n]
            for tgt in table.get(src):
                out[(src, tgt)] = score_phrase_pair(scores, tgt, oov)
    return out


@dataclass
class NBestEntry:
    """One n-best line: ``id ||| hypothesis ||| features ||| total [||| extra ...]``.

    Feature values are kept as their original strings so untouched fields are
    re-emitted byte for byte.
    """

    sentence_id: int
    hypothesis: List[str]
    feature_scores: List[Tuple[str, List[str]]]
    total: float
    total_text: str = ""
    extra: List[str] = field(default_factory=list)

    def feature(self, name):
        for n, vals in self.feature_scores:
            if n == name:
                return [float(v) for v in vals]
        return None

    def set_feature(self, name, values):
        vals = [repr(float(v)) for v in values]
        for i, (n, _) in enumerate(self.feature_scores):
            if n == name:
                self.feature_scores[i] = (name, vals)
                return
        self.feature_scores.append((name, vals))

    def set_total(self, total):
        self.total = total
        self.total_text = repr(float(total))

    def to_line(self):
        feats = " ".join(f"{n}= {' '.join(v)}" if v else f"{n}=" for n, v in self.feature_scores)
        fields = [str(self.sentence_id), " ".join(self.hypothesis), feats,
                  self.total_text or repr(self.total)] + self.extra
        return " ||| ".join(fields)


def parse_nbest_line(line: str, line_no=None) -> NBestEntry:
    where = f"line {line_no}: " if line_no is not None else ""
    fields = line.rstrip("\r\n").split(" ||| ")
    if len(fields) < 4:
        raise InputError(f"{where}malformed n-best entry (expected 4 ' ||| ' fields)")
    try:
        sid = int(fields[0])
        total_text = fields[3].strip()
        total = float(total_text)
    except ValueError:
        raise InputError(f"{where}malformed n-best entry (bad id or total)") from None
    feats: List[Tuple[str, List[str]]] = []
    for tok in fields[2].split():
        if tok.endswith("="):
            feats.append((tok[:-1], []))
        elif "=" in tok:
            name, val = tok.split("=", 1)
            feats.append((name, [val]))
        else:
            if not feats:
                raise InputError(f"{where}feature value {tok!r} without a name")
            try:
                float(tok)
            except ValueError:
                raise InputError(f"{where}non-numeric feature value {tok!r}") from None
            feats[-1][1].append(tok)
    return NBestEntry(sid, fields[1].split(), feats, total, total_text, fields[4:])


def read_nbest(stream: Iterable[str]) -> Iterator[Tuple[int, NBestEntry]]:
    for line_no, line in enumerate(stream, start=1):
        if line.strip():
            yield line_no, parse_nbest_line(line, line_no)


class ScoreCache:
    """LRU cache of forward outputs keyed by the exact source token sequence."""

    def __init__(self, model, source_vocab, maxsize=1024):
        self.model = model
        self.source_vocab = source_vocab
        self.maxsize = maxsize
        self._cache = OrderedDict()

    def output(self, source_tokens):
        key = tuple(source_tokens)
        out = self._cache.get(key)
        if out is None:
            out = forward(self.model, featurize_source(key, self.source_vocab)).output
            self._cache[key] = out
            if len(self._cache) > self.maxsize:
                self._cache.popitem(last=False)
        else:
            self._cache.move_to_end(key)
        return out


@dataclass
class RescoreStats:
    sentences: int = 0
    hypotheses: int = 0
    skipped_words: int = 0


def _groups(entries):
    group = []
    for line_no, entry in entries:
        if group and entry.sentence_id != group[0][1].sentence_id:
            yield group
            group = []
        group.append((line_no, entry))
    if group:
        yield group


def rescore_nbest(model: NetworkModel, sources: Sequence[Sequence[str]], nbest: Iterable[str],
                  source_vocab: Vocabulary, target_vocab: Vocabulary,
                  table: Optional[PhraseTable] = None, mode=POSITIONAL, weight=1.0,
                  oov=OOV_UNK, stats: Optional[RescoreStats] = None) -> Iterator[NBestEntry]:
    """Append an ``nndwl`` feature to every hypothesis and update its total.

    Consecutive lines sharing a sentence id form one group and share one
    precomputation. Without a phrase table the restricted vocabulary is the
    union of that group's hypothesis words. An existing ``nndwl`` feature is
    replaced, and its weighted contribution removed from the total first.
    """
    if mode not in (UNIQUE, POSITIONAL):
        raise ValueError(f"unknown scoring mode {mode!r}")
    stats = stats if stats is not None else RescoreStats()
    cache = ScoreCache(model, source_vocab)
    for group in _groups(read_nbest(nbest)):
        line_no, first = group[0]
        sid = first.sentence_id
        if not 0 <= sid < len(sources):
            raise InputError(f"line {line_no}: sentence id {sid} out of range (0..{len(sources) - 1})")
        src = sources[sid]
        if not src:
            raise InputError(f"line {line_no}: source sentence {sid} is empty")
        if table is not None:
            restricted = restrict_target_vocab(src, table)
        else:
            restricted = {w for _, e in group for w in e.hypothesis}
        scores = precompute(model, featurize_source(src, source_vocab), restricted, target_vocab,
                            source_id=sid, output=cache.output(src))
        stats.sentences += 1
        for _, entry in group:
            if oov == OOV_SKIP:
                stats.skipped_words += len(scores.missing(entry.hypothesis))
            value = score_sentence(scores, entry.hypothesis, mode, oov)
            old = entry.feature(FEATURE_NAME)
            total = entry.total - (weight * old[0] if old else 0.0) + weight * value
            entry.set_feature(FEATURE_NAME, [value])
            entry.set_total(total)
            stats.hypotheses += 1
            yield entry
    if stats.skipped_words:
        logger.warning("skipped %d out-of-restriction target words", stats.skipped_words)


def write_nbest(entries: Iterable[NBestEntry], out: TextIO):
    for e in entries:
        out.write(e.to_line() + "\n")
