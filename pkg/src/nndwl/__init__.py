"""Neural discriminative word lexicon: training and scoring toolkit."""

__version__ = "0.1.0"

from .corpus import (FeatureVector, NgramConfig, SentencePair, Vocabulary, build_vocabulary,
                     extract_ngrams, featurize_source, featurize_target, load_parallel_corpus)
from .estimator import BagOfNgramsVectorizer, NNDWLClassifier
from .network import (LayerActivations, ModelMetadata, NetworkModel, apply_update, backward,
                      cross_entropy, deserialize, forward, serialize, sigmoid)
from .scoring import (NBestEntry, PhraseTable, PrecomputedScores, precompute, rescore_nbest,
                      restrict_target_vocab, score_phrase_pair, score_sentence_positional,
                      score_sentence_unique)
from .training import EpochReport, TrainingConfig, evaluate, init_model, train

__all__ = [
    "BagOfNgramsVectorizer", "EpochReport", "FeatureVector", "LayerActivations",
    "ModelMetadata", "NBestEntry", "NNDWLClassifier", "NetworkModel", "NgramConfig",
    "PhraseTable", "PrecomputedScores", "SentencePair", "TrainingConfig", "Vocabulary",
    "apply_update", "backward", "build_vocabulary", "cross_entropy", "deserialize",
    "evaluate", "extract_ngrams", "featurize_source", "featurize_target", "forward",
    "init_model", "load_parallel_corpus", "precompute", "rescore_nbest",
    "restrict_target_vocab", "score_phrase_pair", "score_sentence_positional",
    "score_sentence_unique", "serialize", "sigmoid", "train",
]
