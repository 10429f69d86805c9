"""scikit-learn compatible wrappers.

``BagOfNgramsVectorizer`` turns tokenized sentences into sparse binary
matrices; ``NNDWLClassifier`` is a multilabel classifier predicting, for each
target word, whether it appears in the translation. They compose in a
:class:`sklearn.pipeline.Pipeline` and support ``get_params``/``set_params``.
"""

import numpy as np
import scipy.sparse as sp
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .corpus import (SOURCE, TARGET, FeatureVector, NgramConfig, build_vocabulary,
                     featurize_source, featurize_target)
from .exceptions import InputError
from .network import cross_entropy, forward
from .training import TrainingConfig, evaluate, train

PREDICT_THRESHOLD = 0.5


def _tokens(doc):
    return doc.split() if isinstance(doc, str) else list(doc)


def rows_to_features(X):
    """Binary presence rows of a dense or sparse matrix as FeatureVectors."""
    X = sp.csr_matrix(X)
    X.sort_indices()
    dim = X.shape[1]
    out = []
    for r in range(X.shape[0]):
        lo, hi = X.indptr[r], X.indptr[r + 1]
        idx = X.indices[lo:hi][X.data[lo:hi] != 0]
        out.append(FeatureVector(tuple(int(i) for i in idx), dim))
    return out


def features_to_csr(vectors, dim):
    indptr = np.zeros(len(vectors) + 1, dtype=np.int64)
    indptr[1:] = np.cumsum([len(v.active) for v in vectors])
    indices = np.fromiter((i for v in vectors for i in v.active), dtype=np.int64, count=indptr[-1])
    data = np.ones(indptr[-1])
    return sp.csr_matrix((data, indices, indptr), shape=(len(vectors), dim))


class BagOfNgramsVectorizer(TransformerMixin, BaseEstimator):
    """Binary bag-of-words (optionally bag-of-n-grams) featurizer.

    Parameters
    ----------
    word_cutoff : int or None, default=None
        Number of most frequent words kept; None keeps all.
    max_bigrams, max_trigrams : int, default=0
        Most frequent adjacent bigrams/trigrams added as extra features.
        Only valid for ``side="source"``.
    side : {"source", "target"}, default="source"

    Attributes
    ----------
    vocabulary_ : Vocabulary
    """

    def __init__(self, word_cutoff=None, max_bigrams=0, max_trigrams=0, side=SOURCE):
        self.word_cutoff = word_cutoff
        self.max_bigrams = max_bigrams
        self.max_trigrams = max_trigrams
        self.side = side

    def fit(self, X, y=None):
        """X is an iterable of token lists or whitespace-tokenized strings."""
        if self.side not in (SOURCE, TARGET):
            raise ValueError(f"side must be {SOURCE!r} or {TARGET!r}")
        ngrams = NgramConfig(self.max_bigrams, self.max_trigrams)
        if self.side == TARGET and ngrams.enabled:
            raise ValueError("n-gram features are only available on the source side")
        self.vocabulary_ = build_vocabulary((_tokens(d) for d in X), self.word_cutoff, ngrams,
                                            side=self.side)
        return self

    def featurize(self, X):
        check_is_fitted(self, "vocabulary_")
        fn = featurize_source if self.side == SOURCE else featurize_target
        return [fn(_tokens(d), self.vocabulary_) for d in X]

    def transform(self, X):
        """Sparse CSR matrix of shape (n_sentences, len(vocabulary_))."""
        return features_to_csr(self.featurize(X), len(self.vocabulary_))

    def get_feature_names_out(self, input_features=None):
        check_is_fitted(self, "vocabulary_")
        return np.asarray(self.vocabulary_.tokens, dtype=object)


class NNDWLClassifier(BaseEstimator):
    """Neural discriminative word lexicon as a multilabel classifier.

    ``X`` holds binary source features and ``Y`` binary target-word labels,
    one column per target vocabulary entry. ``hidden_dims=()`` gives one
    logistic regression per target word; ``(1000,)`` a single hidden layer.

    Parameters
    ----------
    hidden_dims : tuple of int, default=(1000, 500, 1000)
    learning_rate : float, default=0.02
    batch_size : int or None, default=15
        None runs one full-batch update per epoch.
    epochs : int, default=35
    l2 : float, default=1e-5
    dropout : float, default=0.0
        Drop probability for the last hidden layer during training.
    init_scale : float, default=0.05
    use_bias : bool, default=False
    random_state : int, default=0

    Attributes
    ----------
    model_ : NetworkModel
        Snapshot with the lowest validation cross-entropy.
    epoch_reports_ : list of EpochReport
    n_features_in_ : int
    n_outputs_ : int
    """

    def __init__(self, hidden_dims=(1000, 500, 1000), learning_rate=0.02, batch_size=15,
                 epochs=35, l2=1e-5, dropout=0.0, init_scale=0.05, use_bias=False,
                 random_state=0):
        self.hidden_dims = hidden_dims
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.epochs = epochs
        self.l2 = l2
        self.dropout = dropout
        self.init_scale = init_scale
        self.use_bias = use_bias
        self.random_state = random_state

    def _config(self):
        return TrainingConfig(learning_rate=self.learning_rate, batch_size=self.batch_size,
                              epochs=self.epochs, l2=self.l2, dropout=self.dropout,
                              seed=self.random_state, hidden_dims=tuple(self.hidden_dims),
                              init_scale=self.init_scale, use_bias=self.use_bias)

    @staticmethod
    def _check_binary(M, name):
        M = check_array(M, accept_sparse="csr", dtype=np.float64)
        data = M.data if sp.issparse(M) else M
        if not np.isin(data, (0.0, 1.0)).all():
            raise InputError(f"{name} must be binary (0/1)")
        return M

    def fit(self, X, Y, eval_set=None):
        """Train on ``(X, Y)``.

        ``eval_set=(X_valid, Y_valid)`` drives best-epoch selection; without
        it the training set is used.
        """
        X = self._check_binary(X, "X")
        Y = self._check_binary(Y, "Y")
        if X.shape[0] != Y.shape[0]:
            raise InputError(f"X has {X.shape[0]} rows but Y has {Y.shape[0]}")
        pairs = list(zip(rows_to_features(X), rows_to_features(Y)))
        if eval_set is not None:
            Xv = self._check_binary(eval_set[0], "X_valid")
            Yv = self._check_binary(eval_set[1], "Y_valid")
            valid = list(zip(rows_to_features(Xv), rows_to_features(Yv)))
        else:
            valid = pairs
        self.model_, self.epoch_reports_ = train(pairs, valid, self._config())
        self.n_features_in_ = X.shape[1]
        self.n_outputs_ = Y.shape[1]
        return self

    def _features(self, X):
        check_is_fitted(self, "model_")
        X = self._check_binary(X, "X")
        if X.shape[1] != self.n_features_in_:
            raise InputError(f"X has {X.shape[1]} features, model expects {self.n_features_in_}")
        return rows_to_features(X)

    def predict_proba(self, X):
        """Array (n_samples, n_outputs) of per-word presence probabilities."""
        feats = self._features(X)
        if not feats:
            return np.empty((0, self.n_outputs_))
        return np.atleast_2d(forward(self.model_, feats).output)

    def predict(self, X):
        # exactly 0.5 counts as absent
        return (self.predict_proba(X) > PREDICT_THRESHOLD).astype(np.int64)

    def score(self, X, Y):
        """Negative mean cross-entropy (higher is better)."""
        Y = self._check_binary(Y, "Y")
        p = self.predict_proba(X)
        return -float(np.mean(cross_entropy(p, rows_to_features(Y))))

    def log_loss(self, X, Y):
        feats = self._features(X)
        return evaluate(self.model_, list(zip(feats, rows_to_features(self._check_binary(Y, "Y")))))
