"""Sigmoid feed-forward network with a multivariate binary output.

A model is a chain of ``K`` weight matrices, ``weights[k]`` of shape
``dims[k] x dims[k + 1]``. Every layer, output included, applies the logistic
sigmoid. ``K = 1`` is a bank of independent logistic regressions over the
input indicators.

Functions here accept either a single :class:`~nndwl.corpus.FeatureVector`
(activations are 1-D) or a sequence of them (activations are 2-D, one row per
instance). :func:`backward` always returns gradients summed over instances.
"""

import hashlib
import json
import struct
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np

from .corpus import FeatureVector, NgramConfig
from .exceptions import DimensionError, DivergenceError, ModelFormatError

EPS = 1e-12

MAGIC = b"NNDWL"
FORMAT_VERSION = 1
_FLAG_BIAS = 0x01


@dataclass(frozen=True)
class ModelMetadata:
    source_vocab_sha256: str = ""
    target_vocab_sha256: str = ""
    max_bigrams: int = 0
    max_trigrams: int = 0
    seed: Optional[int] = None

    @property
    def ngram_config(self):
        return NgramConfig(self.max_bigrams, self.max_trigrams)


@dataclass(frozen=True, eq=False)
class NetworkModel:
    weights: tuple
    biases: Optional[tuple] = None
    metadata: ModelMetadata = field(default_factory=ModelMetadata)

    def __post_init__(self):
        if not self.weights:
            raise ValueError("a model needs at least one weight matrix")
        ws = tuple(np.asarray(w, dtype=np.float64) for w in self.weights)
        for k, w in enumerate(ws):
            if w.ndim != 2:
                raise DimensionError(f"weights[{k}] must be 2-D, got shape {w.shape}")
            if k and ws[k - 1].shape[1] != w.shape[0]:
                raise DimensionError(
                    f"layer {k}: expected {ws[k - 1].shape[1]} rows, got {w.shape[0]}")
        object.__setattr__(self, "weights", ws)
        if self.biases is not None:
            bs = tuple(np.asarray(b, dtype=np.float64) for b in self.biases)
            if len(bs) != len(ws) or any(b.shape != (w.shape[1],) for b, w in zip(bs, ws)):
                raise DimensionError("bias vectors must match the weight columns")
            object.__setattr__(self, "biases", bs)

    @property
    def dims(self):
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    @property
    def n_layers(self):
        return len(self.weights)

    @property
    def input_dim(self):
        return self.dims[0]

    @property
    def output_dim(self):
        return self.dims[-1]

    def is_finite(self):
        params = list(self.weights) + list(self.biases or ())
        return all(np.isfinite(p).all() for p in params)

    def __eq__(self, other):
        if not isinstance(other, NetworkModel) or self.metadata != other.metadata:
            return False
        if (self.biases is None) != (other.biases is None):
            return False
        pairs = list(zip(self.weights, other.weights)) + list(zip(self.biases or (), other.biases or ()))
        return self.dims == other.dims and all(np.array_equal(a, b) for a, b in pairs)

    __hash__ = None


@dataclass
class Gradients:
    weights: list
    biases: Optional[list] = None

    def scale(self, factor):
        return Gradients([g * factor for g in self.weights],
                         None if self.biases is None else [g * factor for g in self.biases])


@dataclass
class LayerActivations:
    """Outputs ``O(0) .. O(K)`` of a forward pass.

    ``values[0]`` is the densified input and ``values[-1]`` the output
    probabilities. When dropout was applied, ``mask`` holds the per-unit
    multipliers (0 or ``1/(1-p)``) of the last hidden layer and ``values[-2]``
    is the masked layer; ``undropped`` keeps its values before masking.
    """

    values: list
    active: list
    mask: Optional[np.ndarray] = None
    undropped: Optional[np.ndarray] = None

    @property
    def output(self):
        return self.values[-1]


def sigmoid(x):
    """Logistic function ``1 / (1 + exp(-x))``, overflow-free for large ``|x|``."""
    x = np.asarray(x, dtype=np.float64)
    e = np.exp(-np.abs(x))
    out = np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return out[()] if out.ndim == 0 else out


def _as_batch(inputs):
    if isinstance(inputs, FeatureVector):
        return [inputs], True
    return list(inputs), False


def forward(model: NetworkModel, inputs, dropout=None) -> LayerActivations:
    """Run the network on one feature vector or a sequence of them.

    Layer one sums weight rows of the active input indices only. ``dropout``
    is a ``(p, rng)`` pair; it zeroes units of the last hidden layer with
    probability ``p`` and scales survivors by ``1/(1-p)``.
    """
    # huge finite weights can overflow pre-activations; sigmoid saturates and
    # NaN losses are caught by the training loop
    with np.errstate(over="ignore", invalid="ignore"):
        return _forward(model, inputs, dropout)


def _forward(model, inputs, dropout):
    batch, single = _as_batch(inputs)
    n_in = model.input_dim
    for fv in batch:
        if fv.dim != n_in:
            raise DimensionError(f"input dimension mismatch: model expects {n_in}, got {fv.dim}")
    K = model.n_layers
    if dropout is not None and K == 1:
        raise ValueError("dropout needs at least one hidden layer")
    w1 = model.weights[0]
    active = [np.asarray(fv.active, dtype=np.intp) for fv in batch]

    x = np.zeros((len(batch), n_in))
    z = np.empty((len(batch), w1.shape[1]))
    for r, idx in enumerate(active):
        x[r, idx] = 1.0
        z[r] = w1[idx].sum(axis=0) if idx.size else 0.0
    if model.biases is not None:
        z += model.biases[0]
    values = [x, sigmoid(z)]

    mask = undropped = None
    for k in range(1, K):
        prev = values[-1]
        if k == K - 1 and dropout is not None:
            p, rng = dropout
            if not 0.0 <= p < 1.0:
                raise ValueError("dropout probability must be in [0, 1)")
            undropped = prev
            mask = (rng.random(prev.shape) >= p) / (1.0 - p)
            prev = prev * mask
            values[-1] = prev
        z = prev @ model.weights[k]
        if model.biases is not None:
            z += model.biases[k]
        values.append(sigmoid(z))

    if single:
        values = [v[0] for v in values]
        mask = None if mask is None else mask[0]
        undropped = None if undropped is None else undropped[0]
    return LayerActivations(values, active, mask, undropped)


def _labels_matrix(labels, n_out):
    batch, single = _as_batch(labels)
    t = np.zeros((len(batch), n_out))
    for r, fv in enumerate(batch):
        if fv.dim != n_out:
            raise DimensionError(f"label dimension mismatch: expected {n_out}, got {fv.dim}")
        t[r, list(fv.active)] = 1.0
    return t, single


def cross_entropy(p, labels):
    """Mean binary cross-entropy over output components.

    ``p`` is a 1-D probability vector with ``labels`` one FeatureVector, or a
    2-D array with a sequence of labels, in which case one value per row is
    returned. Probabilities are clamped to ``[EPS, 1 - EPS]``.
    """
    p = np.asarray(p, dtype=np.float64)
    t, single = _labels_matrix(labels, p.shape[-1])
    p2 = np.clip(np.atleast_2d(p), EPS, 1.0 - EPS)
    if p2.shape[0] != t.shape[0]:
        raise DimensionError(f"{p2.shape[0]} probability rows for {t.shape[0]} label vectors")
    e = -np.mean(t * np.log(p2) + (1.0 - t) * np.log1p(-p2), axis=1)
    return float(e[0]) if single else e


def backward(model: NetworkModel, acts: LayerActivations, labels) -> Gradients:
    """Exact gradients of :func:`cross_entropy` (summed over instances).

    The output delta is ``(O(K) - t) / V_t``; inner deltas follow the chain
    rule through ``O (1 - O)``. Units zeroed by dropout get zero gradient.
    """
    K = model.n_layers
    dims = model.dims
    O = [np.atleast_2d(v) for v in acts.values]
    if len(O) != K + 1 or any(o.shape[1] != d for o, d in zip(O, dims)):
        raise DimensionError(
            f"activations {[o.shape[1] for o in O]} do not match model dims {dims}")
    t, _ = _labels_matrix(labels, dims[-1])
    if t.shape[0] != O[-1].shape[0]:
        raise DimensionError("label count does not match activation batch size")

    delta = (O[-1] - t) / dims[-1]
    grads_w = [None] * K
    grads_b = [None] * K if model.biases is not None else None
    for k in range(K - 1, 0, -1):
        grads_w[k] = O[k].T @ delta
        if grads_b is not None:
            grads_b[k] = delta.sum(axis=0)
        back = delta @ model.weights[k].T
        if k == K - 1 and acts.mask is not None:
            mask = np.atleast_2d(acts.mask)
            raw = np.atleast_2d(acts.undropped)
            delta = back * mask * raw * (1.0 - raw)
        else:
            delta = back * O[k] * (1.0 - O[k])

    g1 = np.zeros_like(model.weights[0])
    for r, idx in enumerate(acts.active):
        g1[idx] += delta[r]
    grads_w[0] = g1
    if grads_b is not None:
        grads_b[0] = delta.sum(axis=0)
    return Gradients(grads_w, grads_b)


def apply_update(model: NetworkModel, grad_sum: Gradients, learning_rate, l2=0.0) -> NetworkModel:
    """``W <- W - lr * (grad + l2 * W)`` for every layer; returns a new model.

    Bias vectors are not decayed.
    """
    if learning_rate <= 0 or l2 < 0:
        raise ValueError("learning_rate must be > 0 and l2 >= 0")
    if len(grad_sum.weights) != model.n_layers:
        raise DimensionError("gradient set does not match the model depth")
    new_w = []
    for k, (w, g) in enumerate(zip(model.weights, grad_sum.weights)):
        if g.shape != w.shape:
            raise DimensionError(f"layer {k}: gradient shape {g.shape} != weight shape {w.shape}")
        with np.errstate(over="ignore", invalid="ignore"):
            nw = w - learning_rate * (g + l2 * w) if l2 else w - learning_rate * g
        if not np.isfinite(nw).all():
            raise DivergenceError(f"divergence detected in layer {k}", layer=k)
        new_w.append(nw)
    new_b = None
    if model.biases is not None:
        new_b = []
        for k, (b, g) in enumerate(zip(model.biases, grad_sum.biases)):
            nb = b - learning_rate * g
            if not np.isfinite(nb).all():
                raise DivergenceError(f"divergence detected in layer {k} bias", layer=k)
            new_b.append(nb)
    return NetworkModel(tuple(new_w), None if new_b is None else tuple(new_b), model.metadata)


# Model file layout (all integers little-endian):
#   "NNDWL" | u8 version | u8 flags | u32 K | (K+1) x u64 dims
#   | u32 metadata length | metadata JSON (UTF-8)
#   | payload: K row-major f64 matrices, then K bias vectors if flagged
#   | 32-byte SHA-256 of the payload

def serialize(model: NetworkModel) -> bytes:
    K = model.n_layers
    flags = _FLAG_BIAS if model.biases is not None else 0
    meta = json.dumps(asdict(model.metadata), sort_keys=True, separators=(",", ":")).encode("utf-8")
    header = MAGIC + struct.pack("<BBI", FORMAT_VERSION, flags, K)
    header += struct.pack(f"<{K + 1}Q", *model.dims)
    header += struct.pack("<I", len(meta)) + meta
    arrays = list(model.weights) + list(model.biases or ())
    payload = b"".join(np.ascontiguousarray(a, dtype="<f8").tobytes() for a in arrays)
    return header + payload + hashlib.sha256(payload).digest()


class _Reader:
    def __init__(self, data):
        self.data = memoryview(data)
        self.pos = 0

    def take(self, n):
        if self.pos + n > len(self.data):
            raise ModelFormatError("unexpected end of model file", offset=len(self.data))
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def deserialize(data: bytes) -> NetworkModel:
    r = _Reader(data)
    if len(data) < len(MAGIC) or bytes(data[:len(MAGIC)]) != MAGIC:
        raise ModelFormatError("not an NNDWL model", offset=0)
    r.take(len(MAGIC))
    version, flags, K = r.unpack("<BBI")
    if version != FORMAT_VERSION:
        raise ModelFormatError(f"unsupported model format version {version}", offset=len(MAGIC))
    if K < 1:
        raise ModelFormatError("model has no layers", offset=r.pos - 4)
    dims = r.unpack(f"<{K + 1}Q")
    (meta_len,) = r.unpack("<I")
    meta_at = r.pos
    try:
        meta = ModelMetadata(**json.loads(bytes(r.take(meta_len)).decode("utf-8")))
    except (ValueError, TypeError) as e:
        raise ModelFormatError(f"bad metadata: {e}", offset=meta_at) from None

    payload_at = r.pos
    shapes = [(dims[k], dims[k + 1]) for k in range(K)]
    if flags & _FLAG_BIAS:
        shapes += [(dims[k + 1],) for k in range(K)]
    arrays = []
    for shape in shapes:
        at = r.pos
        a = np.frombuffer(r.take(8 * int(np.prod(shape))), dtype="<f8").astype(np.float64).reshape(shape)
        if not np.isfinite(a).all():
            raise ModelFormatError("non-finite value in model payload", offset=at)
        arrays.append(a)
    payload = bytes(r.data[payload_at:r.pos])
    digest = bytes(r.take(32))
    if digest != hashlib.sha256(payload).digest():
        raise ModelFormatError("payload checksum mismatch", offset=r.pos - 32)
    if r.pos != len(data):
        raise ModelFormatError("trailing bytes after checksum", offset=r.pos)
    weights = tuple(arrays[:K])
    biases = tuple(arrays[K:]) if flags & _FLAG_BIAS else None
    return NetworkModel(weights, biases, meta)


def save_model(model, path):
    with open(path, "wb") as f:
        f.write(serialize(model))


def load_model(path):
    with open(path, "rb") as f:
        return deserialize(f.read())


def zero_model(dims: Sequence[int], metadata=None) -> NetworkModel:
    ws = tuple(np.zeros((dims[k], dims[k + 1])) for k in range(len(dims) - 1))
    return NetworkModel(ws, metadata=metadata or ModelMetadata())
