"""Seeded minibatch gradient descent with best-epoch model selection."""

import dataclasses
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from .exceptions import DivergenceError, InputError
from .network import (Gradients, ModelMetadata, NetworkModel, apply_update, backward,
                      cross_entropy, forward, save_model)

logger = logging.getLogger(__name__)

# forward passes during evaluation are chunked to bound memory
EVAL_CHUNK = 256


@dataclass(frozen=True)
class TrainingConfig:
    """Hyperparameters. ``batch_size=None`` means one full-batch step per epoch."""

    learning_rate: float = 0.02
    batch_size: Optional[int] = 15
    epochs: int = 35
    l2: float = 1e-5
    dropout: float = 0.0
    seed: int = 0
    hidden_dims: Tuple[int, ...] = (1000, 500, 1000)
    init_scale: float = 0.05
    use_bias: bool = False

    def __post_init__(self):
        object.__setattr__(self, "hidden_dims", tuple(int(h) for h in self.hidden_dims))
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be > 0")
        if self.batch_size is not None and self.batch_size < 1:
            raise ValueError("batch_size must be >= 1 (or None for full batch)")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must be in [0, 1)")
        if self.l2 < 0:
            raise ValueError("l2 must be >= 0")
        if not self.init_scale > 0:
            raise ValueError("init_scale must be > 0")
        if any(h < 1 for h in self.hidden_dims):
            raise ValueError("hidden layer sizes must be >= 1")
        if self.dropout > 0 and not self.hidden_dims:
            raise ValueError("dropout needs at least one hidden layer")

    @classmethod
    def from_mapping(cls, values, base=None):
        """Build a config from string values, e.g. a parsed ``key=value`` file."""
        base = base or cls()
        fields = {f.name: f for f in dataclasses.fields(cls)}
        updates = {}
        for key, raw in values.items():
            key = key.strip().replace("-", "_")
            if key not in fields:
                raise InputError(f"unknown training option {key!r}")
            updates[key] = _coerce(key, raw)
        return dataclasses.replace(base, **updates)

    def to_dict(self):
        d = dataclasses.asdict(self)
        d["hidden_dims"] = list(self.hidden_dims)
        return d


def _coerce(key, raw):
    if not isinstance(raw, str):
        return raw
    raw = raw.strip()
    try:
        if key == "hidden_dims":
            return parse_hidden(raw)
        if key == "batch_size":
            return None if raw.lower() in ("inf", "full", "none") else int(raw)
        if key in ("epochs", "seed"):
            return int(raw)
        if key == "use_bias":
            return raw.lower() in ("1", "true", "yes", "on")
        return float(raw)
    except ValueError:
        raise InputError(f"invalid value for {key}: {raw!r}") from None


def parse_hidden(text):
    """``"1000,500,1000"`` -> ``(1000, 500, 1000)``; empty string -> no hidden layer."""
    text = text.strip()
    if not text:
        return ()
    return tuple(int(h) for h in text.replace("x", ",").split(",") if h.strip())


def read_config_file(path):
    """Parse a flat ``key=value`` file; ``#`` starts a comment."""
    values = {}
    with open(path, encoding="utf-8") as f:
        for line_no, line in enumerate(f, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise InputError(f"{path}:{line_no}: expected key=value")
            key, value = line.split("=", 1)
            values[key.strip()] = value.strip()
    return values


@dataclass(frozen=True)
class EpochReport:
    epoch: int
    train_E: float
    valid_E: float
    wall_time: float = field(default=0.0, compare=False)

    def to_line(self):
        return f"{self.epoch}\t{self.train_E!r}\t{self.valid_E!r}\t{self.wall_time:.3f}"


class TrainingDiverged(DivergenceError):
    """Raised when training hits non-finite values.

    Carries the best model seen so far and the reports of finished epochs.
    """

    def __init__(self, message, best_model, reports, layer=None):
        super().__init__(message, layer=layer)
        self.best_model = best_model
        self.reports = reports


def init_model(input_dim, hidden_dims, output_dim, seed=0, init_scale=0.05,
               use_bias=False, metadata=None) -> NetworkModel:
    """Uniform ``[-init_scale, init_scale]`` weights from a seeded generator.

    Biases, when enabled, start at zero.
    """
    dims = [input_dim, *hidden_dims, output_dim]
    if any(d < 1 for d in dims):
        raise ValueError(f"all layer sizes must be >= 1, got {dims}")
    rng = np.random.default_rng([seed, 0])
    ws = tuple(rng.uniform(-init_scale, init_scale, size=(dims[k], dims[k + 1]))
               for k in range(len(dims) - 1))
    bs = tuple(np.zeros(d) for d in dims[1:]) if use_bias else None
    return NetworkModel(ws, bs, metadata or ModelMetadata(seed=seed))


def evaluate(model: NetworkModel, pairs: Sequence) -> float:
    """Mean cross-entropy over ``(source, target)`` pairs, no dropout."""
    if not pairs:
        raise InputError("cannot evaluate on an empty set")
    losses = []
    for start in range(0, len(pairs), EVAL_CHUNK):
        chunk = pairs[start:start + EVAL_CHUNK]
        acts = forward(model, [s for s, _ in chunk])
        losses.append(cross_entropy(acts.output, [t for _, t in chunk]))
    return float(np.mean(np.concatenate(losses)))


def minibatch_gradient(model, batch, dropout=None) -> Gradients:
    """Mean gradient over the instances of ``batch``."""
    acts = forward(model, [s for s, _ in batch], dropout=dropout)
    return backward(model, acts, [t for _, t in batch]).scale(1.0 / len(batch))


def train(train_pairs: Sequence, valid_pairs: Sequence, config: TrainingConfig,
          metadata: Optional[ModelMetadata] = None, snapshot_dir=None,
          on_epoch: Optional[Callable[[EpochReport], None]] = None,
          initial_model: Optional[NetworkModel] = None):
    """Train a model and return ``(best_model, reports)``.

    Each epoch shuffles the training pairs, applies one update per minibatch
    and then scores the validation set. The returned model is the snapshot
    with the lowest validation error, the earliest on ties. With
    ``snapshot_dir`` every improving epoch is also written to disk.
    """
    if not train_pairs:
        raise InputError("no training pairs")
    if not valid_pairs:
        raise InputError("no validation pairs")
    train_pairs = list(train_pairs)
    in_dim, out_dim = train_pairs[0][0].dim, train_pairs[0][1].dim
    meta = metadata or ModelMetadata(seed=config.seed)
    model = initial_model or init_model(in_dim, config.hidden_dims, out_dim, seed=config.seed,
                                        init_scale=config.init_scale, use_bias=config.use_bias,
                                        metadata=meta)
    for s, t in list(train_pairs) + list(valid_pairs):
        if s.dim != model.input_dim or t.dim != model.output_dim:
            raise InputError(
                f"pair dims ({s.dim}, {t.dim}) do not match model ({model.input_dim}, {model.output_dim})")

    shuffle_rng = np.random.default_rng([config.seed, 1])
    dropout_rng = np.random.default_rng([config.seed, 2])
    dropout = (config.dropout, dropout_rng) if config.dropout > 0 else None
    n = len(train_pairs)
    bs = n if config.batch_size is None else config.batch_size
    if snapshot_dir is not None:
        Path(snapshot_dir).mkdir(parents=True, exist_ok=True)

    reports: List[EpochReport] = []
    best, best_E = None, np.inf
    for epoch in range(1, config.epochs + 1):
        t0 = time.perf_counter()
        order = shuffle_rng.permutation(n)
        try:
            for start in range(0, n, bs):
                batch = [train_pairs[i] for i in order[start:start + bs]]
                model = apply_update(model, minibatch_gradient(model, batch, dropout),
                                     config.learning_rate, config.l2)
        except DivergenceError as e:
            raise TrainingDiverged(f"epoch {epoch}: {e}", best, reports, layer=e.layer) from e
        train_E = evaluate(model, train_pairs)
        valid_E = evaluate(model, valid_pairs)
        if not (np.isfinite(train_E) and np.isfinite(valid_E)):
            raise TrainingDiverged(f"epoch {epoch}: non-finite loss", best, reports)
        report = EpochReport(epoch, train_E, valid_E, time.perf_counter() - t0)
        reports.append(report)
        logger.info("epoch %d train_E=%.6f valid_E=%.6f (%.1fs)", epoch, train_E, valid_E,
                    report.wall_time)
        if valid_E < best_E:
            best, best_E = model, valid_E
            if snapshot_dir is not None:
                save_model(model, Path(snapshot_dir) / f"epoch-{epoch:03d}.nndwl")
        if on_epoch is not None:
            on_epoch(report)
    return best, reports
