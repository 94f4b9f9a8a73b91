"""Federated model core: parameter vectors, FedAvg/FedBN aggregation,
local mini-batch SGD on a softmax classifier, and a synthetic accuracy
backend.

The classifier is multinomial logistic regression preceded by a per-client
standardization layer (``norm.shift``, ``norm.scale``). The standardization
spans form the *local* partition, which FedBN keeps out of aggregation; the
linear layer (``fc.weight``, ``fc.bias``) is the *shared* partition.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable, Hashable, Protocol, Sequence

import numpy as np

from .errors import StructuralError, ValidationError

SHARED = "shared"
LOCAL = "local"
FEDAVG = "fedavg"
FEDBN = "fedbn"

_NORM_EPS = 1e-5


@dataclass(frozen=True)
class Span:
    name: str
    start: int
    stop: int
    partition: str

    @property
    def size(self) -> int:
        return self.stop - self.start


@dataclass
class ParamVector:
    """Flat float64 parameters with a named shared/local layout."""

    values: np.ndarray
    layout: tuple[Span, ...]

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        self.layout = tuple(self.layout)
        if self.values.ndim != 1:
            raise StructuralError("parameter values must be a flat vector")
        pos = 0
        for span in self.layout:
            if span.start != pos or span.stop < span.start:
                raise StructuralError(f"span {span.name!r} breaks contiguity at {pos}")
            if span.partition not in (SHARED, LOCAL):
                raise StructuralError(f"span {span.name!r} has unknown partition {span.partition!r}")
            pos = span.stop
        if pos != self.values.size:
            raise StructuralError(f"layout covers {pos} values, vector has {self.values.size}")
        if not any(s.partition == SHARED for s in self.layout):
            raise StructuralError("layout needs at least one shared span")
        if len({s.name for s in self.layout}) != len(self.layout):
            raise StructuralError("span names must be unique")
        if not np.all(np.isfinite(self.values)):
            raise ValidationError("parameter values must be finite")

    def __getitem__(self, name: str) -> np.ndarray:
        span = self._span(name)
        return self.values[span.start:span.stop]

    def _span(self, name: str) -> Span:
        for span in self.layout:
            if span.name == name:
                return span
        raise KeyError(name)

    def mask(self, partition: str) -> np.ndarray:
        m = np.zeros(self.values.size, dtype=bool)
        for span in self.layout:
            if span.partition == partition:
                m[span.start:span.stop] = True
        return m

    def copy(self) -> "ParamVector":
        return ParamVector(self.values.copy(), self.layout)

    def with_values(self, values: np.ndarray) -> "ParamVector":
        return ParamVector(values, self.layout)


@dataclass
class LabeledDataset:
    features: np.ndarray
    labels: np.ndarray
    n_classes: int

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.features.ndim != 2:
            raise ValidationError("features must be a 2-D matrix")
        if self.features.shape[0] != self.labels.shape[0]:
            raise ValidationError(
                f"{self.features.shape[0]} feature rows but {self.labels.shape[0]} labels")
        if self.n_classes < 2:
            raise ValidationError("need at least two classes")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.n_classes):
            raise ValidationError("labels out of range [0, n_classes)")
        if not np.all(np.isfinite(self.features)):
            raise ValidationError("features must be finite")

    def __len__(self) -> int:
        return int(self.labels.shape[0])

    @property
    def n_features(self) -> int:
        return int(self.features.shape[1])

    @classmethod
    def empty(cls, n_features: int, n_classes: int) -> "LabeledDataset":
        return cls(np.zeros((0, n_features)), np.zeros(0, dtype=np.int64), n_classes)

    def concat(self, other: "LabeledDataset") -> "LabeledDataset":
        return LabeledDataset(
            np.vstack([self.features, other.features]),
            np.concatenate([self.labels, other.labels]),
            self.n_classes,
        )

    def subset(self, idx) -> "LabeledDataset":
        return LabeledDataset(self.features[idx], self.labels[idx], self.n_classes)


@dataclass
class TrainerConfig:
    epochs: int = 1
    batch_size: int = 32
    learning_rate: float = 0.05
    rng: np.random.Generator = field(default_factory=lambda: np.random.default_rng(0))

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ValidationError("epochs and batch_size must be positive")
        if self.learning_rate < 0:
            raise ValidationError("learning_rate must be non-negative")


# --- softmax classifier -----------------------------------------------------

def softmax_layout(n_features: int, n_classes: int) -> tuple[Span, ...]:
    d, c = n_features, n_classes
    return (
        Span("norm.shift", 0, d, LOCAL),
        Span("norm.scale", d, 2 * d, LOCAL),
        Span("fc.weight", 2 * d, 2 * d + c * d, SHARED),
        Span("fc.bias", 2 * d + c * d, 2 * d + c * d + c, SHARED),
    )


def init_softmax_model(n_features: int, n_classes: int, rng: np.random.Generator,
                       sd: float = 0.01) -> ParamVector:
    """Gaussian(0, sd) weights, zero biases, identity standardization."""
    layout = softmax_layout(n_features, n_classes)
    values = np.zeros(layout[-1].stop)
    values[n_features:2 * n_features] = 1.0
    values[layout[2].start:layout[2].stop] = rng.normal(0.0, sd, n_classes * n_features)
    return ParamVector(values, layout)


def _dims(model: ParamVector) -> tuple[int, int]:
    d = model._span("norm.shift").size
    c = model._span("fc.bias").size
    return d, c


def _check_model_fits(model: ParamVector, data: LabeledDataset) -> None:
    try:
        d, c = _dims(model)
    except KeyError as exc:
        raise StructuralError(f"model lacks softmax span {exc}") from None
    if model.layout != softmax_layout(d, c):
        raise StructuralError("model layout is not a softmax-classifier layout")
    if d != data.n_features or c != data.n_classes:
        raise StructuralError(
            f"model expects {d} features / {c} classes, data has "
            f"{data.n_features} / {data.n_classes}")


def _normalize(model: ParamVector, x: np.ndarray) -> np.ndarray:
    return (x - model["norm.shift"]) * model["norm.scale"]


def class_scores(model: ParamVector, x: np.ndarray) -> np.ndarray:
    d, c = _dims(model)
    w = model["fc.weight"].reshape(c, d)
    return _normalize(model, x) @ w.T + model["fc.bias"]


def _log_softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def cross_entropy(model: ParamVector, x: np.ndarray, y: np.ndarray) -> float:
    """Mean multinomial cross-entropy of the classifier on (x, y)."""
    logp = _log_softmax(class_scores(model, x))
    return float(-logp[np.arange(len(y)), y].mean())


def _linear_grad(w, b, z, y):
    scores = z @ w.T + b
    p = np.exp(_log_softmax(scores))
    p[np.arange(len(y)), y] -= 1.0
    p /= len(y)
    return p.T @ z, p.sum(axis=0)


def cross_entropy_grad(model: ParamVector, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Analytic gradient of :func:`cross_entropy`, full-length.

    Only the linear layer is trained by gradient descent, so the entries for
    the standardization spans are zero.
    """
    d, c = _dims(model)
    gw, gb = _linear_grad(model["fc.weight"].reshape(c, d), model["fc.bias"],
                          _normalize(model, x), y)
    grad = np.zeros_like(model.values)
    w_span, b_span = model._span("fc.weight"), model._span("fc.bias")
    grad[w_span.start:w_span.stop] = gw.ravel()
    grad[b_span.start:b_span.stop] = gb
    return grad


def fit_normalization(model: ParamVector, data: LabeledDataset) -> ParamVector:
    """Re-estimate the standardization spans from ``data``.

    Needs at least two samples; otherwise the model is returned unchanged.
    """
    if len(data) < 2:
        return model
    _check_model_fits(model, data)
    out = model.copy()
    out["norm.shift"][:] = data.features.mean(axis=0)
    out["norm.scale"][:] = 1.0 / np.sqrt(data.features.var(axis=0) + _NORM_EPS)
    return out


def local_update(model: ParamVector, data: LabeledDataset,
                 cfg: TrainerConfig) -> tuple[ParamVector, int]:
    """Run ``cfg.epochs`` epochs of shuffled mini-batch SGD.

    Returns the updated model and the number of SGD steps taken. An empty
    dataset is a no-op (model unchanged, 0 steps).
    """
    if len(data) == 0:
        return model, 0
    _check_model_fits(model, data)
    d, c = _dims(model)
    out = model.copy()
    w = out["fc.weight"].reshape(c, d)   # views into out.values
    b = out["fc.bias"]
    z = _normalize(model, data.features)
    n = len(data)
    steps = 0
    for _ in range(cfg.epochs):
        order = cfg.rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            gw, gb = _linear_grad(w, b, z[idx], data.labels[idx])
            w -= cfg.learning_rate * gw
            b -= cfg.learning_rate * gb
            steps += 1
    if not np.all(np.isfinite(out.values)):
        raise ValidationError("SGD diverged to non-finite parameters")
    return out, steps


def evaluate_accuracy(model: ParamVector, data: LabeledDataset) -> float:
    """Fraction of argmax-correct predictions; score ties go to the lowest class id."""
    if len(data) == 0:
        raise ValidationError("cannot evaluate accuracy on an empty dataset")
    _check_model_fits(model, data)
    pred = np.argmax(class_scores(model, data.features), axis=1)
    return float(np.mean(pred == data.labels))


# --- aggregation ------------------------------------------------------------

def _check_weights(weights: Sequence[float], n: int) -> np.ndarray:
    w = np.asarray(weights, dtype=np.float64)
    if w.shape != (n,):
        raise ValidationError(f"expected {n} weights, got {w.shape}")
    if np.any(w < 0) or not np.all(np.isfinite(w)):
        raise ValidationError("aggregation weights must be finite and non-negative")
    if abs(w.sum() - 1.0) > 1e-9:
        raise ValidationError(f"aggregation weights sum to {w.sum()!r}, not 1")
    return w


def aggregate(models: Sequence[ParamVector], weights: Sequence[float],
              mode: str = FEDAVG) -> ParamVector:
    """Weighted parameter average.

    Every span of the returned vector is the weighted mean, including the
    local spans in FedBN mode (kept for reporting only); use
    :func:`redistribute` to obtain the model a client actually receives.
    Coordinates on which all inputs agree are copied exactly, and results
    are clipped to the inputs' range, so rounding can never leave the
    convex hull.
    """
    if not models:
        raise ValidationError("nothing to aggregate")
    if mode not in (FEDAVG, FEDBN):
        raise ValidationError(f"unknown aggregation mode {mode!r}")
    layout = models[0].layout
    for m in models[1:]:
        if m.layout != layout:
            raise StructuralError("models do not share one layout")
    w = _check_weights(weights, len(models))
    stack = np.stack([m.values for m in models])
    mean = w @ stack
    lo, hi = stack.min(axis=0), stack.max(axis=0)
    mean = np.where(lo == hi, stack[0], np.clip(mean, lo, hi))
    return ParamVector(mean, layout)


def redistribute(global_model: ParamVector, client_model: ParamVector,
                 mode: str = FEDAVG) -> ParamVector:
    """The model dispatched to one client after aggregation."""
    if global_model.layout != client_model.layout:
        raise StructuralError("models do not share one layout")
    if mode == FEDAVG:
        return global_model.copy()
    local = global_model.mask(LOCAL)
    return global_model.with_values(np.where(local, client_model.values, global_model.values))


# --- sharing round ----------------------------------------------------------

class SharingClient(Protocol):
    client_id: Hashable
    model: ParamVector
    train: LabeledDataset
    val: LabeledDataset
    trainer: TrainerConfig


@dataclass
class SharingResult:
    global_model: ParamVector
    models: dict            # client id -> model the client holds after the round
    local_models: dict      # client id -> last local_update output (frozen snapshot)
    weights: dict           # client id -> aggregation weight used
    accuracies: dict        # client id -> validation accuracy of its final model
    iterations: dict        # client id -> SGD steps run this round
    aggregation_iterations: int
    history: list           # per aggregation iteration: {client id: accuracy}


def aggregation_weights(sizes: dict) -> dict:
    """Weights proportional to training-set size (equal split if all empty)."""
    total = sum(sizes.values())
    if total == 0:
        return {k: 1.0 / len(sizes) for k in sizes}
    return {k: v / total for k, v in sizes.items()}


def run_sharing_round(global_model: ParamVector, clients: Sequence[SharingClient],
                      max_iters: int, early_stop_delta: float, mode: str = FEDAVG,
                      local_fn: Callable = local_update,
                      eval_fn: Callable = evaluate_accuracy,
                      refit_normalization: bool = True) -> SharingResult:
    """Dispatch / local update / aggregate, up to ``max_iters`` times.

    Stops after an iteration (never the first) in which every client's
    validation accuracy moved by less than ``early_stop_delta``.
    """
    if not clients:
        raise ValidationError("a sharing round needs at least one client")
    if max_iters < 1:
        raise ValidationError("max_iters must be >= 1")
    ids = [c.client_id for c in clients]
    weights = aggregation_weights({c.client_id: len(c.train) for c in clients})
    wvec = [weights[i] for i in ids]

    start = {}
    for c in clients:
        m = redistribute(global_model, c.model, mode)
        start[c.client_id] = fit_normalization(m, c.train) if refit_normalization else m

    steps = dict.fromkeys(ids, 0)
    history: list[dict] = []
    prev = None
    for _ in range(max_iters):
        local = {}
        for c in clients:
            local[c.client_id], k = local_fn(start[c.client_id], c.train, c.trainer)
            steps[c.client_id] += k
        global_model = aggregate([local[i] for i in ids], wvec, mode)
        start = {i: redistribute(global_model, local[i], mode) for i in ids}
        acc = {c.client_id: eval_fn(start[c.client_id], c.val) for c in clients}
        history.append(acc)
        if prev is not None and all(abs(acc[i] - prev[i]) < early_stop_delta for i in ids):
            break
        prev = acc

    return SharingResult(global_model, start, local, weights, history[-1], steps,
                         len(history), history)


# --- synthetic accuracy backend ----------------------------------------------

@dataclass(frozen=True)
class AccuracyOracleParams:
    a_max: float = 0.9
    tau: float = 1000.0
    hetero_factor: float = 1.0
    quality_weight: float = 1.0
    noise_sd: float = 0.0

    def __post_init__(self):
        if not 0 < self.a_max <= 1:
            raise ValidationError("a_max must lie in (0, 1]")
        if self.tau <= 0:
            raise ValidationError("tau must be positive")
        if not 0 < self.hetero_factor <= 1:
            raise ValidationError("hetero_factor must lie in (0, 1]")
        if not 0 <= self.quality_weight <= 1:
            raise ValidationError("quality_weight must lie in [0, 1]")
        if self.noise_sd < 0:
            raise ValidationError("noise_sd must be non-negative")

    def mean_accuracy(self, effective_samples: float) -> float:
        return self.a_max * self.hetero_factor * -math.expm1(-effective_samples / self.tau)


def oracle_accuracy(params: AccuracyOracleParams, effective_samples: float,
                    rng: np.random.Generator | None = None, noise: float | None = None) -> float:
    """Saturating accuracy curve plus Gaussian noise, clamped to [0, 1].

    The noise term is drawn from ``rng`` unless given explicitly via
    ``noise``; a zero ``noise_sd`` consumes no randomness.
    """
    if effective_samples < 0:
        raise ValidationError("effective sample count must be non-negative")
    if noise is None:
        noise = rng.normal(0.0, params.noise_sd) if params.noise_sd > 0 else 0.0
    return float(min(1.0, max(0.0, params.mean_accuracy(effective_samples) + noise)))


# --- checkpoints --------------------------------------------------------------

def save_checkpoint(path, model: ParamVector) -> None:
    """Write a one-line JSON layout manifest followed by little-endian float64 values."""
    manifest = {
        "format": "fedwelfare-checkpoint",
        "version": 1,
        "dtype": "<f8",
        "n_values": int(model.values.size),
        "layout": [[s.name, s.start, s.stop, s.partition] for s in model.layout],
    }
    with open(path, "wb") as fh:
        fh.write(json.dumps(manifest, sort_keys=True).encode("utf-8") + b"\n")
        fh.write(model.values.astype("<f8").tobytes())


def load_checkpoint(path) -> ParamVector:
    with open(path, "rb") as fh:
        header = fh.readline()
        body = fh.read()
    manifest = json.loads(header)
    n = manifest["n_values"]
    if len(body) != 8 * n:
        raise StructuralError(f"checkpoint holds {len(body)} bytes, manifest expects {8 * n}")
    layout = tuple(Span(name, a, b, part) for name, a, b, part in manifest["layout"])
    return ParamVector(np.frombuffer(body, dtype="<f8").astype(np.float64), layout)
