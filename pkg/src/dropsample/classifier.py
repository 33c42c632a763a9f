"""k-way softmax classifier with an optional rectified hidden layer.

Inputs are flat feature vectors; a constant 1 is prepended internally so
every weight row carries its bias in column 0.  Parameters live in one flat
float64 vector (``model.params``) so gradients, SGD steps and checkpoints
share a single layout:

* linear: ``W`` of shape ``(k, n + 1)``;
* hidden: ``W1`` of shape ``(h, n + 1)`` followed by ``W2`` of shape ``(k, h + 1)``.

Mini-batch averages divide by the batch size.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .sampler import GroupThresholds, SampleGroup, classify_groups


class ClassifierDomainError(ValueError):
    pass


@dataclass(frozen=True)
class LossConfig:
    lam: float = 0.0

    def __post_init__(self):
        if not np.isfinite(self.lam) or self.lam < 0:
            raise ValueError("regularization penalty must be finite and >= 0")


class SoftmaxModel:
    def __init__(self, k, n, hidden=0, params=None, seed=0):
        self.k, self.n, self.hidden = int(k), int(n), int(hidden)
        if self.k < 2 or self.n < 1 or self.hidden < 0:
            raise ValueError("need k >= 2, n >= 1, hidden >= 0")
        size = self.size
        if params is None:
            params = np.zeros(size)
            if self.hidden:
                # scaled uniform init; a zero hidden layer would never train
                rng = np.random.default_rng(seed)
                w1, w2 = self._split(params)
                w1[...] = rng.uniform(-1, 1, w1.shape) / np.sqrt(self.n + 1)
                w2[...] = rng.uniform(-1, 1, w2.shape) / np.sqrt(self.hidden + 1)
        params = np.array(params, dtype=np.float64).reshape(-1)
        if params.shape != (size,):
            raise ValueError(f"expected {size} parameters, got {params.size}")
        if not np.all(np.isfinite(params)):
            raise ClassifierDomainError("non-finite model parameters")
        self.params = params

    @property
    def size(self):
        if self.hidden:
            return self.hidden * (self.n + 1) + self.k * (self.hidden + 1)
        return self.k * (self.n + 1)

    def _split(self, flat):
        if self.hidden:
            cut = self.hidden * (self.n + 1)
            return flat[:cut].reshape(self.hidden, self.n + 1), flat[cut:].reshape(self.k, self.hidden + 1)
        return (flat.reshape(self.k, self.n + 1),)

    @property
    def layers(self):
        return self._split(self.params)

    def copy(self, params=None):
        return SoftmaxModel(self.k, self.n, self.hidden, self.params if params is None else params)

    def __eq__(self, other):
        return (
            isinstance(other, SoftmaxModel)
            and (self.k, self.n, self.hidden) == (other.k, other.n, other.hidden)
            and np.array_equal(self.params, other.params)
        )

    __hash__ = None

    # checkpoint ---------------------------------------------------------

    _MAGIC = b"DSMD"
    _HEADER = struct.Struct("<4sIQQQ")

    def save(self, path):
        """Header ``(magic, version, k, n, h)`` then the float64 parameters."""
        with open(path, "wb") as fh:
            fh.write(self._HEADER.pack(self._MAGIC, 1, self.k, self.n, self.hidden))
            fh.write(self.params.astype("<f8").tobytes())

    @classmethod
    def load(cls, path):
        raw = Path(path).read_bytes()
        magic, version, k, n, h = cls._HEADER.unpack_from(raw)
        if magic != cls._MAGIC or version != 1:
            raise ValueError(f"{path}: not a model checkpoint")
        params = np.frombuffer(raw, dtype="<f8", offset=cls._HEADER.size)
        return cls(k, n, h, params=params)


def _with_bias(x):
    return np.concatenate([np.ones((x.shape[0], 1)), x], axis=1)


def _as_batch(model, x):
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    x = np.atleast_2d(x)
    if x.shape[1] != model.n:
        raise ClassifierDomainError(f"expected {model.n} features, got {x.shape[1]}")
    if not np.all(np.isfinite(x)):
        raise ClassifierDomainError("non-finite input features")
    return x, single


def _forward(model, xb):
    """Logits and the cache needed for backprop; ``xb`` already has the bias column."""
    if model.hidden:
        w1, w2 = model.layers
        z = xb @ w1.T
        a = _with_bias(np.maximum(z, 0.0))
        return a @ w2.T, (z, a)
    (w,) = model.layers
    return xb @ w.T, None


def softmax(logits):
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(logits):
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def logits(model, x):
    x, single = _as_batch(model, x)
    out, _ = _forward(model, _with_bias(x))
    return out[0] if single else out


def predict(model, x):
    """Softmax probabilities for one vector or a batch of row vectors."""
    x, single = _as_batch(model, x)
    p = softmax(_forward(model, _with_bias(x))[0])
    return p[0] if single else p


def _check_labels(model, y):
    y = np.asarray(y, dtype=np.int64).reshape(-1)
    if y.size == 0:
        raise ClassifierDomainError("empty batch")
    if y.min() < 0 or y.max() >= model.k:
        raise ClassifierDomainError("label out of range")
    return y


def loss(model, x, y, cfg: LossConfig = LossConfig()):
    """Mean cross-entropy plus ``lam / 2 * ||params||^2``."""
    x, _ = _as_batch(model, x)
    y = _check_labels(model, y)
    lp = log_softmax(_forward(model, _with_bias(x))[0])
    data = -lp[np.arange(len(y)), y].mean()
    return float(data + 0.5 * cfg.lam * np.dot(model.params, model.params))


def _backward(model, xb, y, probs, cache, weight):
    """Flat gradient of ``-(1/b) sum_i weight_i log p(y_i | x_i)``."""
    b = len(y)
    delta = probs.copy()
    delta[np.arange(b), y] -= 1.0
    delta *= (weight / b)[:, None]
    grad = np.empty(model.size)
    if model.hidden:
        z, a = cache
        w1, w2 = model.layers
        g1, g2 = model._split(grad)
        g2[...] = delta.T @ a
        dz = (delta @ w2[:, 1:]) * (z > 0.0)
        g1[...] = dz.T @ xb
    else:
        (g,) = model._split(grad)
        g[...] = delta.T @ xb
    return grad


def forward_backward(model, x, y, cfg: LossConfig = LossConfig(), weight=None):
    """Probabilities, loss and gradient of one batch in a single pass."""
    x, _ = _as_batch(model, x)
    y = _check_labels(model, y)
    xb = _with_bias(x)
    lg, cache = _forward(model, xb)
    lp = log_softmax(lg)
    probs = np.exp(lp)
    w = np.ones(len(y)) if weight is None else np.asarray(weight, dtype=np.float64)
    data_loss = -(w * lp[np.arange(len(y)), y]).sum() / len(y)
    grad = _backward(model, xb, y, probs, cache, w)
    if cfg.lam:
        grad += cfg.lam * model.params
        data_loss += 0.5 * cfg.lam * np.dot(model.params, model.params)
    return probs, float(data_loss), grad


def gradient(model, x, y, cfg: LossConfig = LossConfig()):
    return forward_backward(model, x, y, cfg)[2]


def sgd_step(model, grad, alpha):
    """New model with parameters ``params - alpha * grad``."""
    if not alpha > 0:
        raise ValueError("learning rate must be positive")
    return model.copy(model.params - alpha * np.asarray(grad, dtype=np.float64))


def confidences(probs, y, source="label"):
    """Per-sample confidence fed to the quota updater."""
    if source == "predicted":
        return probs.max(axis=1)
    return probs[np.arange(len(y)), np.asarray(y)]


@dataclass(frozen=True)
class ErrorDecomposition:
    e1_norm: float
    e2_norm: float
    e3_norm: float
    terms: tuple = ()
    counts: tuple = (0, 0, 0)

    @property
    def total(self):
        return self.terms[0] + self.terms[1] + self.terms[2]


def decompose_error(model, x, y, th: GroupThresholds, cfg: LossConfig = LossConfig(), source="predicted"):
    """Split the data part of the gradient by confidence group.

    Samples are grouped by ``source`` confidence (predicted class by
    default).  Each term keeps the ``1/b`` factor of the full batch, so
    ``E1 + E2 + E3`` is the unregularized gradient.
    """
    x, _ = _as_batch(model, x)
    y = _check_labels(model, y)
    xb = _with_bias(x)
    lg, cache = _forward(model, xb)
    probs = softmax(lg)
    groups = classify_groups(confidences(probs, y, source), th)
    terms, counts = [], []
    for g in (SampleGroup.WELL_RECOGNIZED, SampleGroup.CONFUSING, SampleGroup.NOISY):
        mask = (groups == g).astype(np.float64)
        counts.append(int(mask.sum()))
        terms.append(_backward(model, xb, y, probs, cache, mask))
    norms = [float(np.linalg.norm(t)) for t in terms]
    return ErrorDecomposition(*norms, terms=tuple(terms), counts=tuple(counts))


ENSEMBLE_MODES = ("average", "voting", "max")


def ensemble_combine(prob_vectors, mode="average"):
    """Combine per-model probability vectors into one class index.

    ``voting`` takes the majority of per-model argmaxes; ties go to the tied
    class with the larger mean probability, then to the lower index.
    """
    if mode not in ENSEMBLE_MODES:
        raise ValueError(f"unknown ensemble mode {mode!r}")
    if len(prob_vectors) == 0:
        raise ClassifierDomainError("ensemble needs at least one model output")
    probs = np.asarray(prob_vectors, dtype=np.float64)
    if probs.ndim != 2:
        raise ClassifierDomainError("model outputs must share one class count")
    mean = probs.mean(axis=0)
    if mode == "average":
        return int(np.argmax(mean))
    if mode == "max":
        return int(np.argmax(probs.max(axis=0)))
    votes = np.bincount(probs.argmax(axis=1), minlength=probs.shape[1])
    tied = np.flatnonzero(votes == votes.max())
    return int(tied[np.argmax(mean[tied])])
