"""Minimal dense feed-forward network engine.

Every fairness computation in the package only needs per-neuron scalars, so
this module keeps to dense layers with ReLU / identity hidden activations
and a softmax (or identity logit) output. All arithmetic is float64.

Weights are stored as ``(out_width, in_width)`` matrices so a layer computes
``pre = W @ a_prev + b`` for a single input, or ``A_prev @ W.T + b`` for a
batch of row vectors.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    DataError,
    InputShapeError,
    LabelError,
    ModelParseError,
    ModelValidationError,
    NumericOverflowError,
)

log = logging.getLogger(__name__)

RELU = "relu"
SOFTMAX = "softmax"
IDENTITY = "identity"
ACTIVATIONS = (RELU, SOFTMAX, IDENTITY)

FORMAT_VERSION = 1


@dataclass
class DenseLayer:
    weights: np.ndarray
    biases: np.ndarray
    activation: str = RELU

    def __post_init__(self):
        self.weights = np.array(self.weights, dtype=np.float64)
        self.biases = np.array(self.biases, dtype=np.float64).reshape(-1)

    @property
    def in_width(self):
        return self.weights.shape[1]

    @property
    def out_width(self):
        return self.weights.shape[0]

    def copy(self):
        return DenseLayer(self.weights.copy(), self.biases.copy(), self.activation)


@dataclass
class Model:
    """Layered classifier; ``layers[-1]`` produces the class scores."""

    layers: list

    def __post_init__(self):
        _validate_layers(self.layers)

    @property
    def input_dim(self):
        return self.layers[0].in_width

    @property
    def class_count(self):
        return self.layers[-1].out_width

    @property
    def widths(self):
        return [layer.out_width for layer in self.layers]

    def copy(self):
        return Model([layer.copy() for layer in self.layers])


def _validate_layers(layers, input_dim=None, class_count=None):
    if not layers:
        raise ModelValidationError("model has no layers")
    expected_in = input_dim if input_dim is not None else layers[0].in_width
    for j, layer in enumerate(layers):
        if layer.weights.ndim != 2:
            raise ModelValidationError("weights must be a matrix", layer=j)
        if layer.out_width < 1:
            raise ModelValidationError("layer has no neurons", layer=j)
        if layer.in_width != expected_in:
            raise ModelValidationError(
                f"input width {layer.in_width} does not match previous width {expected_in}", layer=j
            )
        if layer.biases.shape != (layer.out_width,):
            raise ModelValidationError(
                f"{layer.biases.size} biases for {layer.out_width} neurons", layer=j
            )
        if layer.activation not in ACTIVATIONS:
            raise ModelValidationError(f"unknown activation {layer.activation!r}", layer=j)
        if layer.activation == SOFTMAX and j != len(layers) - 1:
            raise ModelValidationError("softmax is only allowed on the final layer", layer=j)
        if not (np.all(np.isfinite(layer.weights)) and np.all(np.isfinite(layer.biases))):
            raise ModelValidationError("non-finite weight or bias", layer=j)
        expected_in = layer.out_width
    if class_count is not None and layers[-1].out_width != class_count:
        raise ModelValidationError(
            f"output width {layers[-1].out_width} does not match class_count {class_count}",
            layer=len(layers) - 1,
        )
    if layers[-1].out_width < 2:
        raise ModelValidationError("a classifier needs at least 2 classes", layer=len(layers) - 1)


def init_model(widths, seed=0, hidden=RELU, output=SOFTMAX, input_mean=None, input_scale=None):
    """He-initialised model with layer widths ``[input_dim, h1, ..., classes]``.

    Passing per-feature ``input_mean`` / ``input_scale`` folds a z-scoring of
    the inputs into the first layer, so raw pixel data starts out with
    unit-scale pre-activations.
    """
    rng = np.random.default_rng(seed)
    layers = []
    for j, (n_in, n_out) in enumerate(zip(widths[:-1], widths[1:])):
        w = rng.normal(0.0, np.sqrt(2.0 / n_in), size=(n_out, n_in))
        act = output if j == len(widths) - 2 else hidden
        layers.append(DenseLayer(w, np.zeros(n_out), act))
    if input_mean is not None or input_scale is not None:
        mean = np.zeros(widths[0]) if input_mean is None else np.asarray(input_mean, dtype=np.float64)
        scale = np.ones(widths[0]) if input_scale is None else np.asarray(input_scale, dtype=np.float64)
        scale = np.where(scale == 0, 1.0, scale)
        first = layers[0]
        first.weights = first.weights / scale
        first.biases = first.biases - first.weights @ mean
    return Model(layers)


def feature_stats(X):
    """Per-feature mean and standard deviation (zeros replaced by 1)."""
    X = np.asarray(X, dtype=np.float64)
    scale = X.std(axis=0)
    return X.mean(axis=0), np.where(scale == 0, 1.0, scale)


@dataclass(frozen=True)
class ActivationTrace:
    """Pre/post activation vectors of every layer for one input."""

    pre: list
    post: list
    predicted_class: int

    @property
    def output(self):
        return self.post[-1]


def _activate(kind, z):
    if kind == RELU:
        return np.maximum(z, 0.0)
    if kind == SOFTMAX:
        shifted = z - z.max(axis=-1, keepdims=True)
        e = np.exp(shifted)
        return e / e.sum(axis=-1, keepdims=True)
    return z


def _as_batch(model, X):
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[None, :]
    if X.ndim != 2 or X.shape[1] != model.input_dim:
        raise InputShapeError(f"expected inputs of width {model.input_dim}, got shape {X.shape}")
    if not np.all(np.isfinite(X)):
        raise NumericOverflowError("input contains non-finite values")
    return X


def forward_batch(model, X):
    """Forward a batch of row vectors. Returns ``(pres, posts)``, one array per layer."""
    a = _as_batch(model, X)
    pres, posts = [], []
    for j, layer in enumerate(model.layers):
        with np.errstate(over="ignore", invalid="ignore"):
            z = a @ layer.weights.T + layer.biases
        if not np.all(np.isfinite(z)):
            raise NumericOverflowError(f"non-finite pre-activation in layer {j}")
        a = _activate(layer.activation, z)
        pres.append(z)
        posts.append(a)
    return pres, posts


def forward_with_trace(model, x):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise InputShapeError(f"expected a single input vector, got shape {x.shape}")
    pres, posts = forward_batch(model, x)
    pre = [p[0] for p in pres]
    post = [p[0] for p in posts]
    return ActivationTrace(pre, post, int(np.argmax(post[-1])))


def predict(model, X):
    """Predicted classes for a batch; argmax ties go to the lowest index."""
    _, posts = forward_batch(model, X)
    return np.argmax(posts[-1], axis=1)


def accuracy(model, X, y):
    return float(np.mean(predict(model, X) == np.asarray(y)))


def _check_labels(model, y, n):
    y = np.asarray(y).reshape(-1)
    if y.shape[0] != n:
        raise LabelError(f"{y.shape[0]} labels for {n} inputs")
    if np.any(y < 0) or np.any(y >= model.class_count):
        raise LabelError(f"labels must lie in [0, {model.class_count})")
    return y.astype(np.int64)


def _logits(model, pres, posts):
    return pres[-1] if model.layers[-1].activation == SOFTMAX else posts[-1]


def _per_sample_loss(logits, y):
    shifted = logits - logits.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1))
    return lse - shifted[np.arange(len(y)), y]


def loss(model, X, y):
    """Mean cross-entropy of the softmax output against ``y``."""
    X = _as_batch(model, X)
    y = _check_labels(model, y, X.shape[0])
    pres, posts = forward_batch(model, X)
    return float(np.mean(_per_sample_loss(_logits(model, pres, posts), y)))


def _backward(model, X, y, pres, posts):
    """Per-sample-summed gradients of the cross-entropy.

    Returns ``(dX, grads)`` where ``dX[i]`` is dJ(x_i, y_i)/dx_i and ``grads``
    holds ``(dW, db)`` summed over the batch.
    """
    logits = _logits(model, pres, posts)
    shifted = logits - logits.max(axis=1, keepdims=True)
    probs = np.exp(shifted)
    probs /= probs.sum(axis=1, keepdims=True)
    delta = probs
    delta[np.arange(len(y)), y] -= 1.0
    last = model.layers[-1]
    if last.activation == RELU:
        delta = delta * (pres[-1] > 0)

    grads = [None] * len(model.layers)
    for j in range(len(model.layers) - 1, -1, -1):
        layer = model.layers[j]
        a_prev = posts[j - 1] if j > 0 else X
        grads[j] = (delta.T @ a_prev, delta.sum(axis=0))
        da = delta @ layer.weights
        if j > 0:
            prev_kind = model.layers[j - 1].activation
            delta = da * (pres[j - 1] > 0) if prev_kind == RELU else da
    return da, grads


def input_gradient(model, x, y):
    """Gradient of the cross-entropy J(x, y) with respect to the input vector."""
    x = np.asarray(x, dtype=np.float64)
    X = _as_batch(model, x)
    y = _check_labels(model, [y], 1)
    pres, posts = forward_batch(model, X)
    dX, _ = _backward(model, X, y, pres, posts)
    return dX[0]


def input_gradients(model, X, y):
    """Row-wise input gradients for a batch."""
    X = _as_batch(model, X)
    y = _check_labels(model, y, X.shape[0])
    pres, posts = forward_batch(model, X)
    dX, _ = _backward(model, X, y, pres, posts)
    return dX


def weight_gradients(model, X, y):
    """Gradients of the *mean* batch loss with respect to every (W, b)."""
    X = _as_batch(model, X)
    y = _check_labels(model, y, X.shape[0])
    pres, posts = forward_batch(model, X)
    _, grads = _backward(model, X, y, pres, posts)
    n = X.shape[0]
    return [(dW / n, db / n) for dW, db in grads]


def _unpack(dataset):
    if isinstance(dataset, tuple):
        X, y = dataset
    else:
        X, y = dataset.X, dataset.y
    return np.asarray(X, dtype=np.float64), np.asarray(y)


def train(model, dataset, epochs, learning_rate, batch_size=32, seed=0,
          standardize=True, history=None):
    """Mini-batch SGD on the cross-entropy; returns a trained copy of ``model``.

    ``dataset`` is either ``(X, y)`` or any object with ``X`` / ``y``
    attributes. With ``standardize`` the first layer is updated as if the
    inputs were z-scored per feature (an exact reparametrisation, folded back
    after every step), which keeps plain SGD usable on 0-255 pixel data.
    ``history``, if given, receives the full-dataset loss after each epoch.
    """
    X, y = _unpack(dataset)
    if X.shape[0] == 0:
        raise DataError("cannot train on an empty dataset")
    if learning_rate < 0:
        raise DataError("learning_rate must be non-negative")
    X = _as_batch(model, X)
    y = _check_labels(model, y, X.shape[0])
    model = model.copy()
    if learning_rate == 0 or epochs <= 0:
        return model

    if standardize:
        mean, scale = feature_stats(X)
    rng = np.random.default_rng(seed)
    n = X.shape[0]
    for _ in range(epochs):
        order = rng.permutation(n)
        for start in range(0, n, batch_size):
            idx = order[start:start + batch_size]
            xb, yb = X[idx], y[idx]
            pres, posts = forward_batch(model, xb)
            _, grads = _backward(model, xb, yb, pres, posts)
            m = len(idx)
            for j, (layer, (dW, db)) in enumerate(zip(model.layers, grads)):
                if j == 0 and standardize:
                    # dW was accumulated against raw inputs; redo it on z-scores
                    delta_sum = db
                    dW_std = dW / scale - np.outer(delta_sum, mean / scale)
                    step_w = -learning_rate * dW_std / m / scale
                    step_b = -learning_rate * db / m - step_w @ mean
                else:
                    step_w = -learning_rate * dW / m
                    step_b = -learning_rate * db / m
                layer.weights += step_w
                layer.biases += step_b
        if history is not None:
            history.append(loss(model, X, y))
    return model


# -- serialisation -----------------------------------------------------------

def model_to_dict(model):
    return {
        "format_version": FORMAT_VERSION,
        "input_dim": int(model.input_dim),
        "class_count": int(model.class_count),
        "layers": [
            {
                "in_width": int(layer.in_width),
                "out_width": int(layer.out_width),
                "activation": layer.activation,
                "weights": [float(v) for v in layer.weights.ravel()],
                "biases": [float(v) for v in layer.biases],
            }
            for layer in model.layers
        ],
    }


def dumps_model(model):
    return json.dumps(model_to_dict(model), allow_nan=False) + "\n"


def save_model(model, path):
    Path(path).write_text(dumps_model(model), encoding="utf-8")


def _layer_from_dict(j, spec):
    try:
        n_in = int(spec["in_width"])
        n_out = int(spec["out_width"])
        weights = np.array(spec["weights"], dtype=np.float64)
        biases = np.array(spec["biases"], dtype=np.float64)
        activation = spec["activation"]
    except (KeyError, TypeError, ValueError) as exc:
        raise ModelValidationError(f"bad layer record: {exc}", layer=j) from None
    if weights.ndim != 1 or weights.size != n_in * n_out:
        raise ModelValidationError(
            f"expected {n_out}x{n_in}={n_in * n_out} weights, found {weights.size}", layer=j
        )
    return DenseLayer(weights.reshape(n_out, n_in), biases, activation)


def loads_model(data):
    if isinstance(data, str):
        data = data.encode("utf-8")
    try:
        text = data.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise ModelParseError("invalid UTF-8", exc.start) from None
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        offset = len(text[:exc.pos].encode("utf-8"))
        raise ModelParseError(exc.msg, offset) from None
    if not isinstance(doc, dict) or "layers" not in doc:
        raise ModelValidationError("model document must be an object with a 'layers' list")
    if doc.get("format_version") != FORMAT_VERSION:
        raise ModelValidationError(f"unsupported format_version {doc.get('format_version')!r}")
    layers = [_layer_from_dict(j, spec) for j, spec in enumerate(doc["layers"])]
    _validate_layers(layers, input_dim=doc.get("input_dim"), class_count=doc.get("class_count"))
    return Model(layers)


def load_model(path):
    return loads_model(Path(path).read_bytes())
