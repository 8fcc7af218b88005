"""Test selection for augmented retraining, fairness scoring and model mutation."""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .data import stack_pairs
from .errors import ConfigurationError, DataError, MutationError, SelectionError
from .metrics import LAYER_METRICS
from .nn import predict, train

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class SelectionConfig:
    metric: str = "cosine"
    layer: int = -1
    k_sections: int = 10
    n_select: int = 10
    seed: int = 0

    def __post_init__(self):
        if self.metric not in LAYER_METRICS:
            raise ConfigurationError(
                f"selection metric must be one of {', '.join(LAYER_METRICS)}, got {self.metric!r}"
            )
        if self.k_sections < 1 or self.n_select < 1:
            raise ConfigurationError("k_sections and n_select must be at least 1")


@dataclass
class Selection:
    indices: list
    sections: list              # section of every selected candidate
    boundaries: list
    section_sizes: list
    section_counts: list

    def manifest(self, config=None):
        out = {
            "section_boundaries": self.boundaries,
            "section_sizes": self.section_sizes,
            "selected_per_section": self.section_counts,
            "selected_indices": self.indices,
        }
        if config is not None:
            out["config"] = asdict(config)
        return out


def assign_sections(values, k):
    """Equal-width sections over ``[min, max]``; a zero-width range is one section."""
    values = np.asarray(values, dtype=np.float64)
    lo, hi = float(values.min()), float(values.max())
    if hi == lo:
        return np.zeros(values.size, dtype=np.int64), [lo, hi], 1
    width = (hi - lo) / k
    sec = np.floor((values - lo) / width).astype(np.int64)
    sec = np.clip(sec, 0, k - 1)
    return sec, [lo + i * width for i in range(k)] + [hi], k


def km_st_select(values, n_select, k_sections, rng):
    """K-multisection stratified sampling over metric values.

    The value range is cut into ``k_sections`` equal-width sections and each
    receives ``n // k`` or ``n // k + 1`` picks (the extra ones go to randomly
    chosen sections). Sections that cannot fill their quota hand the
    shortfall round-robin to sections that still have unpicked candidates.
    """
    values = np.asarray(values, dtype=np.float64).reshape(-1)
    if values.size == 0:
        raise SelectionError("no candidates to select from")
    if n_select > values.size:
        raise SelectionError(f"cannot select {n_select} of {values.size} candidates")
    if np.any(np.isnan(values)):
        raise SelectionError("candidate metric values must not be nan")
    sec, boundaries, k = assign_sections(values, k_sections)
    members = [np.flatnonzero(sec == s) for s in range(k)]
    pools = [list(rng.permutation(m)) for m in members]

    quota = [n_select // k] * k
    for s in rng.permutation(k)[: n_select % k]:
        quota[s] += 1
    taken = [min(q, len(p)) for q, p in zip(quota, pools)]
    shortfall = n_select - sum(taken)
    s = 0
    while shortfall > 0:
        if taken[s] < len(pools[s]):
            taken[s] += 1
            shortfall -= 1
        s = (s + 1) % k

    indices, sections = [], []
    for s in range(k):
        for i in pools[s][: taken[s]]:
            indices.append(int(i))
            sections.append(s)
    return Selection(indices, sections, boundaries, [len(m) for m in members], taken)


def random_select(n_candidates, n_select, rng):
    if n_select > n_candidates:
        raise SelectionError(f"cannot select {n_select} of {n_candidates} candidates")
    return [int(i) for i in rng.choice(n_candidates, size=n_select, replace=False)]


def fairness_score(model, pairs):
    """Fraction of pairs whose two elements receive the same prediction."""
    if not pairs:
        raise DataError("fairness score needs at least one pair")
    X, Xp, _ = stack_pairs(pairs)
    return float(np.mean(predict(model, X) == predict(model, Xp)))


def augmentation_set(pairs):
    """Flatten pairs into ``(X, y)``; both elements carry the seed's label."""
    X, Xp, labels = stack_pairs(pairs)
    return np.concatenate([X, Xp]), np.concatenate([labels, labels])


def augment_retrain(model, base_train, selected_pairs, epochs, learning_rate, batch_size=32, seed=0):
    X, y = (base_train if isinstance(base_train, tuple) else (base_train.X, base_train.y))
    X, y = np.asarray(X, dtype=np.float64), np.asarray(y)
    if selected_pairs:
        Xa, ya = augmentation_set(selected_pairs)
        X, y = np.concatenate([X, Xa]), np.concatenate([y, ya])
    else:
        log.warning("empty augmentation set; falling back to plain retraining")
    return train(model, (X, y), epochs, learning_rate, batch_size, seed)


# -- model mutation ------------------------------------------------------------

GAUSSIAN_FUZZ = "gaussian_fuzz"
WEIGHT_SHUFFLE = "weight_shuffle"
NEURON_SWITCH = "neuron_switch"
ACTIVATION_INVERSE = "activation_inverse"
OPERATORS = (GAUSSIAN_FUZZ, WEIGHT_SHUFFLE, NEURON_SWITCH, ACTIVATION_INVERSE)


@dataclass(frozen=True)
class MutationSpec:
    operator: str
    intensity: float = 1.0
    target_layer: object = "all"
    seed: int = 0

    def __post_init__(self):
        if self.operator not in OPERATORS:
            raise ConfigurationError(
                f"unknown mutation operator {self.operator!r}; valid names: {', '.join(OPERATORS)}"
            )
        if self.intensity < 0:
            raise MutationError("intensity must be non-negative")


def _target_layers(model, spec, hidden_only):
    n = len(model.layers)
    if spec.target_layer == "all":
        return list(range(n - 1)) if hidden_only and n > 1 else list(range(n))
    j = int(spec.target_layer)
    if j < 0:
        j += n
    if not 0 <= j < n:
        raise MutationError(f"layer {spec.target_layer} does not exist")
    return [j]


def _pick_neurons(model, layers, count, rng):
    """``count`` distinct (layer, neuron) picks drawn from ``layers``."""
    pool = [(j, k) for j in layers for k in range(model.layers[j].out_width)]
    count = min(int(count), len(pool))
    return [pool[i] for i in rng.choice(len(pool), size=count, replace=False)]


def mutate_model(model, spec):
    """Return a mutated copy of ``model``; shapes and activations never change.

    * ``gaussian_fuzz``: add N(0, (intensity * std(W_j))^2) to every weight of
      the targeted layers.
    * ``weight_shuffle``: permute the incoming weights of ``intensity``
      randomly chosen neurons.
    * ``neuron_switch``: swap two neurons of one layer, incoming weights,
      bias and outgoing weights included.
    * ``activation_inverse``: negate weights and bias of ``intensity`` chosen
      neurons, flipping the sign of their pre-activation.
    """
    rng = np.random.default_rng(spec.seed)
    out = model.copy()
    if spec.operator == GAUSSIAN_FUZZ:
        for j in _target_layers(out, spec, hidden_only=False):
            layer = out.layers[j]
            sigma = float(np.std(layer.weights)) * spec.intensity
            noise = rng.normal(0.0, 1.0, size=layer.weights.shape)
            if sigma > 0:
                layer.weights = layer.weights + sigma * noise
    elif spec.operator == WEIGHT_SHUFFLE:
        for j, k in _pick_neurons(out, _target_layers(out, spec, True), spec.intensity, rng):
            row = out.layers[j].weights[k]
            out.layers[j].weights[k] = row[rng.permutation(row.size)]
    elif spec.operator == ACTIVATION_INVERSE:
        for j, k in _pick_neurons(out, _target_layers(out, spec, True), spec.intensity, rng):
            out.layers[j].weights[k] *= -1.0
            out.layers[j].biases[k] *= -1.0
    else:
        layers = _target_layers(out, spec, True)
        j = layers[int(rng.integers(len(layers)))] if len(layers) > 1 else layers[0]
        layer = out.layers[j]
        if layer.out_width < 2:
            raise MutationError(f"layer {j} has a single neuron; nothing to switch")
        a, b = (int(v) for v in rng.choice(layer.out_width, size=2, replace=False))
        layer.weights[[a, b]] = layer.weights[[b, a]]
        layer.biases[[a, b]] = layer.biases[[b, a]]
        if j + 1 < len(out.layers):
            nxt = out.layers[j + 1]
            nxt.weights[:, [a, b]] = nxt.weights[:, [b, a]]
    return out
