"""Pair-level fairness adequacy metrics and their bin coverage.

Layer-level metrics compare the fairness-related neurons of one layer as a
whole (Tanimoto on activation patterns, cosine and Spearman on activation
values). Neuron-level distances compare single top-ranked neurons and are
only defined when the neuron is active for both inputs.

Coverage splits each metric dimension's value range into ``Z`` equal bins and
reports the fraction of (dimension, bin) cells hit by at least one pair.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .data import stack_pairs
from .errors import ConfigurationError, InputShapeError
from .neurons import midranks
from .nn import forward_batch

log = logging.getLogger(__name__)

TANIMOTO = "tanimoto"
COSINE = "cosine"
SPEARMAN = "spearman"
ABSOLUTE = "absolute"
RELATIVE = "relative"
LAYER_METRICS = (TANIMOTO, COSINE, SPEARMAN)
DISTANCE_METRICS = (ABSOLUTE, RELATIVE)
METRICS = LAYER_METRICS + DISTANCE_METRICS

LAYER_RANGES = {TANIMOTO: (0.0, 1.0), COSINE: (0.0, 1.0), SPEARMAN: (-1.0, 1.0)}
DISTANCE_LOWER = {ABSOLUTE: 0.0, RELATIVE: 1.0}


def check_metric(metric):
    if metric not in METRICS:
        raise ConfigurationError(f"unknown metric {metric!r}; valid names: {', '.join(METRICS)}")


@dataclass(frozen=True)
class LayerSignature:
    layer: int
    values: np.ndarray
    pattern: np.ndarray


def layer_signature(trace, layer, neurons):
    idx = list(neurons)
    return LayerSignature(layer, trace.post[layer][idx], trace.pre[layer][idx] > 0)


def _same_length(a, b):
    a = np.asarray(a, dtype=np.float64).reshape(-1)
    b = np.asarray(b, dtype=np.float64).reshape(-1)
    if a.shape != b.shape:
        raise InputShapeError(f"length mismatch: {a.size} vs {b.size}")
    return a, b


def tanimoto(a, a_prime):
    a, b = _same_length(a, a_prime)
    a, b = a != 0, b != 0
    common = float(np.sum(a & b))
    union = float(a.sum() + b.sum()) - common
    if union == 0:
        return 1.0
    return common / union


def cosine(v, v_prime):
    """Cosine similarity, or None when either vector has zero norm."""
    v, w = _same_length(v, v_prime)
    nv, nw = np.linalg.norm(v), np.linalg.norm(w)
    if nv == 0 or nw == 0:
        return None
    return float(min(1.0, max(-1.0, np.dot(v, w) / (nv * nw))))


def _rank_pearson(rv, rw):
    rv = rv - rv.mean()
    rw = rw - rw.mean()
    denom = math.sqrt(float(np.dot(rv, rv)) * float(np.dot(rw, rw)))
    if denom == 0:
        return None
    return float(min(1.0, max(-1.0, np.dot(rv, rw) / denom)))


def spearman(v, v_prime):
    """Pearson correlation of midranks; None for constant or single-element input."""
    v, w = _same_length(v, v_prime)
    if v.size < 2:
        return None
    return _rank_pearson(midranks(v), midranks(w))


def neuron_distance(v, v_prime, mode):
    """Absolute or relative distance of one neuron; None unless both values are active (> 0)."""
    if mode not in DISTANCE_METRICS:
        raise ConfigurationError(f"unknown distance mode {mode!r}")
    v, w = float(v), float(v_prime)
    if not (v > 0 and w > 0):
        return None
    if mode == ABSOLUTE:
        return abs(v - w)
    return max(v, w) / min(v, w)


def pearson(xs, ys):
    """Product-moment correlation; None when either side has zero variance."""
    x, y = _same_length(xs, ys)
    if x.size < 2:
        return None
    x = x - x.mean()
    y = y - y.mean()
    denom = math.sqrt(float(np.dot(x, x)) * float(np.dot(y, y)))
    if denom == 0:
        return None
    return float(min(1.0, max(-1.0, np.dot(x, y) / denom)))


def deepest_hidden_layer(model):
    return len(model.layers) - 2 if len(model.layers) > 1 else 0


def dimensions(nf_map, metric, layers, top_k):
    """Dimension keys of a metric: ``(layer,)`` or ``(layer, rank)``."""
    if metric in LAYER_METRICS:
        return [(j,) for j in layers]
    return [(j, r) for j in layers for r in range(len(nf_map.top_k(j, top_k)))]


def pair_metric_values(model, pairs, nf_map, layers, top_k, metrics=METRICS):
    """Metric values for every pair: ``{metric: (n_pairs, n_dims) array}``, nan where skipped."""
    n = len(pairs)
    out = {}
    if n == 0:
        for m in metrics:
            out[m] = np.zeros((0, len(dimensions(nf_map, m, layers, top_k))))
        return out
    X, Xp, _ = stack_pairs(pairs)
    pres, posts = forward_batch(model, X)
    pres_p, posts_p = forward_batch(model, Xp)
    for m in metrics:
        check_metric(m)
        cols = []
        for j in layers:
            if m in LAYER_METRICS:
                nf = nf_map.selected[j]
                col = np.full(n, np.nan)
                if m == TANIMOTO and nf:
                    a, b = pres[j][:, nf] > 0, pres_p[j][:, nf] > 0
                    common = np.sum(a & b, axis=1).astype(np.float64)
                    union = a.sum(axis=1) + b.sum(axis=1) - common
                    col = np.where(union == 0, 1.0, common / np.maximum(union, 1))
                elif m != TANIMOTO and nf:
                    v, w = posts[j][:, nf], posts_p[j][:, nf]
                    fn = cosine if m == COSINE else spearman
                    for i in range(n):
                        value = fn(v[i], w[i])
                        if value is not None:
                            col[i] = value
                cols.append(col)
            else:
                for k in nf_map.top_k(j, top_k):
                    v, w = posts[j][:, k], posts_p[j][:, k]
                    active = (pres[j][:, k] > 0) & (pres_p[j][:, k] > 0) & (v > 0) & (w > 0)
                    col = np.full(n, np.nan)
                    if m == ABSOLUTE:
                        col[active] = np.abs(v - w)[active]
                    else:
                        col[active] = (np.maximum(v, w) / np.where(active, np.minimum(v, w), 1.0))[active]
                    cols.append(col)
        out[m] = np.column_stack(cols) if cols else np.zeros((n, 0))
    return out


def _nf_signature(nf_map):
    return tuple(tuple(s) for s in nf_map.selected)


@dataclass
class RangeProfile:
    z: int
    layers: tuple
    top_k: int
    bounds: dict                # metric -> list of (dim_key, lower, upper)
    dropped: dict = field(default_factory=dict)
    nf_signature: tuple = ()
    warnings: list = field(default_factory=list)

    def dimension_count(self, metric):
        return len(self.bounds[metric])

    def to_dict(self):
        return {
            "Z": self.z,
            "layers": list(self.layers),
            "top_k": self.top_k,
            "bounds": {
                m: [{"dimension": list(key), "lower": lo, "upper": hi} for key, lo, hi in dims]
                for m, dims in self.bounds.items()
            },
            "dropped": {m: [list(k) for k in keys] for m, keys in self.dropped.items()},
        }


def profile_ranges(model, training_pairs, nf_map, top_k=10, z=100, layers=None):
    """Value ranges per metric dimension.

    Layer metrics have fixed analytic ranges. Distance upper bounds are the
    largest value observed on ``training_pairs``; dimensions that never see an
    active-active observation, or whose bound collapses onto the lower end,
    are dropped.
    """
    if not training_pairs:
        raise ConfigurationError("range profiling needs at least one training pair")
    if z < 1:
        raise ConfigurationError("Z must be at least 1")
    if layers is None:
        layers = [deepest_hidden_layer(model)]
    layers = tuple(int(j) for j in layers)
    for j in layers:
        if not 0 <= j < len(model.layers):
            raise ConfigurationError(f"layer {j} does not exist")
    values = pair_metric_values(model, training_pairs, nf_map, layers, top_k, DISTANCE_METRICS)
    bounds, dropped, warnings = {}, {}, []
    for m in LAYER_METRICS:
        lo, hi = LAYER_RANGES[m]
        bounds[m] = [(key, lo, hi) for key in dimensions(nf_map, m, layers, top_k)]
        dropped[m] = []
    for m in DISTANCE_METRICS:
        lo = DISTANCE_LOWER[m]
        bounds[m], dropped[m] = [], []
        for c, key in enumerate(dimensions(nf_map, m, layers, top_k)):
            col = values[m][:, c]
            observed = col[~np.isnan(col)]
            hi = float(observed.max()) if observed.size else None
            if hi is None or hi <= lo:
                dropped[m].append(key)
                warnings.append(f"{m} dimension {key} has no usable range; dropped")
                log.warning(warnings[-1])
            else:
                bounds[m].append((key, lo, hi))
    return RangeProfile(z, layers, top_k, bounds, dropped, _nf_signature(nf_map), warnings)


@dataclass
class CoverageReport:
    metric: str
    z: int
    dimension_count: int
    hit_bins: set = field(default_factory=set)
    out_of_range_count: int = 0
    skipped_count: int = 0
    evaluated_count: int = 0

    @property
    def ratio(self):
        if self.dimension_count == 0:
            return 0.0
        return len(self.hit_bins) / (self.z * self.dimension_count)

    def merge(self, other):
        if (self.metric, self.z, self.dimension_count) != (other.metric, other.z, other.dimension_count):
            raise ConfigurationError("cannot merge coverage reports of different shape")
        return CoverageReport(
            self.metric, self.z, self.dimension_count, self.hit_bins | other.hit_bins,
            self.out_of_range_count + other.out_of_range_count,
            self.skipped_count + other.skipped_count,
            self.evaluated_count + other.evaluated_count,
        )

    def hits_per_dimension(self):
        counts = {}
        for dim, _ in self.hit_bins:
            counts[dim] = counts.get(dim, 0) + 1
        return counts

    def to_dict(self):
        per_dim = self.hits_per_dimension()
        return {
            "metric": self.metric,
            "ratio": self.ratio,
            "Z": self.z,
            "dimension_count": self.dimension_count,
            "hit_bin_count": len(self.hit_bins),
            "hits_per_dimension": {str(d): per_dim.get(d, 0) for d in range(self.dimension_count)},
            "skipped_count": self.skipped_count,
            "out_of_range_count": self.out_of_range_count,
            "evaluated_count": self.evaluated_count,
        }


def bin_index(value, lower, upper, z):
    """Bin of ``value`` in ``[lower, upper]`` split into ``z`` bins, or None when outside."""
    if not lower <= value <= upper:
        return None
    b = int(math.floor(z * (value - lower) / (upper - lower)))
    return min(max(b, 0), z - 1)


def coverage(pairs, model, nf_map, profile, metric, values=None):
    """Bin coverage of ``metric`` over ``pairs`` against ``profile``.

    ``values`` may carry precomputed output of :func:`pair_metric_values`
    for the same pairs.
    """
    check_metric(metric)
    if profile.nf_signature and profile.nf_signature != _nf_signature(nf_map):
        raise ConfigurationError("profile was built from a different fairness neuron map")
    dims = profile.bounds[metric]
    report = CoverageReport(metric, profile.z, len(dims))
    if not pairs:
        return report
    if values is None:
        values = pair_metric_values(model, pairs, nf_map, profile.layers, profile.top_k, (metric,))
    all_keys = dimensions(nf_map, metric, profile.layers, profile.top_k)
    column = {key: c for c, key in enumerate(all_keys)}
    matrix = values[metric]
    for d, (key, lo, hi) in enumerate(dims):
        col = matrix[:, column[key]]
        for value in col:
            if np.isnan(value):
                report.skipped_count += 1
                continue
            report.evaluated_count += 1
            b = bin_index(float(value), lo, hi, profile.z)
            if b is None:
                report.out_of_range_count += 1
            else:
                report.hit_bins.add((d, b))
    return report


def coverage_all(pairs, model, nf_map, profile, metrics=METRICS):
    values = pair_metric_values(model, pairs, nf_map, profile.layers, profile.top_k, metrics)
    return {m: coverage(pairs, model, nf_map, profile, m, values=values) for m in metrics}
