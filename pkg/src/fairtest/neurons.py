"""Fairness-related neuron selection with a two-group Kruskal-Wallis H test.

For every neuron the absolute activation difference between ``x`` and its
counterpart ``x'`` is collected over a set of pairs. The differences are split
by whether the model's predictions for the two elements agree (group 0) or
not (group 1), and a neuron is called fairness-related when the rank-sum
statistic H of that split exceeds the chi-square(1) critical value.
"""

from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass, field
from statistics import NormalDist

import numpy as np

from .data import stack_pairs
from .errors import (
    DegeneratePartitionError,
    InputShapeError,
    ParameterError,
    UndefinedStatisticError,
)
from .nn import forward_batch

log = logging.getLogger(__name__)

# groups smaller than this get a low-power note in the map
LOW_POWER_GROUP_SIZE = 5


@dataclass
class DiffCollection:
    """Activation differences of every neuron over a list of pairs.

    ``diffs[j]`` has shape ``(n_pairs, width_j)``; ``groups[i]`` is 0 when the
    model predicts the same class for both elements of pair ``i``, else 1.
    """

    diffs: list
    groups: np.ndarray

    def samples(self, layer, neuron):
        """(diff, outcome_group) tuples for one neuron."""
        col = self.diffs[layer][:, neuron]
        return list(zip(col.tolist(), self.groups.tolist()))


def collect_diffs(model, pairs):
    if not pairs:
        raise DegeneratePartitionError("no pairs to collect differences from")
    X, Xp, _ = stack_pairs(pairs)
    if X.shape[1] != model.input_dim:
        raise InputShapeError(f"pairs have dimension {X.shape[1]}, model expects {model.input_dim}")
    _, posts = forward_batch(model, X)
    _, posts_p = forward_batch(model, Xp)
    groups = (np.argmax(posts[-1], axis=1) != np.argmax(posts_p[-1], axis=1)).astype(np.int64)
    diffs = [np.abs(a - b) for a, b in zip(posts, posts_p)]
    return DiffCollection(diffs, groups)


def midranks(values):
    """1-based ranks of ``values`` with ties sharing the average rank."""
    values = np.asarray(values, dtype=np.float64)
    n = values.size
    order = np.argsort(values, kind="mergesort")
    sorted_vals = values[order]
    ranks = np.empty(n)
    # boundaries of runs of equal values
    starts = np.flatnonzero(np.r_[True, sorted_vals[1:] != sorted_vals[:-1]])
    ends = np.r_[starts[1:], n]
    for s, e in zip(starts, ends):
        ranks[order[s:e]] = 0.5 * (s + 1 + e)
    return ranks


def tie_correction(values):
    """``1 - sum(t^3 - t) / (N^3 - N)`` over the tie groups of ``values``."""
    values = np.asarray(values, dtype=np.float64)
    n = values.size
    _, counts = np.unique(values, return_counts=True)
    t = counts.astype(np.float64)
    return 1.0 - np.sum(t ** 3 - t) / (float(n) ** 3 - n)


def kruskal_wallis_h(xd0, xd1):
    """Two-group Kruskal-Wallis H on midranks, tie-corrected.

    Computed as the between-group rank variance divided by the average rank
    variance ``N(N+1)/12``, then divided by the tie correction factor.
    """
    xd0 = np.asarray(xd0, dtype=np.float64).reshape(-1)
    xd1 = np.asarray(xd1, dtype=np.float64).reshape(-1)
    if xd0.size == 0 or xd1.size == 0:
        raise DegeneratePartitionError("both outcome groups need at least one value")
    pooled = np.concatenate([xd0, xd1])
    n = pooled.size
    if n < 3:
        raise DegeneratePartitionError("H needs at least 3 values in total")
    if not np.all(np.isfinite(pooled)):
        raise ParameterError("differences must be finite")
    correction = tie_correction(pooled)
    if correction <= 0.0:
        raise UndefinedStatisticError("all values are identical; H is undefined")
    ranks = midranks(pooled)
    mean_rank = (n + 1) / 2.0
    rvs = 0.0
    for group in (ranks[:xd0.size], ranks[xd0.size:]):
        rvs += group.size * (group.sum() / group.size - mean_rank) ** 2
    arv = n * (n + 1) / 12.0
    return float(rvs / arv / correction)


def chi_square_critical(alpha):
    """Upper ``alpha`` quantile of the chi-square distribution with one degree of freedom."""
    if not 0.0 < alpha < 1.0:
        raise ParameterError(f"alpha must lie in (0, 1), got {alpha}")
    z = NormalDist().inv_cdf(1.0 - alpha / 2.0)
    return z * z


@dataclass
class FairnessNeuronMap:
    h: list                # per layer, array of H (nan where undefined)
    significant: list      # per layer, boolean array
    selected: list         # per layer, significant neuron indices by descending H
    critical_value: float
    alpha: float
    group_sizes: tuple = (0, 0)
    warnings: list = field(default_factory=list)

    @property
    def layer_count(self):
        return len(self.h)

    def top_k(self, layer, k):
        return list(self.selected[layer][:k])

    def significant_counts(self):
        return [int(s.sum()) for s in self.significant]

    def rows(self):
        """(layer, neuron, H, significant, rank_in_layer) with rank 0 for unselected neurons."""
        out = []
        for j, hs in enumerate(self.h):
            rank = {k: r + 1 for r, k in enumerate(self.selected[j])}
            for k, value in enumerate(hs):
                out.append((j, k, float(value), bool(self.significant[j][k]), rank.get(k, 0)))
        return out

    def to_csv(self):
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["layer", "neuron", "H", "significant", "rank_in_layer"])
        for j, k, value, sig, rank in self.rows():
            writer.writerow([j, k, repr(value), int(sig), rank])
        return buf.getvalue()


def select_fairness_neurons(model, pairs, alpha=0.05, top_k=10, diffs=None):
    """H-test every neuron and keep those above the chi-square critical value.

    Neurons whose differences are all identical (typically dead ReLUs with
    every diff exactly 0) get ``H = nan`` and are never selected.
    """
    if top_k < 1:
        raise ParameterError("top_k must be at least 1")
    critical = chi_square_critical(alpha)
    if diffs is None:
        diffs = collect_diffs(model, pairs)
    groups = diffs.groups
    n1 = int(groups.sum())
    n0 = int(groups.size - n1)
    if n0 == 0 or n1 == 0:
        raise DegeneratePartitionError(
            f"need both prediction-agreeing and disagreeing pairs (got {n0} and {n1})"
        )
    warnings = []
    if min(n0, n1) < LOW_POWER_GROUP_SIZE:
        warnings.append(f"low power: outcome groups have sizes {n0} and {n1}")
        log.warning(warnings[-1])

    mask = groups == 1
    h_layers, sig_layers, selected = [], [], []
    for layer_diffs in diffs.diffs:
        width = layer_diffs.shape[1]
        hs = np.full(width, np.nan)
        for k in range(width):
            col = layer_diffs[:, k]
            try:
                hs[k] = kruskal_wallis_h(col[~mask], col[mask])
            except UndefinedStatisticError:
                pass
        sig = np.nan_to_num(hs, nan=-np.inf) > critical
        idx = np.flatnonzero(sig)
        ordered = idx[np.argsort(-hs[idx], kind="mergesort")]
        h_layers.append(hs)
        sig_layers.append(sig)
        selected.append([int(k) for k in ordered])
    return FairnessNeuronMap(h_layers, sig_layers, selected, critical, alpha, (n0, n1), warnings)
