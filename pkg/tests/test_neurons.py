import math
from collections import Counter

import numpy as np
import pytest
from scipy import stats

from fairtest.data import SamplePair
from fairtest.errors import DegeneratePartitionError, InputShapeError, ParameterError, UndefinedStatisticError
from fairtest.neurons import (
    DiffCollection,
    chi_square_critical,
    collect_diffs,
    kruskal_wallis_h,
    select_fairness_neurons,
)
from fairtest.nn import DenseLayer, Model, forward_with_trace


def brute_force_h(a, b):
    """O(N^2) midranks by counting, closed-form H, divided by the tie factor."""
    pooled = list(a) + list(b)
    n = len(pooled)
    ranks = [sum(v < x for v in pooled) + (sum(v == x for v in pooled) + 1) / 2 for x in pooled]
    r0, r1 = sum(ranks[:len(a)]), sum(ranks[len(a):])
    h = 12.0 / (n * (n + 1)) * (r0 ** 2 / len(a) + r1 ** 2 / len(b)) - 3 * (n + 1)
    ties = sum(t ** 3 - t for t in Counter(pooled).values())
    return h / (1 - ties / (n ** 3 - n))


def chi2_quantile_bisect(alpha):
    # P(chi2_1 <= c) = erf(sqrt(c / 2))
    lo, hi = 0.0, 100.0
    for _ in range(200):
        mid = (lo + hi) / 2
        if math.erf(math.sqrt(mid / 2)) < 1 - alpha:
            lo = mid
        else:
            hi = mid
    return (lo + hi) / 2


def diff_collection(xd0, xd1):
    col = np.concatenate([xd0, xd1])[:, None]
    groups = np.concatenate([np.zeros(len(xd0), int), np.ones(len(xd1), int)])
    return DiffCollection([col], groups)


class TestKruskalWallis:
    def test_hand_case(self):
        assert abs(kruskal_wallis_h([1, 2, 3], [4, 5, 6]) - 3.8571) < 1e-3
        assert abs(kruskal_wallis_h([1, 4, 6], [2, 3, 7]) - 1 / 21) < 1e-9

    def test_symmetric_zero(self):
        assert kruskal_wallis_h([1, 4, 5, 8], [2, 3, 6, 7]) == 0.0

    def test_against_brute_force(self):
        rng = np.random.default_rng(0)
        for _ in range(300):
            a = rng.integers(0, 6, size=int(rng.integers(1, 12))).astype(float)
            b = rng.integers(0, 6, size=int(rng.integers(1, 12))).astype(float)
            if len(a) + len(b) < 3 or len(set(a) | set(b)) < 2:
                continue
            h = kruskal_wallis_h(a, b)
            assert abs(h - brute_force_h(a, b)) < 1e-9
            assert abs(h - stats.kruskal(a, b).statistic) < 1e-9

    def test_closed_form_tie_free(self):
        rng = np.random.default_rng(1)
        for _ in range(100):
            v = rng.permutation(50)[: int(rng.integers(3, 50))].astype(float)
            k = int(rng.integers(1, len(v)))
            a, b = v[:k], v[k:]
            n = len(v)
            ranks = stats.rankdata(v)
            r0, r1 = ranks[:k].sum(), ranks[k:].sum()
            closed = 12 / (n * (n + 1)) * (r0 ** 2 / len(a) + r1 ** 2 / len(b)) - 3 * (n + 1)
            assert abs(kruskal_wallis_h(a, b) - closed) < 1e-9

    def test_rank_and_permutation_invariance(self):
        rng = np.random.default_rng(2)
        for _ in range(100):
            a = rng.exponential(size=15).round(1)
            b = rng.exponential(size=12).round(1)
            h = kruskal_wallis_h(a, b)
            assert h >= 0
            assert abs(kruskal_wallis_h(a ** 3 + 1, b ** 3 + 1) - h) < 1e-9
            assert abs(kruskal_wallis_h(rng.permutation(a), rng.permutation(b)) - h) < 1e-9

    def test_errors(self):
        with pytest.raises(DegeneratePartitionError):
            kruskal_wallis_h([], [1, 2, 3])
        with pytest.raises(DegeneratePartitionError):
            kruskal_wallis_h([1], [2])
        with pytest.raises(UndefinedStatisticError):
            kruskal_wallis_h([0, 0], [0, 0, 0])


class TestCritical:
    @pytest.mark.parametrize("alpha, expected", [(0.05, 3.8415), (0.5, 0.4549)])
    def test_values(self, alpha, expected):
        assert abs(chi_square_critical(alpha) - expected) < 1e-3
        assert abs(chi_square_critical(alpha) - chi2_quantile_bisect(alpha)) < 1e-9

    def test_monotone(self):
        alphas = np.linspace(0.001, 0.99, 50)
        crit = [chi_square_critical(a) for a in alphas]
        assert all(x > y for x, y in zip(crit, crit[1:]))

    @pytest.mark.parametrize("alpha", [0.0, 1.0, -0.1, 2.0])
    def test_range(self, alpha):
        with pytest.raises(ParameterError):
            chi_square_critical(alpha)


class TestCollectDiffs:
    def test_identical_inputs(self, small_bench):
        x = small_bench.test.X[0]
        d = collect_diffs(small_bench.model, [SamplePair(x, x.copy(), 0, "A", "B")])
        assert all(np.all(layer == 0) for layer in d.diffs)
        assert d.groups.tolist() == [0]

    def test_one_neuron(self):
        m = Model([DenseLayer([[1.0]], [0.0], "identity"), DenseLayer([[1.0], [-1.0]], [-2.5, 0.0], "softmax")])
        pairs = [SamplePair(np.array([1.0]), np.array([3.0]), 0, "A", "B"),
                 SamplePair(np.array([2.0]), np.array([2.0]), 0, "A", "B")]
        d = collect_diffs(m, pairs)
        assert d.diffs[0][:, 0].tolist() == [2.0, 0.0]
        assert d.groups.tolist() == [1, 0]

    def test_double_forward_oracle(self, small_bench):
        m = small_bench.model
        pairs = small_bench.test_pairs[:40]
        d = collect_diffs(m, pairs)
        for i, p in enumerate(pairs):
            a, b = forward_with_trace(m, p.x), forward_with_trace(m, p.x_prime)
            for j in range(len(m.layers)):
                np.testing.assert_allclose(d.diffs[j][i], np.abs(a.post[j] - b.post[j]), atol=1e-9)
            assert d.groups[i] == int(a.predicted_class != b.predicted_class)

    def test_shape_error(self, small_bench):
        with pytest.raises(InputShapeError):
            collect_diffs(small_bench.model, [SamplePair(np.zeros(3), np.zeros(3), 0, "A", "B")])


class TestSelection:
    def test_disjoint_supports_significant(self):
        rng = np.random.default_rng(3)
        d = diff_collection(rng.uniform(0, 1, 50), rng.uniform(10, 11, 50))
        nf = select_fairness_neurons(None, None, diffs=d)
        assert nf.significant[0][0] and nf.selected[0] == [0]

    def test_false_positive_rate(self):
        hits = 0
        for seed in range(100):
            rng = np.random.default_rng(seed)
            d = diff_collection(rng.exponential(size=50), rng.exponential(size=50))
            hits += bool(select_fairness_neurons(None, None, diffs=d).significant[0][0])
        assert hits <= 10

    def test_nesting_and_invariants(self, small_bench):
        m, pairs = small_bench.model, small_bench.train_pairs
        loose = select_fairness_neurons(m, pairs, alpha=0.05)
        strict = select_fairness_neurons(m, pairs, alpha=0.001)
        for j in range(loose.layer_count):
            assert set(strict.selected[j]) <= set(loose.selected[j])
            h = loose.h[j]
            sig = np.nan_to_num(h, nan=-np.inf) > loose.critical_value
            assert np.array_equal(sig, loose.significant[j])
            assert sorted(loose.selected[j]) == np.flatnonzero(sig).tolist()
            ordered = h[loose.selected[j]]
            assert np.all(np.diff(ordered) <= 0)

    def test_csv(self, small_bench):
        nf = select_fairness_neurons(small_bench.model, small_bench.train_pairs)
        lines = nf.to_csv().splitlines()
        assert lines[0] == "layer,neuron,H,significant,rank_in_layer"
        assert len(lines) - 1 == sum(small_bench.model.widths)

    def test_degenerate_partition(self, small_bench):
        x = small_bench.test.X[0]
        with pytest.raises(DegeneratePartitionError):
            select_fairness_neurons(small_bench.model, [SamplePair(x, x, 0, "A", "B")] * 5)

    def test_low_power_warning(self):
        rng = np.random.default_rng(4)
        d = diff_collection(rng.uniform(0, 1, 40), rng.uniform(5, 6, 3))
        nf = select_fairness_neurons(None, None, diffs=d)
        assert any("low power" in w for w in nf.warnings)
