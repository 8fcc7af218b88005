import numpy as np
import pytest

from fairtest.errors import ConfigurationError, DataError, MutationError, SelectionError
from fairtest.enhancement import (
    OPERATORS,
    MutationSpec,
    SelectionConfig,
    assign_sections,
    augment_retrain,
    fairness_score,
    km_st_select,
    mutate_model,
    random_select,
)
from fairtest.experiments import (
    AnalysisConfig,
    EnhanceConfig,
    enhancement_study,
    mutant_specs,
    mutation_study,
    split_by_fairness,
)
from fairtest.nn import DenseLayer, Model, forward_batch, predict


class TestKmSt:
    def test_balanced_quotas(self):
        rng = np.random.default_rng(0)
        values = rng.uniform(0, 1, 100)
        values[:2] = [0.0, 1.0]
        sel = km_st_select(values, 10, 5, np.random.default_rng(1))
        assert sel.section_counts == [2] * 5

    def test_degenerate_range(self):
        sel = km_st_select(np.full(30, 0.4), 7, 5, np.random.default_rng(2))
        assert len(sel.indices) == 7 and len(set(sel.indices)) == 7
        assert sel.section_sizes == [30]

    def test_empty_section_redistributed(self):
        values = np.concatenate([np.linspace(0, 0.19, 20), np.linspace(0.4, 1.0, 40)])
        sel = km_st_select(values, 10, 5, np.random.default_rng(3))
        assert sel.section_sizes[1] == 0
        assert len(sel.indices) == 10 and sel.section_counts[1] == 0

    def test_properties(self):
        for seed in range(200):
            rng = np.random.default_rng(seed)
            n = int(rng.integers(1, 80))
            values = rng.beta(0.5, 2, n)
            n_select = int(rng.integers(1, n + 1))
            k = int(rng.integers(1, 12))
            sel = km_st_select(values, n_select, k, rng)
            assert len(sel.indices) == n_select == len(set(sel.indices))
            assert all(0 <= i < n for i in sel.indices)
            sec, _, _ = assign_sections(values, k)
            assert all(sec[i] == s for i, s in zip(sel.indices, sel.sections))

    def test_stratification_balance(self):
        for seed in range(50):
            rng = np.random.default_rng(seed)
            values = rng.uniform(0, 1, 500)
            sel = km_st_select(values, 50, 10, rng)
            counts = np.bincount(sel.sections, minlength=10)
            assert counts.max() / counts.min() <= 2

    def test_errors(self):
        with pytest.raises(SelectionError):
            km_st_select([0.1, 0.2], 3, 2, np.random.default_rng(0))
        with pytest.raises(SelectionError):
            random_select(2, 3, np.random.default_rng(0))
        with pytest.raises(ConfigurationError):
            SelectionConfig(metric="absolute")

    def test_manifest(self):
        sel = km_st_select(np.linspace(0, 1, 20), 4, 2, np.random.default_rng(0))
        man = sel.manifest(SelectionConfig(n_select=4, k_sections=2))
        assert man["section_boundaries"] == [0.0, 0.5, 1.0]
        assert man["config"]["metric"] == "cosine"


class TestFairnessScore:
    def test_counting(self, bench):
        fair, unfair = split_by_fairness(bench.model, bench.test_pairs)
        assert fairness_score(bench.model, fair[:10]) == 1.0
        assert fairness_score(bench.model, fair[:8] + unfair[:2]) == 0.8
        mixed = fair[:8] + unfair[:2]
        assert fairness_score(bench.model, mixed[::-1]) == 0.8

    def test_constant_predictor(self, bench):
        m = Model([DenseLayer(np.zeros((2, bench.model.input_dim)), [1.0, 0.0], "softmax")])
        assert fairness_score(m, bench.test_pairs) == 1.0

    def test_empty(self, bench):
        with pytest.raises(DataError):
            fairness_score(bench.model, [])


class TestRetrain:
    def test_empty_selection_is_plain_training(self, small_bench, caplog):
        from fairtest.nn import train
        s = small_bench
        a = augment_retrain(s.model, s.train, [], 2, 0.05, seed=3)
        b = train(s.model, s.train, 2, 0.05, 32, 3)
        assert all(np.array_equal(x.weights, y.weights) for x, y in zip(a.layers, b.layers))
        assert "falling back" in caplog.text

    def test_fitted_pairs_keep_fairness(self, small_bench):
        s = small_bench
        fair, _ = split_by_fairness(s.model, s.train_pairs)
        base = fairness_score(s.model, s.test_pairs)
        for seed in range(5):
            rng = np.random.default_rng(seed)
            picks = [fair[i] for i in rng.choice(len(fair), 20, replace=False)]
            m = augment_retrain(s.model, s.train, picks, 1, 0.01, seed=seed)
            assert abs(fairness_score(m, s.test_pairs) - base) <= 0.05


class TestMutation:
    def test_switch_involution(self, bench):
        spec = MutationSpec("neuron_switch", seed=4)
        once = mutate_model(bench.model, spec)
        twice = mutate_model(once, spec)
        assert any(not np.array_equal(a.weights, b.weights) for a, b in zip(once.layers, bench.model.layers))
        for a, b in zip(twice.layers, bench.model.layers):
            assert np.array_equal(a.weights, b.weights) and np.array_equal(a.biases, b.biases)

    def test_switch_preserves_function(self, bench):
        m = mutate_model(bench.model, MutationSpec("neuron_switch", seed=1))
        np.testing.assert_allclose(forward_batch(m, bench.test.X)[1][-1],
                                   forward_batch(bench.model, bench.test.X)[1][-1], atol=1e-12)

    def test_zero_fuzz(self, bench):
        m = mutate_model(bench.model, MutationSpec("gaussian_fuzz", intensity=0.0, seed=2))
        assert all(np.array_equal(a.weights, b.weights) for a, b in zip(m.layers, bench.model.layers))

    def test_inverse_negates_preactivation(self):
        m = Model([DenseLayer([[1.0, 2.0]], [0.5], "relu"), DenseLayer([[1.0], [-1.0]], [0.0, 0.0], "softmax")])
        out = mutate_model(m, MutationSpec("activation_inverse", intensity=1, seed=0))
        assert out.layers[0].weights.tolist() == [[-1.0, -2.0]] and out.layers[0].biases.tolist() == [-0.5]

    def test_shuffle_permutes_rows(self, bench):
        m = mutate_model(bench.model, MutationSpec("weight_shuffle", intensity=3, seed=5))
        for a, b in zip(m.layers, bench.model.layers):
            for ra, rb in zip(a.weights, b.weights):
                assert np.array_equal(np.sort(ra), np.sort(rb))

    def test_shapes_preserved(self, bench):
        for spec in mutant_specs(3, seed=1):
            m = mutate_model(bench.model, spec)
            assert m.widths == bench.model.widths
            assert [la.activation for la in m.layers] == [la.activation for la in bench.model.layers]

    def test_errors(self):
        m = Model([DenseLayer([[1.0, 2.0]], [0.5], "relu"), DenseLayer([[1.0], [-1.0]], [0.0, 0.0], "softmax")])
        with pytest.raises(MutationError):
            mutate_model(m, MutationSpec("neuron_switch", target_layer=0))
        with pytest.raises(MutationError):
            mutate_model(m, MutationSpec("gaussian_fuzz", target_layer=5))
        with pytest.raises(ConfigurationError):
            MutationSpec("flip")

    def test_fairness_spread(self, bench):
        scores = [fairness_score(mutate_model(bench.model, s), bench.test_pairs) for s in mutant_specs(10)]
        assert len(scores) == 40 and max(scores) - min(scores) >= 0.05


class TestStudies:
    def test_enhance_config_validation(self):
        with pytest.raises(ConfigurationError):
            EnhanceConfig(validation_mix="some")
        with pytest.raises(ConfigurationError):
            EnhanceConfig(select_fraction=0.0)

    def test_mutation_matrix_shape(self, small_bench):
        study = mutation_study(small_bench, AnalysisConfig(), per_operator=3)
        names = list(study.correlation)
        assert len(study.rows) == 3 * len(OPERATORS)
        for a in names:
            assert study.correlation[a][a] == 1.0
            for b in names:
                assert study.correlation[a][b] == study.correlation[b][a]

    def test_enhancement_report(self, bench):
        report, models = enhancement_study(bench, AnalysisConfig(), EnhanceConfig(epochs=3), seed=0)
        assert set(report["strategies"]) == {"random", "tanimoto", "cosine", "spearman"}
        assert {e["name"] for e in report["strategies"].values()} == {"RA", "TC", "CS", "SC"}
        for entry in report["strategies"].values():
            assert entry["accuracy"] >= report["before"]["accuracy"] - 0.05
            assert len(entry["selected_indices"]) == report["n_select"]
        assert set(models) == set(report["strategies"])
        for m in models.values():
            assert predict(m, bench.test.X[:3]).shape == (3,)
