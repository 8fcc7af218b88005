"""Desk-scale benchmark and the studies run on it.

A :class:`Subject` bundles everything a study needs: the model under test,
its training and test data, and the attribute transform. The desk
benchmark builds one from the synthetic patch-flip generator; the CLI builds
one from files. The study functions are shared by both.
"""

from __future__ import annotations

import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import enhancement as enh
from .data import PatchSpec, generate_synthetic, pair_dataset, stack_pairs, train_test_split
from .errors import ConfigurationError, DegeneratePartitionError, SelectionError
from .generation import STRATEGIES, GenConfig, generate_unfair, successful_pairs
from .metrics import (
    LAYER_METRICS,
    METRICS,
    coverage_all,
    deepest_hidden_layer,
    pair_metric_values,
    pearson,
    profile_ranges,
)
from .neurons import select_fairness_neurons
from .nn import accuracy, feature_stats, init_model, predict, train

log = logging.getLogger(__name__)


def thread_count():
    try:
        return max(1, int(os.environ.get("FAIRTEST_THREADS", "1")))
    except ValueError:
        return 1


def parallel_map(fn, items):
    """Ordered map, parallel up to FAIRTEST_THREADS workers."""
    items = list(items)
    workers = min(thread_count(), len(items)) if items else 1
    if workers <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


@dataclass
class Subject:
    model: object
    train: object
    test: object
    transform: object
    train_pairs: list
    test_pairs: list

    @property
    def test_accuracy(self):
        return accuracy(self.model, self.test.X, self.test.y)


@dataclass(frozen=True)
class BenchmarkConfig:
    seed: int = 0
    n_per_class: int = 500
    class_count: int = 2
    dim: int = 64
    patch_size: int = 4
    attr_bias: float = 0.5
    mean_spread: float = 24.0
    noise_std: float = 40.0
    hidden: tuple = (64, 32)
    epochs: int = 30
    learning_rate: float = 0.05
    batch_size: int = 32
    test_fraction: float = 0.3


def build_benchmark(config=BenchmarkConfig()):
    """Synthetic patch-flip data, a trained 3-layer MLP and both pair sets."""
    patch = PatchSpec(indices=tuple(range(config.patch_size)))
    d, t = generate_synthetic(config.seed, config.n_per_class, config.class_count, config.dim, patch,
                              mean_spread=config.mean_spread, noise_std=config.noise_std,
                              attr_bias=config.attr_bias)
    tr, te = train_test_split(d, config.test_fraction, config.seed)
    mean, scale = feature_stats(tr.X)
    widths = [config.dim, *config.hidden, config.class_count]
    model = init_model(widths, config.seed, input_mean=mean, input_scale=scale)
    model = train(model, tr, config.epochs, config.learning_rate, config.batch_size, config.seed)
    return Subject(model, tr, te, t, pair_dataset(tr, t).pairs, pair_dataset(te, t).pairs)


def split_by_fairness(model, pairs):
    """``(fair, unfair)`` lists under ``model``."""
    if not pairs:
        return [], []
    X, Xp, _ = stack_pairs(pairs)
    same = predict(model, X) == predict(model, Xp)
    return [p for p, s in zip(pairs, same) if s], [p for p, s in zip(pairs, same) if not s]


@dataclass(frozen=True)
class AnalysisConfig:
    alpha: float = 0.05
    top_k: int = 10
    z: int = 100
    layers: tuple = None

    def resolve_layers(self, model):
        return tuple(self.layers) if self.layers else (deepest_hidden_layer(model),)


def analyse(model, train_pairs, analysis):
    """Neuron map and range profile of ``model`` from its training pairs."""
    nf = select_fairness_neurons(model, train_pairs, analysis.alpha, analysis.top_k)
    profile = profile_ranges(model, train_pairs, nf, analysis.top_k, analysis.z,
                             analysis.resolve_layers(model))
    return nf, profile


# -- generator effectiveness ---------------------------------------------------

def generator_study(subject, n_seeds=200, base=GenConfig(), strategies=STRATEGIES):
    """Success rate of every strategy from the same fair test-pair seeds."""
    fair, _ = split_by_fairness(subject.model, subject.test_pairs)
    seeds = fair[:n_seeds]
    out = {"seed_count": len(seeds)}
    for s in strategies:
        results = generate_unfair(subject.model, seeds, replace(base, strategy=s))
        out[s] = sum(r.success for r in results) / len(results) if results else 0.0
    return out


# -- coverage on fair vs fair + generated suites -------------------------------

def coverage_study(subject, analysis=AnalysisConfig(), base=GenConfig(), strategies=STRATEGIES,
                   n_seeds=None):
    """Coverage of the fair test pairs alone, augmented with each strategy's unfair
    pairs, and augmented with all of them together (key ``"all"``)."""
    nf, profile = analyse(subject.model, subject.train_pairs, analysis)
    fair, _ = split_by_fairness(subject.model, subject.test_pairs)
    seeds = fair if n_seeds is None else fair[:n_seeds]
    out = {"fair": _ratios(coverage_all(fair, subject.model, nf, profile)), "generated": {}}
    pooled = []
    for s in strategies:
        gen = successful_pairs(generate_unfair(subject.model, seeds, replace(base, strategy=s)))
        out["generated"][s] = len(gen)
        out[s] = _ratios(coverage_all(fair + gen, subject.model, nf, profile))
        pooled += gen
    out["all"] = _ratios(coverage_all(fair + pooled, subject.model, nf, profile))
    return out


def _ratios(reports):
    return {m: r.ratio for m, r in reports.items()}


# -- mutation / correlation ------------------------------------------------------

DEFAULT_INTENSITIES = {
    enh.GAUSSIAN_FUZZ: [0.03 * (i + 1) for i in range(10)],
    enh.WEIGHT_SHUFFLE: [1 + i // 3 for i in range(10)],
    enh.NEURON_SWITCH: [1] * 10,
    enh.ACTIVATION_INVERSE: [1 + i // 5 for i in range(10)],
}


def mutant_specs(per_operator=10, seed=0, operators=enh.OPERATORS, intensities=None):
    intensities = intensities or DEFAULT_INTENSITIES
    specs = []
    for o, op in enumerate(operators):
        levels = intensities[op]
        for i in range(per_operator):
            specs.append(enh.MutationSpec(op, levels[i % len(levels)], "all", seed * 10007 + o * 101 + i))
    return specs


@dataclass
class MutationStudy:
    rows: list                  # dicts: operator, intensity, seed, accuracy, fairness_score, <metric>
    correlation: dict           # name -> name -> r (None when undefined)

    def fairness_correlations(self):
        return {m: self.correlation["fairness_score"][m] for m in METRICS}


def mutation_study(subject, analysis=AnalysisConfig(), per_operator=10, seed=0, specs=None,
                   keep_models=False):
    """Coverage of a fixed fair suite across mutants versus each mutant's fairness score.

    The suite is the set of test pairs the original model treats fairly. Each
    mutant gets its own neuron map and range profile from the training pairs
    (falling back to the original model's when the mutant has no unfair
    training pair), so relabelling neurons does not move its coverage.
    """
    base_nf, base_profile = analyse(subject.model, subject.train_pairs, analysis)
    suite, _ = split_by_fairness(subject.model, subject.test_pairs)
    specs = specs or mutant_specs(per_operator, seed)

    def run(spec):
        mutant = enh.mutate_model(subject.model, spec)
        try:
            nf, profile = analyse(mutant, subject.train_pairs, analysis)
        except DegeneratePartitionError:
            nf, profile = base_nf, base_profile
        cov = coverage_all(suite, mutant, nf, profile)
        row = {
            "operator": spec.operator,
            "intensity": spec.intensity,
            "seed": spec.seed,
            "accuracy": accuracy(mutant, subject.test.X, subject.test.y),
            "fairness_score": enh.fairness_score(mutant, subject.test_pairs),
        }
        row.update({m: cov[m].ratio for m in METRICS})
        return (row, mutant) if keep_models else (row, None)

    results = parallel_map(run, specs)
    rows = [r for r, _ in results]
    names = ["fairness_score", *METRICS]
    corr = {a: {} for a in names}
    for a in names:
        for b in names:
            xs = [r[a] for r in rows]
            ys = [r[b] for r in rows]
            corr[a][b] = 1.0 if a == b else pearson(xs, ys)
    study = MutationStudy(rows, corr)
    if keep_models:
        study.models = [m for _, m in results]
    return study


# -- enhancement -----------------------------------------------------------------

SELECTION_STRATEGIES = ("random", "tanimoto", "cosine", "spearman")
SHORT_NAMES = {"random": "RA", "tanimoto": "TC", "cosine": "CS", "spearman": "SC"}


@dataclass(frozen=True)
class EnhanceConfig:
    select_fraction: float = 0.1
    k_sections: int = 10
    epochs: int = 10
    learning_rate: float = 0.05
    batch_size: int = 32
    validation_mix: str = "equal"
    strategies: tuple = SELECTION_STRATEGIES

    def __post_init__(self):
        if self.validation_mix not in ("equal", "all"):
            raise ConfigurationError(f"validation_mix must be 'equal' or 'all', got {self.validation_mix!r}")
        if not 0 < self.select_fraction <= 1:
            raise ConfigurationError("select_fraction must lie in (0, 1]")


def validation_pairs(subject, base=GenConfig(), mix="equal", seed=0):
    """Unfair test pairs plus unfair pairs generated from fair test seeds by every strategy.

    ``mix="equal"`` truncates every source to the size of the smallest one.
    """
    fair, unfair = split_by_fairness(subject.model, subject.test_pairs)
    sources = [unfair]
    for s in STRATEGIES:
        gen = generate_unfair(subject.model, fair, replace(base, strategy=s, seed=base.seed + 1))
        sources.append(successful_pairs(gen))
    if mix == "equal":
        nonempty = [src for src in sources if src]
        size = min(len(src) for src in nonempty) if nonempty else 0
        rng = np.random.default_rng(seed)
        sources = [[src[i] for i in sorted(rng.choice(len(src), size=size, replace=False))]
                   if src else [] for src in sources]
    return [p for src in sources for p in src]


def select_candidates(strategy, candidates, values, n_select, k_sections, rng):
    """Indices into ``candidates`` picked by random or KM-ST selection."""
    if strategy == "random":
        return enh.random_select(len(candidates), n_select, rng), None
    v = values[strategy][:, 0]
    usable = np.flatnonzero(~np.isnan(v))
    if usable.size == 0:
        raise SelectionError(f"{strategy} is undefined on every candidate "
                                 "(no fairness-related neuron in the measured layer?)")
    n = min(n_select, usable.size)
    sel = enh.km_st_select(v[usable], n, k_sections, rng)
    sel.indices = [int(usable[i]) for i in sel.indices]
    return sel.indices, sel


def enhancement_study(subject, analysis=AnalysisConfig(), config=EnhanceConfig(), base=GenConfig(),
                      seed=0, candidates=None, validation=None):
    """Fairness and accuracy after augmenting with each selection strategy's picks.

    Returns ``(report, models)`` with one retrained model per strategy.

    Candidates are GG-generated unfair pairs seeded from fair training pairs;
    the validation set mixes original and generated unfair test pairs.
    """
    nf, _ = analyse(subject.model, subject.train_pairs, analysis)
    layer = analysis.resolve_layers(subject.model)[0]
    if candidates is None:
        fair_train, _ = split_by_fairness(subject.model, subject.train_pairs)
        candidates = successful_pairs(generate_unfair(subject.model, fair_train, replace(base, strategy="GG")))
    if validation is None:
        validation = validation_pairs(subject, base, config.validation_mix, seed)
    n_select = max(1, int(config.select_fraction * len(candidates)))
    values = pair_metric_values(subject.model, candidates, nf, [layer], analysis.top_k, LAYER_METRICS)

    before_acc = subject.test_accuracy
    before_fair = enh.fairness_score(subject.model, validation) if validation else None
    report = {
        "candidate_count": len(candidates),
        "validation_count": len(validation),
        "n_select": n_select,
        "before": {"accuracy": before_acc, "fairness_score": before_fair},
        "strategies": {},
    }
    models = {}
    for strategy in config.strategies:
        rng = np.random.default_rng(seed)
        idx, sel = select_candidates(strategy, candidates, values, n_select, config.k_sections, rng)
        retrained = enh.augment_retrain(subject.model, subject.train, [candidates[i] for i in idx],
                                        config.epochs, config.learning_rate, config.batch_size, seed)
        entry = {
            "name": SHORT_NAMES.get(strategy, strategy),
            "selected_indices": idx,
            "accuracy": accuracy(retrained, subject.test.X, subject.test.y),
            "fairness_score": enh.fairness_score(retrained, validation) if validation else None,
        }
        if sel is not None:
            entry["selection"] = sel.manifest()
        report["strategies"][strategy] = entry
        models[strategy] = retrained
    return report, models
