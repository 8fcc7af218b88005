"""Fairness testing for dense classifiers: fairness-related neurons, coverage
criteria over paired inputs, unfair pair generation and fairness enhancement."""

from .data import Dataset, SamplePair, Transform, generate_synthetic, pair_dataset, read_dataset, read_pairs
from .enhancement import MutationSpec, fairness_score, km_st_select, mutate_model
from .errors import FairTestError
from .generation import GenConfig, generate_unfair
from .metrics import METRICS, coverage, coverage_all, profile_ranges
from .neurons import chi_square_critical, kruskal_wallis_h, select_fairness_neurons
from .nn import Model, init_model, load_model, save_model, train

__version__ = "0.1.0"
