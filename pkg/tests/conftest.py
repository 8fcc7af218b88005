import numpy as np
import pytest

from fairtest.experiments import BenchmarkConfig, build_benchmark
from fairtest.nn import DenseLayer, Model


def random_model(rng, widths=None, hidden="relu", output="softmax", scale=1.0):
    if widths is None:
        depth = int(rng.integers(1, 4))
        widths = [int(rng.integers(2, 7)) for _ in range(depth + 1)]
        widths[-1] = max(widths[-1], 2)
    layers = []
    for j, (a, b) in enumerate(zip(widths[:-1], widths[1:])):
        act = output if j == len(widths) - 2 else hidden
        layers.append(DenseLayer(rng.normal(0, scale, (b, a)), rng.normal(0, 0.5, b), act))
    return Model(layers)


@pytest.fixture(scope="session")
def bench():
    """Desk benchmark at seed 0 (trained MLP plus train/test pairs)."""
    return build_benchmark(BenchmarkConfig(seed=0))


@pytest.fixture(scope="session")
def small_bench():
    return build_benchmark(BenchmarkConfig(seed=1, n_per_class=150, hidden=(16, 8), epochs=20))


ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
