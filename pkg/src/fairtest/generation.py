"""Unfair pair generation by perturbing both elements of a fair pair.

A fair pair ``(x, x')`` gets the same perturbation ``p`` on both sides until
the model's predictions for ``x + p`` and ``x' + p`` disagree or the
iteration budget runs out. Three step rules are available:

* ``RG``: every coordinate moves by -step, 0 or +step, chosen uniformly.
* ``GG``: coordinates where the cross-entropy gradients at ``x`` and ``x'``
  share a sign move by ``step * sign``; the rest stay put.
* ``GI``: i.i.d. Gaussian noise.
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import asdict, dataclass

import numpy as np

from .data import SamplePair
from .errors import ConfigurationError, InputShapeError
from .nn import forward_batch, input_gradients

RG, GG, GI = "RG", "GG", "GI"
STRATEGIES = (RG, GG, GI)


@dataclass(frozen=True)
class GenConfig:
    strategy: str = GG
    step_size: float = 5.0
    max_iterations: int = 10
    gaussian_mu: float = 0.0
    gaussian_sigma: float = 7.0
    clip_low: float = 0.0
    clip_high: float = 255.0
    seed: int = 0

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ConfigurationError(
                f"unknown strategy {self.strategy!r}; valid names: {', '.join(STRATEGIES)}"
            )
        if self.step_size <= 0:
            raise ConfigurationError("step_size must be positive")
        if self.max_iterations < 1:
            raise ConfigurationError("max_iterations must be at least 1")
        if self.gaussian_sigma <= 0:
            raise ConfigurationError("gaussian_sigma must be positive")
        if not self.clip_low < self.clip_high:
            raise ConfigurationError("clip range must satisfy low < high")

    def to_dict(self):
        return asdict(self)


@dataclass(frozen=True)
class GenResult:
    seed_pair: SamplePair
    final_pair: SamplePair
    success: bool
    iterations_used: int
    perturbation: np.ndarray
    stalled: bool = False


def rg_step(dim, step_size, rng):
    return rng.integers(-1, 2, size=dim).astype(np.float64) * step_size


def gi_step(dim, mu, sigma, rng):
    return rng.normal(mu, sigma, size=dim)


def sign_agreement_step(grad, grad_prime, step_size):
    """Step along the shared gradient sign; returns ``(p, stalled)``."""
    sg, sg_p = np.sign(grad), np.sign(grad_prime)
    agree = (sg == sg_p) & (sg != 0)
    p = np.where(agree, sg, 0.0) * step_size
    return p, not agree.any()


def gg_step(model, x, x_prime, y, step_size):
    """Gradient-sign step shared by ``x`` and ``x'``; returns ``(p, stalled)``."""
    grads = input_gradients(model, np.stack([x, x_prime]), [y, y])
    return sign_agreement_step(grads[0], grads[1], step_size)


def _predictions(model, x, x_prime):
    _, posts = forward_batch(model, np.stack([x, x_prime]))
    out = np.argmax(posts[-1], axis=1)
    return int(out[0]), int(out[1])


def generate_one(model, pair, config, rng):
    x0 = np.asarray(pair.x, dtype=np.float64)
    xp0 = np.asarray(pair.x_prime, dtype=np.float64)
    dim = x0.shape[0]
    total = np.zeros(dim)
    a, b = _predictions(model, x0, xp0)
    if a != b:
        return GenResult(pair, pair, True, 0, total)
    lo, hi = config.clip_low, config.clip_high
    x, xp = x0, xp0
    for it in range(1, config.max_iterations + 1):
        if config.strategy == RG:
            p = rg_step(dim, config.step_size, rng)
        elif config.strategy == GI:
            p = gi_step(dim, config.gaussian_mu, config.gaussian_sigma, rng)
        else:
            p, stalled = gg_step(model, x, xp, pair.label, config.step_size)
            if stalled:
                final = SamplePair(x, xp, pair.label, pair.source_attr, pair.target_attr)
                return GenResult(pair, final, False, it - 1, total, stalled=True)
        total = total + p
        # both elements carry the same accumulated perturbation
        x = np.clip(x0 + total, lo, hi)
        xp = np.clip(xp0 + total, lo, hi)
        a, b = _predictions(model, x, xp)
        if a != b:
            final = SamplePair(x, xp, pair.label, pair.source_attr, pair.target_attr)
            return GenResult(pair, final, True, it, total)
    final = SamplePair(x, xp, pair.label, pair.source_attr, pair.target_attr)
    return GenResult(pair, final, False, config.max_iterations, total)


def pair_rng(base_seed, index):
    return np.random.default_rng(int(base_seed) ^ int(index))


def generate_unfair(model, seed_pairs, config):
    """Run the configured strategy on every seed pair (one independent generator per pair)."""
    for i, pair in enumerate(seed_pairs):
        if np.shape(pair.x)[0] != model.input_dim:
            raise InputShapeError(f"pair {i} has dimension {np.shape(pair.x)[0]}, "
                                  f"model expects {model.input_dim}")
    return [generate_one(model, pair, config, pair_rng(config.seed, i))
            for i, pair in enumerate(seed_pairs)]


def successful_pairs(results, include_seed_unfair=False):
    return [r.final_pair for r in results
            if r.success and (include_seed_unfair or r.iterations_used > 0)]


def run_manifest(config, results):
    hist = Counter(r.iterations_used for r in results if r.success)
    n_ok = sum(r.success for r in results)
    return {
        "config": config.to_dict(),
        "seed_count": len(results),
        "success_count": n_ok,
        "success_rate": n_ok / len(results) if results else 0.0,
        "already_unfair_count": sum(r.success and r.iterations_used == 0 for r in results),
        "stalled_count": sum(r.stalled for r in results),
        "iterations_histogram": {str(k): hist[k] for k in sorted(hist)},
    }


def dumps_manifest(manifest):
    return json.dumps(manifest, indent=2, sort_keys=True) + "\n"
