"""Monte-Carlo summary helpers (re-exported by :mod:`netlab.stats`)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import norm

BOOTSTRAP_SEED = 20240601


@dataclass(frozen=True)
class Estimate:
    value: float
    se: float
    n: int

    def z(self, target: float) -> float:
        if self.se == 0:
            return 0.0 if self.value == target else float("inf")
        return (self.value - target) / self.se

    def within(self, target: float, k: float = 3.0) -> bool:
        return abs(self.value - target) <= k * self.se


def mean_se(values) -> Estimate:
    """Sample mean with the usual standard error of the mean."""
    v = np.asarray(values, dtype=float)
    n = v.size
    if n == 0:
        return Estimate(float("nan"), float("nan"), 0)
    se = float(v.std(ddof=1) / np.sqrt(n)) if n > 1 else float("nan")
    return Estimate(float(v.mean()), se, n)


def bootstrap_se(values, n_boot: int = 1000, seed: int = BOOTSTRAP_SEED) -> Estimate:
    """Mean with a replica-level bootstrap standard error (fixed resampling seed)."""
    v = np.asarray(values, dtype=float)
    n = v.size
    if n < 2:
        return Estimate(float(v.mean()) if n else float("nan"), float("nan"), n)
    gen = np.random.default_rng(seed)
    means = np.empty(n_boot)
    for b in range(n_boot):
        means[b] = v[gen.integers(0, n, n)].mean()
    return Estimate(float(v.mean()), float(means.std(ddof=1)), n)


def binomial_estimate(successes: int, trials: int) -> Estimate:
    p = successes / trials if trials else float("nan")
    se = float(np.sqrt(p * (1 - p) / trials)) if trials else float("nan")
    return Estimate(float(p), se, int(trials))


def bonferroni_z(n_tests: int, family_alpha: float = 2 * norm.sf(3.0)) -> float:
    """Two-sided z threshold keeping the family-wise level of a single 3-SE test."""
    return float(norm.isf(family_alpha / (2 * max(n_tests, 1))))
