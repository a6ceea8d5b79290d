"""Diffusive scaling, counting variables, continuum oracles and fitting.

Rescaled times are mapped to lattice times by flooring everywhere, after
snapping values within ``SNAP`` of an integer, so that a rescaled time
built from a lattice time maps back to it exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
from scipy.stats import linregress

from ._mc import Estimate, binomial_estimate, bonferroni_z, bootstrap_se, mean_se
from ._runner import map_chunks
from ._types import LatticePath
from .errors import ConfigError, DegenerateInput, MarginTooSmall, NonPositiveTime
from .kernel import IncrementKernel, lazy_kernel
from .pointset import _counts, _forward_density_chunk, _tile, decode, encode, forward_step, make_oracle
from .rbp import DELTA0

__all__ = [
    "Estimate",
    "mean_se",
    "bootstrap_se",
    "binomial_estimate",
    "bonferroni_z",
    "ScalingMap",
    "counting_eta",
    "brownian_net_density",
    "brownian_web_density",
    "DensityRow",
    "density_convergence_experiment",
    "tightness_event_estimate",
    "large_excursion_tail",
    "PowerFit",
    "fit_power",
    "density_after_block",
]

SNAP = 1e-9


def _floor(v: float) -> int:
    r = round(v)
    if abs(v - r) <= SNAP * max(1.0, abs(v)):
        return int(r)
    return int(math.floor(v))


@dataclass(frozen=True)
class ScalingMap:
    """(x, t) -> (eps x, sigma^2 eps^2 t)."""

    epsilon: float
    sigma: float

    def __post_init__(self):
        if not (self.epsilon > 0 and self.sigma > 0):
            raise ValueError("scaling needs epsilon > 0 and sigma > 0")

    @classmethod
    def for_kernel(cls, kernel: IncrementKernel, epsilon: float) -> "ScalingMap":
        return cls(float(epsilon), math.sqrt(kernel.sigma2))

    @property
    def time_unit(self) -> float:
        return self.sigma**2 * self.epsilon**2

    def scale(self, x, t):
        return self.epsilon * np.asarray(x, dtype=float), self.time_unit * np.asarray(t, dtype=float)

    def unscale(self, y, s):
        return np.asarray(y, dtype=float) / self.epsilon, np.asarray(s, dtype=float) / self.time_unit

    def lattice_time(self, s: float) -> int:
        return _floor(s / self.time_unit)

    def lattice_x(self, y: float) -> int:
        return _floor(y / self.epsilon)

    def to_lattice(self, y: float, s: float) -> tuple[int, int]:
        """Floor-rounded lattice site of a rescaled point; inverts :meth:`scale` on lattice points."""
        return self.lattice_x(y), self.lattice_time(s)


# ----------------------------------------------------------------------------
# counting


def counting_eta(
    paths: Iterable[LatticePath], t: float, h: float, a: float, b: float, scaling: ScalingMap
) -> int:
    """Number of distinct rescaled positions in (a, b) at time t + h.

    Only paths whose rescaled start time is at most ``t`` count; positions
    are read at the lattice time floor((t + h) / unit).
    """
    if not a < b:
        raise ValueError("need a < b")
    n_start = scaling.lattice_time(t)
    n_end = scaling.lattice_time(t + h)
    seen = set()
    for p in paths:
        if p.start_time > n_start:
            continue
        if not p.defined_at(n_end):
            raise ValueError(f"path starting at {p.start} is not defined at lattice time {n_end}")
        x = p.at(n_end)
        if a < scaling.epsilon * x < b:
            seen.add(x)
    return len(seen)


# ----------------------------------------------------------------------------
# continuum oracles


def _net_density_scalar(t: float) -> float:
    if not t > 0:
        raise NonPositiveTime(f"t={t} must be positive")
    # 2 Phi(sqrt(2t)) = 2 - erfc(sqrt t); keeps the approach to 2 accurate
    return 2.0 + math.exp(-t) / math.sqrt(math.pi * t) - math.erfc(math.sqrt(t))


def brownian_net_density(t):
    """Expected points per unit length at time t of the standard Brownian net from everything.

    Equals e^-t / sqrt(pi t) + 2 Phi(sqrt(2 t)) with Phi from ``math.erfc``
    (absolute error well below 1e-12 for all t > 0). Accepts scalars or
    arrays.
    """
    if np.ndim(t) == 0:
        return _net_density_scalar(float(t))
    return np.asarray([_net_density_scalar(float(v)) for v in np.ravel(t)]).reshape(np.shape(t))


def brownian_web_density(t):
    """Same quantity for the Brownian web (no branching): 1 / sqrt(pi t)."""
    t = np.asarray(t, dtype=float)
    if np.any(t <= 0):
        raise NonPositiveTime("t must be positive")
    out = 1.0 / np.sqrt(np.pi * t)
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class DensityRow:
    epsilon: float
    scale: float
    T: int
    measured: float
    se: float
    oracle: float
    replicas: int

    @property
    def rel_gap(self) -> float:
        return abs(self.measured - self.oracle) / self.oracle


def density_convergence_experiment(
    epsilon_list: Sequence[float],
    t: float,
    replicas: int,
    *,
    kernel: IncrementKernel | None = None,
    seed: int = 0,
    jobs: int = 1,
    core_factor: float = 1.0,
    web_scale: float = 0.02,
) -> list[DensityRow]:
    """Rescaled net density at rescaled time ``t`` for each epsilon.

    The net runs from every site of [-w, w] at time 0 up to lattice time
    T = floor(t / (sigma^2 eps^2)); the occupied fraction of the clean core
    [-c, c], c = core_factor * max|jump| * T, divided by eps is compared with
    :func:`brownian_net_density`. ``epsilon = 0`` runs the web instead,
    rescaled by ``web_scale``, against :func:`brownian_web_density`.
    """
    kernel = kernel or lazy_kernel()
    rows = []
    for eps in epsilon_list:
        eps = float(eps)
        scale = eps if eps > 0 else float(web_scale)
        T = ScalingMap.for_kernel(kernel, scale).lattice_time(t)
        if T < 1:
            raise ConfigError(f"rescaled time {t} is below one lattice step at eps={scale}")
        half_core = int(core_factor * kernel.max_jump * T)
        if half_core < 1:
            raise MarginTooSmall("empty measurement core")
        mode = "net" if eps > 0 else "web"
        res = map_chunks(
            _forward_density_chunk,
            replicas,
            jobs=jobs,
            chunk=1,
            kernel=kernel,
            epsilon=eps,
            seed=seed,
            T=T,
            mode=mode,
            half_core=half_core,
        )
        dens = np.concatenate(res) / scale
        est = mean_se(dens)
        oracle = brownian_net_density(t) if eps > 0 else brownian_web_density(t)
        rows.append(DensityRow(eps, scale, T, est.value, est.se, float(oracle), replicas))
    return rows


# ----------------------------------------------------------------------------
# tightness and excursions


def _tight_chunk(lo, hi, *, kernel, epsilon, seed, mode, half_box, n_box, n_end, reach):
    src = make_oracle(kernel, epsilon, seed, mode)
    reps = np.arange(lo, hi, dtype=np.int64)
    hit = np.zeros(reps.size, dtype=bool)
    box = range(-half_box, half_box + 1)
    rep = np.zeros(0, np.int64)
    x = np.zeros(0, np.int64)
    for t in range(n_end):
        if t <= n_box:
            br, bx = _tile(reps, box)
            rep, x = decode(np.unique(np.concatenate([encode(rep, x), encode(br, bx)])))
        rep, x = forward_step(src, rep, x, t)
        out = np.abs(x) >= reach
        if out.any():
            hit[np.searchsorted(reps, np.unique(rep[out]))] = True
            keep = ~np.isin(rep, rep[out])
            rep, x = rep[keep], x[keep]
    return hit


def tightness_event_estimate(
    mode: str,
    epsilon: float,
    M: float,
    delta: float,
    replicas: int,
    *,
    kernel: IncrementKernel | None = None,
    seed: int = 0,
    jobs: int = 1,
    scale: float | None = None,
) -> Estimate:
    """P(some path from the rescaled box [-M, M] x [0, delta] reaches |x| >= 2M by time 2 delta).

    Runs the branching-coalescing cloud fed with every box site at every
    box time; by additivity the cloud is the union of all path positions.
    ``scale`` sets the rescaling and defaults to epsilon (required when
    epsilon is 0).
    """
    kernel = kernel or lazy_kernel()
    if mode not in ("net", "web", "bernoulli"):
        raise ConfigError(f"unsupported mode {mode!r}")
    s = float(scale if scale is not None else epsilon)
    if not s > 0:
        raise ConfigError("a positive scale is needed")
    sm = ScalingMap.for_kernel(kernel, s)
    half_box = sm.lattice_x(M)
    reach = sm.lattice_x(2 * M)
    n_box = sm.lattice_time(delta)
    n_end = sm.lattice_time(2 * delta)
    if n_end < 1 or reach <= half_box:
        raise MarginTooSmall("box too small on the lattice")
    res = map_chunks(
        _tight_chunk,
        replicas,
        jobs=jobs,
        chunk=100,
        kernel=kernel,
        epsilon=epsilon,
        seed=seed,
        mode=mode,
        half_box=half_box,
        n_box=n_box,
        n_end=n_end,
        reach=reach,
    )
    hit = np.concatenate(res)
    return binomial_estimate(int(hit.sum()), replicas)


def _excursion_chunk(lo, hi, *, kernel, epsilon, seed, T, mode):
    src = make_oracle(kernel, epsilon, seed, mode)
    reps = np.arange(lo, hi, dtype=np.int64)
    rep, x = reps.copy(), np.zeros(reps.size, dtype=np.int64)
    best = np.zeros(reps.size, dtype=np.int64)
    for t in range(T):
        rep, x = forward_step(src, rep, x, t)
        # sorted by (rep, x): the last entry of each replica is its maximum
        last = np.flatnonzero(np.r_[rep[1:] != rep[:-1], True])
        idx = np.searchsorted(reps, rep[last])
        best[idx] = np.maximum(best[idx], x[last])
    return best


def large_excursion_tail(
    epsilon: float,
    T: int,
    ell_list: Sequence[int],
    replicas: int,
    *,
    kernel: IncrementKernel | None = None,
    seed: int = 0,
    jobs: int = 1,
    mode: str = "net",
) -> list[tuple[int, Estimate]]:
    """P(max_{t <= T} max xi_t >= l) for xi_0 = {0}, per l."""
    kernel = kernel or lazy_kernel()
    if T < 0:
        raise ConfigError("T must be non-negative")
    if any(l > kernel.max_jump * T and l > 0 for l in ell_list):
        raise MarginTooSmall("some l lies beyond the light cone and is unreachable")
    res = map_chunks(_excursion_chunk, replicas, jobs=jobs, kernel=kernel, epsilon=epsilon, seed=seed, T=T, mode=mode)
    best = np.concatenate(res) if res else np.zeros(0, np.int64)
    return [(int(l), binomial_estimate(int((best >= l).sum()), replicas)) for l in ell_list]


# ----------------------------------------------------------------------------
# fitting


@dataclass(frozen=True)
class PowerFit:
    slope: float
    intercept: float
    slope_se: float
    r2: float
    residuals: tuple[float, ...]

    def predict(self, x):
        return np.exp(self.intercept) * np.asarray(x, dtype=float) ** self.slope


def fit_power(xs, ys) -> PowerFit:
    """Least squares fit of log y = intercept + slope log x."""
    x = np.asarray(xs, dtype=float)
    y = np.asarray(ys, dtype=float)
    if x.shape != y.shape or x.size < 3:
        raise DegenerateInput("need at least 3 paired points")
    if np.any(x <= 0) or np.any(y <= 0) or not np.all(np.isfinite(x)) or not np.all(np.isfinite(y)):
        raise DegenerateInput("power fits need finite positive data")
    lx, ly = np.log(x), np.log(y)
    if np.ptp(lx) == 0:
        raise DegenerateInput("all x values coincide")
    if np.ptp(ly) == 0:
        return PowerFit(0.0, float(ly[0]), 0.0, 1.0, tuple(np.zeros(x.size)))
    fit = linregress(lx, ly)
    resid = ly - (fit.intercept + fit.slope * lx)
    return PowerFit(float(fit.slope), float(fit.intercept), float(fit.stderr), float(fit.rvalue**2), tuple(resid))


# ----------------------------------------------------------------------------
# block density


def _block_chunk(lo, hi, *, kernel, epsilon, seed, sites, T):
    src = make_oracle(kernel, epsilon, seed, "net")
    reps = np.arange(lo, hi, dtype=np.int64)
    rep, x = _tile(reps, sites)
    for t in range(T):
        rep, x = forward_step(src, rep, x, t)
    return _counts(rep, reps)


def density_after_block(
    epsilon: float,
    upsilon: float,
    L: int,
    R0: float,
    replicas: int,
    *,
    kernel: IncrementKernel | None = None,
    seed: int = 0,
    jobs: int = 1,
    p: float = 1 / math.sqrt(2),
    delta0: float = DELTA0,
) -> Estimate:
    """P(|xi_T| >= p upsilon L) from upsilon L evenly spread sites of [0, L], T = R0 / upsilon^2."""
    kernel = kernel or lazy_kernel()
    n0 = _floor(upsilon * L)
    if n0 < 1:
        raise MarginTooSmall("upsilon * L must be at least 1")
    T = _floor(R0 / upsilon**2)
    if epsilon > 0 and T > 2 * delta0 / epsilon**2:
        raise ConfigError(f"T={T} exceeds 2 delta0 eps^-2 = {2 * delta0 / epsilon**2:g}")
    sites = sorted({int(math.floor(k * L / n0)) for k in range(n0)})
    res = map_chunks(_block_chunk, replicas, jobs=jobs, chunk=200, kernel=kernel, epsilon=epsilon, seed=seed, sites=sites, T=T)
    sizes = np.concatenate(res)
    return binomial_estimate(int((sizes >= p * n0).sum()), replicas)
