"""Increment laws and the laws derived from them.

An :class:`IncrementKernel` is a finite-support, mean-zero law on the
integers. From it we derive the pair law of a net site, the Bernoulli
kernel of the dominating net, the difference-walk kernel and its potential
kernel.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from fractions import Fraction
from functools import reduce
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy.optimize import brentq

from .errors import (
    InvalidKernel,
    NoConvergence,
    NonZeroMean,
    NotNormalized,
    PeriodicOrReducible,
    UnreachableState,
    WindowTooSmall,
)

SUM_TOL = 1e-12
TAIL_MASS = 1e-12


@dataclass(frozen=True)
class IncrementKernel:
    """Validated increment law. Build it with :func:`validate_kernel`."""

    displacements: tuple[int, ...]
    probs: tuple[float, ...]
    gamma: float
    sigma2: float
    m_gamma: float
    period: int = 1
    exact: tuple[Fraction, ...] | None = field(default=None, compare=False)

    @property
    def entries(self) -> list[tuple[int, float]]:
        return list(zip(self.displacements, self.probs))

    @property
    def support(self) -> np.ndarray:
        return np.asarray(self.displacements, dtype=np.int64)

    @property
    def pmf_array(self) -> np.ndarray:
        return np.asarray(self.probs, dtype=np.float64)

    @property
    def cdf(self) -> np.ndarray:
        c = np.cumsum(self.pmf_array)
        c[-1] = 1.0
        return c

    @property
    def max_jump(self) -> int:
        return int(max(abs(d) for d in self.displacements))

    @property
    def strongly_aperiodic(self) -> bool:
        """True when the support differences also generate the lattice."""
        d0 = self.displacements[0]
        return reduce(math.gcd, (d - d0 for d in self.displacements), 0) == 1

    def pmf(self, x: int) -> float:
        try:
            return self.probs[self.displacements.index(int(x))]
        except ValueError:
            return 0.0

    def pmf_exact(self, x: int) -> Fraction:
        probs = self.exact if self.exact is not None else [Fraction(p) for p in self.probs]
        try:
            return probs[self.displacements.index(int(x))]
        except ValueError:
            return Fraction(0)

    def moment(self, order: float) -> float:
        return float(sum(abs(d) ** order * p for d, p in self.entries))


def validate_kernel(
    entries: Iterable[tuple[int, float | Fraction]],
    gamma: float = 4.0,
    *,
    require_aperiodic: bool = True,
) -> IncrementKernel:
    """Check normalization, zero mean and lattice generation, then cache moments.

    ``require_aperiodic=False`` is used for derived kernels (such as the
    difference kernel of the +-1 walk) that live on a sublattice; their
    period is still recorded.
    """
    items = [(int(d), p) for d, p in entries]
    if not items:
        raise InvalidKernel("kernel has no entries")
    if gamma <= 3:
        raise InvalidKernel(f"moment order gamma={gamma} must exceed 3")
    disp = [d for d, _ in items]
    if len(set(disp)) != len(disp):
        raise InvalidKernel("duplicate displacement in kernel entries")
    if any(not p > 0 for _, p in items):
        raise InvalidKernel("kernel probabilities must be positive")
    items.sort()
    exact_in = all(isinstance(p, (Fraction, int)) for _, p in items)
    total = sum(p for _, p in items)
    if abs(float(total) - 1.0) > SUM_TOL:
        raise NotNormalized(f"normalization violated: probabilities sum to {float(total)!r}")
    mean = sum(d * p for d, p in items)
    if abs(float(mean)) > SUM_TOL:
        raise NonZeroMean(f"mean-zero assumption violated: mean = {float(mean)!r}")
    period = reduce(math.gcd, (abs(d) for d, _ in items), 0)
    if period == 0:
        raise PeriodicOrReducible("irreducibility violated: support is {0}")
    if require_aperiodic and period != 1:
        raise PeriodicOrReducible(
            f"irreducible/aperiodic assumption violated: support generates {period}Z"
        )
    probs = tuple(float(p) for _, p in items)
    d = tuple(disp_ for disp_, _ in items)
    sigma2 = float(sum(Fraction(x) ** 2 * Fraction(p) for x, p in items)) if exact_in else float(
        math.fsum(x * x * p for x, p in zip(d, probs))
    )
    m_gamma = math.fsum(abs(x) ** gamma * p for x, p in zip(d, probs))
    return IncrementKernel(
        displacements=d,
        probs=probs,
        gamma=float(gamma),
        sigma2=sigma2,
        m_gamma=m_gamma,
        period=period,
        exact=tuple(Fraction(p) for _, p in items) if exact_in else None,
    )


# ----------------------------------------------------------------------------
# presets and parsing


def simple_kernel() -> IncrementKernel:
    return validate_kernel([(-1, Fraction(1, 2)), (1, Fraction(1, 2))])


def lazy_kernel() -> IncrementKernel:
    return validate_kernel([(-1, Fraction(1, 4)), (0, Fraction(1, 2)), (1, Fraction(1, 4))])


def geometric_kernel(p: float, tail: float = TAIL_MASS) -> IncrementKernel:
    """Two-sided geometric law a(x) proportional to p**|x|, truncated symmetrically.

    The cut is placed where the discarded two-sided tail mass drops below
    ``tail``; symmetric cuts keep the mean exactly zero.
    """
    if not 0 < p < 1:
        raise InvalidKernel(f"geom(p) needs 0 < p < 1, got {p}")
    c = (1 - p) / (1 + p)
    # mass beyond |x| > n is 2 c p^(n+1) / (1 - p)
    n = 1
    while 2 * c * p ** (n + 1) / (1 - p) >= tail:
        n += 1
    xs = np.arange(-n, n + 1)
    w = c * p ** np.abs(xs)
    w = w / w.sum()
    return validate_kernel(list(zip(xs.tolist(), w.tolist())))


def load_kernel_file(path: str | Path) -> IncrementKernel:
    """Parse ``displacement probability`` lines; ``#`` starts a comment."""
    entries = []
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 2:
            raise InvalidKernel(f"{path}:{lineno}: expected 'displacement probability'")
        try:
            d = int(parts[0])
            prob = Fraction(parts[1]) if "/" in parts[1] else float(parts[1])
        except ValueError as exc:
            raise InvalidKernel(f"{path}:{lineno}: {exc}") from None
        entries.append((d, prob))
    return validate_kernel(entries)


def kernel_from_spec(spec: str) -> IncrementKernel:
    """Resolve ``simple``, ``lazy``, ``geom(p)`` or a kernel file path."""
    s = spec.strip()
    if s == "simple":
        return simple_kernel()
    if s == "lazy":
        return lazy_kernel()
    m = re.fullmatch(r"geom\(\s*([0-9.eE+-]+)\s*\)", s)
    if m:
        return geometric_kernel(float(m.group(1)))
    if Path(s).is_file():
        return load_kernel_file(s)
    raise InvalidKernel(f"unknown kernel {spec!r}; use simple, lazy, geom(p) or a file path")


# ----------------------------------------------------------------------------
# pair law and Bernoulli kernel


@dataclass(frozen=True)
class PairLaw:
    """Law of the arrow pair at one net site."""

    base: IncrementKernel
    epsilon: float

    def mass(self, x1: int, x2: int) -> float:
        a1, a2 = self.base.pmf(x1), self.base.pmf(x2)
        return (1 - self.epsilon) * a1 * (x1 == x2) + self.epsilon * a1 * a2

    def mass_exact(self, x1: int, x2: int, epsilon: Fraction) -> Fraction:
        a1, a2 = self.base.pmf_exact(x1), self.base.pmf_exact(x2)
        return (1 - epsilon) * a1 * (x1 == x2) + epsilon * a1 * a2

    def table(self) -> dict[tuple[int, int], float]:
        d = self.base.displacements
        return {(x1, x2): self.mass(x1, x2) for x1 in d for x2 in d}

    def total_mass(self) -> float:
        return math.fsum(self.table().values())


def _branching_map(r: float) -> float:
    return 1.0 - r / math.expm1(r)


def solve_branching_rate(epsilon: float, tol: float = 1e-12, maxiter: int = 500) -> float:
    """Unique r > 0 with epsilon = 1 - r / (e^r - 1).

    The map is increasing from 0 to 1, so a bracket is grown geometrically
    and refined with Brent's method.
    """
    if not 0 < epsilon < 1:
        raise ValueError(f"epsilon must lie in (0, 1), got {epsilon}")
    lo, hi = 0.0, 1.0
    while _branching_map(hi) < epsilon:
        lo, hi = hi, 2 * hi
        if hi > 1e6:
            raise NoConvergence(f"no bracket for epsilon={epsilon}")
    lo = max(lo, 1e-300)
    try:
        r = brentq(lambda v: _branching_map(v) - epsilon, lo, hi, xtol=1e-300, rtol=1e-15, maxiter=maxiter)
    except RuntimeError as exc:
        raise NoConvergence(str(exc)) from None
    if abs(_branching_map(r) - epsilon) > tol:
        raise NoConvergence(f"residual {abs(_branching_map(r) - epsilon):.3e} above {tol}")
    return float(r)


@dataclass(frozen=True)
class BernoulliKernel:
    """Per-displacement arrow probabilities psi of the dominating Bernoulli net."""

    base: IncrementKernel
    epsilon: float
    r: float
    psi: tuple[tuple[int, float], ...]
    rho: float

    def psi_of(self, x: int) -> float:
        for d, p in self.psi:
            if d == x:
                return p
        return 0.0

    @property
    def psi_array(self) -> np.ndarray:
        return np.asarray([p for _, p in self.psi])


def bernoulli_kernel(a: IncrementKernel, epsilon: float) -> BernoulliKernel:
    r = solve_branching_rate(epsilon)
    psi = tuple((d, -math.expm1(-r * p)) for d, p in a.entries)
    rho = -math.expm1(-r)
    rho_prod = 1.0 - math.prod(1.0 - p for _, p in psi)
    if abs(rho - rho_prod) > 1e-12:
        raise NoConvergence(f"rho formulas disagree: {rho} vs {rho_prod}")
    return BernoulliKernel(base=a, epsilon=float(epsilon), r=r, psi=psi, rho=rho)


def bernoulli_set_law(bk: BernoulliKernel) -> list[tuple[tuple[int, ...], float]]:
    """Law of the outgoing arrow set: nonempty subsets with conditioned product weights."""
    disp = [d for d, _ in bk.psi]
    probs = [p for _, p in bk.psi]
    out = []
    n = len(disp)
    for mask in range(1, 1 << n):
        w = 1.0
        subset = []
        for i in range(n):
            if mask >> i & 1:
                w *= probs[i]
                subset.append(disp[i])
            else:
                w *= 1 - probs[i]
        out.append((tuple(subset), w / bk.rho))
    return out


# ----------------------------------------------------------------------------
# difference walk and potential kernel


def difference_kernel(a: IncrementKernel) -> IncrementKernel:
    """Autocorrelation kernel of the difference of two independent a-walks."""
    probs = a.exact if a.exact is not None else a.probs
    acc: dict[int, float | Fraction] = {}
    for x1, p1 in zip(a.displacements, probs):
        for x2, p2 in zip(a.displacements, probs):
            acc[x1 - x2] = acc.get(x1 - x2, 0) + p1 * p2
    return validate_kernel(sorted(acc.items()), gamma=a.gamma, require_aperiodic=False)


def _sublattice(pbar: IncrementKernel, x: int) -> tuple[np.ndarray, np.ndarray, int]:
    d = pbar.period
    if x % d:
        raise UnreachableState(f"x={x} is off the reachable sublattice {d}Z")
    return pbar.support // d, pbar.pmf_array, x // d


@dataclass(frozen=True)
class PotentialEstimate:
    """Green-sum potential kernel with its convergence record."""

    x: int
    value: float
    partial: float
    horizons: tuple[int, ...]
    partial_sums: tuple[float, ...]
    error: float

    def __float__(self) -> float:
        return self.value


def _richardson(ts: Sequence[int], vals: Sequence[float]) -> float:
    # Fit A + c1 t^-1/2 + c2 t^-1 through the last three horizons.
    t = np.asarray(ts[-3:], dtype=float)
    v = np.asarray(vals[-3:], dtype=float)
    mat = np.column_stack([np.ones(3), t ** -0.5, 1.0 / t])
    return float(np.linalg.solve(mat, v)[0])


def potential_kernel(pbar: IncrementKernel, x: int, t_max: int = 1 << 14) -> PotentialEstimate:
    """A_t(x) = G_t(0,0) - G_t(x,0) by iterating the transition operator.

    The distribution of the walk started at 0 is propagated on a window
    whose radius follows a Hoeffding bound; any mass pushed past the window
    is tallied and must stay below 1e-12. Partial sums are recorded at
    horizons 2^k and extrapolated to t = infinity.
    """
    if t_max < 16:
        raise ValueError("t_max must be at least 16")
    steps, probs, xs = _sublattice(pbar, int(x))
    xs = abs(xs)
    m = int(np.abs(steps).max())
    radius = min(m * t_max, int(math.ceil(m * math.sqrt(2 * t_max * math.log(2 / TAIL_MASS * 1e2)))) + m)
    radius = max(radius, xs + m)
    size = 2 * radius + 1
    ker = np.zeros(2 * m + 1)
    np.add.at(ker, steps + m, probs)
    p = np.zeros(size)
    p[radius] = 1.0
    leaked = 0.0
    acc = 0.0
    horizons, partials = [], []
    next_h = 1
    for s in range(t_max + 1):
        acc += p[radius] - p[radius + xs]
        if s == next_h:
            horizons.append(s)
            partials.append(acc)
            next_h *= 2
        if s == t_max:
            break
        full = np.convolve(p, ker)
        leaked += full[:m].sum() + full[m + size :].sum()
        p = full[m : m + size]
        if leaked > TAIL_MASS:
            raise WindowTooSmall(f"mass {leaked:.3e} leaked past radius {radius}")
    if horizons[-1] != t_max:
        horizons.append(t_max)
        partials.append(acc)
    if len(horizons) >= 4:
        value = _richardson(horizons, partials)
        prev = _richardson(horizons[:-1], partials[:-1])
        err = abs(value - prev)
    else:
        value, err = acc, float("nan")
    return PotentialEstimate(
        x=int(x),
        value=value,
        partial=acc,
        horizons=tuple(horizons),
        partial_sums=tuple(partials),
        error=err,
    )


def potential_table(pbar: IncrementKernel, x_max: int, n_grid: int | None = None) -> np.ndarray:
    """Potential kernel on 0..x_max from its spectral representation.

    Writes (1 - cos x t)/(1 - phi(t)) as a Fejer kernel times the smooth
    periodic function g = (1 - cos t)/(1 - phi(t)); the Fourier coefficients
    of g come from one FFT and A(x) = sum_{|j|<x} (x - |j|) g_j. Entries off
    the reachable sublattice are NaN.
    """
    d = pbar.period
    steps = np.abs(pbar.support // d)
    probs = pbar.pmf_array
    n_sub = x_max // d + 1
    n = n_grid or max(1 << 12, 1 << int(math.ceil(math.log2(8 * n_sub + 16))))
    theta = 2 * np.pi * np.arange(n) / n
    half = np.sin(theta / 2) ** 2
    ratio = np.zeros(n)
    for st, pr in zip(steps, probs):
        if st == 0:
            continue
        with np.errstate(divide="ignore", invalid="ignore"):
            fej = np.sin(st * theta / 2) ** 2 / half
        fej[0] = st * st
        ratio += pr * fej
    g = 1.0 / ratio
    coef = np.real(np.fft.ifft(g))
    j = np.arange(n_sub)
    gj = coef[j]
    # symmetric sums over |j| < x
    s0 = np.concatenate([[0.0], np.cumsum(np.where(j == 0, gj, 2 * gj))])[:n_sub]
    s1 = np.concatenate([[0.0], np.cumsum(2 * j * gj)])[:n_sub]
    sub = j * s0 - s1
    out = np.full(x_max + 1, np.nan)
    out[::d] = sub[: len(out[::d])]
    return out


def potential_lookup(pbar: IncrementKernel, x_max: int) -> np.ndarray:
    """Symmetric table indexed by x + x_max for x in [-x_max, x_max]."""
    half = potential_table(pbar, x_max)
    return np.concatenate([half[:0:-1], half])
