"""Graphical construction of webs, nets and Bernoulli nets.

An arrow source answers one question: which displacements leave site
``(x, t)`` in replica ``rep``? :class:`ArrowOracle` answers it from the keyed
counter generator, so a realization is never stored; :class:`ExplicitField`
answers it from a table and is used for hand-built fields and for
exhaustive enumeration over arrow configurations.

Every query is vectorized: ``x``, ``t`` and ``rep`` broadcast against each
other and the answer is computed element-wise.

Arrow families
--------------
``first``/``web``   the omega^1 arrow only
``second``          the omega^2 arrow only
``net``             the distinct members of {omega^1, omega^2}
``bernoulli``       the full arrow set of the dominating Bernoulli net
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Sequence

import numpy as np

from . import rng
from ._types import LatticePath
from .errors import ExplosionCap, OutOfWindow
from .kernel import IncrementKernel, bernoulli_kernel, bernoulli_set_law

MODES = ("web", "sticky_pair", "net", "bernoulli", "coupled")
FAMILIES = ("first", "web", "second", "net", "bernoulli")
_DEFAULT_FAMILY = {
    "web": "web",
    "sticky_pair": "net",
    "net": "net",
    "bernoulli": "bernoulli",
    "coupled": "bernoulli",
}
PATH_CAP = 10**6


@dataclass(frozen=True)
class Window:
    """Closed space-time rectangle."""

    x_min: int
    x_max: int
    t_min: int
    t_max: int

    def __post_init__(self):
        if self.x_min > self.x_max or self.t_min > self.t_max:
            raise ValueError(f"empty window {self}")

    @property
    def width(self) -> int:
        return self.x_max - self.x_min + 1

    def contains(self, x, t) -> np.ndarray:
        x = np.asarray(x)
        t = np.asarray(t)
        return (x >= self.x_min) & (x <= self.x_max) & (t >= self.t_min) & (t <= self.t_max)

    def margin(self, kernel: IncrementKernel) -> int:
        """Light-cone margin max|jump| * duration."""
        return kernel.max_jump * (self.t_max - self.t_min)

    def core(self, kernel: IncrementKernel) -> tuple[int, int]:
        m = self.margin(kernel)
        return self.x_min + m, self.x_max - m


@dataclass(frozen=True)
class SimConfig:
    seed: int
    kernel: IncrementKernel
    epsilon: float
    window: Window | None = None

    def __post_init__(self):
        if not 0 <= self.epsilon < 1:
            raise ValueError(f"epsilon must lie in [0, 1), got {self.epsilon}")


@dataclass(frozen=True)
class ArrowSet:
    """Arrows leaving one site.

    ``bernoulli_arrows`` is ``None`` unless the source carries the
    dominating Bernoulli field; ``draws`` is the Poisson count M behind it.
    """

    net_arrows: tuple[int, int]
    bernoulli_arrows: frozenset[int] | None = None
    draws: int | None = None

    @property
    def branching(self) -> bool:
        return self.net_arrows[0] != self.net_arrows[1]


def _as_i64(*arrays):
    return np.broadcast_arrays(*[np.asarray(a, dtype=np.int64) for a in arrays])


def _dedupe(owner: np.ndarray, disp: np.ndarray, span: int) -> tuple[np.ndarray, np.ndarray]:
    code = np.unique(owner * (2 * span + 1) + (disp + span))
    return code // (2 * span + 1), code % (2 * span + 1) - span


class ArrowSource:
    """Shared behaviour of arrow oracles and explicit fields."""

    kernel: IncrementKernel
    mode: str
    seed: int = 0

    @property
    def default_family(self) -> str:
        return _DEFAULT_FAMILY[self.mode]

    def resolve_family(self, family: str | None) -> str:
        fam = family or self.default_family
        if fam not in FAMILIES:
            raise ValueError(f"unknown arrow family {fam!r}")
        return fam

    def net_pair(self, x, t, rep=0) -> tuple[np.ndarray, np.ndarray]:
        raise NotImplementedError

    def arrow_lists(self, x, t, rep=0, family: str | None = None):
        """Flattened arrows as ``(owner, disp)`` with ``owner`` indexing the query."""
        raise NotImplementedError

    def sample_site(self, x: int, t: int, rep: int = 0) -> ArrowSet:
        raise NotImplementedError

    def chooser_bits(self, x, t, rep=0) -> np.ndarray:
        """Fair coin per site, used by the ``uniform`` path chooser."""
        x, t, rep = _as_i64(x, t, rep)
        keys = rng.replica_keys(self.seed, rep)
        return rng.site_uniforms(keys, x, t, rng.STREAM_CHOOSER) < 0.5


class ArrowOracle(ArrowSource):
    """Keyed sampler of arrows for one of the five construction modes.

    ``web``          one a-distributed arrow per site.
    ``net``          omega^1 ~ a; with probability epsilon an independent
                     omega^2 ~ a, otherwise omega^2 = omega^1.
    ``sticky_pair``  same field as ``net``; walkers read one arrow each.
    ``bernoulli``    M ~ Poisson(r) given M >= 1 i.i.d. a-draws; the arrow
                     set is their union.
    ``coupled``      the ``bernoulli`` field with net arrows (d0, d0) when
                     M = 1 and (d0, d1) otherwise.

    The omega^1 draw is shared by all modes, so the web is the first
    branch of the net for the same seed.
    """

    def __init__(self, config: SimConfig, mode: str = "net"):
        if mode not in MODES:
            raise ValueError(f"unknown mode {mode!r}; expected one of {MODES}")
        self.config = config
        self.mode = mode
        self.kernel = config.kernel
        self.seed = int(config.seed)
        self.epsilon = float(config.epsilon)
        self._support = config.kernel.support
        self._cdf = config.kernel.cdf
        self._span = config.kernel.max_jump
        self.bkernel = None
        self._count_cdf = np.array([1.0])
        if mode in ("bernoulli", "coupled") and self.epsilon > 0:
            self.bkernel = bernoulli_kernel(config.kernel, self.epsilon)
            self._count_cdf = _poisson_tail_cdf(self.bkernel.r)

    @property
    def max_draws(self) -> int:
        return len(self._count_cdf)

    def _check(self, x, t):
        w = self.config.window
        if w is not None and not np.all(w.contains(x, t)):
            bad = ~w.contains(x, t)
            i = int(np.argmax(bad.ravel()))
            raise OutOfWindow(f"site ({np.ravel(x)[i]}, {np.ravel(t)[i]}) outside {w}")

    def _inverse(self, u: np.ndarray) -> np.ndarray:
        idx = np.searchsorted(self._cdf, u, side="right")
        return self._support[np.minimum(idx, len(self._support) - 1)]

    def _keys(self, rep: np.ndarray) -> np.ndarray:
        # hot loops pass the same replica array every step; reuse its keys
        cached = getattr(self, "_key_cache", None)
        if cached is not None and cached[0] is rep:
            return cached[1]
        keys = rng.replica_keys(self.seed, rep)
        if isinstance(rep, np.ndarray) and rep.size > 64:
            self._key_cache = (rep, keys)
        return keys

    def _base(self, x, t, rep):
        if isinstance(rep, np.ndarray) and rep.dtype == np.int64 and np.shape(x) == rep.shape:
            keys = self._keys(rep)
            x, t = _as_i64(x, t)
            keys = np.broadcast_to(keys, x.shape)
        else:
            x, t, rep = _as_i64(x, t, rep)
            keys = rng.replica_keys(self.seed, rep)
        self._check(x, t)
        return rng.site_base_v(keys, x, t)

    def _draws(self, base: np.ndarray) -> np.ndarray:
        if self.mode not in ("bernoulli", "coupled") or self.epsilon == 0:
            return np.ones(base.shape, dtype=np.int64)
        u = rng.uniform_v(base, np.int64(rng.STREAM_COUNT))
        idx = np.searchsorted(self._count_cdf, u, side="right")
        return 1 + np.minimum(idx, len(self._count_cdf) - 1)

    def _pair_from_base(self, base):
        w1 = self._inverse(rng.uniform_v(base, np.int64(rng.STREAM_W1)))
        if self.mode == "web" or self.epsilon == 0:
            return w1, w1.copy(), None
        if self.mode in ("net", "sticky_pair"):
            branch = rng.uniform_v(base, np.int64(rng.STREAM_BRANCH)) < self.epsilon
            counts = None
        else:
            counts = self._draws(base)
            branch = counts >= 2
        w2 = w1.copy()
        if branch.any():
            w2[branch] = self._inverse(rng.uniform_v(base[branch], np.int64(rng.STREAM_W2)))
        return w1, w2, counts

    def net_pair(self, x, t, rep=0):
        base = self._base(x, t, rep)
        w1, w2, _ = self._pair_from_base(base)
        return w1, w2

    def draws(self, x, t, rep=0) -> np.ndarray:
        """Poisson draw count M per site (identically 1 outside Bernoulli modes)."""
        return self._draws(self._base(x, t, rep))

    def arrow_lists(self, x, t, rep=0, family=None):
        fam = self.resolve_family(family)
        base = np.ravel(self._base(x, t, rep))
        n = base.size
        owner = np.arange(n, dtype=np.int64)
        if fam == "bernoulli" and self.mode not in ("bernoulli", "coupled"):
            raise ValueError(f"family 'bernoulli' needs a Bernoulli-mode oracle, not {self.mode!r}")
        w1, w2, counts = self._pair_from_base(base)
        if fam in ("first", "web"):
            return owner, w1
        if fam == "second":
            return owner, w2
        split = w2 != w1
        owners = [owner, owner[split]]
        disps = [w1, w2[split]]
        if fam == "net" or counts is None:
            return np.concatenate(owners), np.concatenate(disps)
        extra = np.flatnonzero(counts >= 3)
        k = 2
        while extra.size:
            u = rng.uniform_v(base[extra], np.int64(rng.STREAM_EXTRA + k - 2))
            owners.append(extra)
            disps.append(self._inverse(u))
            k += 1
            extra = extra[counts[extra] > k]
        return _dedupe(np.concatenate(owners), np.concatenate(disps), self._span)

    def sample_site(self, x: int, t: int, rep: int = 0) -> ArrowSet:
        base = self._base([x], [t], [rep])
        w1, w2, counts = self._pair_from_base(base)
        pair = (int(w1[0]), int(w2[0]))
        if self.mode not in ("bernoulli", "coupled"):
            return ArrowSet(net_arrows=pair)
        _, disp = self.arrow_lists([x], [t], [rep], "bernoulli")
        m = 1 if counts is None else int(counts[0])
        return ArrowSet(net_arrows=pair, bernoulli_arrows=frozenset(int(d) for d in disp), draws=m)


def _poisson_tail_cdf(r: float) -> np.ndarray:
    """CDF of M - 1 where M ~ Poisson(r) conditioned on M >= 1."""
    norm = math.expm1(r)
    pmf = []
    term = r  # r^m / m!
    m = 1
    total = 0.0
    while True:
        p = term / norm
        pmf.append(p)
        total += p
        if 1.0 - total < 1e-17 or m >= 200:
            break
        m += 1
        term *= r / m
    cdf = np.cumsum(pmf)
    cdf[-1] = 1.0
    return cdf


class ExplicitField(ArrowSource):
    """Arrow table for chosen sites; other sites use ``fallback`` or a fixed default.

    Each option is a tuple of displacements ``(w1, w2, extra...)``; a
    one-element option means a single arrow. ``assign`` has shape
    ``(n_sites, n_reps)`` and picks an option per site and replica, so one
    field can hold many realizations side by side.
    """

    def __init__(
        self,
        kernel: IncrementKernel,
        sites: Sequence[tuple[int, int]],
        options: Sequence[Sequence[int]],
        assign: np.ndarray,
        *,
        default: Sequence[int] = (0,),
        fallback: ArrowSource | None = None,
        mode: str = "net",
        seed: int = 0,
    ):
        self.kernel = kernel
        self.mode = mode
        self.seed = seed
        self.fallback = fallback
        self._span = max(kernel.max_jump, max(abs(d) for o in list(options) + [default] for d in o))
        opts = [tuple(int(d) for d in o) for o in options] + [tuple(int(d) for d in default)]
        width = max(len(o) for o in opts)
        self._opt = np.zeros((len(opts), max(width, 2)), dtype=np.int64)
        self._len = np.zeros(len(opts), dtype=np.int64)
        for i, o in enumerate(opts):
            full = list(o) + [o[0]] * (self._opt.shape[1] - len(o))
            if len(o) == 1:
                full[1] = o[0]
            self._opt[i] = full
            self._len[i] = len(o)
        self._default = len(opts) - 1
        self.options = opts[:-1]
        sites = [(int(x), int(t)) for x, t in sites]
        assign = np.asarray(assign, dtype=np.int64).reshape(len(sites), -1) if sites else np.zeros((0, 1), np.int64)
        order = np.argsort([self._code(x, t) for x, t in sites]) if sites else np.zeros(0, np.int64)
        self.sites = [sites[i] for i in order]
        self._codes = np.asarray([self._code(x, t) for x, t in self.sites], dtype=np.int64)
        self.assign = assign[order]
        self.n_reps = self.assign.shape[1]

    @staticmethod
    def _code(x, t):
        return (np.asarray(t, dtype=np.int64) + (1 << 20)) * (1 << 32) + (np.asarray(x, dtype=np.int64) + (1 << 31))

    @classmethod
    def from_dict(
        cls,
        kernel: IncrementKernel,
        table: dict[tuple[int, int], Sequence[int]],
        *,
        default: Sequence[int] = (0,),
        fallback: ArrowSource | None = None,
        mode: str = "net",
    ) -> "ExplicitField":
        """Single realization: ``table[(x, t)] = (w1, w2, ...)``."""
        sites = list(table)
        opts = [tuple(table[s]) for s in sites]
        return cls(kernel, sites, opts, np.arange(len(sites)).reshape(-1, 1), default=default, fallback=fallback, mode=mode)

    @classmethod
    def product(
        cls,
        kernel: IncrementKernel,
        sites: Sequence[tuple[int, int]],
        options: Sequence[Sequence[int]],
        *,
        default: Sequence[int] = (0,),
        mode: str = "net",
    ) -> "ExplicitField":
        """Every assignment of ``options`` to ``sites``; replica r is the r-th configuration."""
        n = len(sites)
        k = len(options)
        total = k**n
        if total > 50_000_000:
            raise ExplosionCap(f"{total} configurations exceed the enumeration budget")
        assign = np.indices((k,) * n).reshape(n, -1) if n else np.zeros((0, 1), dtype=np.int64)
        return cls(kernel, sites, options, assign, default=default, mode=mode)

    def _lookup(self, x, t, rep):
        x, t, rep = _as_i64(x, t, rep)
        code = self._code(x, t)
        opt = np.full(code.shape, self._default, dtype=np.int64)
        found = np.zeros(code.shape, dtype=bool)
        if self._codes.size:
            idx = np.clip(np.searchsorted(self._codes, code), 0, self._codes.size - 1)
            found = self._codes[idx] == code
            col = rep if self.n_reps > 1 else np.zeros_like(rep)
            opt = np.where(found, self.assign[idx, col % self.n_reps], opt)
        return x, t, rep, opt, found

    def net_pair(self, x, t, rep=0):
        x, t, rep, opt, found = self._lookup(x, t, rep)
        w1 = self._opt[opt, 0]
        w2 = self._opt[opt, 1]
        if self.fallback is not None and not found.all():
            miss = ~found
            f1, f2 = self.fallback.net_pair(x[miss], t[miss], rep[miss])
            w1 = w1.copy()
            w2 = w2.copy()
            w1[miss] = f1
            w2[miss] = f2
        return w1, w2

    def arrow_lists(self, x, t, rep=0, family=None):
        fam = self.resolve_family(family)
        x, t, rep, opt, found = self._lookup(x, t, rep)
        x, t, rep, opt, found = (np.ravel(a) for a in (x, t, rep, opt, found))
        if self.fallback is None:
            found = np.ones(x.size, dtype=bool)
        owners, disps = self._found_lists(opt, found, fam)
        if not found.all():
            miss = np.flatnonzero(~found)
            fo, fd = self.fallback.arrow_lists(x[miss], t[miss], rep[miss], fam)
            owners = np.concatenate([owners, miss[fo]])
            disps = np.concatenate([disps, fd])
        return _dedupe(owners, disps, self._span)

    def _found_lists(self, opt, found, fam):
        idx = np.flatnonzero(found)
        o = opt[idx]
        if fam in ("first", "web"):
            return idx, self._opt[o, 0]
        if fam == "second":
            return idx, self._opt[o, 1]
        width = self._opt.shape[1] if fam == "bernoulli" else 2
        owners, disps = [], []
        for j in range(width):
            keep = self._len[o] > j if j >= 2 else np.ones(o.size, dtype=bool)
            owners.append(idx[keep])
            disps.append(self._opt[o[keep], j])
        return np.concatenate(owners), np.concatenate(disps)

    def sample_site(self, x: int, t: int, rep: int = 0) -> ArrowSet:
        w1, w2 = self.net_pair([x], [t], [rep])
        _, disp = self.arrow_lists([x], [t], [rep], "bernoulli")
        return ArrowSet(net_arrows=(int(w1[0]), int(w2[0])), bernoulli_arrows=frozenset(int(d) for d in disp))


# ----------------------------------------------------------------------------
# enumeration helpers


def net_site_options(kernel: IncrementKernel, epsilon) -> list[tuple[tuple[int, int], Fraction | float]]:
    """All arrow pairs (w1, w2) with their pair-law weights.

    Pass ``epsilon`` as a :class:`~fractions.Fraction` for exact weights.
    """
    out = []
    exact = isinstance(epsilon, Fraction)
    for w1, w2 in itertools.product(kernel.displacements, repeat=2):
        if exact:
            a1, a2 = kernel.pmf_exact(w1), kernel.pmf_exact(w2)
        else:
            a1, a2 = kernel.pmf(w1), kernel.pmf(w2)
        w = (1 - epsilon) * a1 * (w1 == w2) + epsilon * a1 * a2
        if w:
            out.append(((w1, w2), w))
    return out


def bernoulli_site_options(kernel: IncrementKernel, epsilon: float) -> list[tuple[tuple[int, ...], float]]:
    """All nonempty arrow sets of the Bernoulli net with their probabilities."""
    return bernoulli_set_law(bernoulli_kernel(kernel, epsilon))


# ----------------------------------------------------------------------------
# paths


def sample_site(oracle: ArrowSource, x: int, t: int, rep: int = 0) -> ArrowSet:
    return oracle.sample_site(x, t, rep)


def follow_paths(
    source: ArrowSource,
    x0,
    t0: int,
    horizon: int,
    rep=0,
    chooser: str | Sequence[int] = "first",
) -> np.ndarray:
    """Vectorized path following; returns positions of shape ``(n, horizon - t0 + 1)``."""
    x, rep = _as_i64(x0, rep)
    x = np.atleast_1d(x).copy()
    rep = np.atleast_1d(rep)
    steps = horizon - t0
    if steps < 0:
        raise ValueError("horizon precedes start time")
    bits = None
    if not isinstance(chooser, str):
        bits = np.asarray([int(b) for b in chooser], dtype=np.int64)
        if bits.size < steps:
            raise ValueError(f"bit chooser needs {steps} bits, got {bits.size}")
    elif chooser not in ("first", "second", "uniform"):
        raise ValueError(f"unknown chooser {chooser!r}")
    out = np.empty((x.size, steps + 1), dtype=np.int64)
    out[:, 0] = x
    for k in range(steps):
        t = t0 + k
        w1, w2 = source.net_pair(x, t, rep)
        if bits is not None:
            pick2 = np.full(x.shape, bool(bits[k]))
        elif chooser == "first":
            pick2 = np.zeros(x.shape, dtype=bool)
        elif chooser == "second":
            pick2 = np.ones(x.shape, dtype=bool)
        else:
            pick2 = source.chooser_bits(x, t, rep)
        x = np.where(pick2, w2, w1) + x
        out[:, k + 1] = x
    return out


def follow_path(
    oracle: ArrowSource,
    start: tuple[int, int],
    horizon: int,
    chooser: str | Sequence[int] = "first",
    rep: int = 0,
) -> LatticePath:
    """Follow one arrow per step from ``start = (x, t)`` up to ``horizon``.

    ``chooser`` is ``first`` (omega^1), ``second`` (omega^2), ``uniform`` (a
    fair keyed coin per site) or a bit sequence (0 picks omega^1, 1 picks
    omega^2) with one bit per step.
    """
    x0, t0 = start
    pos = follow_paths(oracle, [x0], t0, horizon, [rep], chooser)[0]
    return LatticePath(int(t0), tuple(int(v) for v in pos))


def enumerate_net_paths(
    oracle: ArrowSource,
    start: tuple[int, int],
    horizon: int,
    rep: int = 0,
    cap: int = PATH_CAP,
) -> set[LatticePath]:
    """All distinct net trajectories from ``start`` up to ``horizon``."""
    x0, t0 = start
    paths = np.array([[x0]], dtype=np.int64)
    for t in range(t0, horizon):
        cur = paths[:, -1]
        w1, w2 = oracle.net_pair(cur, t, rep)
        split = w2 != w1
        nxt = np.concatenate([cur + w1, (cur + w2)[split]])
        paths = np.concatenate([paths, paths[split]])
        if paths.shape[0] > cap:
            raise ExplosionCap(f"more than {cap} paths from {start}")
        paths = np.column_stack([paths, nxt])
    return {LatticePath(int(t0), tuple(int(v) for v in row)) for row in paths}


def dump_arrows(oracle: ArrowSource, window: Window, rep: int = 0) -> Iterable[str]:
    """Text lines ``x t w1 w2 [bernoulli set...]`` for every site of ``window``."""
    xs = np.arange(window.x_min, window.x_max + 1)
    bern = oracle.mode in ("bernoulli", "coupled")
    for t in range(window.t_min, window.t_max + 1):
        w1, w2 = oracle.net_pair(xs, t, rep)
        if bern:
            owner, disp = oracle.arrow_lists(xs, t, rep, "bernoulli")
        for i, x in enumerate(xs):
            line = f"{x} {t} {w1[i]} {w2[i]}"
            if bern:
                line += " " + " ".join(str(d) for d in disp[owner == i])
            yield line
