"""Forward branching-coalescing point sets, their duals, and estimators built on them.

The batched engine represents a collection of point sets, one per replica,
as two aligned int64 arrays ``(rep, x)`` sorted by ``(rep, x)``. A forward
step maps every occupied site through its arrows and deduplicates; a dual
step keeps the sites whose arrows land in the current set. Both steps read
the same arrow source, so forward and dual evolutions on one seed are
pathwise dual, not just equal in law.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from . import rng
from ._mc import Estimate, bonferroni_z, bootstrap_se, mean_se
from ._runner import DEFAULT_CHUNK, map_chunks
from .errors import MarginTooSmall
from .kernel import BernoulliKernel, IncrementKernel, bernoulli_kernel
from .netsim import ArrowOracle, ArrowSource, SimConfig

_SPAN = np.int64(1) << np.int64(32)
_OFF = np.int64(1) << np.int64(31)


def encode(rep: np.ndarray, x: np.ndarray) -> np.ndarray:
    return np.asarray(rep, dtype=np.int64) * _SPAN + (np.asarray(x, dtype=np.int64) + _OFF)


def decode(code: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    return code // _SPAN, code % _SPAN - _OFF


def _unique_sites(rep, x):
    return decode(np.unique(encode(rep, x)))


def _member(codes_sorted: np.ndarray, query: np.ndarray) -> np.ndarray:
    if codes_sorted.size == 0:
        return np.zeros(query.shape, dtype=bool)
    idx = np.clip(np.searchsorted(codes_sorted, query), 0, codes_sorted.size - 1)
    return codes_sorted[idx] == query


def make_oracle(kernel: IncrementKernel, epsilon: float, seed: int, mode: str, window=None) -> ArrowOracle:
    return ArrowOracle(SimConfig(seed=seed, kernel=kernel, epsilon=epsilon, window=window), mode)


# ----------------------------------------------------------------------------
# batched steps


def forward_step(source: ArrowSource, rep, x, t: int, family: str | None = None, pairs: bool = False):
    """One forward step of many point sets at integer time ``t``.

    With ``pairs=True`` also returns the half-step pair set as
    ``(rep, x, y)`` triples, one per used arrow.
    """
    rep = np.asarray(rep, dtype=np.int64)
    x = np.asarray(x, dtype=np.int64)
    owner, disp = source.arrow_lists(x, t, rep, family)
    r = rep[owner]
    src = x[owner]
    y = src + disp
    nr, nx = _unique_sites(r, y)
    if pairs:
        return nr, nx, (r, src, y)
    return nr, nx


def _candidate_shifts(source: ArrowSource) -> np.ndarray:
    shifts = set(source.kernel.displacements)
    for opt in getattr(source, "options", ()):
        shifts.update(opt)
    return np.asarray(sorted(shifts), dtype=np.int64)


def dual_step(source: ArrowSource, rep, x, t: int, family: str | None = None):
    """Map sets at time ``t`` to the sets at ``t - 1`` that reach them in one step."""
    rep = np.asarray(rep, dtype=np.int64)
    x = np.asarray(x, dtype=np.int64)
    if x.size == 0:
        return rep, x
    codes = np.unique(encode(rep, x))
    shifts = _candidate_shifts(source)
    cr, cx = _unique_sites(np.repeat(rep, shifts.size), (x[:, None] - shifts[None, :]).ravel())
    owner, disp = source.arrow_lists(cx, t - 1, cr, family)
    hit = _member(codes, encode(cr[owner], cx[owner] + disp))
    keep = np.unique(owner[hit])
    return cr[keep], cx[keep]


def evolve_forward(source, rep, x, t0: int, t1: int, family=None):
    for t in range(t0, t1):
        rep, x = forward_step(source, rep, x, t, family)
    return rep, x


def evolve_dual(source, rep, x, t_top: int, t_bottom: int, family=None):
    for t in range(t_top, t_bottom, -1):
        rep, x = dual_step(source, rep, x, t, family)
    return rep, x


def _tile(reps: np.ndarray, sites: Sequence[int]):
    s = np.asarray(sorted(set(int(v) for v in sites)), dtype=np.int64)
    return np.repeat(reps, s.size), np.tile(s, reps.size)


def _counts(rep: np.ndarray, reps: np.ndarray) -> np.ndarray:
    """Set size per replica for the sorted replica index array ``reps``."""
    return np.searchsorted(rep, reps, side="right") - np.searchsorted(rep, reps, side="left")


# ----------------------------------------------------------------------------
# single-replica public API


@dataclass(frozen=True)
class PointSet:
    """Occupied sites at an integer time, or the pair set at ``time + 1/2``."""

    sites: tuple[int, ...]
    time: int
    pairs: tuple[tuple[int, int], ...] | None = None

    def __post_init__(self):
        if list(self.sites) != sorted(set(self.sites)):
            raise ValueError("sites must be sorted and duplicate-free")

    @classmethod
    def of(cls, sites: Iterable[int], time: int = 0) -> "PointSet":
        return cls(tuple(sorted(set(int(s) for s in sites))), int(time))

    @property
    def half_integer(self) -> bool:
        return self.pairs is not None

    def __len__(self) -> int:
        return len(self.sites)

    def __contains__(self, x) -> bool:
        return int(x) in self.sites


def step_forward(
    oracle: ArrowSource, state: PointSet, rep: int = 0, family: str | None = None, half_step: bool = False
):
    """xi_{t+1} from xi_t; with ``half_step`` also return the pair state at t + 1/2."""
    r = np.full(len(state), rep, dtype=np.int64)
    x = np.asarray(state.sites, dtype=np.int64)
    nr, nx, (_, src, dst) = forward_step(oracle, r, x, state.time, family, pairs=True)
    nxt = PointSet(tuple(int(v) for v in nx), state.time + 1)
    if not half_step:
        return nxt
    pairs = tuple(sorted(set(zip(src.tolist(), dst.tolist()))))
    return nxt, PointSet(state.sites, state.time, pairs=pairs)


def step_dual(oracle: ArrowSource, state: PointSet, rep: int = 0, family: str | None = None) -> PointSet:
    """phi at time t - 1 from phi at time t."""
    r = np.full(len(state), rep, dtype=np.int64)
    _, nx = dual_step(oracle, r, np.asarray(state.sites, dtype=np.int64), state.time, family)
    return PointSet(tuple(int(v) for v in nx), state.time - 1)


def forward_sets(oracle, A: Iterable[int], t0: int, t1: int, rep: int = 0, family=None) -> list[PointSet]:
    """The trajectory xi_{t0}, ..., xi_{t1} started from ``A``."""
    out = [PointSet.of(A, t0)]
    for _ in range(t0, t1):
        out.append(step_forward(oracle, out[-1], rep, family))
    return out


def duality_check(
    oracle: ArrowSource, A: Iterable[int], B: Iterable[int], T: int, rep: int = 0, start: int = 0, family=None
) -> tuple[bool, bool]:
    """Indicators of {Xi_{0,T}(A) meets B} and {A meets Phi_{T,0}(B)} on one realization."""
    f, b = duality_indicators(oracle, A, B, T, np.asarray([rep]), start=start, family=family)
    return bool(f[0]), bool(b[0])


def duality_indicators(source: ArrowSource, A, B, T: int, reps: np.ndarray, start: int = 0, family=None):
    """Vectorized :func:`duality_check` over replicas ``reps``."""
    reps = np.asarray(reps, dtype=np.int64)
    A = sorted(set(int(a) for a in A))
    B = sorted(set(int(b) for b in B))
    fr, fx = evolve_forward(source, *_tile(reps, A), start, start + T, family)
    hit_f = np.isin(fx, B)
    fwd = np.zeros(reps.size, dtype=bool)
    pos = np.searchsorted(reps, fr[hit_f])
    fwd[pos] = True
    br, bx = evolve_dual(source, *_tile(reps, B), start + T, start, family)
    hit_b = np.isin(bx, A)
    bwd = np.zeros(reps.size, dtype=bool)
    bwd[np.searchsorted(reps, br[hit_b])] = True
    return fwd, bwd


@dataclass(frozen=True)
class DualTrace:
    sizes: tuple[int, ...]
    martingale: tuple[float, ...]
    absorbed_at: int | None


def dual_martingale_trace(oracle: ArrowOracle, B: Iterable[int], T: int, rep: int = 0, top: int | None = None) -> DualTrace:
    """|phi_t| and (1 - rho)^{|phi_t|} for the dual started from ``B`` at time ``top`` (default T)."""
    rho = _rho_of(oracle)
    top = T if top is None else top
    state = PointSet.of(B, top)
    sizes = [len(state)]
    for _ in range(T):
        state = step_dual(oracle, state, rep)
        sizes.append(len(state))
    absorbed = next((i for i, s in enumerate(sizes) if s == 0), None)
    return DualTrace(tuple(sizes), tuple((1 - rho) ** s for s in sizes), absorbed)


def _rho_of(oracle: ArrowSource) -> float:
    bk = getattr(oracle, "bkernel", None)
    if bk is None:
        raise ValueError("the dual martingale needs a Bernoulli-mode oracle with epsilon > 0")
    return bk.rho


# ----------------------------------------------------------------------------
# invariant law


@dataclass
class InvarianceReport:
    rho: float
    psi: dict[int, float]
    core: tuple[int, int]
    replicas: int
    site_freq: np.ndarray
    site_se: np.ndarray
    pooled: Estimate
    lag_corr: dict[int, Estimate]
    pair_freq: dict[int, Estimate]
    notes: list[str] = field(default_factory=list)

    def site_z(self) -> np.ndarray:
        return (self.site_freq - self.rho) / self.site_se

    def passed(self, k: float = 3.0) -> dict[str, bool]:
        n_sites = self.site_freq.size
        zcrit = bonferroni_z(n_sites)
        lag_crit = bonferroni_z(len(self.lag_corr))
        pair_crit = bonferroni_z(len(self.pair_freq))
        return {
            "pooled_occupation": self.pooled.within(self.rho, k),
            "per_site_occupation": bool(np.all(np.abs(self.site_z()) <= zcrit)),
            "lag_correlation": all(abs(e.z(self.rho**2)) <= lag_crit for e in self.lag_corr.values()),
            "half_step_pairs": all(abs(e.z(self.psi[y])) <= pair_crit for y, e in self.pair_freq.items()),
        }

    def rows(self) -> list[tuple[str, str, float, float]]:
        out = [("pooled", "occupation", self.pooled.value, self.pooled.se)]
        for i, (f, s) in enumerate(zip(self.site_freq, self.site_se)):
            out.append((f"site:{self.core[0] + i}", "occupation", float(f), float(s)))
        for k, e in self.lag_corr.items():
            out.append((f"lag:{k}", "pair_correlation", e.value, e.se))
        for y, e in self.pair_freq.items():
            out.append((f"pair:{y}", "half_step_intensity", e.value, e.se))
        return out


def _bernoulli_initial(lo: int, hi: int, xs: np.ndarray, rho: float, seed: int):
    reps = np.arange(lo, hi, dtype=np.int64)
    keys = rng.replica_keys(seed, reps)
    u = rng.site_uniforms(keys[:, None], xs[None, :], 0, rng.STREAM_INIT)
    occ = u < rho
    rr, ii = np.nonzero(occ)
    return reps[rr], xs[ii]


def _invariance_chunk(lo, hi, *, kernel, epsilon, seed, L, T, lags, core):
    oracle = make_oracle(kernel, epsilon, seed, "bernoulli")
    rho = oracle.bkernel.rho
    xs = np.arange(L, dtype=np.int64)
    rep, x = _bernoulli_initial(lo, hi, xs, rho, seed)
    for t in range(T):
        rep, x = forward_step(oracle, rep, x, t)
    _, _, (pr, px, py) = forward_step(oracle, rep, x, T, pairs=True)
    n = hi - lo
    c0, c1 = core
    width = c1 - c0 + 1
    occ = np.zeros((n, width), dtype=bool)
    inside = (x >= c0) & (x <= c1)
    occ[rep[inside] - lo, x[inside] - c0] = True
    lag_vals = {k: (occ[:, :-k] & occ[:, k:]).mean(axis=1) for k in lags}
    in_pairs = (px >= c0) & (px <= c1)
    shifts = sorted(kernel.displacements)
    pair_vals = {}
    for y in shifts:
        sel = in_pairs & (py - px == y)
        cnt = np.bincount(pr[sel] - lo, minlength=n)
        pair_vals[y] = cnt / width
    return occ.sum(axis=0), occ.mean(axis=1), lag_vals, pair_vals


def invariance_test(
    bk: BernoulliKernel,
    L: int,
    T: int,
    replicas: int,
    *,
    seed: int = 0,
    jobs: int = 1,
    lags: Sequence[int] = tuple(range(1, 9)),
) -> InvarianceReport:
    """Start the Bernoulli net from a Bernoulli(rho) set on [0, L) and test xi_T against the product law."""
    m = bk.base.max_jump
    core = (m * (T + 1), L - 1 - m * (T + 1))
    if core[1] - core[0] < max(lags) + 1:
        raise MarginTooSmall(f"window width {L} leaves no clean core at T={T}")
    res = map_chunks(
        _invariance_chunk,
        replicas,
        jobs=jobs,
        kernel=bk.base,
        epsilon=bk.epsilon,
        seed=seed,
        L=L,
        T=T,
        lags=tuple(lags),
        core=core,
    )
    counts = sum(r[0] for r in res)
    freq = counts / replicas
    se = np.sqrt(freq * (1 - freq) / replicas)
    pooled = mean_se(np.concatenate([r[1] for r in res]))
    lag_corr = {k: mean_se(np.concatenate([r[2][k] for r in res])) for k in lags}
    pair = {y: mean_se(np.concatenate([r[3][y] for r in res])) for y in res[0][3]}
    return InvarianceReport(
        rho=bk.rho,
        psi={d: p for d, p in bk.psi},
        core=core,
        replicas=replicas,
        site_freq=freq,
        site_se=np.where(se > 0, se, np.sqrt(bk.rho * (1 - bk.rho) / replicas)),
        pooled=pooled,
        lag_corr=lag_corr,
        pair_freq=pair,
    )


# ----------------------------------------------------------------------------
# dual martingale


def _dual_mart_chunk(lo, hi, *, kernel, epsilon, seed, B, T, mode):
    oracle = make_oracle(kernel, epsilon, seed, mode)
    reps = np.arange(lo, hi, dtype=np.int64)
    rep, x = _tile(reps, B)
    sizes = np.zeros((T + 1, reps.size), dtype=np.int64)
    sizes[0] = _counts(rep, reps)
    for k in range(T):
        rep, x = dual_step(oracle, rep, x, T - k)
        sizes[k + 1] = _counts(rep, reps)
    return sizes


@dataclass(frozen=True)
class DualMartingaleCurve:
    rho: float
    t: np.ndarray
    mean: np.ndarray
    se: np.ndarray
    absorbed: np.ndarray
    target: float

    def flat(self, k: float = 3.0) -> bool:
        return bool(np.all(np.abs(self.mean - self.target) <= np.maximum(k * self.se, 1e-12)))


def dual_martingale_curve(
    kernel: IncrementKernel,
    epsilon: float,
    B: Iterable[int],
    T: int,
    replicas: int,
    *,
    seed: int = 0,
    jobs: int = 1,
) -> DualMartingaleCurve:
    """Replica means of (1 - rho)^{|phi_t|} for t = 0..T."""
    rho = bernoulli_kernel(kernel, epsilon).rho
    B = sorted(set(int(b) for b in B))
    res = map_chunks(_dual_mart_chunk, replicas, jobs=jobs, kernel=kernel, epsilon=epsilon, seed=seed, B=B, T=T, mode="bernoulli")
    sizes = np.concatenate(res, axis=1)
    mart = (1 - rho) ** sizes
    mean = mart.mean(axis=1)
    se = mart.std(axis=1, ddof=1) / np.sqrt(replicas)
    return DualMartingaleCurve(
        rho=rho,
        t=np.arange(T + 1),
        mean=mean,
        se=se,
        absorbed=(sizes == 0).mean(axis=1),
        target=(1 - rho) ** len(B),
    )


# ----------------------------------------------------------------------------
# density decay


@dataclass(frozen=True)
class DensityPoint:
    T: int
    p_hat: float
    se: float
    replicas: int


def _dual_density_chunk(lo, hi, *, kernel, epsilon, seed, T, mode):
    oracle = make_oracle(kernel, epsilon, seed, mode)
    reps = np.arange(lo, hi, dtype=np.int64)
    rep, x = evolve_dual(oracle, reps, np.zeros(reps.size, dtype=np.int64), T, 0)
    return _counts(rep, reps) > 0


def _forward_density_chunk(lo, hi, *, kernel, epsilon, seed, T, mode, half_core):
    oracle = make_oracle(kernel, epsilon, seed, mode)
    reps = np.arange(lo, hi, dtype=np.int64)
    w = half_core + kernel.max_jump * T
    rep, x = _tile(reps, range(-w, w + 1))
    rep, x = evolve_forward(oracle, rep, x, 0, T)
    inside = np.abs(x) <= half_core
    return _counts(rep[inside], reps) / (2 * half_core + 1)


def density_curve(
    mode: str,
    epsilon: float,
    T_list: Sequence[int],
    replicas: int,
    *,
    kernel: IncrementKernel,
    seed: int = 0,
    jobs: int = 1,
    method: str = "dual",
    half_core: int = 64,
) -> list[DensityPoint]:
    """P(0 in xi_T) for xi_0 = Z, by duality or by forward translation averaging.

    ``method='dual'`` runs phi from {0} at time T down to 0 and records
    survival; by the pathwise duality identity this equals the occupation
    indicator of the forward set started from everything, with no
    boundary effect. ``method='forward'`` starts from the full window
    [-w, w], w = half_core + max|jump| T, and averages occupation over the
    clean core [-half_core, half_core].
    """
    if mode not in ("net", "bernoulli", "web"):
        raise ValueError(f"density mode must be net, bernoulli or web, got {mode!r}")
    out = []
    for T in T_list:
        T = int(T)
        if T == 0:
            out.append(DensityPoint(0, 1.0, 0.0, replicas))
            continue
        if method == "dual":
            res = map_chunks(_dual_density_chunk, replicas, jobs=jobs, kernel=kernel, epsilon=epsilon, seed=seed + T, T=T, mode=mode)
            est = mean_se(np.concatenate(res))
        elif method == "forward":
            if half_core < 0:
                raise MarginTooSmall("negative core")
            res = map_chunks(
                _forward_density_chunk,
                replicas,
                jobs=jobs,
                chunk=max(1, DEFAULT_CHUNK // 10),
                kernel=kernel,
                epsilon=epsilon,
                seed=seed + T,
                T=T,
                mode=mode,
                half_core=half_core,
            )
            est = bootstrap_se(np.concatenate(res))
        else:
            raise ValueError(f"unknown method {method!r}")
        out.append(DensityPoint(T, est.value, est.se, replicas))
    return out


def _pdec_chunk(lo, hi, *, kernel, rho, seed, T, core):
    oracle = make_oracle(kernel, 0.0, seed, "web")
    w = core + kernel.max_jump * T
    xs = np.arange(-w, w + 1, dtype=np.int64)
    rep, x = _bernoulli_initial(lo, hi, xs, rho, seed)
    reps = np.arange(lo, hi, dtype=np.int64)
    inside0 = np.abs(x) <= core
    n0 = _counts(rep[inside0], reps)
    rep, x = evolve_forward(oracle, rep, x, 0, T)
    inside = np.abs(x) <= core
    nT = _counts(rep[inside], reps)
    width = 2 * core + 1
    return n0 / width, (n0 - nT) / width


@dataclass(frozen=True)
class DensityDrop:
    epsilon: float
    T: int
    rho: float
    initial: Estimate
    drop: Estimate

    @property
    def scaled(self) -> float:
        """drop / (epsilon^2 sqrt(T))."""
        return self.drop.value / (self.epsilon**2 * np.sqrt(self.T)) if self.T else 0.0


def coalescing_density_reduction(
    epsilon: float,
    T: int,
    replicas: int,
    *,
    kernel: IncrementKernel,
    seed: int = 0,
    jobs: int = 1,
    core: int = 20000,
) -> DensityDrop:
    """p(0) - p(T) for coalescing walks from a Bernoulli(rho_epsilon) start.

    ``core`` is the half width of the measured region; the simulated window
    adds the light-cone margin on each side.
    """
    rho = bernoulli_kernel(kernel, epsilon).rho
    if core < 0:
        raise MarginTooSmall("negative core")
    if T == 0:
        return DensityDrop(epsilon, 0, rho, Estimate(rho, 0.0, replicas), Estimate(0.0, 0.0, replicas))
    res = map_chunks(_pdec_chunk, replicas, jobs=jobs, chunk=10, kernel=kernel, rho=rho, seed=seed, T=T, core=core)
    p0 = np.concatenate([r[0] for r in res])
    d = np.concatenate([r[1] for r in res])
    return DensityDrop(epsilon, T, rho, bootstrap_se(p0), bootstrap_se(d))
