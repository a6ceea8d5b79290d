"""Relevant branching points and the finite graph representation.

A branching site z = (x, t) reached from the initial set is relevant for
the window (S, U) when its two branches can be continued by net paths that
never share a site on (t, U]. Deciding this is a reachability question on
ordered pairs of distinct sites, solved backwards in time: ``D_s`` holds the
pairs at time s that admit disjoint continuations through U, and z is
relevant iff its arrow pair lies in ``D_{t+1}``. The sweep is batched over
replicas exactly like the point-set engine.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from ._mc import binomial_estimate
from ._runner import map_chunks
from ._types import LatticePath
from .errors import ConfigError, ExplosionCap
from .kernel import IncrementKernel, lazy_kernel
from .netsim import ArrowSource, enumerate_net_paths
from .pointset import _counts, decode, encode, forward_step, make_oracle

PAIR_CAP = 20_000_000
BRUTE_CAP = 1 << 12
DELTA0 = 0.5

_POS_BITS = 20
_POS_OFF = np.int64(1) << np.int64(_POS_BITS - 1)
_REP_SHIFT = np.int64(2 * _POS_BITS)


@dataclass(frozen=True, order=True)
class Rbp:
    """A relevant branching point at lattice site ``(x, t)``."""

    x: int
    t: int

    @property
    def site(self) -> tuple[int, int]:
        return self.x, self.t


def _pair_code(rep, a, b):
    a = np.asarray(a, dtype=np.int64)
    b = np.asarray(b, dtype=np.int64)
    if a.size and (np.abs(a).max() >= _POS_OFF or np.abs(b).max() >= _POS_OFF):
        raise ExplosionCap("positions exceed the pair-code range")
    return (np.asarray(rep, dtype=np.int64) << _REP_SHIFT) | ((a + _POS_OFF) << np.int64(_POS_BITS)) | (b + _POS_OFF)


def _in(sorted_codes: np.ndarray, q: np.ndarray) -> np.ndarray:
    if sorted_codes.size == 0:
        return np.zeros(q.shape, dtype=bool)
    idx = np.clip(np.searchsorted(sorted_codes, q), 0, sorted_codes.size - 1)
    return sorted_codes[idx] == q


def _group_pairs(rep: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Index pairs (i, j), i != j, within equal runs of the sorted array ``rep``."""
    n = rep.size
    if n == 0:
        return np.zeros(0, np.int64), np.zeros(0, np.int64)
    starts = np.searchsorted(rep, rep, side="left")
    sizes = np.searchsorted(rep, rep, side="right") - starts
    total = int(sizes.sum())
    if total > PAIR_CAP:
        raise ExplosionCap(f"{total} site pairs exceed the cap {PAIR_CAP}")
    i = np.repeat(np.arange(n, dtype=np.int64), sizes)
    first = np.repeat(np.cumsum(sizes) - sizes, sizes)
    j = starts[i] + (np.arange(total, dtype=np.int64) - first)
    keep = i != j
    return i[keep], j[keep]


def _history(source: ArrowSource, reps: np.ndarray, A, S: int, U: int):
    """Point sets xi_S..xi_U per replica started from ``A``.

    ``A`` holds integers (sites at time S) or ``(x, t)`` pairs with t <= S.
    """
    starts: dict[int, list[int]] = {}
    for a in A:
        x, t = (a, S) if np.ndim(a) == 0 else a
        if t > S:
            raise ValueError(f"initial point {(x, t)} lies after S={S}")
        starts.setdefault(int(t), []).append(int(x))
    t0 = min(starts, default=S)
    rep = np.zeros(0, np.int64)
    x = np.zeros(0, np.int64)
    hist = []
    for t in range(t0, U + 1):
        if t in starts:
            s = np.asarray(sorted(set(starts[t])), dtype=np.int64)
            rep = np.concatenate([rep, np.repeat(reps, s.size)])
            x = np.concatenate([x, np.tile(s, reps.size)])
            rep, x = decode(np.unique(encode(rep, x)))
        if t >= S:
            hist.append((rep, x))
        if t < U:
            rep, x = forward_step(source, rep, x, t, "net")
    return hist


def _sweep(source: ArrowSource, reps: np.ndarray, A, S: int, U: int, count_root: bool = False):
    """Backward disjoint-pair sweep; returns (history, RBP (rep, x, t) arrays)."""
    hist = _history(source, reps, A, S, U)
    rep_u, x_u = hist[-1]
    i, j = _group_pairs(rep_u)
    D = np.sort(_pair_code(rep_u[i], x_u[i], x_u[j]))
    found_r, found_x, found_t = [], [], []
    lowest = S if count_root else S + 1
    for t in range(U - 1, lowest - 1, -1):
        rep, x = hist[t - S]
        if x.size == 0 or D.size == 0:
            D = np.zeros(0, np.int64)
            continue
        w1, w2 = source.net_pair(x, t, rep)
        y1, y2 = x + w1, x + w2
        branch = w1 != w2
        hit = branch & _in(D, _pair_code(rep, y1, y2))
        if hit.any():
            found_r.append(rep[hit])
            found_x.append(x[hit])
            found_t.append(np.full(int(hit.sum()), t, dtype=np.int64))
        if t == S:
            break
        i, j = _group_pairs(rep)
        if i.size == 0:
            D = np.zeros(0, np.int64)
            continue
        r = rep[i]
        ok = np.zeros(i.size, dtype=bool)
        for a in (y1, y2):
            for b in (y1, y2):
                ok |= _in(D, _pair_code(r, a[i], b[j]))
        D = np.sort(_pair_code(r[ok], x[i][ok], x[j][ok]))
    cat = lambda parts: np.concatenate(parts) if parts else np.zeros(0, np.int64)
    return hist, (cat(found_r), cat(found_x), cat(found_t))


def find_rbps(
    oracle: ArrowSource,
    A: Iterable,
    S: int,
    U: int,
    rep: int = 0,
    count_root: bool = False,
) -> set[Rbp]:
    """All (S, U)-relevant branching points of the net paths started from ``A``.

    Candidate times are S < t < U; with ``count_root`` a branching at time S
    itself is also counted, which is what makes the number of relevant
    points from a single site positive exactly when two sites survive at U.
    """
    if U <= S:
        raise ValueError("need S < U")
    _, (_, xs, ts) = _sweep(oracle, np.asarray([rep], dtype=np.int64), list(A), S, U, count_root)
    return {Rbp(int(x), int(t)) for x, t in zip(xs, ts)}


def find_rbps_bruteforce(
    oracle: ArrowSource,
    A: Iterable[int],
    S: int,
    U: int,
    rep: int = 0,
    cap: int = BRUTE_CAP,
    count_root: bool = False,
) -> set[Rbp]:
    """Reference implementation by enumeration of all path pairs (sites of A at time S)."""
    out: set[Rbp] = set()
    lowest = S if count_root else S + 1
    for a in sorted(set(int(v) for v in A)):
        paths = sorted(enumerate_net_paths(oracle, (a, S), U, rep, cap))
        arr = np.asarray([p.positions for p in paths], dtype=np.int64)
        for p, q in itertools.combinations(range(len(paths)), 2):
            diff = arr[p] != arr[q]
            k = int(np.argmax(diff))  # first index where they differ
            if diff[k:].all():
                t = S + k - 1
                if lowest <= t < U:
                    out.add(Rbp(int(arr[p][k - 1]), t))
    return out


def rbp_certificate(
    oracle: ArrowSource, z: tuple[int, int], U: int, rep: int = 0
) -> tuple[LatticePath, LatticePath] | None:
    """Two net paths leaving ``z`` by different arrows and disjoint on (t, U], or None.

    Forward pair reachability with back-pointers; this is the per-site
    certificate matching the backward sweep.
    """
    x, t = z
    w1, w2 = (int(v[0]) for v in oracle.net_pair([x], [t], [rep]))
    if w1 == w2 or t >= U:
        return None
    layer = {(x + w1, x + w2): None}
    layers = [layer]
    for s in range(t + 1, U):
        pairs = list(layer)
        a = np.asarray([p[0] for p in pairs], dtype=np.int64)
        b = np.asarray([p[1] for p in pairs], dtype=np.int64)
        r = np.full(a.size, rep, dtype=np.int64)
        a1, a2 = oracle.net_pair(a, s, r)
        b1, b2 = oracle.net_pair(b, s, r)
        nxt: dict[tuple[int, int], tuple[int, int]] = {}
        for k, p in enumerate(pairs):
            for da in {int(a1[k]), int(a2[k])}:
                for db in {int(b1[k]), int(b2[k])}:
                    q = (p[0] + da, p[1] + db)
                    if q[0] != q[1] and q not in nxt:
                        nxt[q] = p
        if len(nxt) > PAIR_CAP:
            raise ExplosionCap("pair set exceeds cap")
        if not nxt:
            return None
        layer = nxt
        layers.append(layer)
    end = min(layer)
    tr1, tr2 = [end[0]], [end[1]]
    cur = end
    for lay in reversed(layers[1:]):
        cur = lay[cur]
        tr1.append(cur[0])
        tr2.append(cur[1])
    tr1.append(x)
    tr2.append(x)
    return LatticePath(t, tuple(reversed(tr1))), LatticePath(t, tuple(reversed(tr2)))


# ----------------------------------------------------------------------------
# graph


@dataclass(frozen=True)
class RbpGraph:
    """Initial sites at S, relevant branching points, terminal sites at U, and edges."""

    S: int
    U: int
    initial: tuple[tuple[int, int], ...]
    rbps: tuple[tuple[int, int], ...]
    terminal: tuple[tuple[int, int], ...]
    edges: frozenset
    branching_violations: tuple[tuple[int, int], ...] = ()

    @property
    def vertices(self) -> tuple[tuple[int, int], ...]:
        return tuple(sorted(set(self.initial) | set(self.rbps) | set(self.terminal), key=lambda v: (v[1], v[0])))

    def out_degree(self, v: tuple[int, int]) -> int:
        return sum(1 for e in self.edges if e[0] == v)

    def degree_violations(self) -> list[tuple[int, int]]:
        """Vertices breaking the out-degree rules (RBP: exactly 2, initial: 1 or 2)."""
        bad = [v for v in self.rbps if self.out_degree(v) != 2]
        bad += [v for v in self.initial if v not in self.rbps and self.out_degree(v) not in (1, 2)]
        return bad

    def to_json(self) -> dict:
        return {
            "S": self.S,
            "U": self.U,
            "vertices": [list(v) for v in self.vertices],
            "rbps": [list(v) for v in self.rbps],
            "edges": sorted([list(a), list(b)] for a, b in self.edges),
        }


def build_graph(
    oracle: ArrowSource,
    A: Iterable,
    S: int,
    U: int,
    rep: int = 0,
    rbps: set[Rbp] | None = None,
) -> RbpGraph:
    """Finite graph representation of the net paths from ``A`` between S and U.

    Every site reached between two vertex times is labelled, backwards in
    time, with the set of vertices its forward paths hit first. An edge
    z1 -> z2 exists when z2 is such a first-hit vertex of a successor of
    z1. A non-vertex site with two or more first-hit vertices would be an
    effective branching; such sites are recorded in
    ``branching_violations`` (the structural lemmas say there are none).
    """
    A = list(A)
    if rbps is None:
        rbps = find_rbps(oracle, A, S, U, rep)
    hist = _history(oracle, np.asarray([rep], dtype=np.int64), A, S, U)
    rb = {r.site for r in rbps}
    initial = tuple((int(x), S) for x in hist[0][1])
    terminal = tuple((int(x), U) for x in hist[-1][1])
    heads: dict[tuple[int, int], frozenset] = {v: frozenset([v]) for v in terminal}
    edges = set()
    violations = []
    for t in range(U - 1, S - 1, -1):
        xs = hist[t - S][1]
        if xs.size == 0:
            continue
        w1, w2 = oracle.net_pair(xs, t, np.full(xs.size, rep, dtype=np.int64))
        for x, d1, d2 in zip(xs.tolist(), w1.tolist(), w2.tolist()):
            nxt = {(x + d1, t + 1), (x + d2, t + 1)}
            hit = frozenset().union(*(heads[n] for n in nxt))
            v = (x, t)
            if v in rb or t == S:
                edges.update((v, h) for h in hit)
                heads[v] = frozenset([v])
            else:
                if len(hit) > 1:
                    violations.append(v)
                heads[v] = hit
    return RbpGraph(
        S=S,
        U=U,
        initial=initial,
        rbps=tuple(sorted(rb, key=lambda v: (v[1], v[0]))),
        terminal=terminal,
        edges=frozenset(edges),
        branching_violations=tuple(sorted(violations, key=lambda v: (v[1], v[0]))),
    )


# ----------------------------------------------------------------------------
# tails


@dataclass
class RbpTail:
    epsilon: float
    T: int
    K_max: int
    replicas: int
    xi_size: np.ndarray = field(repr=False)
    count: np.ndarray = field(repr=False)

    def tail(self, K: int):
        return binomial_estimate(int((self.count >= K).sum()), self.replicas)

    @property
    def identity_violations(self) -> int:
        """Replicas where {R_T >= 1} and {|xi_T| >= 2} disagree."""
        return int(((self.count >= 1) != (self.xi_size >= 2)).sum())

    def rows(self) -> list[tuple[float, int, int, float, float, int]]:
        out = []
        for K in range(1, self.K_max + 1):
            e = self.tail(K)
            out.append((self.epsilon, self.T, K, e.value, e.se, self.replicas))
        return out


def _rbp_chunk(lo, hi, *, kernel, epsilon, seed, T):
    src = make_oracle(kernel, epsilon, seed, "net")
    reps = np.arange(lo, hi, dtype=np.int64)
    hist, (fr, _, _) = _sweep(src, reps, [0], 0, T, count_root=True)
    size = _counts(hist[-1][0], reps)
    count = _counts(np.sort(fr), reps)
    return size, count


def rbp_tail(
    epsilon: float,
    T: int,
    K_max: int = 4,
    replicas: int = 10_000,
    *,
    kernel: IncrementKernel | None = None,
    seed: int = 0,
    jobs: int = 1,
    delta0: float = DELTA0,
    chunk: int = 500,
) -> RbpTail:
    """Monte-Carlo law of the number of (0, T)-relevant branching points from (0, 0).

    Branchings at the root count, so {R_T >= 1} is exactly {|xi_T| >= 2};
    both quantities are computed on every replica.
    """
    kernel = kernel or lazy_kernel()
    if epsilon > 0 and T > delta0 / epsilon**2:
        raise ConfigError(f"T={T} exceeds delta0 * eps^-2 = {delta0 / epsilon**2:g}")
    if T < 1:
        raise ConfigError("T must be at least 1")
    res = map_chunks(_rbp_chunk, replicas, jobs=jobs, chunk=chunk, kernel=kernel, epsilon=epsilon, seed=seed, T=T)
    size = np.concatenate([r[0] for r in res])
    count = np.concatenate([r[1] for r in res])
    return RbpTail(float(epsilon), int(T), int(K_max), int(replicas), size, count)
