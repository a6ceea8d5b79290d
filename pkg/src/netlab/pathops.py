"""Sticky random-walk pairs, their martingale residuals, and path hopping.

A sticky pair is two walkers on one net realization: walker 1 reads the
omega^1 arrow of its site and walker 2 the omega^2 arrow of its site. On
distinct sites the two arrows are independent; on a shared site they
coincide unless the site branches, so the difference walk lingers at 0.

Rescaling uses ``(x, t) -> (s x, sigma^2 s^2 t)`` where ``s`` is the scale
parameter (by default the branching probability itself), with lattice
times obtained by flooring.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np

from ._types import LatticePath
from .errors import ExplosionCap, OutOfWindow, UnreachableState
from .kernel import IncrementKernel, difference_kernel, potential_lookup
from .netsim import PATH_CAP, ArrowSource, follow_paths

__all__ = [
    "LatticePath",
    "StickyPairTrace",
    "sticky_pair",
    "sticky_pair_batch",
    "residual_product",
    "residual_potential",
    "potential_function",
    "hop_inputs",
    "hop_closure",
    "HOP_RULES",
]

HOP_RULES = ("strict", "switch")


@dataclass(frozen=True)
class StickyPairTrace:
    """Lattice positions of a sticky pair sampled at lattice times ``steps``.

    ``X1``/``X2`` have shape ``(len(steps),)`` for one replica or
    ``(replicas, len(steps))`` for a batch. ``coloc[..., j]`` counts the
    lattice times ``k < steps[j]`` at which the walkers shared a site.
    """

    steps: np.ndarray
    X1: np.ndarray
    X2: np.ndarray
    coloc: np.ndarray
    epsilon: float
    scale: float
    sigma2: float

    @property
    def unit(self) -> float:
        """Rescaled duration of one lattice step."""
        return self.sigma2 * self.scale**2

    @property
    def t(self) -> np.ndarray:
        return self.steps * self.unit

    @property
    def Y1(self) -> np.ndarray:
        return self.scale * self.X1

    @property
    def Y2(self) -> np.ndarray:
        return self.scale * self.X2

    @property
    def S(self) -> np.ndarray:
        """Unrescaled difference walk X1 - X2."""
        return self.X1 - self.X2

    @property
    def Z(self) -> np.ndarray:
        """Rescaled co-location time, counting lattice times 0..n inclusive."""
        return self.unit * (self.coloc + (self.X1 == self.X2))

    @property
    def Z_comp(self) -> np.ndarray:
        """Co-location time up to the previous lattice time (the compensator clock)."""
        return self.unit * self.coloc


def _check_scale(oracle: ArrowSource, scale: float | None) -> float:
    eps = float(getattr(oracle, "epsilon", 0.0))
    s = eps if scale is None else float(scale)
    if not s > 0:
        raise ValueError("a positive scale is needed when the branching probability is 0")
    return s


def sticky_pair_batch(
    oracle: ArrowSource,
    x1: int,
    x2: int,
    horizon: int,
    reps: Sequence[int] | np.ndarray,
    steps: Sequence[int] | None = None,
    scale: float | None = None,
) -> StickyPairTrace:
    """Run one sticky pair per replica index, recording only at ``steps``."""
    s = _check_scale(oracle, scale)
    rep = np.ascontiguousarray(reps, dtype=np.int64)
    grid = np.arange(horizon + 1) if steps is None else np.unique(np.asarray(steps, dtype=np.int64))
    if grid.size and (grid[0] < 0 or grid[-1] > horizon):
        raise ValueError("recording steps must lie in [0, horizon]")
    n = rep.size
    a = np.full(n, x1, dtype=np.int64)
    b = np.full(n, x2, dtype=np.int64)
    count = np.zeros(n, dtype=np.int64)
    out1 = np.empty((n, grid.size), dtype=np.int64)
    out2 = np.empty_like(out1)
    outc = np.empty_like(out1)
    j = 0
    for k in range(horizon + 1):
        while j < grid.size and grid[j] == k:
            out1[:, j], out2[:, j], outc[:, j] = a, b, count
            j += 1
        if k == horizon:
            break
        same = a == b
        count += same
        w1a, w2a = oracle.net_pair(a, k, rep)
        if same.all():
            a, b = a + w1a, b + w2a
            continue
        _, w2b = oracle.net_pair(b, k, rep)
        a, b = a + w1a, b + np.where(same, w2a, w2b)
    sigma2 = oracle.kernel.sigma2
    return StickyPairTrace(grid, out1, out2, outc, float(getattr(oracle, "epsilon", 0.0)), s, sigma2)


def sticky_pair(
    oracle: ArrowSource,
    x1: int,
    x2: int,
    horizon: int,
    epsilon: float | None = None,
    rep: int = 0,
) -> StickyPairTrace:
    """Sticky pair from ``(x1, 0)`` and ``(x2, 0)`` over ``horizon`` lattice steps.

    ``epsilon`` sets the rescaling and defaults to the oracle's branching
    probability. Raises :class:`OutOfWindow` when a walker leaves a
    windowed oracle.
    """
    tr = sticky_pair_batch(oracle, x1, x2, horizon, np.array([rep], dtype=np.int64), None, epsilon)
    return StickyPairTrace(tr.steps, tr.X1[0], tr.X2[0], tr.coloc[0], tr.epsilon, tr.scale, tr.sigma2)


def residual_product(trace: StickyPairTrace, epsilon: float | None = None) -> np.ndarray:
    """Y1 Y2 - (1 - eps) Z(floor t), a martingale in t.

    ``epsilon`` is the branching probability; it defaults to the one the
    trace was simulated with.
    """
    eps = trace.epsilon if epsilon is None else float(epsilon)
    return trace.Y1 * trace.Y2 - (1.0 - eps) * trace.Z_comp


def potential_function(kernel: IncrementKernel, x_max: int) -> Callable[[np.ndarray], np.ndarray]:
    """Vectorized potential kernel of the difference walk on [-x_max, x_max]."""
    table = potential_lookup(difference_kernel(kernel), x_max)
    period = difference_kernel(kernel).period

    def abar(x):
        x = np.asarray(x, dtype=np.int64)
        if np.any(np.abs(x) > x_max):
            raise OutOfWindow(f"|x| up to {int(np.abs(x).max())} exceeds the table radius {x_max}")
        if period > 1 and np.any(x % period):
            raise UnreachableState(f"potential kernel queried off the sublattice {period}Z")
        return table[x + x_max]

    abar.x_max = x_max
    return abar


def _as_potential(potential) -> Callable[[np.ndarray], np.ndarray]:
    if callable(potential):
        return potential
    table = np.asarray(potential, dtype=float)
    x_max = (table.size - 1) // 2

    def abar(x):
        x = np.asarray(x, dtype=np.int64)
        if np.any(np.abs(x) > x_max):
            raise OutOfWindow(f"|x| up to {int(np.abs(x).max())} exceeds the table radius {x_max}")
        return table[x + x_max]

    return abar


def residual_potential(
    trace: StickyPairTrace,
    potential,
    epsilon: float | None = None,
    sigma2: float | None = None,
    *,
    rescaled: bool = True,
) -> np.ndarray:
    """Compensated potential kernel along the difference walk.

    With ``rescaled`` this is ``s A(S) - sigma^-2 eps Z(floor t) / s`` where
    ``s`` is the trace scale; for ``s = eps`` it reduces to
    ``eps A(S) - sigma^-2 Z(floor t)``. Otherwise the unrescaled form
    ``A(S(n)) - eps * #{k < n : S(k) = 0}`` is returned. ``potential`` is a
    callable or a symmetric lookup array as built by :func:`potential_lookup`.
    """
    eps = trace.epsilon if epsilon is None else float(epsilon)
    s2 = trace.sigma2 if sigma2 is None else float(sigma2)
    vals = np.asarray(_as_potential(potential)(trace.S), dtype=float)
    if np.isnan(vals).any():
        raise UnreachableState("difference walk visited a site off the potential kernel's sublattice")
    unres = vals - eps * trace.coloc
    if not rescaled:
        return unres
    return trace.scale * vals - eps * trace.unit * trace.coloc / (s2 * trace.scale)


# ----------------------------------------------------------------------------
# hopping


def hop_inputs(
    oracle: ArrowSource,
    start: tuple[int, int],
    horizon: int,
    rep: int = 0,
    before: int = 0,
) -> set[LatticePath]:
    """omega^1 and omega^2 paths from every site of the light cone of ``start``.

    The cone covers times ``t0 - before`` to ``horizon - 1``; at time ``t`` it
    spans ``|x - x0| <= m |t - t0|`` with ``m`` the maximal jump.
    """
    x0, t0 = start
    m = oracle.kernel.max_jump
    out: set[LatticePath] = set()
    for t in range(t0 - before, horizon):
        r = m * abs(t - t0)
        xs = np.arange(x0 - r, x0 + r + 1)
        reps = np.full(xs.size, rep, dtype=np.int64)
        for chooser in ("first", "second"):
            for row in follow_paths(oracle, xs, t, horizon, reps, chooser):
                out.add(LatticePath(t, tuple(int(v) for v in row)))
    return out


def hop_closure(
    paths: Iterable[LatticePath],
    horizon: int,
    rule: str = "strict",
    cap: int = PATH_CAP,
) -> set[LatticePath]:
    """Closure of ``paths`` under concatenation at integer intersection times.

    A path pi may be followed by pi' from time t on when pi(t) = pi'(t) and
    t exceeds the start time of pi. Under ``strict`` t must also exceed the
    start time of pi'; under ``switch`` it may equal it.

    The fixpoint is characterized edge by edge: an edge (y -> y') at time s
    is available when some input path uses it and started before s (at or
    before s under ``switch``). The closure is then every trajectory that
    leaves an input start along an input path's first edge and continues
    along available edges, which is enumerated directly.
    """
    if rule not in HOP_RULES:
        raise ValueError(f"unknown hop rule {rule!r}; expected one of {HOP_RULES}")
    paths = set(paths)
    for p in paths:
        if p.end_time != horizon:
            raise ValueError(f"path {p} does not end at the horizon {horizon}")
    if len(paths) > cap:
        raise ExplosionCap(f"{len(paths)} input paths exceed cap {cap}")
    strict = rule == "strict"
    avail: dict[int, dict[int, set[int]]] = {}
    first: dict[tuple[int, int], set[int]] = {}
    points: set[tuple[int, int]] = set()
    for p in paths:
        s0 = p.start_time
        pos = p.positions
        if len(pos) == 1:
            points.add((pos[0], s0))
            continue
        first.setdefault((pos[0], s0), set()).add(pos[1])
        for i in range(0 if not strict else 1, len(pos) - 1):
            avail.setdefault(s0 + i, {}).setdefault(pos[i], set()).add(pos[i + 1])

    # count before enumerating
    ways: dict[tuple[int, int], int] = {}

    def count(y: int, s: int) -> int:
        if s == horizon:
            return 1
        key = (y, s)
        if key not in ways:
            ways[key] = sum(count(z, s + 1) for z in avail.get(s, {}).get(y, ()))
        return ways[key]

    total = len(points)
    for (x, s0), nxt in first.items():
        total += sum(count(z, s0 + 1) for z in nxt)
        if total > cap:
            raise ExplosionCap(f"hop closure exceeds {cap} paths")

    out = {LatticePath(s, (x,)) for x, s in points}
    for (x, s0), nxt in first.items():
        stack = [(z, s0 + 1, (x, z)) for z in sorted(nxt)]
        while stack:
            y, s, traj = stack.pop()
            if s == horizon:
                out.add(LatticePath(s0, traj))
                continue
            for z in avail.get(s, {}).get(y, ()):
                stack.append((z, s + 1, traj + (z,)))
    return out
