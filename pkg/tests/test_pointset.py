from fractions import Fraction

import numpy as np
import pytest

from netlab.errors import MarginTooSmall
from netlab.kernel import bernoulli_kernel, lazy_kernel, simple_kernel
from netlab.netsim import ExplicitField, net_site_options
from netlab.pointset import (
    PointSet,
    coalescing_density_reduction,
    decode,
    density_curve,
    dual_martingale_curve,
    dual_martingale_trace,
    duality_check,
    duality_indicators,
    encode,
    evolve_forward,
    forward_sets,
    invariance_test,
    make_oracle,
    step_dual,
    step_forward,
)
from netlab.stats import fit_power


def test_encode_roundtrip():
    rep = np.array([0, 5, 123456], dtype=np.int64)
    x = np.array([-(2**31), 0, 2**31 - 1], dtype=np.int64)
    r2, x2 = decode(encode(rep, x))
    assert np.array_equal(rep, r2) and np.array_equal(x, x2)


def test_pointset_validation():
    assert PointSet.of([3, 1, 3]).sites == (1, 3)
    with pytest.raises(ValueError):
        PointSet((3, 1), 0)
    assert 3 in PointSet.of([3]) and len(PointSet.of([])) == 0


def test_empty_stays_empty(lazy):
    src = make_oracle(lazy, 0.3, 0, "net")
    assert len(step_forward(src, PointSet.of([], 4))) == 0
    assert len(step_dual(src, PointSet.of([], 4))) == 0


def test_web_two_points_one_step():
    src = make_oracle(simple_kernel(), 0.0, 1, "net")
    for rep in range(100):
        assert len(step_forward(src, PointSet.of([0, 1]), rep)) in (1, 2)


def test_half_step_pairs(lazy):
    src = make_oracle(lazy, 0.5, 2, "net")
    nxt, half = step_forward(src, PointSet.of([0, 5]), half_step=True)
    assert half.half_integer and half.time == 0
    assert {y for _, y in half.pairs} == set(nxt.sites)
    assert {x for x, _ in half.pairs} == {0, 5}


def test_additivity_exhaustive():
    # every net configuration of the light cone of {0, 1} over 3 steps (simple kernel)
    k = simple_kernel()
    sites = [(x, t) for t in range(3) for x in range(-t, 2 + t)]
    field = ExplicitField.product(k, sites, [(-1,), (1,), (-1, 1)])
    reps = np.arange(field.n_reps, dtype=np.int64)

    def run(A):
        r = np.repeat(reps, len(A))
        x = np.tile(np.asarray(A, dtype=np.int64), reps.size)
        r, x = evolve_forward(field, r, x, 0, 3)
        return set(encode(r, x).tolist())

    assert run([0, 1]) == run([0]) | run([1])


def test_additivity_and_monotonicity_random(lazy):
    src = make_oracle(lazy, 0.3, 5, "bernoulli")
    for rep in range(30):
        a = forward_sets(src, [0, 4], 0, 10, rep)
        b = forward_sets(src, [4, 9], 0, 10, rep)
        ab = forward_sets(src, [0, 4, 9], 0, 10, rep)
        for t in range(11):
            assert set(ab[t].sites) == set(a[t].sites) | set(b[t].sites)
            assert set(a[t].sites) <= set(ab[t].sites)


def test_bernoulli_dominates_net(lazy):
    coupled = make_oracle(lazy, 0.3, 7, "coupled")
    for rep in range(30):
        net = forward_sets(coupled, [0], 0, 12, rep, family="net")
        bern = forward_sets(coupled, [0], 0, 12, rep, family="bernoulli")
        for t in range(13):
            assert set(net[t].sites) <= set(bern[t].sites)


def test_dual_size_fluctuates(lazy):
    src = make_oracle(lazy, 0.2, 3, "bernoulli")
    n = 2000
    changed = sum(len(step_dual(src, PointSet.of([0, 3], 1), rep)) != 2 for rep in range(n))
    assert changed / n > 0.01


def test_duality_empty(lazy):
    src = make_oracle(lazy, 0.2, 0, "net")
    assert duality_check(src, [], [0], 3) == (False, False)


def test_duality_exact_probability():
    # A = B = {0}, T = 1: only the arrows at (0, 0) matter
    lazy = lazy_kernel()
    opts = net_site_options(lazy, Fraction(1, 5))
    field = ExplicitField.product(lazy, [(0, 0)], [o for o, _ in opts])
    f, b = duality_indicators(field, [0], [0], 1, np.arange(field.n_reps))
    assert np.array_equal(f, b)
    p = sum(w for (o, w), hit in zip(opts, f) if hit)
    assert p == Fraction(11, 20)


@pytest.mark.parametrize("mode", ["net", "bernoulli"])
def test_duality_random_instances(lazy, mode):
    gen = np.random.default_rng(11)
    src = make_oracle(lazy, 0.2, 4, mode)
    n_inst = 0
    for _ in range(50):
        T = int(gen.integers(1, 5))
        A = gen.integers(-4, 5, size=int(gen.integers(1, 4))).tolist()
        B = gen.integers(-4, 5, size=int(gen.integers(1, 4))).tolist()
        reps = np.arange(1000) + n_inst
        f, b = duality_indicators(src, A, B, T, reps)
        assert np.array_equal(f, b)
        n_inst += reps.size
    assert n_inst == 50_000


def test_invariance_small():
    bk = bernoulli_kernel(lazy_kernel(), 0.05)
    rep = invariance_test(bk, 256, 16, 2000, seed=3)
    assert all(rep.passed().values())
    assert rep.rows()[0][0] == "pooled"
    with pytest.raises(MarginTooSmall):
        invariance_test(bk, 40, 16, 10)


def test_dual_martingale_empty(lazy):
    src = make_oracle(lazy, 0.1, 0, "bernoulli")
    tr = dual_martingale_trace(src, [], 5)
    assert tr.martingale == (1.0,) * 6
    assert tr.absorbed_at == 0


def test_dual_martingale_needs_bernoulli(lazy):
    with pytest.raises(ValueError):
        dual_martingale_trace(make_oracle(lazy, 0.1, 0, "net"), [0], 5)


def test_dual_martingale_singleton(lazy):
    curve = dual_martingale_curve(lazy, 0.1, [0], 32, 20_000, seed=1)
    assert curve.target == pytest.approx(1 - curve.rho)
    assert curve.flat()
    assert curve.mean[0] == pytest.approx(curve.target, rel=1e-12)


def test_absorption_probability(lazy):
    # the dual is absorbed or grows large; the martingale bounds absorption by (1 - rho)^b
    eps = 0.3
    curve = dual_martingale_curve(lazy, eps, [0, 1], 200, 5000, seed=2)
    rho = curve.rho
    assert curve.absorbed[-1] <= (1 - rho) ** 2 + 3 * np.sqrt(curve.absorbed[-1] / 5000)
    assert curve.absorbed[-1] >= 0.8 * (1 - rho) ** 2
    assert np.all(np.diff(curve.absorbed) >= 0)


def test_density_time_zero(lazy):
    assert density_curve("net", 0.01, [0], 10, kernel=lazy)[0].p_hat == 1.0
    with pytest.raises(ValueError):
        density_curve("sticky_pair", 0.01, [4], 10, kernel=lazy)


def test_density_dual_equals_forward(lazy):
    # both methods estimate the same probability
    d = density_curve("net", 0.1, [16], 4000, kernel=lazy, seed=5)[0]
    f = density_curve("net", 0.1, [16], 200, kernel=lazy, seed=5, method="forward", half_core=64)[0]
    assert abs(d.p_hat - f.p_hat) <= 3 * np.hypot(d.se, f.se)


@pytest.mark.slow
def test_web_density_slope(lazy):
    pts = density_curve("web", 0.0, [64, 256, 1024, 4096], 20_000, kernel=lazy, seed=2)
    fit = fit_power([p.T for p in pts], [p.p_hat for p in pts])
    assert -0.55 <= fit.slope <= -0.45


def test_pdec_time_zero(lazy):
    d = coalescing_density_reduction(0.01, 0, 10, kernel=lazy)
    assert d.drop.value == 0 and d.scaled == 0


def test_pdec_scaling(lazy):
    scaled = []
    for eps in (0.02, 0.01, 0.005):
        for T in (256, 1024):
            d = coalescing_density_reduction(eps, T, 40, kernel=lazy, seed=1)
            assert d.initial.within(d.rho)
            scaled.append(d.scaled)
    assert max(scaled) <= 4 * min(scaled)
