import numpy as np
import pytest
from scipy import stats as sps

from netlab._types import LatticePath
from netlab.errors import ExplosionCap, OutOfWindow
from netlab.kernel import lazy_kernel, simple_kernel
from netlab.netsim import (
    ArrowOracle,
    ExplicitField,
    SimConfig,
    Window,
    dump_arrows,
    enumerate_net_paths,
    follow_path,
    follow_paths,
    net_site_options,
    sample_site,
)
from netlab.pointset import forward_sets, make_oracle


def grid(n):
    xs = np.arange(n) % 1000 - 500
    ts = np.arange(n) // 1000
    return xs, ts


def test_web_when_eps_zero(lazy):
    src = make_oracle(lazy, 0.0, 3, "net")
    xs, ts = grid(100_000)
    w1, w2 = src.net_pair(xs, ts)
    assert np.array_equal(w1, w2)


def test_web_is_first_branch_of_net(lazy):
    xs, ts = grid(10_000)
    web = make_oracle(lazy, 0.0, 5, "web").net_pair(xs, ts)[0]
    net = make_oracle(lazy, 0.3, 5, "net").net_pair(xs, ts)[0]
    assert np.array_equal(web, net)


def test_purity(lazy):
    for mode in ("net", "coupled", "bernoulli", "sticky_pair", "web"):
        src = make_oracle(lazy, 0.2, 11, mode)
        a = sample_site(src, 5, 7)
        b = sample_site(src, 5, 7)
        assert a == b
    src = make_oracle(lazy, 0.2, 11, "net")
    assert sample_site(src, 5, 7, rep=0) == src.sample_site(5, 7, 0)


def test_single_arrow_marginal(lazy):
    src = make_oracle(lazy, 0.2, 1, "net")
    xs, ts = grid(1_000_000)
    w1, _ = src.net_pair(xs, ts)
    counts = np.array([(w1 == d).sum() for d in lazy.displacements])
    expected = np.asarray(lazy.probs) * xs.size
    assert sps.chisquare(counts, expected).pvalue > 1e-3


def test_branching_frequency(lazy):
    eps = 0.2
    src = make_oracle(lazy, eps, 2, "net")
    xs, ts = grid(1_000_000)
    w1, w2 = src.net_pair(xs, ts)
    # an independent second draw differs from the first with prob 1 - sum a^2
    p = eps * (1 - sum(q * q for q in lazy.probs))
    f = (w1 != w2).mean()
    assert abs(f - p) <= 3 * np.sqrt(p * (1 - p) / xs.size)
    # the second arrow is a-distributed as well
    counts = np.array([(w2 == d).sum() for d in lazy.displacements])
    assert sps.chisquare(counts, np.asarray(lazy.probs) * xs.size).pvalue > 1e-3


def test_pair_law_joint_frequencies(lazy):
    eps = 0.3
    src = make_oracle(lazy, eps, 4, "net")
    xs, ts = grid(1_000_000)
    w1, w2 = src.net_pair(xs, ts)
    opts = net_site_options(lazy, eps)
    obs = np.array([((w1 == a) & (w2 == b)).sum() for (a, b), _ in opts])
    exp = np.array([w for _, w in opts]) * xs.size
    assert sps.chisquare(obs, exp).pvalue > 1e-3


def test_coupled_draw_count_frequency(lazy):
    eps = 0.2
    src = make_oracle(lazy, eps, 9, "coupled")
    xs, ts = grid(1_000_000)
    m = src.draws(xs, ts)
    f = (m >= 2).mean()
    assert abs(f - eps) <= 3 * np.sqrt(eps * (1 - eps) / xs.size)


def test_coupled_inclusion(lazy):
    src = make_oracle(lazy, 0.3, 13, "coupled")
    xs, ts = grid(200_000)
    w1, w2 = src.net_pair(xs, ts)
    owner, disp = src.arrow_lists(xs, ts, 0, "bernoulli")
    code = owner * 8 + (disp + 4)
    for w in (w1, w2):
        assert np.isin(np.arange(xs.size) * 8 + (w + 4), code).all()
    for x, t in [(0, 0), (3, 2), (-7, 1)]:
        a = src.sample_site(x, t)
        assert set(a.net_arrows) <= a.bernoulli_arrows
        assert (a.draws >= 2) or a.net_arrows[0] == a.net_arrows[1]


def test_coupled_marginal_matches_net(lazy):
    eps = 0.25
    n = 400_000
    xs, ts = grid(n)
    c1, c2 = make_oracle(lazy, eps, 21, "coupled").net_pair(xs, ts)
    opts = net_site_options(lazy, eps)
    obs = np.array([((c1 == a) & (c2 == b)).sum() for (a, b), _ in opts])
    assert sps.chisquare(obs, np.array([w for _, w in opts]) * n).pvalue > 1e-3


def test_window_enforced(lazy):
    cfg = SimConfig(seed=0, kernel=lazy, epsilon=0.1, window=Window(-5, 5, 0, 3))
    src = ArrowOracle(cfg, "net")
    src.net_pair([5], [3])
    with pytest.raises(OutOfWindow):
        src.net_pair([6], [0])
    with pytest.raises(OutOfWindow):
        follow_path(src, (0, 0), 10)
    assert Window(-5, 5, 0, 3).core(lazy) == (-2, 2)
    with pytest.raises(ValueError):
        Window(1, 0, 0, 0)


def test_bad_config(lazy):
    with pytest.raises(ValueError):
        SimConfig(seed=0, kernel=lazy, epsilon=1.0)
    with pytest.raises(ValueError):
        ArrowOracle(SimConfig(seed=0, kernel=lazy, epsilon=0.1), "nope")


def test_follow_path_choosers(lazy):
    web = make_oracle(lazy, 0.0, 1, "net")
    assert follow_path(web, (0, 0), 30, "first") == follow_path(web, (0, 0), 30, "second")
    net = make_oracle(lazy, 0.3, 1, "net")
    p = follow_path(net, (2, 5), 30, "uniform")
    assert p == follow_path(net, (2, 5), 30, "uniform")
    assert p.start == (2, 5) and p.end_time == 30
    assert set(np.abs(p.increments()).tolist()) <= {0, 1}
    assert follow_path(net, (0, 0), 4, [0, 0, 0, 0]) == follow_path(net, (0, 0), 4, "first")
    with pytest.raises(ValueError):
        follow_path(net, (0, 0), 4, [0, 1])
    with pytest.raises(ValueError):
        follow_path(net, (0, 5), 4)


def test_uniform_chooser_is_a_walk(lazy):
    net = make_oracle(lazy, 0.3, 17, "net")
    T = 200
    n = 20_000
    ends = follow_paths(net, np.zeros(n, dtype=np.int64), 0, T, np.arange(n), "uniform")[:, -1]
    var = ends.var(ddof=1)
    # variance of a sample variance for a near-Gaussian: 2 sigma^4 / (n - 1)
    target = lazy.sigma2 * T
    assert abs(var - target) <= 4 * target * np.sqrt(2 / (n - 1))
    assert abs(ends.mean()) <= 4 * np.sqrt(target / n)


def test_enumerate_eps_zero(lazy):
    src = make_oracle(lazy, 0.0, 2, "net")
    assert len(enumerate_net_paths(src, (0, 0), 20)) == 1


def test_enumerate_one_branching(lazy):
    field = ExplicitField.from_dict(lazy, {(0, 1): (-1, 1)}, default=(0,))
    paths = enumerate_net_paths(field, (0, 0), 4)
    assert paths == {LatticePath(0, (0, 0, -1, -1, -1)), LatticePath(0, (0, 0, 1, 1, 1))}


def test_enumerate_cap(lazy):
    field = ExplicitField(lazy, [], [], np.zeros((0, 1)), default=(-1, 1))
    assert len(enumerate_net_paths(field, (0, 0), 6)) == 2**6
    with pytest.raises(ExplosionCap):
        enumerate_net_paths(field, (0, 0), 6, cap=10)


@pytest.mark.parametrize("eps", [0.1, 0.4])
def test_enumerate_endpoints_match_point_sets(lazy, eps):
    src = make_oracle(lazy, eps, 8, "net")
    for rep in range(50):
        paths = enumerate_net_paths(src, (1, 0), 8, rep)
        sets = forward_sets(src, [1], 0, 8, rep)
        for t in range(9):
            assert {p.at(t) for p in paths} == set(sets[t].sites)


def test_explicit_field_product():
    k = simple_kernel()
    f = ExplicitField.product(k, [(0, 0), (1, 0)], [(-1,), (1,)])
    assert f.n_reps == 4
    w1, _ = f.net_pair([0, 1], [0, 0], [3, 3])
    assert w1.tolist() == [1, 1]
    with pytest.raises(ExplosionCap):
        ExplicitField.product(k, [(i, 0) for i in range(30)], [(-1,), (1,)])


def test_explicit_field_fallback(lazy):
    fb = make_oracle(lazy, 0.2, 1, "net")
    f = ExplicitField.from_dict(lazy, {(0, 0): (1, 1)}, fallback=fb)
    assert f.net_pair([0], [0])[0].tolist() == [1]
    assert [int(v[0]) for v in f.net_pair([3], [4])] == [int(v[0]) for v in fb.net_pair([3], [4])]


def test_dump_arrows(lazy):
    src = make_oracle(lazy, 0.5, 3, "coupled")
    lines = list(dump_arrows(src, Window(-2, 2, 0, 1)))
    assert len(lines) == 10
    for line in lines:
        x, t, w1, w2, *rest = (int(v) for v in line.split())
        assert {w1, w2} <= set(rest)
        assert src.net_pair([x], [t])[0][0] == w1
