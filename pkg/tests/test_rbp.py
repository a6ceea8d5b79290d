import numpy as np
import pytest

from netlab.errors import ConfigError
from netlab.kernel import lazy_kernel
from netlab.netsim import ExplicitField, enumerate_net_paths
from netlab.pointset import forward_sets, make_oracle
from netlab.rbp import Rbp, build_graph, find_rbps, find_rbps_bruteforce, rbp_certificate, rbp_tail


def test_rbp_value_type():
    assert Rbp(3, 4).site == (3, 4)
    assert sorted([Rbp(1, 5), Rbp(0, 7), Rbp(0, 5)]) == [Rbp(0, 5), Rbp(0, 7), Rbp(1, 5)]


def test_no_branching_no_rbp(lazy):
    src = make_oracle(lazy, 0.0, 1, "net")
    for rep in range(20):
        assert find_rbps(src, [0, 3], 0, 12, rep) == set()
        assert find_rbps(src, [0], 0, 12, rep, count_root=True) == set()
    with pytest.raises(ValueError):
        find_rbps(src, [0], 3, 3)


def test_hand_built_unique_rbp(lazy):
    field = ExplicitField.from_dict(lazy, {(0, 2): (-1, 1)}, default=(0,))
    assert find_rbps(field, [0], 0, 6) == {Rbp(0, 2)}
    assert find_rbps_bruteforce(field, [0], 0, 6) == {Rbp(0, 2)}
    p1, p2 = rbp_certificate(field, (0, 2), 6)
    assert p1.positions[1:] != p2.positions[1:]
    assert all(a != b for a, b in zip(p1.positions[1:], p2.positions[1:]))


def test_hand_built_recoalescing(lazy):
    # branches meet again at U - 1 and stay merged
    field = ExplicitField.from_dict(lazy, {(0, 2): (-1, 1), (-1, 3): (1,), (1, 3): (-1,)}, default=(0,))
    assert find_rbps(field, [0], 0, 5) == set()
    assert find_rbps_bruteforce(field, [0], 0, 5) == set()
    assert rbp_certificate(field, (0, 2), 5) is None
    # with U at the meeting time they are not yet disjoint through U
    assert find_rbps(field, [0], 0, 4) == set()
    assert find_rbps(field, [0], 0, 3) == {Rbp(0, 2)}


def test_branching_at_root(lazy):
    field = ExplicitField.from_dict(lazy, {(0, 0): (-1, 1)}, default=(0,))
    assert find_rbps(field, [0], 0, 4) == set()
    assert find_rbps(field, [0], 0, 4, count_root=True) == {Rbp(0, 0)}
    assert find_rbps_bruteforce(field, [0], 0, 4, count_root=True) == {Rbp(0, 0)}


@pytest.mark.parametrize("eps,A", [(0.1, [0]), (0.3, [0]), (0.3, [0, 3])])
def test_dp_matches_bruteforce(lazy, eps, A):
    src = make_oracle(lazy, eps, 31, "net")
    for rep in range(100):
        dp = find_rbps(src, A, 0, 9, rep, count_root=True)
        assert dp == find_rbps_bruteforce(src, A, 0, 9, rep, count_root=True)
        assert {r for r in dp if r.t > 0} == find_rbps(src, A, 0, 9, rep)


def test_rbps_are_reachable_branching_sites(lazy):
    src = make_oracle(lazy, 0.3, 5, "net")
    for rep in range(50):
        sets = forward_sets(src, [0], 0, 10, rep)
        for r in find_rbps(src, [0], 0, 10, rep):
            assert r.x in sets[r.t]
            w1, w2 = src.net_pair([r.x], [r.t], [rep])
            assert w1[0] != w2[0]


def test_certificates(lazy):
    src = make_oracle(lazy, 0.3, 7, "net")
    U = 10
    for rep in range(60):
        rb = find_rbps(src, [0], 0, U, rep)
        sets = forward_sets(src, [0], 0, U, rep)
        for t in range(1, U):
            for x in sets[t].sites:
                cert = rbp_certificate(src, (x, t), U, rep)
                assert (cert is not None) == (Rbp(x, t) in rb)
                if cert is None:
                    continue
                p1, p2 = cert
                assert p1.end_time == U and p2.end_time == U
                assert all(a != b for a, b in zip(p1.positions[1:], p2.positions[1:]))
                net = enumerate_net_paths(src, (x, t), U, rep)
                assert p1 in net and p2 in net


def test_graph_without_branching(lazy):
    src = make_oracle(lazy, 0.0, 2, "net")
    g = build_graph(src, [0], 0, 15, 3)
    end = src_path_end(src, 15, 3)
    assert g.edges == frozenset({((0, 0), (end, 15))})
    assert g.rbps == ()


def src_path_end(src, U, rep):
    (p,) = enumerate_net_paths(src, (0, 0), U, rep)
    return p.at(U)


@pytest.mark.parametrize("A", [[0], [0, 2, 5]])
def test_graph_degrees(lazy, A):
    src = make_oracle(lazy, 0.2, 3, "net")
    for rep in range(300):
        g = build_graph(src, A, 0, 12, rep)
        assert g.degree_violations() == []
        assert g.branching_violations == ()


def test_graph_encodes_every_path(lazy):
    # no effective branching: each net path walks along graph edges, and every edge is used
    src = make_oracle(lazy, 0.3, 4, "net")
    U = 9
    for rep in range(80):
        g = build_graph(src, [0], 0, U, rep)
        verts = set(g.vertices)
        used = set()
        for p in enumerate_net_paths(src, (0, 0), U, rep):
            seq = [(p.at(t), t) for t in range(U + 1) if (p.at(t), t) in verts]
            assert seq[0] == (0, 0) and seq[-1][1] == U
            for e in zip(seq, seq[1:]):
                assert e in g.edges
                used.add(e)
        assert used == set(g.edges)


def test_graph_json(lazy):
    g = build_graph(make_oracle(lazy, 0.3, 4, "net"), [0], 0, 8, 1)
    d = g.to_json()
    assert d["S"] == 0 and d["U"] == 8
    assert len(d["edges"]) == len(g.edges)


def test_tail_eps_zero(lazy):
    tab = rbp_tail(0.0, 64, 3, 500, kernel=lazy)
    assert all(tab.tail(K).value == 0 for K in (1, 2, 3))
    assert tab.identity_violations == 0


def test_tail_identity_and_order(lazy):
    tab = rbp_tail(0.05, 100, 4, 2000, kernel=lazy, seed=3)
    assert tab.identity_violations == 0
    vals = [tab.tail(K).value for K in range(1, 5)]
    assert vals[0] > 0 and all(b <= a for a, b in zip(vals, vals[1:]))
    assert len(tab.rows()) == 4


def test_tail_regime_guard(lazy):
    with pytest.raises(ConfigError):
        rbp_tail(0.1, 100, 2, 10, kernel=lazy)
    with pytest.raises(ConfigError):
        rbp_tail(0.1, 0, 2, 10, kernel=lazy)


@pytest.mark.slow
def test_graph_degrees_many_realizations(lazy):
    src = make_oracle(lazy, 0.2, 99, "net")
    bad = sum(bool(build_graph(src, [0], 0, 12, rep).degree_violations()) for rep in range(10_000))
    assert bad == 0
