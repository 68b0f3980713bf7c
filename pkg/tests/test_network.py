import numpy as np
import pytest

from conftest import random_network
from oracles import bellman_ford
from fleetmdp.network import Network, NetworkError, build_grid


def test_grid_times_match_manhattan_distance():
    net = build_grid(4, 5, 30)
    for u in range(20):
        for v in range(20):
            ru, cu = divmod(u, 5)
            rv, cv = divmod(v, 5)
            assert net.shortest_time(u, v) == 30 * (abs(ru - rv) + abs(cu - cv))


def test_all_pairs_times_match_bellman_ford():
    rng = np.random.default_rng(3)
    for _ in range(20):
        n = int(rng.integers(2, 12))
        net = random_network(rng, n)
        for s in range(n):
            assert net.tau[s] == bellman_ford(n, net.arcs, s)


def test_shortest_path_is_consistent():
    rng = np.random.default_rng(4)
    net = random_network(rng, 10)
    for u in range(10):
        for v in range(10):
            p = net.shortest_path(u, v)
            assert p.waypoints[0] == u and p.end == v
            assert p.total_time == net.tau[u][v] == sum(p.leg_times)
            for a, b, w in zip(p.waypoints, p.waypoints[1:], p.leg_times):
                assert (a, b) in net.arc_set and w == net.tau[a][b]


def test_parallel_arcs_keep_the_fastest():
    net = Network(2, [(0, 1, 50), (0, 1, 20), (1, 0, 10)])
    assert net.arcs == ((0, 1, 20), (1, 0, 10))


@pytest.mark.parametrize("arcs", [[(0, 1, 10)], [(0, 0, 5), (0, 1, 1), (1, 0, 1)], [(0, 1, 0), (1, 0, 1)], [(0, 3, 1)]])
def test_bad_graphs_are_rejected(arcs):
    with pytest.raises(NetworkError):
        Network(2, arcs)


def test_first_node_after_boundary(grid3):
    # 1 -> 8 goes 1, 2, 5, 8 (lowest next hop on ties)
    assert grid3.shortest_path(1, 8).waypoints == (1, 2, 5, 8)
    assert grid3.first_node_reached_after(1, 8, 180, 240) == (2, 240)
    assert grid3.first_node_reached_after(1, 8, 170, 240) == (5, 290)
    assert grid3.first_node_reached_after(1, 8, 0, 10_000) == (8, 180)


def test_stop_plan_and_expand(grid3):
    plan = grid3.stop_plan((0, 4, 8))
    assert plan.total_time == 240 and plan.leg_times == (120, 120)
    full = grid3.expand(plan)
    assert full.total_time == 240 and len(full.waypoints) == 5


def test_dict_round_trip(tmp_path):
    net = build_grid(2, 3, 45)
    path = tmp_path / "net.json"
    net.save(path)
    back = Network.load(path)
    assert back.arcs == net.arcs and back.tau == net.tau and back.coords == net.coords
    with pytest.raises(NetworkError):
        Network.from_dict({**net.to_dict(), "format_version": 99})
