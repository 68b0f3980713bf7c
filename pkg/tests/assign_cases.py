"""Random assignment problems shared by unit and acceptance tests."""
import numpy as np

from conftest import random_network
from oracles import random_request
from fleetmdp.assign import build_problem
from fleetmdp.domain import DCFC, SystemState, VehicleAttribute
from fleetmdp.enumeration import EnumerationConfig, enumerate_decisions

E = 120


def random_state(rng, net, t, n_attrs=None, n_reqs=None):
    n = net.n_nodes
    R = {}
    for _ in range(n_attrs or int(rng.integers(1, 6))):
        o = int(rng.integers(n))
        if rng.random() < 0.7:
            a = VehicleAttribute(o, o, int(rng.integers(0, 3000)), 4, t * E + int(rng.integers(0, 2 * E)))
        else:
            d = (o + 1 + int(rng.integers(n - 1))) % n
            a = VehicleAttribute(o, d, net.tau[o][d] + int(rng.integers(0, 3000)), int(rng.integers(1, 4)), t * E + int(rng.integers(0, E)))
        R[a] = R.get(a, 0) + int(rng.integers(1, 4))
    D = {}
    for _ in range(n_reqs if n_reqs is not None else int(rng.integers(0, 5))):
        b = random_request(rng, n, t * E)
        D[b] = D.get(b, 0) + int(rng.integers(1, 3))
    return SystemState(t, R, D)


def random_problem(seed, multi=False, demand_values=True):
    rng = np.random.default_rng(seed)
    net = random_network(rng, int(rng.integers(3, 8)), max_time=200)
    t = int(rng.integers(1, 10))
    state = random_state(rng, net, t)
    cfg = EnumerationConfig(include_multi=multi, max_trip_size=2)
    sets = enumerate_decisions(state, t, net, DCFC, cfg)
    cache = {}

    def coef(a, d):
        if (a, d) not in cache:
            base = sum(b.f for b in d.requests)
            cache[(a, d)] = round(base + float(rng.normal(0, 3)), 3)
        return cache[(a, d)]

    dv = {}

    def demand_value(b):
        if b not in dv:
            dv[b] = round(float(rng.uniform(0, 0.9 * b.f)), 3) if demand_values else 0.0
        return dv[b]

    return build_problem(state, sets, coef, demand_value), state
