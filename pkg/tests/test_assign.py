import math

import numpy as np
import pytest

from assign_cases import random_problem
from oracles import highs_assignment
from fleetmdp.assign import build_problem, solve_ip, solve_lp
from fleetmdp.domain import DCFC, IDLE, ContractViolation, Decision, Kind, RequestAttribute, SystemState, VehicleAttribute
from fleetmdp.netsimplex import network_simplex


def highs_objective(prob, R=None, D=None, integral=False):
    val, _ = highs_assignment(prob.q, prob.col_attr, prob.covers, R or prob.R, D or prob.D, integral)
    return val + math.fsum(v * d for v, d in zip(prob.demand_values, D or prob.D))


@pytest.mark.parametrize("seed", range(60))
def test_lp_matches_highs_and_is_integral(seed):
    prob, state = random_problem(seed)
    sol = solve_lp(prob)
    assert all(isinstance(v, int) and v >= 0 for v in sol.x)
    assert sol.objective == pytest.approx(highs_objective(prob), abs=1e-7)
    x = sol.decision_vector()
    from fleetmdp.domain import check_decisions
    check_decisions(state, x)


def dual_check(seed, tol=1e-6):
    """Compare LP duals with +1 and -1 RHS perturbations solved by HiGHS.

    Where both one-sided differences agree the dual is unique and must match;
    otherwise it must lie between them. Returns (unique rows checked, failures).
    """
    prob, _ = random_problem(seed)
    sol = solve_lp(prob)
    base = highs_objective(prob)
    unique, bad = 0, []
    rows = [("R", i, prob.R, sol.duals_R[i]) for i in range(len(prob.R))]
    rows += [("D", k, prob.D, sol.duals_D[k]) for k in range(len(prob.D))]
    for side, i, rhs, dual in rows:
        up = list(rhs); up[i] += 1
        dn = list(rhs); dn[i] -= 1
        d_up = highs_objective(prob, **{side: up}) - base
        d_dn = base - highs_objective(prob, **{side: dn})
        if abs(d_up - d_dn) < 1e-9:
            unique += 1
            if abs(dual - d_up) > tol:
                bad.append((side, i, dual, d_up))
        elif not d_up - tol <= dual <= d_dn + tol:
            bad.append((side, i, dual, (d_up, d_dn)))
    return unique, bad


@pytest.mark.parametrize("seed", range(60))
def test_duals_match_perturbations_when_unique(seed):
    _, bad = dual_check(seed)
    assert bad == []


@pytest.mark.parametrize("seed", range(40))
def test_ip_with_multi_matches_highs_milp(seed):
    prob, state = random_problem(10_000 + seed, multi=True)
    sol = solve_ip(prob)
    assert sol.objective == pytest.approx(highs_objective(prob, integral=True), abs=1e-7)
    from fleetmdp.domain import check_decisions
    check_decisions(state, sol.decision_vector())


def test_lp_refuses_multi_columns():
    for seed in range(200):
        prob, _ = random_problem(10_000 + seed, multi=True)
        if prob.has_multi:
            with pytest.raises(ContractViolation):
                solve_lp(prob)
            return
    pytest.skip("no multi column generated")


def test_ties_prefer_idle(grid3):
    from fleetmdp.enumeration import EnumerationConfig, enumerate_decisions
    a = VehicleAttribute(4, 4, 5000, 4, 120)
    b = RequestAttribute(0, 8, 1, 9999, 9999, 6.0)
    s = SystemState(1, {a: 3}, {b: 1})
    sets = enumerate_decisions(s, 1, grid3, DCFC, EnumerationConfig())
    prob = build_problem(s, sets, lambda a, d: sum(r.f for r in d.requests))
    x = solve_lp(prob).decision_vector()
    assert x == {(a, Decision.single(b)): 1, (a, IDLE): 2}


def test_lp_text_lists_rows():
    prob, _ = random_problem(1)
    text = prob.to_lp_text()
    assert text.startswith("\\") and "Subject To" in text and text.rstrip().endswith("End")
    assert sum(line.strip().startswith("r") for line in text.splitlines()) == len(prob.R)


def test_network_simplex_small_transport():
    # two supplies (nodes 1, 2) to sink 0 directly or via node 3 (capacity 1)
    tail = [1, 2, 1, 2, 3]
    head = [0, 0, 3, 3, 0]
    cost = [0.0, 0.0, -5.0, -4.0, 0.0]
    cap = [10, 10, 10, 10, 1]
    flow = [2, 1, 0, 0, 0]
    res = network_simplex(4, tail, head, cost, cap, flow, [0, 1, 4], root=0)
    assert res.flow[2] == 1 and res.flow[3] == 0
    assert res.flow[0] == 1 and res.flow[1] == 1
