"""Per-epoch assignment problem: build, solve as LP (with duals) or as IP.

Columns are (vehicle attribute, decision) pairs. Each column sits in exactly
one resource row (equality, right-hand side R_ta) and in one demand row per
request it serves (inequality, right-hand side D_tb). Demand values are folded
into the column coefficients; the dropped constant is reported separately.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np
from scipy.optimize import linprog
from scipy.sparse import csc_matrix

from .domain import (
    ContractViolation,
    Decision,
    Kind,
    RequestAttribute,
    SystemState,
    VehicleAttribute,
)
from .netsimplex import network_simplex

PASSIVE = (Kind.IDLE, Kind.CONTINUE)


@dataclass
class AssignmentProblem:
    attrs: list[VehicleAttribute]
    R: list[int]
    requests: list[RequestAttribute]
    D: list[int]
    col_attr: list[int]
    col_decision: list[Decision]
    q: list[float]
    covers: list[tuple[int, ...]]
    demand_values: list[float]
    constant: float = 0.0
    has_multi: bool = False

    @property
    def n_columns(self) -> int:
        return len(self.q)

    def incidence_count(self, j: int) -> int:
        return 1 + len(self.covers[j])

    def to_lp_text(self) -> str:
        """Plain-text LP (CPLEX-like) for cross-checking with external solvers."""
        lines = ["\\ fleet assignment", "Maximize", " obj:"]
        terms = [f" {'+' if qj >= 0 else '-'} {abs(qj)!r} x{j}" for j, qj in enumerate(self.q)]
        lines += terms or [" 0 x0"]
        lines.append("Subject To")
        rows: dict[int, list[int]] = {}
        for j, i in enumerate(self.col_attr):
            rows.setdefault(i, []).append(j)
        for i, js in sorted(rows.items()):
            lines.append(f" r{i}: " + " + ".join(f"x{j}" for j in js) + f" = {self.R[i]}")
        drows: dict[int, list[int]] = {}
        for j, cov in enumerate(self.covers):
            for k in cov:
                drows.setdefault(k, []).append(j)
        for k, js in sorted(drows.items()):
            lines.append(f" d{k}: " + " + ".join(f"x{j}" for j in js) + f" <= {self.D[k]}")
        lines.append("General")
        lines.append(" " + " ".join(f"x{j}" for j in range(self.n_columns)))
        lines.append("End")
        return "\n".join(lines) + "\n"


@dataclass
class AssignmentSolution:
    x: list[int]
    objective: float
    duals_R: list[float] | None = None
    duals_D: list[float] | None = None
    problem: AssignmentProblem | None = field(default=None, repr=False)

    def decision_vector(self) -> dict[tuple[VehicleAttribute, Decision], int]:
        p = self.problem
        return {
            (p.attrs[p.col_attr[j]], p.col_decision[j]): int(v)
            for j, v in enumerate(self.x)
            if v
        }

    def duals_by_attribute(self) -> dict[VehicleAttribute, float]:
        return dict(zip(self.problem.attrs, self.duals_R))

    def duals_by_request(self) -> dict[RequestAttribute, float]:
        return dict(zip(self.problem.requests, self.duals_D))


def build_problem(
    state: SystemState,
    decision_sets: Mapping[VehicleAttribute, Sequence[Decision]],
    coefficient: Callable[[VehicleAttribute, Decision], float],
    demand_value: Callable[[RequestAttribute], float] | None = None,
) -> AssignmentProblem:
    attrs = sorted(a for a, r in state.R.items() if r > 0)
    requests = sorted(b for b, k in state.D.items() if k > 0)
    req_index = {b: k for k, b in enumerate(requests)}
    dvals = [float(demand_value(b)) if demand_value else 0.0 for b in requests]
    col_attr, col_dec, q, covers = [], [], [], []
    has_multi = False
    for i, a in enumerate(attrs):
        ds = decision_sets.get(a)
        if not ds:
            raise ContractViolation(f"no decisions enumerated for vehicle attribute {a}")
        for d in ds:
            cov = tuple(req_index[b] for b in d.requests)
            value = float(coefficient(a, d))
            if cov:
                value -= math.fsum(dvals[k] for k in cov)
            if not math.isfinite(value):
                raise ContractViolation(f"non-finite coefficient for {a}, {d!r}")
            col_attr.append(i)
            col_dec.append(d)
            q.append(value)
            covers.append(cov)
            has_multi |= d.kind == Kind.MULTI
    constant = math.fsum(v * state.D[b] for v, b in zip(dvals, requests))
    return AssignmentProblem(
        attrs,
        [state.R[a] for a in attrs],
        requests,
        [state.D[b] for b in requests],
        col_attr,
        col_dec,
        q,
        covers,
        dvals,
        constant,
        has_multi,
    )


def _components(prob: AssignmentProblem, cols_by_attr: list[list[int]]) -> list[tuple[list[int], list[int]]]:
    """Attribute/request groups linked by demand-covering columns."""
    n_a = len(prob.attrs)
    parent = list(range(n_a + len(prob.requests)))

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for j, cov in enumerate(prob.covers):
        ra = find(prob.col_attr[j])
        for k in cov:
            rb = find(n_a + k)
            if ra != rb:
                parent[max(ra, rb)] = min(ra, rb)
    groups: dict[int, tuple[list[int], list[int]]] = {}
    for i in range(n_a):
        groups.setdefault(find(i), ([], []))[0].append(i)
    for k in range(len(prob.requests)):
        r = find(n_a + k)
        if r in groups:
            groups[r][1].append(k)
    return [groups[r] for r in sorted(groups)]


def _best_passive_column(prob: AssignmentProblem, js: list[int]) -> int:
    """Highest coefficient; ties prefer idle/continue, then column order."""
    return min(js, key=lambda j: (-prob.q[j], prob.col_decision[j].kind not in PASSIVE, j))


def _solve_flow_component(prob, attrs_i, reqs_k, cols_by_attr, x, duals_R, mu):
    # nodes: 0 = sink, attributes, then requests
    node_of_attr = {i: 1 + p for p, i in enumerate(attrs_i)}
    node_of_req = {k: 1 + len(attrs_i) + p for p, k in enumerate(reqs_k)}
    n_nodes = 1 + len(attrs_i) + len(reqs_k)
    total = sum(prob.R[i] for i in attrs_i)
    big = total + 1
    tail, head, cost, cap, flow, col_of_arc = [], [], [], [], [], []
    tree = []
    for i in attrs_i:
        js = cols_by_attr[i]
        sink_cols = [j for j in js if not prob.covers[j]]
        start = _best_passive_column(prob, sink_cols)
        for j in js:
            cov = prob.covers[j]
            if not cov and j != start:
                continue  # same endpoints as ``start`` and no better
            if len(cov) > 1:
                raise ContractViolation("multi-request column in flow formulation")
            tail.append(node_of_attr[i])
            head.append(node_of_req[cov[0]] if cov else 0)
            cost.append(-prob.q[j])
            cap.append(big)
            col_of_arc.append(j)
            if j == start:
                flow.append(prob.R[i])
                tree.append(len(tail) - 1)
            else:
                flow.append(0)
    req_arc = {}
    for k in reqs_k:
        tail.append(node_of_req[k])
        head.append(0)
        cost.append(0.0)
        cap.append(prob.D[k])
        flow.append(0)
        col_of_arc.append(-1)
        req_arc[k] = len(tail) - 1
        tree.append(len(tail) - 1)
    res = network_simplex(n_nodes, tail, head, cost, cap, flow, tree, root=0)
    for e, j in enumerate(col_of_arc):
        if j >= 0:
            x[j] = res.flow[e]
    pi = res.potential
    for i in attrs_i:
        duals_R[i] = -pi[node_of_attr[i]]  # pi[sink] == 0
    for k in reqs_k:
        mu[k] = max(0.0, pi[node_of_req[k]])


def solve_lp(prob: AssignmentProblem) -> AssignmentSolution:
    """LP relaxation of a multi-free problem via network simplex; returns duals.

    Without multi-request columns the problem is a bipartite transportation
    problem, so the basic optimum found is integral.
    """
    if prob.has_multi:
        raise ContractViolation("solve_lp requires a problem without multi-trip columns")
    cols_by_attr: list[list[int]] = [[] for _ in prob.attrs]
    for j, i in enumerate(prob.col_attr):
        cols_by_attr[i].append(j)
    x = [0] * prob.n_columns
    duals_R = [0.0] * len(prob.attrs)
    mu = [0.0] * len(prob.requests)
    for attrs_i, reqs_k in _components(prob, cols_by_attr):
        if not reqs_k:
            for i in attrs_i:
                j = _best_passive_column(prob, cols_by_attr[i])
                x[j] = prob.R[i]
                duals_R[i] = prob.q[j]
            continue
        _solve_flow_component(prob, attrs_i, reqs_k, cols_by_attr, x, duals_R, mu)
    duals_D = [v + m for v, m in zip(prob.demand_values, mu)]
    return AssignmentSolution(x, _objective(prob, x), duals_R, duals_D, prob)


def _objective(prob: AssignmentProblem, x: Sequence[int]) -> float:
    return math.fsum([prob.q[j] * v for j, v in enumerate(x) if v] + [prob.constant])


def _lp_relaxation(q, A_eq, b_eq, A_ub, b_ub, lo, hi):
    res = linprog(
        -np.asarray(q),
        A_ub=A_ub,
        b_ub=b_ub,
        A_eq=A_eq,
        b_eq=b_eq,
        bounds=list(zip(lo, hi)),
        method="highs",
    )
    if res.status != 0:
        return None
    return res


def _branch_and_bound(prob: AssignmentProblem, cols: list[int], attrs_i: list[int], reqs_k: list[int]) -> list[int]:
    """Exact integer optimum of one component: LP bounds, most-fractional branching, depth first."""
    row_a = {i: r for r, i in enumerate(attrs_i)}
    row_b = {k: r for r, k in enumerate(reqs_k)}
    n = len(cols)
    ei, ej, ui, uj = [], [], [], []
    for c, j in enumerate(cols):
        ei.append(row_a[prob.col_attr[j]])
        ej.append(c)
        for k in prob.covers[j]:
            ui.append(row_b[k])
            uj.append(c)
    A_eq = csc_matrix((np.ones(len(ei)), (ei, ej)), shape=(len(attrs_i), n))
    b_eq = [prob.R[i] for i in attrs_i]
    if reqs_k:
        A_ub = csc_matrix((np.ones(len(ui)), (ui, uj)), shape=(len(reqs_k), n))
        b_ub = [prob.D[k] for k in reqs_k]
    else:
        A_ub = b_ub = None
    q = [prob.q[j] for j in cols]
    ub0 = [prob.R[prob.col_attr[j]] for j in cols]
    best_val = -math.inf
    best_x: list[int] | None = None
    stack = [([0] * n, ub0)]
    while stack:
        lo, hi = stack.pop()
        res = _lp_relaxation(q, A_eq, b_eq, A_ub, b_ub, lo, hi)
        if res is None:
            continue
        bound = -res.fun
        if bound <= best_val + 1e-9:
            continue
        xs = res.x
        frac_j, frac_score = -1, 1e-7
        for c, v in enumerate(xs):
            f = abs(v - round(v))
            if f > frac_score:
                frac_j, frac_score = c, f
        if frac_j < 0:
            xi = [int(round(v)) for v in xs]
            val = math.fsum(qc * v for qc, v in zip(q, xi) if v)
            if val > best_val:
                best_val, best_x = val, xi
            continue
        v = xs[frac_j]
        down_hi = list(hi)
        down_hi[frac_j] = math.floor(v)
        up_lo = list(lo)
        up_lo[frac_j] = math.ceil(v)
        stack.append((lo, down_hi))
        stack.append((up_lo, hi))
    if best_x is None:
        raise RuntimeError("assignment component has no integer solution")
    return best_x


def solve_ip(prob: AssignmentProblem) -> AssignmentSolution:
    """Exact integer optimum. Multi-free components go through the flow solver."""
    if not prob.has_multi:
        return solve_lp(prob)
    cols_by_attr: list[list[int]] = [[] for _ in prob.attrs]
    for j, i in enumerate(prob.col_attr):
        cols_by_attr[i].append(j)
    x = [0] * prob.n_columns
    duals_R = [0.0] * len(prob.attrs)
    mu = [0.0] * len(prob.requests)
    for attrs_i, reqs_k in _components(prob, cols_by_attr):
        cols = []
        for i in attrs_i:
            keep = _best_passive_column(prob, [j for j in cols_by_attr[i] if not prob.covers[j]])
            cols += [j for j in cols_by_attr[i] if prob.covers[j] or j == keep]
        if not reqs_k:
            for i in attrs_i:
                j = _best_passive_column(prob, cols_by_attr[i])
                x[j] = prob.R[i]
            continue
        if not any(len(prob.covers[j]) > 1 for j in cols):
            _solve_flow_component(prob, attrs_i, reqs_k, cols_by_attr, x, duals_R, mu)
            continue
        xi = _branch_and_bound(prob, cols, attrs_i, reqs_k)
        for j, v in zip(cols, xi):
            x[j] = v
    return AssignmentSolution(x, _objective(prob, x), None, None, prob)
