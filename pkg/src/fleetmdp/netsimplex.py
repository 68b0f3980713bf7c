"""Primal network simplex for small min-cost flow problems.

The caller supplies a strongly feasible starting spanning tree (every node can
push a positive amount of flow to the root along its tree path). The leaving
arc is the last blocking arc met when walking the pivot cycle from its apex
in the direction of the entering flow, which keeps every tree strongly
feasible and rules out cycling.
"""
from __future__ import annotations

from dataclasses import dataclass


class SimplexError(RuntimeError):
    pass


@dataclass
class FlowResult:
    flow: list[int]
    potential: list[float]  # cost[e] == potential[tail] - potential[head] on tree arcs
    pivots: int


def network_simplex(
    n_nodes: int,
    tail: list[int],
    head: list[int],
    cost: list[float],
    cap: list[int],
    flow: list[int],
    tree: list[int],
    root: int,
    tol: float = 1e-9,
    max_pivots: int = 100_000,
) -> FlowResult:
    m = len(tail)
    flow = list(flow)
    in_tree = [False] * m
    for e in tree:
        in_tree[e] = True
    if len(tree) != n_nodes - 1:
        raise SimplexError("initial tree must have n_nodes - 1 arcs")
    tree = list(tree)
    pivots = 0
    while True:
        adj: list[list[int]] = [[] for _ in range(n_nodes)]
        for e in tree:
            adj[tail[e]].append(e)
            adj[head[e]].append(e)
        parent = [-1] * n_nodes
        parc = [-1] * n_nodes
        depth = [0] * n_nodes
        pi = [0.0] * n_nodes
        seen = [False] * n_nodes
        seen[root] = True
        order = [root]
        for x in order:
            for e in adj[x]:
                y = head[e] if tail[e] == x else tail[e]
                if seen[y]:
                    continue
                seen[y] = True
                parent[y] = x
                parc[y] = e
                depth[y] = depth[x] + 1
                pi[y] = pi[x] - cost[e] if tail[e] == x else pi[x] + cost[e]
                order.append(y)
        if len(order) != n_nodes:
            raise SimplexError("tree arcs do not span the network")

        enter = -1
        worst = tol
        for e in range(m):
            if in_tree[e]:
                continue
            rc = cost[e] - pi[tail[e]] + pi[head[e]]
            if flow[e] == 0:
                if -rc > worst:
                    worst, enter = -rc, e
            elif flow[e] == cap[e]:
                if rc > worst:
                    worst, enter = rc, e
        if enter < 0:
            return FlowResult(flow, pi, pivots)
        pivots += 1
        if pivots > max_pivots:
            raise SimplexError("pivot limit exceeded")

        forward_enter = flow[enter] == 0
        k, l = (tail[enter], head[enter]) if forward_enter else (head[enter], tail[enter])
        # climb to the apex
        up_l: list[int] = []  # nodes on l's side, from l upwards
        down_k: list[int] = []  # nodes on k's side, from k upwards
        x, y = l, k
        while depth[x] > depth[y]:
            up_l.append(x)
            x = parent[x]
        while depth[y] > depth[x]:
            down_k.append(y)
            y = parent[y]
        while x != y:
            up_l.append(x)
            down_k.append(y)
            x = parent[x]
            y = parent[y]
        # cycle in orientation order starting at the apex: apex -> ... -> k, enter, l -> ... -> apex
        cycle: list[tuple[int, bool]] = []
        for node in reversed(down_k):
            e = parc[node]
            cycle.append((e, tail[e] == parent[node]))
        cycle.append((enter, forward_enter))
        for node in up_l:
            e = parc[node]
            cycle.append((e, tail[e] == node))
        residual = [cap[e] - flow[e] if fwd else flow[e] for e, fwd in cycle]
        delta = min(residual)
        if delta >= float("inf"):
            raise SimplexError("unbounded pivot cycle")
        leave_pos = len(residual) - 1 - residual[::-1].index(delta)
        if delta:
            for e, fwd in cycle:
                flow[e] += delta if fwd else -delta
        leave = cycle[leave_pos][0]
        if leave != enter:
            in_tree[leave] = False
            in_tree[enter] = True
            tree[tree.index(leave)] = enter
