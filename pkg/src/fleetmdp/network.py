"""Road graph with deterministic travel times.

Travel times are integer seconds. Driving range is measured in seconds of
driving, so the range a path consumes equals its travel time.
"""
from __future__ import annotations

import json
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import dijkstra

FORMAT_VERSION = 1


class NetworkError(ValueError):
    pass


class PathPlan(NamedTuple):
    waypoints: tuple[int, ...]
    leg_times: tuple[int, ...]
    total_time: int

    @property
    def total_range(self) -> int:
        return self.total_time

    @property
    def end(self) -> int:
        return self.waypoints[-1]


class Network:
    """Immutable directed graph with precomputed all-pairs shortest times."""

    def __init__(self, n_nodes: int, arcs: Sequence[tuple[int, int, int]], coords=None):
        if n_nodes < 1:
            raise NetworkError("network needs at least one node")
        best: dict[tuple[int, int], int] = {}
        for u, v, w in arcs:
            u, v = int(u), int(v)
            if not (0 <= u < n_nodes and 0 <= v < n_nodes):
                raise NetworkError(f"arc ({u}, {v}) references unknown node")
            if u == v:
                raise NetworkError(f"self-loop at node {u}")
            w = int(round(w))
            if w <= 0:
                raise NetworkError(f"arc ({u}, {v}) has non-positive travel time {w}")
            if (u, v) not in best or w < best[(u, v)]:
                best[(u, v)] = w
        self.n_nodes = n_nodes
        self.arcs: tuple[tuple[int, int, int], ...] = tuple(
            (u, v, w) for (u, v), w in sorted(best.items())
        )
        self.coords = None if coords is None else [tuple(c) for c in coords]

        self.out: list[list[tuple[int, int]]] = [[] for _ in range(n_nodes)]
        for u, v, w in self.arcs:
            self.out[u].append((v, w))
        self.arc_set = frozenset((u, v) for u, v, _ in self.arcs)

        if self.arcs:
            rows, cols, data = zip(*self.arcs)
        else:
            rows, cols, data = (), (), ()
        graph = csr_matrix((data, (rows, cols)), shape=(n_nodes, n_nodes), dtype=np.float64)
        dist = dijkstra(graph, directed=True)
        if not np.all(np.isfinite(dist)):
            u, v = np.argwhere(~np.isfinite(dist))[0]
            raise NetworkError(f"graph is not strongly connected: no path {u} -> {v}")
        self.tau_matrix = dist.astype(np.int64)
        # nested lists: scalar access is much faster than numpy indexing
        self.tau: list[list[int]] = self.tau_matrix.tolist()
        self._next_hop = self._build_next_hop()

    def _build_next_hop(self) -> list[list[int]]:
        n = self.n_nodes
        tau = self.tau
        nxt = [[-1] * n for _ in range(n)]
        for u in range(n):
            row = nxt[u]
            nbrs = sorted(self.out[u])
            for v in range(n):
                if u == v:
                    row[v] = u
                    continue
                target = tau[u][v]
                for w, c in nbrs:
                    if c + tau[w][v] == target:
                        row[v] = w
                        break
        return nxt

    def __len__(self) -> int:
        return self.n_nodes

    def _check(self, *nodes: int) -> None:
        for x in nodes:
            if not (0 <= x < self.n_nodes):
                raise NetworkError(f"unknown node id {x}")

    def shortest_time(self, u: int, v: int) -> int:
        self._check(u, v)
        return self.tau[u][v]

    def shortest_path(self, u: int, v: int) -> PathPlan:
        """Node-level shortest path; ties go to the lowest next-node id."""
        self._check(u, v)
        nodes = [u]
        legs = []
        x = u
        while x != v:
            y = self._next_hop[x][v]
            if y < 0:
                raise RuntimeError(f"no next hop from {x} towards {v}")
            legs.append(self.tau[x][y])
            nodes.append(y)
            x = y
        return PathPlan(tuple(nodes), tuple(legs), sum(legs))

    def stop_plan(self, stops: Sequence[int]) -> PathPlan:
        """Plan through a stop sequence, each leg a shortest path."""
        tau = self.tau
        legs = tuple(tau[a][b] for a, b in zip(stops, stops[1:]))
        return PathPlan(tuple(stops), legs, sum(legs))

    def expand(self, plan: PathPlan) -> PathPlan:
        nodes = [plan.waypoints[0]]
        legs: list[int] = []
        for a, b in zip(plan.waypoints, plan.waypoints[1:]):
            sub = self.shortest_path(a, b)
            nodes.extend(sub.waypoints[1:])
            legs.extend(sub.leg_times)
        return PathPlan(tuple(nodes), tuple(legs), sum(legs))

    def first_node_reached_after(self, u: int, v: int, start: int, boundary: int) -> tuple[int, int]:
        """First node on the shortest u->v path reached at or after `boundary`.

        Returns (node, arrival time). Falls back to (v, arrival at v).
        """
        x = u
        clock = start
        while x != v:
            y = self._next_hop[x][v]
            clock += self.tau[x][y]
            x = y
            if clock >= boundary:
                return x, clock
        return v, clock

    # -- serialization -------------------------------------------------
    def to_dict(self) -> dict:
        out = {
            "format_version": FORMAT_VERSION,
            "nodes": self.n_nodes,
            "arcs": [list(a) for a in self.arcs],
        }
        if self.coords is not None:
            out["coords"] = [list(c) for c in self.coords]
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "Network":
        version = data.get("format_version")
        if version != FORMAT_VERSION:
            raise NetworkError(f"unsupported network format_version {version!r}")
        return cls(int(data["nodes"]), [tuple(a) for a in data["arcs"]], data.get("coords"))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), separators=(",", ":")))

    @classmethod
    def load(cls, path: str | Path) -> "Network":
        return cls.from_dict(json.loads(Path(path).read_text()))


def build_grid(rows: int, cols: int, arc_time: int) -> Network:
    """4-neighbour bidirectional grid; node id is row * cols + col."""
    if rows < 1 or cols < 1:
        raise NetworkError("grid dimensions must be positive")
    if arc_time <= 0:
        raise NetworkError("arc_time must be positive")
    arcs = []
    for r in range(rows):
        for c in range(cols):
            u = r * cols + c
            if c + 1 < cols:
                arcs += [(u, u + 1, arc_time), (u + 1, u, arc_time)]
            if r + 1 < rows:
                arcs += [(u, u + cols, arc_time), (u + cols, u, arc_time)]
    coords = [(float(r), float(c)) for r in range(rows) for c in range(cols)]
    return Network(rows * cols, arcs, coords)
