"""Feasible decision sets per vehicle attribute.

Multi-request trips are grown one request at a time (a trip of size k is only
tried when all its size k-1 subsets are feasible). For each trip a labeling
search over pickup/dropoff events returns, per possible final dropoff node, one
shortest feasible path. Keeping only those paths is enough for the value-based
assignment as long as the value table is monotone and detours never pay.
"""
from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations
from typing import Iterable, Mapping, NamedTuple

from .domain import (
    CONTINUE,
    EPOCH_SECONDS,
    IDLE,
    RECHARGE,
    Decision,
    FleetParams,
    RequestAttribute,
    SystemState,
    VehicleAttribute,
)
from .network import Network, PathPlan


@dataclass(frozen=True)
class EnumerationConfig:
    max_trip_size: int = 2
    max_wait: int | None = None  # seconds from the decision epoch to pickup
    include_pooling: bool = True
    include_multi: bool = True  # the learning surrogate switches this off

    def __post_init__(self):
        if self.max_trip_size < 1:
            raise ValueError("max_trip_size must be >= 1")
        if self.max_wait is not None and self.max_wait < 0:
            raise ValueError("max_wait must be non-negative")

    @property
    def multi_enabled(self) -> bool:
        return self.include_pooling and self.include_multi and self.max_trip_size >= 2


class TripCandidate(NamedTuple):
    requests: tuple[RequestAttribute, ...]
    paths: dict[int, PathPlan]  # final dropoff node -> shortest feasible path


def pickup_deadline(b: RequestAttribute, t: int, cfg: EnumerationConfig, epoch_len: int = EPOCH_SECONDS) -> int:
    if cfg.max_wait is None:
        return b.t_p
    return min(b.t_p, t * epoch_len + cfg.max_wait)


def feasible_trip_paths(
    a: VehicleAttribute,
    B: Iterable[RequestAttribute],
    t: int,
    net: Network,
    cfg: EnumerationConfig,
    fleet: FleetParams,
    epoch_len: int = EPOCH_SECONDS,
) -> dict[int, PathPlan]:
    """Shortest a-B-feasible path per final dropoff node; empty if B is infeasible for ``a``.

    Label-setting over pickup/dropoff events. Labels sharing (node, served set)
    are compared on arrival time (range use equals driving time), ties broken
    by the lexicographically smaller stop sequence.
    """
    reqs = tuple(B)
    k = len(reqs)
    if k == 0:
        return {}
    tau = net.tau
    deadlines = [pickup_deadline(b, t, cfg, epoch_len) for b in reqs]
    full = (1 << k) - 1
    start = a.t
    budget = a.l
    # state (node, picked mask, dropped mask) -> (time, stops, onboard)
    level = {(a.o, 0, 0): (start, (a.o,), 0)}
    for _ in range(2 * k):
        nxt: dict = {}
        for (node, picked, dropped), (clock, stops, onboard) in level.items():
            row = tau[node]
            for i, b in enumerate(reqs):
                bit = 1 << i
                if not picked & bit:
                    if onboard + b.n > fleet.n_max:
                        continue
                    arrive = clock + row[b.o]
                    if arrive > deadlines[i] or arrive - start > budget:
                        continue
                    key = (b.o, picked | bit, dropped)
                    cand = (arrive, stops + (b.o,), onboard + b.n)
                elif not dropped & bit:
                    arrive = clock + row[b.d]
                    if arrive - start > budget:
                        continue
                    key = (b.d, picked, dropped | bit)
                    cand = (arrive, stops + (b.d,), onboard - b.n)
                else:
                    continue
                best = nxt.get(key)
                if best is None or cand[:2] < best[:2]:
                    nxt[key] = cand
        level = nxt
        if not level:
            return {}
    out: dict[int, PathPlan] = {}
    for (node, picked, dropped), (clock, stops, _) in sorted(level.items()):
        if picked == full and dropped == full:
            out[node] = net.stop_plan(stops)
    return out


def single_feasible(
    a: VehicleAttribute, b: RequestAttribute, t: int, net: Network, cfg: EnumerationConfig,
    fleet: FleetParams, epoch_len: int = EPOCH_SECONDS,
) -> bool:
    tau = net.tau
    approach = tau[a.o][b.o]
    return (
        b.n <= fleet.n_max
        and a.t + approach <= pickup_deadline(b, t, cfg, epoch_len)
        and approach + tau[b.o][b.d] <= a.l
    )


def build_trips(
    a: VehicleAttribute,
    requests: Iterable[RequestAttribute],
    t: int,
    net: Network,
    cfg: EnumerationConfig,
    fleet: FleetParams,
    epoch_len: int = EPOCH_SECONDS,
) -> list[TripCandidate]:
    """All request groups (size <= max_trip_size) that ``a`` can serve, grown incrementally."""
    reqs = sorted(set(requests))
    trips: list[TripCandidate] = []
    feasible_prev: set[tuple[RequestAttribute, ...]] = set()
    for b in reqs:
        if single_feasible(a, b, t, net, cfg, fleet, epoch_len):
            paths = {b.d: net.stop_plan((a.o, b.o, b.d))}
            trips.append(TripCandidate((b,), paths))
            feasible_prev.add((b,))
    singles = [tc.requests[0] for tc in trips]
    for size in range(2, cfg.max_trip_size + 1):
        feasible_now: set = set()
        for group in combinations(singles, size):
            if any(sub not in feasible_prev for sub in combinations(group, size - 1)):
                continue
            paths = feasible_trip_paths(a, group, t, net, cfg, fleet, epoch_len)
            if paths:
                trips.append(TripCandidate(group, paths))
                feasible_now.add(group)
        if not feasible_now:
            break
        feasible_prev = feasible_now
    return trips


def pool_paths(
    a: VehicleAttribute, b: RequestAttribute, t: int, net: Network, cfg: EnumerationConfig,
    fleet: FleetParams, epoch_len: int = EPOCH_SECONDS,
) -> dict[int, PathPlan]:
    """Shortest pooled path per final node; the new pickup precedes the current dropoff."""
    if b.n > a.n:
        return {}
    tau = net.tau
    deadline = pickup_deadline(b, t, cfg, epoch_len)
    approach = tau[a.o][b.o]
    if a.t + approach > deadline:
        return {}
    out: dict[int, PathPlan] = {}
    for stops in sorted([(a.o, b.o, a.d, b.d), (a.o, b.o, b.d, a.d)]):
        plan = net.stop_plan(stops)
        if plan.total_time > a.l:
            continue
        end = stops[-1]
        best = out.get(end)
        if best is None or (plan.total_time, plan.waypoints) < (best.total_time, best.waypoints):
            out[end] = plan
    return out


def queue_feasible(
    a: VehicleAttribute, b: RequestAttribute, t: int, net: Network, cfg: EnumerationConfig,
    fleet: FleetParams, epoch_len: int = EPOCH_SECONDS,
) -> bool:
    tau = net.tau
    approach = tau[a.o][a.d] + tau[a.d][b.o]
    return (
        b.n <= fleet.n_max
        and a.t + approach <= pickup_deadline(b, t, cfg, epoch_len)
        and approach + tau[b.o][b.d] <= a.l
    )


def relocation_targets(a: VehicleAttribute, net: Network, epoch_len: int = EPOCH_SECONDS) -> list[int]:
    row = net.tau[a.o]
    arcs = net.arc_set
    return [
        v
        for v in range(net.n_nodes)
        if v != a.o and row[v] <= a.l and ((a.o, v) in arcs or row[v] <= epoch_len)
    ]


def decisions_for(
    a: VehicleAttribute,
    requests: list[RequestAttribute],
    t: int,
    net: Network,
    fleet: FleetParams,
    cfg: EnumerationConfig,
    epoch_len: int = EPOCH_SECONDS,
) -> list[Decision]:
    out: list[Decision] = []
    actionable = a.t < (t + 1) * epoch_len
    if a.n == fleet.n_max and a.o == a.d:
        if cfg.multi_enabled:
            for trip in build_trips(a, requests, t, net, cfg, fleet, epoch_len):
                if len(trip.requests) == 1:
                    out.append(Decision.single(trip.requests[0]))
                else:
                    for plan in trip.paths.values():
                        out.append(Decision.multi(trip.requests, plan))
        else:
            out.extend(Decision.single(b) for b in requests if single_feasible(a, b, t, net, cfg, fleet, epoch_len))
        if actionable:
            out.extend(Decision.relocate(v) for v in relocation_targets(a, net, epoch_len))
        out.append(IDLE)
        if actionable and a.l < fleet.l_max:
            out.append(RECHARGE)
    elif a.n < fleet.n_max and a.o != a.d:
        if cfg.include_pooling:
            for b in requests:
                for plan in pool_paths(a, b, t, net, cfg, fleet, epoch_len).values():
                    out.append(Decision.pool(b, plan))
        out.extend(Decision.queue(b) for b in requests if queue_feasible(a, b, t, net, cfg, fleet, epoch_len))
        out.append(CONTINUE)
    else:
        raise ValueError(f"vehicle attribute is neither empty nor occupied: {a}")
    out.sort(key=Decision.sort_key)
    return out


def enumerate_decisions(
    state: SystemState,
    t: int,
    net: Network,
    fleet: FleetParams,
    cfg: EnumerationConfig,
    epoch_len: int = EPOCH_SECONDS,
) -> dict[VehicleAttribute, list[Decision]]:
    requests = sorted(b for b, k in state.D.items() if k > 0)
    return {
        a: decisions_for(a, requests, t, net, fleet, cfg, epoch_len)
        for a in sorted(state.R)
        if state.R[a] > 0
    }


def decision_sets_subset(small: Mapping, large: Mapping) -> bool:
    """True when every decision set in ``small`` is contained in the one in ``large``."""
    return all(set(ds) <= set(large.get(a, ())) for a, ds in small.items())
