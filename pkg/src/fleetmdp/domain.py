"""Vehicle and request attributes, decisions, contributions and transitions.

All clock values are integer seconds since the start of the horizon.
Decision epoch ``t`` (1-based) happens at second ``t * epoch_len``.
"""
from __future__ import annotations

import json
import math
from collections import defaultdict
from dataclasses import dataclass, field
from enum import IntEnum
from typing import Mapping, NamedTuple

from .network import Network, PathPlan

EPOCH_SECONDS = 120
HORIZON_EPOCHS = 720
RECHARGE_INTERCEPT = 900
HOUR = 3600


class ContractViolation(RuntimeError):
    """A decision or decision vector broke a model constraint."""


class InfeasibleDecision(ContractViolation):
    pass


class VehicleAttribute(NamedTuple):
    o: int  # current location
    d: int  # destination
    l: int  # remaining range, seconds of driving
    n: int  # free seats
    t: int  # actionable time


class RequestAttribute(NamedTuple):
    o: int
    d: int
    n: int  # headcount
    t_r: int  # latest response time
    t_p: int  # latest pickup time
    f: float  # fare


class Kind(IntEnum):
    SINGLE = 0
    MULTI = 1
    POOL = 2
    QUEUE = 3
    RELOCATE = 4
    CONTINUE = 5
    IDLE = 6
    RECHARGE = 7


SERVING = frozenset({Kind.SINGLE, Kind.MULTI, Kind.POOL, Kind.QUEUE})
EMPTY_KINDS = frozenset({Kind.SINGLE, Kind.MULTI, Kind.RELOCATE, Kind.IDLE, Kind.RECHARGE})
OCCUPIED_KINDS = frozenset({Kind.POOL, Kind.QUEUE, Kind.CONTINUE})


class Decision(NamedTuple):
    kind: Kind
    requests: tuple[RequestAttribute, ...] = ()
    path: PathPlan | None = None
    target: int = -1

    @classmethod
    def single(cls, b: RequestAttribute) -> "Decision":
        return cls(Kind.SINGLE, (b,))

    @classmethod
    def multi(cls, requests, path: PathPlan) -> "Decision":
        reqs = tuple(sorted(requests))
        if len(reqs) < 2:
            raise ValueError("a multi-trip needs at least two requests")
        return cls(Kind.MULTI, reqs, path)

    @classmethod
    def pool(cls, b: RequestAttribute, path: PathPlan) -> "Decision":
        return cls(Kind.POOL, (b,), path)

    @classmethod
    def queue(cls, b: RequestAttribute) -> "Decision":
        return cls(Kind.QUEUE, (b,))

    @classmethod
    def relocate(cls, v: int) -> "Decision":
        return cls(Kind.RELOCATE, target=v)

    def sort_key(self):
        return (int(self.kind), self.requests, self.path.waypoints if self.path else (), self.target)

    def __repr__(self) -> str:
        name = self.kind.name.capitalize()
        if self.kind == Kind.RELOCATE:
            return f"Relocate({self.target})"
        if self.requests:
            body = ",".join(f"{b.o}->{b.d}" for b in self.requests)
            if self.path is not None:
                body += f" via {list(self.path.waypoints)}"
            return f"{name}({body})"
        return name


CONTINUE = Decision(Kind.CONTINUE)
IDLE = Decision(Kind.IDLE)
RECHARGE = Decision(Kind.RECHARGE)


@dataclass(frozen=True)
class FleetParams:
    """Vehicle type. ``recharge_rate`` is charging seconds per second of missing range."""

    name: str
    l_max: int
    recharge_rate: float
    n_max: int = 4
    intercept: int = RECHARGE_INTERCEPT

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "l_max": self.l_max,
            "recharge_rate": self.recharge_rate,
            "n_max": self.n_max,
            "intercept": self.intercept,
        }


# l_max in seconds; rates converted from "per hour of range" figures
ICE = FleetParams("ICE", 26 * HOUR, 2.308 / HOUR)
DCFC = FleetParams("DCFC", 17 * HOUR + 41 * 60, 2.262 * 60 / HOUR)
L2C = FleetParams("L2C", 17 * HOUR + 41 * 60, 45.23 * 60 / HOUR)
FLEET_TYPES = {"ICE": ICE, "DCFC": DCFC, "L2C": L2C}


def fleet_params(name: str, n_max: int = 4) -> FleetParams:
    try:
        base = FLEET_TYPES[name.upper()]
    except KeyError:
        raise ValueError(f"unknown fleet type {name!r}; expected one of {sorted(FLEET_TYPES)}") from None
    if n_max == base.n_max:
        return base
    return FleetParams(base.name, base.l_max, base.recharge_rate, n_max, base.intercept)


@dataclass(frozen=True)
class CostParams:
    kappa: float = 0.0  # detour penalty per second
    recharge_price: float = 0.0  # per second of range refilled

    def __post_init__(self):
        if self.kappa < 0 or self.recharge_price < 0:
            raise ValueError("kappa and recharge_price must be non-negative")


def recharge_duration(l_a: int, fleet: FleetParams) -> int:
    if not (0 <= l_a <= fleet.l_max):
        raise ValueError(f"range {l_a} outside [0, {fleet.l_max}]")
    return int(round((fleet.l_max - l_a) * fleet.recharge_rate)) + fleet.intercept


def next_boundary(t_a: int, epoch_len: int = EPOCH_SECONDS) -> int:
    return (t_a // epoch_len + 1) * epoch_len


def is_empty(a: VehicleAttribute, fleet: FleetParams) -> bool:
    return a.n == fleet.n_max and a.o == a.d


def is_occupied(a: VehicleAttribute, fleet: FleetParams) -> bool:
    return a.n < fleet.n_max and a.o != a.d


def _continue(a: VehicleAttribute, t: int, net: Network, fleet: FleetParams, E: int) -> VehicleAttribute:
    if a.t >= (t + 1) * E:
        return a
    nb = (a.t // E + 1) * E
    travel = net.tau[a.o][a.d]
    if a.t + travel <= nb:
        return VehicleAttribute(a.d, a.d, a.l - travel, fleet.n_max, nb)
    node, arrive = net.first_node_reached_after(a.o, a.d, a.t, nb)
    used = arrive - a.t
    if node == a.d:
        # destination is the first node past the boundary: passengers leave on arrival
        return VehicleAttribute(a.d, a.d, a.l - used, fleet.n_max, arrive)
    return VehicleAttribute(node, a.d, a.l - used, a.n, arrive)


def transition_attribute(
    a: VehicleAttribute,
    d: Decision,
    t: int,
    net: Network,
    fleet: FleetParams,
    epoch_len: int = EPOCH_SECONDS,
) -> VehicleAttribute:
    """Post-decision attribute of a vehicle ``a`` given decision ``d`` at epoch ``t``."""
    E = epoch_len
    kind = d.kind
    empty = a.n == fleet.n_max and a.o == a.d
    if empty and kind not in EMPTY_KINDS or not empty and kind not in OCCUPIED_KINDS:
        raise ContractViolation(f"{d!r} not applicable to {'empty' if empty else 'occupied'} vehicle {a}")
    tau = net.tau
    if kind == Kind.IDLE:
        if a.t >= (t + 1) * E:
            return a
        out = VehicleAttribute(a.o, a.d, a.l, fleet.n_max, (a.t // E + 1) * E)
    elif kind == Kind.CONTINUE:
        out = _continue(a, t, net, fleet, E)
    elif kind == Kind.SINGLE:
        b = d.requests[0]
        leg = tau[a.o][b.o]
        mid = VehicleAttribute(b.o, b.d, a.l - leg, fleet.n_max - b.n, a.t + leg)
        if mid.l < 0:
            raise InfeasibleDecision(f"{d!r} exhausts range of {a}")
        out = _continue(mid, t, net, fleet, E)
    elif kind == Kind.QUEUE:
        b = d.requests[0]
        leg = tau[a.o][a.d] + tau[a.d][b.o]
        mid = VehicleAttribute(b.o, b.d, a.l - leg, fleet.n_max - b.n, a.t + leg)
        if mid.l < 0:
            raise InfeasibleDecision(f"{d!r} exhausts range of {a}")
        out = _continue(mid, t, net, fleet, E)
    elif kind == Kind.MULTI or kind == Kind.POOL:
        p = d.path
        end = p.waypoints[-1]
        out = VehicleAttribute(end, end, a.l - p.total_time, fleet.n_max, max(a.t + p.total_time, (a.t // E + 1) * E))
    elif kind == Kind.RELOCATE:
        v = d.target
        out = VehicleAttribute(v, v, a.l - tau[a.o][v], fleet.n_max, (t + 1) * E)
    elif kind == Kind.RECHARGE:
        dur = recharge_duration(a.l, fleet)
        out = VehicleAttribute(a.o, a.o, fleet.l_max, fleet.n_max, max(a.t + dur, (a.t // E + 1) * E))
    else:  # pragma: no cover
        raise ContractViolation(f"unknown decision kind {kind}")
    if out.l < 0:
        raise InfeasibleDecision(f"{d!r} exhausts range of {a}")
    return out


def detour_seconds(a: VehicleAttribute, d: Decision, net: Network) -> int:
    """Path time beyond the direct ride times of the served requests (never negative)."""
    if d.path is None:
        return 0
    tau = net.tau
    direct = sum(tau[b.o][b.d] for b in d.requests)
    if d.kind == Kind.POOL:
        direct += tau[a.o][a.d]
    return max(0, d.path.total_time - direct)


def contribution(
    a: VehicleAttribute, d: Decision, cost: CostParams, net: Network, fleet: FleetParams
) -> float:
    kind = d.kind
    if kind == Kind.SINGLE or kind == Kind.QUEUE:
        return d.requests[0].f
    if kind == Kind.MULTI or kind == Kind.POOL:
        fares = math.fsum(b.f for b in d.requests)
        if cost.kappa:
            return fares - cost.kappa * detour_seconds(a, d, net)
        return fares
    if kind == Kind.RECHARGE:
        if cost.recharge_price:
            return -cost.recharge_price * (fleet.l_max - a.l)
        return 0.0
    return 0.0


@dataclass(frozen=True)
class SystemState:
    """Resource and demand counts at decision epoch ``t``; treat as immutable."""

    t: int
    R: Mapping[VehicleAttribute, int]
    D: Mapping[RequestAttribute, int] = field(default_factory=dict)

    @property
    def fleet_size(self) -> int:
        return sum(self.R.values())

    def to_json(self) -> str:
        return json.dumps(
            {
                "t": self.t,
                "R": [[list(a), c] for a, c in sorted(self.R.items())],
                "D": [[list(b), c] for b, c in sorted(self.D.items())],
            }
        )

    @classmethod
    def from_json(cls, text: str) -> "SystemState":
        data = json.loads(text)
        return cls(
            data["t"],
            {VehicleAttribute(*a): c for a, c in data["R"]},
            {RequestAttribute(*b): c for b, c in data["D"]},
        )


DecisionVector = dict  # (VehicleAttribute, Decision) -> count


def check_decisions(state: SystemState, x: Mapping) -> dict[RequestAttribute, int]:
    """Validate flow balance and demand constraints; return requests served per attribute."""
    used = defaultdict(int)
    alloc = defaultdict(int)
    for (a, d), k in x.items():
        if k < 0:
            raise ContractViolation(f"negative count {k} for {a}, {d!r}")
        if not k:
            continue
        alloc[a] += k
        for b in d.requests:
            used[b] += k
    for a, r in state.R.items():
        if alloc.get(a, 0) != r:
            raise ContractViolation(f"flow balance violated for {a}: {alloc.get(a, 0)} != {r}")
    for a in alloc:
        if a not in state.R:
            raise ContractViolation(f"decision for vehicle attribute not in state: {a}")
    for b, k in used.items():
        if k > state.D.get(b, 0):
            raise ContractViolation(f"demand violated for {b}: {k} > {state.D.get(b, 0)}")
    return dict(used)


def merge_counts(*counts: Mapping) -> dict:
    out: dict = defaultdict(int)
    for c in counts:
        for k, v in c.items():
            if v:
                out[k] += v
    return dict(out)


def apply_decisions(
    state: SystemState,
    x: Mapping,
    new_demand: Mapping[RequestAttribute, int],
    net: Network,
    fleet: FleetParams,
    epoch_len: int = EPOCH_SECONDS,
    post: Mapping | None = None,
) -> SystemState:
    """Transition to the next pre-decision state.

    ``post`` may carry already computed post-decision attributes keyed like ``x``.
    """
    used = check_decisions(state, x)
    t = state.t
    Rx: dict = defaultdict(int)
    for (a, d), k in x.items():
        if not k:
            continue
        a2 = post[(a, d)] if post is not None and (a, d) in post else transition_attribute(a, d, t, net, fleet, epoch_len)
        Rx[a2] += k
    horizon = (t + 1) * epoch_len
    Dx = {}
    for b, k in state.D.items():
        rest = k - used.get(b, 0)
        if rest > 0 and b.t_r >= horizon and b.t_p >= horizon:
            Dx[b] = rest
    return SystemState(t + 1, dict(Rx), merge_counts(Dx, new_demand))
