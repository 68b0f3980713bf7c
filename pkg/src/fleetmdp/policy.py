"""Decision policies: myopic, parameterized myopic (PM), VFA and the training surrogate."""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Mapping

import numpy as np

from .assign import build_problem, solve_ip, solve_lp
from .domain import (
    EPOCH_SECONDS,
    HORIZON_EPOCHS,
    RECHARGE,
    CostParams,
    Decision,
    FleetParams,
    Kind,
    RequestAttribute,
    SystemState,
    VehicleAttribute,
    check_decisions,
    contribution,
    transition_attribute,
)
from .enumeration import EnumerationConfig, enumerate_decisions
from .network import Network

RELOCATION_FLOOR = 1e-6
POLICY_KINDS = ("myopic", "pm", "vfa", "surrogate")


@dataclass(frozen=True)
class Context:
    """Everything a policy needs besides the state: network, vehicle type and model settings."""

    net: Network
    fleet: FleetParams
    cost: CostParams = CostParams()
    enum: EnumerationConfig = EnumerationConfig()
    epoch_len: int = EPOCH_SECONDS
    horizon: int = HORIZON_EPOCHS

    def surrogate(self) -> "Context":
        return replace(self, enum=replace(self.enum, include_multi=False))


@dataclass
class EpochDecision:
    x: dict  # (VehicleAttribute, Decision) -> count
    post: dict  # (VehicleAttribute, Decision) -> post-decision attribute
    contrib: dict  # (VehicleAttribute, Decision) -> c_tad
    objective: float
    duals_R: dict = field(default_factory=dict)
    duals_D: dict = field(default_factory=dict)

    @property
    def reward(self) -> float:
        return math.fsum(self.contrib[k] * n for k, n in self.x.items())


@dataclass(frozen=True)
class PolicyConfig:
    kind: str = "pm"
    theta: float = 0.1
    tables: object = None
    seed: int = 0

    def __post_init__(self):
        if self.kind not in POLICY_KINDS:
            raise ValueError(f"unknown policy kind {self.kind!r}; expected one of {POLICY_KINDS}")
        if not (0.0 < self.theta <= 1.0):
            raise ValueError("theta must lie in (0, 1]")
        if self.kind in ("vfa", "surrogate") and self.tables is None:
            raise ValueError(f"{self.kind} policy needs value tables")

    def decide(self, state: SystemState, t: int, ctx: Context, rng=None) -> EpochDecision:
        if self.kind == "myopic":
            return decide_myopic(state, t, ctx)
        if self.kind == "pm":
            return decide_pm(state, t, self.theta, ctx)
        if self.kind == "vfa":
            return decide_vfa(state, t, self.tables, ctx)
        return decide_surrogate(state, t, self.tables, ctx.surrogate(), rng)


class _Columns:
    """Per-epoch cache of contributions and post-decision attributes."""

    def __init__(self, t: int, ctx: Context):
        self.t = t
        self.ctx = ctx
        self.post: dict = {}
        self.contrib: dict = {}

    def c(self, a: VehicleAttribute, d: Decision) -> float:
        key = (a, d)
        v = self.contrib.get(key)
        if v is None:
            ctx = self.ctx
            v = self.contrib[key] = contribution(a, d, ctx.cost, ctx.net, ctx.fleet)
        return v

    def after(self, a: VehicleAttribute, d: Decision) -> VehicleAttribute:
        key = (a, d)
        v = self.post.get(key)
        if v is None:
            ctx = self.ctx
            v = self.post[key] = transition_attribute(a, d, self.t, ctx.net, ctx.fleet, ctx.epoch_len)
        return v


def _finish(state, cols: _Columns, sol, duals=False) -> EpochDecision:
    x = sol.decision_vector()
    check_decisions(state, x)
    post = {k: cols.after(*k) for k in x}
    contrib = {k: cols.c(*k) for k in x}
    dec = EpochDecision(x, post, contrib, sol.objective)
    if duals:
        dec.duals_R = sol.duals_by_attribute()
        dec.duals_D = sol.duals_by_request()
    return dec


def _myopic(state: SystemState, t: int, ctx: Context, sets) -> EpochDecision:
    cols = _Columns(t, ctx)
    prob = build_problem(state, sets, cols.c)
    return _finish(state, cols, solve_ip(prob))


def decide_myopic(state: SystemState, t: int, ctx: Context) -> EpochDecision:
    sets = enumerate_decisions(state, t, ctx.net, ctx.fleet, ctx.enum, ctx.epoch_len)
    return _myopic(state, t, ctx, sets)


def force_recharge(sets: Mapping, theta: float, fleet: FleetParams) -> dict:
    """Drop every column except Recharge for low-range vehicles that may recharge now."""
    out = {}
    for a, ds in sets.items():
        if a.l < theta * fleet.l_max and RECHARGE in ds:
            out[a] = [RECHARGE]
        else:
            out[a] = ds
    return out


def decide_pm(state: SystemState, t: int, theta: float, ctx: Context) -> EpochDecision:
    if not (0.0 < theta <= 1.0):
        raise ValueError("theta must lie in (0, 1]")
    sets = enumerate_decisions(state, t, ctx.net, ctx.fleet, ctx.enum, ctx.epoch_len)
    return _myopic(state, t, ctx, force_recharge(sets, theta, ctx.fleet))


def _value_problem(state, t, tables, ctx, sets, cols):
    value = tables.value
    net = ctx.net

    def coef(a, d):
        return cols.c(a, d) + value(cols.after(a, d), net)

    return build_problem(state, sets, coef, lambda b: tables.demand_value(b, t))


def decide_vfa(state: SystemState, t: int, tables, ctx: Context) -> EpochDecision:
    sets = enumerate_decisions(state, t, ctx.net, ctx.fleet, ctx.enum, ctx.epoch_len)
    cols = _Columns(t, ctx)
    return _finish(state, cols, solve_ip(_value_problem(state, t, tables, ctx, sets, cols)))


def decide_surrogate(state: SystemState, t: int, tables, ctx: Context, rng) -> EpochDecision:
    """LP over Multi-free columns with duals, then randomized relocation redraw."""
    if ctx.enum.include_multi:
        ctx = ctx.surrogate()
    sets = enumerate_decisions(state, t, ctx.net, ctx.fleet, ctx.enum, ctx.epoch_len)
    cols = _Columns(t, ctx)
    dec = _finish(state, cols, solve_lp(_value_problem(state, t, tables, ctx, sets, cols)), duals=True)
    if rng is not None:
        redraw_relocations(dec, sets, tables, cols, rng)
        check_decisions(state, dec.x)
    return dec


def redraw_relocations(dec: EpochDecision, sets: Mapping, tables, cols: _Columns, rng) -> None:
    """Resample relocation targets with probability proportional to their (floored) values."""
    moved: dict = {}
    for (a, d), k in dec.x.items():
        if d.kind == Kind.RELOCATE:
            moved[a] = moved.get(a, 0) + k
    if not moved:
        return
    for a in sorted(moved):
        targets = [d for d in sets[a] if d.kind == Kind.RELOCATE]
        weights = np.array([max(tables.value(cols.after(a, d), cols.ctx.net), RELOCATION_FLOOR) for d in targets])
        draws = rng.multinomial(moved[a], weights / weights.sum())
        for d in targets:
            key = (a, d)
            dec.x.pop(key, None)
            dec.post.pop(key, None)
            dec.contrib.pop(key, None)
        for d, k in zip(targets, draws):
            if k:
                key = (a, d)
                dec.x[key] = int(k)
                dec.post[key] = cols.after(a, d)
                dec.contrib[key] = cols.c(a, d)
