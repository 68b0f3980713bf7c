"""Episode execution and evaluation statistics."""
from __future__ import annotations

import csv
import json
import logging
import math
from collections import Counter, defaultdict
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.stats import binomtest

from .domain import (
    SERVING,
    ContractViolation,
    Kind,
    SystemState,
    VehicleAttribute,
    apply_decisions,
)
from .policy import Context, PolicyConfig

log = logging.getLogger(__name__)

Z95 = 1.96


class EpisodeAborted(RuntimeError):
    """A policy broke a model contract; ``state_json`` holds the offending state."""

    def __init__(self, message: str, state_json: str, t: int):
        super().__init__(message)
        self.state_json = state_json
        self.t = t


def demand_by_epoch(path, horizon: int) -> dict[int, dict]:
    out: dict[int, dict] = defaultdict(dict)
    for e, b in path.requests:
        if e <= horizon:
            bucket = out[e]
            bucket[b] = bucket.get(b, 0) + 1
    return dict(out)


def initial_state(instance, path_id: str, ctx: Context) -> SystemState:
    fleet = ctx.fleet
    R: dict = defaultdict(int)
    for node, frac in instance.initial_states[path_id]:
        l = min(fleet.l_max, int(frac * fleet.l_max))
        R[VehicleAttribute(node, node, l, fleet.n_max, ctx.epoch_len)] += 1
    demand = demand_by_epoch(instance.path(path_id), ctx.horizon)
    return SystemState(1, dict(R), dict(demand.get(1, {})))


@dataclass
class EpisodeResult:
    path_id: str
    reward: float
    fares: float
    rfr: float
    family_counts: dict
    served: int
    lost: int
    n_requests: int
    telemetry: list[dict] = field(default_factory=list)
    decision_log: list | None = None

    def summary(self) -> dict:
        return {
            "path_id": self.path_id,
            "reward": self.reward,
            "fares": self.fares,
            "rfr": self.rfr,
            "served": self.served,
            "lost": self.lost,
            **{f"n_{k}": v for k, v in sorted(self.family_counts.items())},
        }


def run_episode(instance, ctx: Context, policy: PolicyConfig, path_id: str, seed: int = 0,
                keep_log: bool = False) -> EpisodeResult:
    path = instance.path(path_id)
    demand = demand_by_epoch(path, ctx.horizon)
    state = initial_state(instance, path_id, ctx)
    rng = np.random.default_rng(seed)
    fleet = ctx.fleet
    rewards = []
    families: Counter = Counter()
    served = 0
    telemetry = []
    dlog = [] if keep_log else None
    for t in range(1, ctx.horizon + 1):
        try:
            dec = policy.decide(state, t, ctx, rng)
        except ContractViolation as exc:
            raise EpisodeAborted(f"epoch {t}: {exc}", state.to_json(), t) from exc
        mix: Counter = Counter()
        for (a, d), k in dec.x.items():
            c = dec.contrib[(a, d)]
            rewards.append(c * k)
            mix[d.kind.name.lower()] += k
            if d.kind in SERVING:
                served += k * len(d.requests)
            if dlog is not None:
                dlog.append((t, a, d, k, c))
        families.update(mix)
        n_veh = state.fleet_size
        telemetry.append({
            "t": t,
            "mean_range": math.fsum(a.l * r for a, r in state.R.items()) / n_veh if n_veh else 0.0,
            "onboard": sum((fleet.n_max - a.n) * r for a, r in state.R.items() if a.o != a.d),
            "pending": sum(state.D.values()),
            **{k.name.lower(): mix.get(k.name.lower(), 0) for k in Kind},
        })
        state = apply_decisions(state, dec.x, demand.get(t + 1, {}), ctx.net, fleet, ctx.epoch_len, dec.post)
    reward = math.fsum(rewards)
    fares = path.total_fares()
    n_req = len(path.requests)
    return EpisodeResult(path_id, reward, fares, reward / fares if fares else 1.0, dict(families), served,
                         n_req - served, n_req, telemetry, dlog)


def decision_log_records(result: EpisodeResult):
    """JSON-ready rows of a kept decision log."""
    for t, a, d, k, c in result.decision_log or ():
        yield {
            "t": t,
            "a": list(a),
            "kind": d.kind.name.lower(),
            "requests": [list(b) for b in d.requests],
            "path": list(d.path.waypoints) if d.path else None,
            "target": d.target,
            "count": k,
            "c": c,
        }


@dataclass(frozen=True)
class EvalStats:
    n: int
    mean: float
    median: float
    iqr: float
    std: float
    me: float

    @classmethod
    def from_values(cls, values: Sequence[float]) -> "EvalStats":
        """Sample std (n - 1); quartiles by linear interpolation; ME = 1.96 std / sqrt(n)."""
        v = np.asarray(values, dtype=float)
        if v.size == 0:
            raise ValueError("no values")
        n = int(v.size)
        q1, med, q3 = np.percentile(v, [25, 50, 75])
        std = float(np.std(v, ddof=1)) if n > 1 else 0.0
        return cls(n, math.fsum(v.tolist()) / n, float(med), float(q3 - q1), std, Z95 * std / math.sqrt(n))


@dataclass
class Evaluation:
    reward: EvalStats
    rfr: EvalStats
    episodes: list[EpisodeResult]

    def rewards(self) -> list[float]:
        return [e.reward for e in self.episodes]

    def rfrs(self) -> list[float]:
        return [e.rfr for e in self.episodes]


def _episode_job(args):
    instance, ctx, policy, pid, seed, keep_log = args
    return run_episode(instance, ctx, policy, pid, seed, keep_log)


def evaluate(instance, ctx: Context, policy: PolicyConfig, path_ids: Sequence[str] | None = None,
             jobs: int = 1, csv_path: str | Path | None = None, seed: int = 0,
             keep_log: bool = False) -> Evaluation:
    ids = [p.path_id for p in instance.test_paths] if path_ids is None else list(path_ids)
    if not ids:
        raise ValueError("evaluation needs at least one test path")
    work = [(instance, ctx, policy, pid, seed, keep_log) for pid in ids]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_episode_job, work))
    else:
        results = [_episode_job(w) for w in work]
    results.sort(key=lambda r: r.path_id)
    ev = Evaluation(EvalStats.from_values([r.reward for r in results]),
                    EvalStats.from_values([r.rfr for r in results]), results)
    if csv_path is not None:
        write_episode_csv(results, csv_path)
    return ev


def write_episode_csv(results: Sequence[EpisodeResult], path: str | Path) -> None:
    rows = [r.summary() for r in results]
    fixed = ["path_id", "reward", "fares", "rfr", "served", "lost"]
    keys = fixed + sorted({k for r in rows for k in r} - set(fixed))
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=keys, restval=0)
        w.writeheader()
        w.writerows(rows)


def write_telemetry(result: EpisodeResult, path: str | Path) -> None:
    with open(path, "w") as fh:
        for row in result.telemetry:
            fh.write(json.dumps({"path_id": result.path_id, **row}) + "\n")


def sign_test(a: Sequence[float], b: Sequence[float]) -> float:
    """One-sided paired sign test p-value for a > b; ties are dropped."""
    if len(a) != len(b):
        raise ValueError("paired samples differ in length")
    wins = sum(x > y for x, y in zip(a, b))
    losses = sum(x < y for x, y in zip(a, b))
    if wins + losses == 0:
        return 1.0
    return float(binomtest(wins, wins + losses, 0.5, alternative="greater").pvalue)
