"""Lookup-table value function and forward ADP training.

Vehicle values live in one dense block per (location, destination) pair,
indexed by (range level, capacity level, actionable-time level). Within a
block a vehicle is "at least as good" as another when it has at least the
range, at least the free capacity and is actionable no later; values must be
monotone in that order.
"""
from __future__ import annotations

import hashlib
import json
import logging
import math
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

from .domain import EPOCH_SECONDS, RequestAttribute, VehicleAttribute

log = logging.getLogger(__name__)

TABLE_MAGIC = b"FMDPVT01"
TABLE_FORMAT_VERSION = 1


class TableFormatError(ValueError):
    pass


@dataclass(frozen=True)
class Aggregation:
    l_max: int
    n_max: int = 4
    range_levels: int = 9
    time_bin: int = 300
    time_levels: int = 288

    def key(self, a: VehicleAttribute) -> tuple[int, int, int, int, int]:
        r = a.l * self.range_levels // self.l_max
        if r >= self.range_levels:
            r = self.range_levels - 1
        tb = a.t // self.time_bin
        if tb >= self.time_levels:
            tb = self.time_levels - 1
        return (a.o, a.d, r, 1 if a.n == self.n_max else 0, tb)

    @property
    def shape(self) -> tuple[int, int, int]:
        return (self.range_levels, 2, self.time_levels)


def learning_rate(n: int, a_lr: float = 300.0) -> float:
    """Generalized harmonic step size; equals 1 on the first iteration."""
    if n < 1:
        raise ValueError("iteration index starts at 1")
    return a_lr / (a_lr + n - 1)


class ValueTables:
    """Vehicle value lookup table plus the demand-side value rule.

    ``demand_mode``: ``"rule"`` values a pending request at ``demand_factor`` times
    its fare while it can still be answered next epoch; ``"zero"`` disables the
    demand term; ``"table"`` learns a smoothed value per (origin, destination,
    time level).
    """

    def __init__(self, agg: Aggregation, demand_mode: str = "rule", demand_factor: float = 0.9,
                 epoch_len: int = EPOCH_SECONDS):
        if demand_mode not in ("rule", "zero", "table"):
            raise ValueError(f"unknown demand_mode {demand_mode!r}")
        self.agg = agg
        self.demand_mode = demand_mode
        self.demand_factor = demand_factor
        self.epoch_len = epoch_len
        self.blocks: dict[tuple[int, int], np.ndarray] = {}
        self.visits: dict[tuple[int, int], np.ndarray] = {}  # direct smoothing updates per key
        self.demand_table: dict[tuple[int, int, int], float] = {}
        self.meta: dict = {}

    # -- lookups -------------------------------------------------------
    def value(self, a: VehicleAttribute, net=None) -> float:
        """Table value of ``a``.

        With ``net`` given, a vehicle carrying passengers whose key has never been
        updated directly is valued as the empty vehicle it becomes at drop-off.
        """
        o, d, r, c, tb = self.agg.key(a)
        block = self.blocks.get((o, d))
        if net is not None and o != d and (block is None or not self.visits[(o, d)][r, c, tb]):
            leg = net.tau[o][d]
            return self.value(VehicleAttribute(d, d, max(0, a.l - leg), self.agg.n_max, a.t + leg))
        if block is None:
            return 0.0
        return float(block[r, c, tb])

    def value_key(self, key) -> float:
        block = self.blocks.get((key[0], key[1]))
        return 0.0 if block is None else float(block[key[2], key[3], key[4]])

    def demand_value(self, b: RequestAttribute, t: int) -> float:
        if self.demand_mode == "zero" or b.t_r < (t + 1) * self.epoch_len:
            return 0.0
        if self.demand_mode == "rule":
            return self.demand_factor * b.f
        return self.demand_table.get(self._demand_key(b, t), 0.0)

    def _demand_key(self, b: RequestAttribute, t: int):
        return (b.o, b.d, min(t * self.epoch_len // self.agg.time_bin, self.agg.time_levels - 1))

    def _block(self, o: int, d: int) -> np.ndarray:
        block = self.blocks.get((o, d))
        if block is None:
            block = np.zeros(self.agg.shape)
            self.blocks[(o, d)] = block
            self.visits[(o, d)] = np.zeros(self.agg.shape, dtype=np.uint32)
        return block

    # -- updates -------------------------------------------------------
    def smooth(self, key, v_hat: float, alpha: float) -> float:
        block = self._block(key[0], key[1])
        idx = (key[2], key[3], key[4])
        new = (1.0 - alpha) * block[idx] + alpha * v_hat
        block[idx] = new
        self.visits[(key[0], key[1])][idx] += 1
        return float(new)

    def project_monotone(self, key) -> None:
        """Push comparable entries so the table is monotone around ``key`` again."""
        block = self._block(key[0], key[1])
        r, c, tb = key[2], key[3], key[4]
        v = block[r, c, tb]
        up = block[r:, c:, : tb + 1]
        np.maximum(up, v, out=up)
        down = block[: r + 1, : c + 1, tb:]
        np.minimum(down, v, out=down)

    def monotonicity_violations(self) -> int:
        bad = 0
        for block in self.blocks.values():
            bad += int(np.count_nonzero(np.diff(block, axis=0) < 0))
            bad += int(np.count_nonzero(np.diff(block, axis=1) < 0))
            bad += int(np.count_nonzero(np.diff(block, axis=2) > 0))
        return bad

    def is_monotone(self) -> bool:
        return self.monotonicity_violations() == 0

    def n_entries(self) -> int:
        return len(self.blocks) * int(np.prod(self.agg.shape))

    # -- persistence ---------------------------------------------------
    def header(self) -> dict:
        return {
            "format_version": TABLE_FORMAT_VERSION,
            "aggregation": asdict(self.agg),
            "demand_mode": self.demand_mode,
            "demand_factor": self.demand_factor,
            "epoch_len": self.epoch_len,
            "meta": self.meta,
            "n_blocks": len(self.blocks),
            "demand_entries": len(self.demand_table),
        }

    def to_bytes(self) -> bytes:
        head = json.dumps(self.header(), sort_keys=True).encode()
        parts = [TABLE_MAGIC, struct.pack("<I", len(head)), head]
        for (o, d) in sorted(self.blocks):
            parts.append(struct.pack("<ii", o, d))
            parts.append(np.ascontiguousarray(self.blocks[(o, d)], dtype="<f8").tobytes())
            parts.append(np.ascontiguousarray(self.visits[(o, d)], dtype="<u4").tobytes())
        for key in sorted(self.demand_table):
            parts.append(struct.pack("<iiid", *key, self.demand_table[key]))
        body = b"".join(parts)
        return body + hashlib.sha256(body).digest()

    @classmethod
    def from_bytes(cls, data: bytes) -> "ValueTables":
        if len(data) < len(TABLE_MAGIC) + 4 + 32 or not data.startswith(TABLE_MAGIC):
            raise TableFormatError("not a value-table file")
        body, digest = data[:-32], data[-32:]
        if hashlib.sha256(body).digest() != digest:
            raise TableFormatError("checksum mismatch; table file is corrupt")
        pos = len(TABLE_MAGIC)
        (hlen,) = struct.unpack_from("<I", body, pos)
        pos += 4
        try:
            head = json.loads(body[pos : pos + hlen])
        except ValueError as exc:
            raise TableFormatError(f"bad header: {exc}") from None
        pos += hlen
        if head.get("format_version") != TABLE_FORMAT_VERSION:
            raise TableFormatError(f"unsupported table format_version {head.get('format_version')!r}")
        agg = Aggregation(**head["aggregation"])
        tables = cls(agg, head["demand_mode"], head["demand_factor"], head["epoch_len"])
        tables.meta = head.get("meta", {})
        size = int(np.prod(agg.shape)) * 8
        for _ in range(head["n_blocks"]):
            o, d = struct.unpack_from("<ii", body, pos)
            pos += 8
            block = np.frombuffer(body, dtype="<f8", count=size // 8, offset=pos).reshape(agg.shape).copy()
            pos += size
            visits = np.frombuffer(body, dtype="<u4", count=size // 8, offset=pos).reshape(agg.shape).astype(np.uint32)
            pos += size // 2
            tables.blocks[(o, d)] = block
            tables.visits[(o, d)] = visits
        for _ in range(head["demand_entries"]):
            o, d, tb, v = struct.unpack_from("<iiid", body, pos)
            pos += struct.calcsize("<iiid")
            tables.demand_table[(o, d, tb)] = v
        if pos != len(body):
            raise TableFormatError("trailing bytes in table file")
        return tables

    def save(self, path: str | Path) -> str:
        data = self.to_bytes()
        Path(path).write_bytes(data)
        return hashlib.sha256(data).hexdigest()

    @classmethod
    def load(cls, path: str | Path) -> "ValueTables":
        return cls.from_bytes(Path(path).read_bytes())


def update_tables(
    tables: ValueTables,
    estimates: Mapping[VehicleAttribute, float],
    alpha: float,
    project: bool = True,
) -> list:
    """Smooth each estimate into the table keyed by its aggregated attribute.

    Estimates are applied one at a time in sorted attribute order, so repeated
    aggregated keys are smoothed sequentially. Returns the touched keys.
    """
    touched = []
    for a in sorted(estimates):
        key = tables.agg.key(a)
        tables.smooth(key, estimates[a], alpha)
        if project:
            tables.project_monotone(key)
        touched.append(key)
    return touched


def update_demand_table(tables: ValueTables, estimates: Mapping[RequestAttribute, float], t: int, alpha: float) -> None:
    for b in sorted(estimates):
        key = tables._demand_key(b, t)
        old = tables.demand_table.get(key, 0.0)
        tables.demand_table[key] = (1.0 - alpha) * old + alpha * estimates[b]


@dataclass
class TrainConfig:
    iterations: int = 200
    a_lr: float = 300.0
    seed: int = 0
    checkpoint_every: int = 100
    checkpoint_dir: str | None = None
    demand_mode: str = "rule"
    project: bool = True

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")


@dataclass
class TrainResult:
    tables: ValueTables
    curve: list[dict] = field(default_factory=list)


def train(instance, ctx, cfg: TrainConfig, paths=None) -> TrainResult:
    """Forward ADP: roll surrogate episodes and smooth LP duals into the table."""
    from .policy import decide_surrogate
    from .simulate import initial_state, demand_by_epoch
    from .domain import apply_decisions

    paths = instance.train_paths if paths is None else paths
    if not paths:
        raise ValueError("training needs at least one sample path")
    agg = Aggregation(ctx.fleet.l_max, ctx.fleet.n_max)
    tables = ValueTables(agg, cfg.demand_mode, epoch_len=ctx.epoch_len)
    tables.meta = {"instance_hash": getattr(instance, "content_hash", lambda: "")(), "iterations": cfg.iterations,
                   "seed": cfg.seed, "fleet": ctx.fleet.name, "pooling": ctx.enum.include_pooling}
    surrogate_ctx = ctx.surrogate()
    root = np.random.SeedSequence(cfg.seed)
    curve = []
    for n, child in enumerate(root.spawn(cfg.iterations), start=1):
        path = paths[(n - 1) % len(paths)]
        rng = np.random.default_rng(child)
        alpha = learning_rate(n, cfg.a_lr)
        demand = demand_by_epoch(path, ctx.horizon)
        state = initial_state(instance, path.path_id, ctx)
        reward = 0.0
        lp_total = 0.0
        for t in range(1, ctx.horizon + 1):
            dec = decide_surrogate(state, t, tables, surrogate_ctx, rng)
            reward += dec.reward
            lp_total += dec.objective
            update_tables(tables, dec.duals_R, alpha, project=cfg.project)
            if tables.demand_mode == "table":
                update_demand_table(tables, dec.duals_D, t, alpha)
            state = apply_decisions(state, dec.x, demand.get(t + 1, {}), ctx.net, ctx.fleet, ctx.epoch_len, dec.post)
        fares = math.fsum(b.f for _, b in path.requests)
        curve.append({"iteration": n, "path_id": path.path_id, "alpha": alpha, "reward": reward,
                      "rfr": reward / fares if fares else 1.0, "lp_objective": lp_total})
        log.info("iteration %d path %s reward %.2f", n, path.path_id, reward)
        if cfg.checkpoint_dir and cfg.checkpoint_every and n % cfg.checkpoint_every == 0:
            Path(cfg.checkpoint_dir).mkdir(parents=True, exist_ok=True)
            tables.save(Path(cfg.checkpoint_dir) / f"tables_{n:06d}.bin")
    return TrainResult(tables, curve)
