"""Benchmark instances: trip cleaning, grid discretization, demand sampling and a synthetic generator.

Trip CSV format (one reader, two adapters). Required columns after applying
the column map: ``pickup_time`` (ISO 8601), ``passengers``, ``fare``,
``distance_m`` and either ``duration_s`` or ``dropoff_time``. Location columns
are ``o_lat, o_lon, d_lat, d_lon`` (coordinate adapter) or ``o_zone, d_zone``
(zone adapter).
"""
from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
from collections import Counter, defaultdict
from dataclasses import asdict, dataclass, field
from datetime import datetime
from pathlib import Path
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from .domain import EPOCH_SECONDS, HORIZON_EPOCHS, FleetParams, RequestAttribute, fleet_params
from .network import Network, build_grid

log = logging.getLogger(__name__)

EARTH_RADIUS_M = 6_371_000.0
INSTANCE_FORMAT_VERSION = 1


class InstanceFormatError(ValueError):
    pass


# ---------------------------------------------------------------------------
# raw trips


@dataclass(frozen=True)
class RawTrip:
    pickup_time: datetime
    origin: tuple  # (lat, lon) or (zone,)
    destination: tuple
    passengers: int
    fare: float
    duration: float  # seconds
    distance: float  # meters


@dataclass(frozen=True)
class CleaningRules:
    base_fare: float = 2.50
    min_distance: float = 16.09
    max_distance: float = 80_000.0
    min_duration: float = 60.0
    fare_quantile: float = 0.95
    fare_cap: float | None = None  # frozen cap; derived from the data when None
    min_speed: float = 0.5  # m/s
    max_speed: float = 35.0  # m/s
    weekdays: tuple[int, ...] = (0, 1, 2, 3, 4)


@dataclass
class CleanResult:
    trips: list[RawTrip]
    fare_cap: float | None
    dropped: Counter = field(default_factory=Counter)


def _rule_failure(tr: RawTrip, rules: CleaningRules) -> str | None:
    if tr.pickup_time.weekday() not in rules.weekdays:
        return "weekend"
    if tuple(tr.origin) == tuple(tr.destination):
        return "same_endpoints"
    if not (rules.min_distance <= tr.distance <= rules.max_distance):
        return "distance"
    if not tr.duration > rules.min_duration:
        return "duration"
    if not tr.passengers > 0:
        return "passengers"
    if not tr.fare >= rules.base_fare:
        return "fare_floor"
    speed = tr.distance / tr.duration
    if speed < rules.min_speed or speed > rules.max_speed:
        return "speed"
    return None


def clean_trips(raw: Iterable[RawTrip], rules: CleaningRules = CleaningRules()) -> CleanResult:
    """Apply the record filters, then drop fares above the upper quantile.

    The quantile is computed on the records that survive the other filters.
    Pass the returned ``fare_cap`` back in ``rules`` to re-clean with the same
    cap, which makes cleaning idempotent.
    """
    dropped: Counter = Counter()
    kept = []
    for tr in raw:
        try:
            why = _rule_failure(tr, rules)
        except (TypeError, ValueError, AttributeError, ZeroDivisionError):
            why = "malformed"
        if why:
            dropped[why] += 1
        else:
            kept.append(tr)
    cap = rules.fare_cap
    if cap is None and kept:
        cap = float(np.percentile([tr.fare for tr in kept], 100 * rules.fare_quantile))
    if cap is not None:
        out = [tr for tr in kept if tr.fare <= cap]
        dropped["fare_cap"] += len(kept) - len(out)
        kept = out
    return CleanResult(kept, cap, dropped)


DEFAULT_COLUMNS = {
    "pickup_time": "pickup_time",
    "dropoff_time": "dropoff_time",
    "duration_s": "duration_s",
    "distance_m": "distance_m",
    "passengers": "passengers",
    "fare": "fare",
    "o_lat": "o_lat",
    "o_lon": "o_lon",
    "d_lat": "d_lat",
    "d_lon": "d_lon",
    "o_zone": "o_zone",
    "d_zone": "d_zone",
}


def _parse_row(row: Mapping[str, str], cols: Mapping[str, str], zones: bool) -> RawTrip:
    get = lambda k: row[cols[k]]  # noqa: E731
    pickup = datetime.fromisoformat(get("pickup_time"))
    if cols.get("duration_s") in row and row[cols["duration_s"]] not in ("", None):
        duration = float(get("duration_s"))
    else:
        duration = (datetime.fromisoformat(get("dropoff_time")) - pickup).total_seconds()
    if zones:
        o, d = (int(get("o_zone")),), (int(get("d_zone")),)
    else:
        o = (float(get("o_lat")), float(get("o_lon")))
        d = (float(get("d_lat")), float(get("d_lon")))
    return RawTrip(pickup, o, d, int(get("passengers")), float(get("fare")), duration, float(get("distance_m")))


def read_trips_csv(path: str | Path, columns: Mapping[str, str] | None = None, zones: bool = False):
    """Read trip records; malformed rows are skipped and counted. Returns (trips, n_skipped)."""
    cols = dict(DEFAULT_COLUMNS)
    cols.update(columns or {})
    trips, skipped = [], 0
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            try:
                trips.append(_parse_row(row, cols, zones))
            except (KeyError, TypeError, ValueError):
                skipped += 1
    if skipped:
        log.warning("skipped %d malformed trip rows in %s", skipped, path)
    return trips, skipped


# ---------------------------------------------------------------------------
# geometry


def haversine(p1: Sequence[float], p2: Sequence[float]) -> float:
    lat1, lon1 = p1
    lat2, lon2 = p2
    if abs(lat1) > 90 or abs(lat2) > 90:
        raise ValueError("latitude outside [-90, 90]")
    phi1, phi2 = math.radians(lat1), math.radians(lat2)
    dphi = phi2 - phi1
    dlmb = math.radians(lon2 - lon1)
    h = math.sin(dphi / 2) ** 2 + math.cos(phi1) * math.cos(phi2) * math.sin(dlmb / 2) ** 2
    return 2 * EARTH_RADIUS_M * math.asin(min(1.0, math.sqrt(h)))


def fit_duration_model(trips: Iterable) -> float:
    """Through-origin least squares slope of duration on distance (seconds per meter).

    Accepts RawTrip records or (distance, duration) pairs.
    """
    pairs = [(tr.distance, tr.duration) if isinstance(tr, RawTrip) else tuple(tr) for tr in trips]
    if not pairs:
        raise ValueError("need at least one trip")
    ss = math.fsum(s * s for s, _ in pairs)
    if ss == 0:
        raise ValueError("all trip distances are zero")
    return math.fsum(s * t for s, t in pairs) / ss


@dataclass(frozen=True)
class GridSpec:
    """Bounding box split into equal rectangles; ``lat0, lon0`` is the south-west corner."""

    lat0: float
    lon0: float
    lat1: float
    lon1: float
    cell_width: float = 215.0  # meters, west-east
    cell_height: float = 280.0  # meters, south-north

    def _offsets(self, lat: float, lon: float) -> tuple[float, float]:
        x = haversine((self.lat0, self.lon0), (self.lat0, lon))
        y = haversine((self.lat0, self.lon0), (lat, self.lon0))
        return x, y

    @property
    def cols(self) -> int:
        return max(1, math.ceil(self._offsets(self.lat0, self.lon1)[0] / self.cell_width))

    @property
    def rows(self) -> int:
        return max(1, math.ceil(self._offsets(self.lat1, self.lon0)[1] / self.cell_height))


def discretize(coord: Sequence[float], grid: GridSpec) -> int:
    lat, lon = coord
    if not (grid.lat0 <= lat <= grid.lat1 and grid.lon0 <= lon <= grid.lon1):
        raise ValueError(f"coordinate {coord} outside the grid bounding box")
    x, y = grid._offsets(lat, lon)
    col = min(int(x // grid.cell_width), grid.cols - 1)
    row = min(int(y // grid.cell_height), grid.rows - 1)
    return row * grid.cols + col


def grid_network(grid: GridSpec, beta: float) -> Network:
    """Bidirectional 4-neighbour network on the grid cells with arc time beta * cell size."""
    rows, cols = grid.rows, grid.cols
    th = max(1, round(beta * grid.cell_width))
    tv = max(1, round(beta * grid.cell_height))
    arcs = []
    for r in range(rows):
        for c in range(cols):
            u = r * cols + c
            if c + 1 < cols:
                arcs += [(u, u + 1, th), (u + 1, u, th)]
            if r + 1 < rows:
                arcs += [(u, u + cols, tv), (u + cols, u, tv)]
    return Network(rows * cols, arcs)


def zone_network(n_zones: int, borders: Iterable[tuple[int, int, float]], bridges: Iterable[tuple[int, int, float]] = ()) -> Network:
    """Coarse zone network: arcs between bordering zones plus a supplied bridge/tunnel list."""
    arcs = []
    for u, v, w in list(borders) + list(bridges):
        arcs += [(u, v, w), (v, u, w)]
    return Network(n_zones, arcs)


# ---------------------------------------------------------------------------
# instances


@dataclass
class SamplePath:
    path_id: str
    requests: list[tuple[int, RequestAttribute]]  # (reveal epoch, request), time ordered

    def __len__(self) -> int:
        return len(self.requests)

    def total_fares(self) -> float:
        return math.fsum(b.f for _, b in self.requests)


@dataclass
class Instance:
    name: str
    network: Network
    fleet_size: int
    fleet: FleetParams
    train_paths: list[SamplePath]
    test_paths: list[SamplePath]
    initial_states: dict[str, list[tuple[int, float]]]  # path id -> (node, range fraction)
    horizon: int = HORIZON_EPOCHS
    epoch_len: int = EPOCH_SECONDS
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        n = self.network.n_nodes
        for p in self.train_paths + self.test_paths:
            last = 0
            for e, b in p.requests:
                if not 1 <= e <= self.horizon:
                    raise InstanceFormatError(f"path {p.path_id}: reveal epoch {e} outside 1..{self.horizon}")
                if e < last:
                    raise InstanceFormatError(f"path {p.path_id}: requests not time ordered")
                last = e
                if b.o == b.d or not (0 <= b.o < n and 0 <= b.d < n):
                    raise InstanceFormatError(f"path {p.path_id}: bad request endpoints {b.o}->{b.d}")
            if p.path_id not in self.initial_states:
                raise InstanceFormatError(f"no initial state for path {p.path_id}")
            if len(self.initial_states[p.path_id]) != self.fleet_size:
                raise InstanceFormatError(f"initial state of {p.path_id} does not match fleet size")

    def path(self, path_id: str) -> SamplePath:
        for p in self.train_paths + self.test_paths:
            if p.path_id == path_id:
                return p
        raise KeyError(f"unknown path id {path_id!r}")

    # -- file format -----------------------------------------------------
    def files(self) -> dict[str, bytes]:
        meta = {
            "format_version": INSTANCE_FORMAT_VERSION,
            "name": self.name,
            "fleet_size": self.fleet_size,
            "fleet": self.fleet.to_dict(),
            "horizon": self.horizon,
            "epoch_len": self.epoch_len,
            "extra": self.extra,
        }
        out = {
            "network.json": _dumps(self.network.to_dict()),
            "meta.json": _dumps(meta),
        }
        for split, paths in (("train", self.train_paths), ("test", self.test_paths)):
            for p in paths:
                lines = [json.dumps({"epoch": e, "b": list(b)}) for e, b in p.requests]
                out[f"paths/{split}_{p.path_id}.jsonl"] = ("\n".join(lines) + "\n" if lines else "").encode()
        lines = [
            json.dumps({"path_id": pid, "vehicles": [list(v) for v in self.initial_states[pid]]})
            for pid in sorted(self.initial_states)
        ]
        out["initial_states.jsonl"] = ("\n".join(lines) + "\n").encode()
        return out

    def content_hash(self) -> str:
        h = hashlib.sha256()
        for name, data in sorted(self.files().items()):
            h.update(name.encode() + b"\0" + hashlib.sha256(data).digest())
        return h.hexdigest()

    def save(self, directory: str | Path) -> str:
        root = Path(directory)
        (root / "paths").mkdir(parents=True, exist_ok=True)
        for old in (root / "paths").glob("*.jsonl"):
            old.unlink()
        for name, data in self.files().items():
            (root / name).write_bytes(data)
        return self.content_hash()

    @classmethod
    def load(cls, directory: str | Path) -> "Instance":
        root = Path(directory)
        if not root.is_dir():
            raise FileNotFoundError(f"instance directory not found: {root}")
        try:
            meta = json.loads((root / "meta.json").read_text())
            if meta.get("format_version") != INSTANCE_FORMAT_VERSION:
                raise InstanceFormatError(f"unsupported instance format_version {meta.get('format_version')!r}")
            net = Network.from_dict(json.loads((root / "network.json").read_text()))
            f = meta["fleet"]
            fleet = FleetParams(f["name"], f["l_max"], f["recharge_rate"], f["n_max"], f["intercept"])
            splits: dict[str, list[SamplePath]] = {"train": [], "test": []}
            for fp in sorted((root / "paths").glob("*.jsonl")):
                split, _, pid = fp.stem.partition("_")
                if split not in splits:
                    raise InstanceFormatError(f"unexpected path file {fp.name}")
                reqs = []
                for line in fp.read_text().splitlines():
                    if line.strip():
                        rec = json.loads(line)
                        o, d, n, t_r, t_p, fare = rec["b"]
                        reqs.append((int(rec["epoch"]), RequestAttribute(int(o), int(d), int(n), int(t_r), int(t_p), float(fare))))
                splits[split].append(SamplePath(pid, reqs))
            init = {}
            for line in (root / "initial_states.jsonl").read_text().splitlines():
                if line.strip():
                    rec = json.loads(line)
                    init[rec["path_id"]] = [(int(v), float(u)) for v, u in rec["vehicles"]]
        except FileNotFoundError as exc:
            raise InstanceFormatError(f"instance is missing a file: {exc.filename}") from None
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, InstanceFormatError):
                raise
            raise InstanceFormatError(f"corrupt instance in {root}: {exc}") from None
        return cls(meta["name"], net, int(meta["fleet_size"]), fleet, splits["train"], splits["test"], init,
                   int(meta["horizon"]), int(meta["epoch_len"]), meta.get("extra", {}))


def _dumps(obj) -> bytes:
    return (json.dumps(obj, sort_keys=True, indent=1) + "\n").encode()


def uniform_initial_states(path_ids: Iterable[str], fleet_size: int, n_nodes: int, rng) -> dict:
    """Uniform start nodes and range fractions; every vehicle starts empty."""
    out = {}
    for pid in path_ids:
        nodes = rng.integers(0, n_nodes, size=fleet_size)
        fracs = rng.random(size=fleet_size)
        out[pid] = [(int(v), float(u)) for v, u in zip(nodes, fracs)]
    return out


def reveal_epoch(second: float, epoch_len: int = EPOCH_SECONDS) -> int:
    return int(second // epoch_len) + 1


def make_request(o, d, n, second, fare, horizon, epoch_len, response=300, window=None) -> RequestAttribute:
    end = horizon * epoch_len
    t_p = end if window is None else min(end, int(second) + window)
    return RequestAttribute(o, d, n, int(second) + response, t_p, float(fare))


def fleet_size_from_counts(taxi_counts: Mapping, fraction: float) -> int:
    """Scaled peak of simultaneously active taxis (counts per 15-minute window)."""
    if not taxi_counts:
        raise ValueError("no taxi counts supplied")
    return max(1, math.ceil(fraction * max(taxi_counts.values())))


def sample_demand_paths(
    trips_by_day: Mapping,
    fraction: float,
    n_paths: int,
    locate: Callable[[RawTrip], tuple[int, int]],
    rng,
    horizon: int = HORIZON_EPOCHS,
    epoch_len: int = EPOCH_SECONDS,
    n_max: int = 4,
    prefix: str = "p",
    window: int | None = None,
) -> list[SamplePath]:
    """Sample ``n_paths`` demand paths, each from one uniformly chosen day."""
    if not 0 < fraction <= 1:
        raise ValueError("fraction must lie in (0, 1]")
    days = sorted(trips_by_day)
    if not any(trips_by_day[d] for d in days):
        raise ValueError("no trips to sample from")
    paths = []
    for i in range(n_paths):
        while True:
            day = days[int(rng.integers(len(days)))]
            pool = trips_by_day[day]
            if pool:
                break
        k = math.ceil(fraction * len(pool))
        idx = sorted(rng.choice(len(pool), size=k, replace=False).tolist())
        reqs = []
        for j in idx:
            tr = pool[j]
            o, d = locate(tr)
            if o == d or tr.passengers > n_max:
                continue
            t = tr.pickup_time
            second = t.hour * 3600 + t.minute * 60 + t.second
            e = reveal_epoch(second, epoch_len)
            if e > horizon:
                continue
            reqs.append((e, make_request(o, d, tr.passengers, second, tr.fare, horizon, epoch_len, window=window)))
        reqs.sort(key=lambda r: (r[0], r[1].t_r, r[1]))
        paths.append(SamplePath(f"{prefix}{i:04d}", reqs))
    return paths


def group_by_day(trips: Iterable[RawTrip]) -> dict:
    out = defaultdict(list)
    for tr in trips:
        out[tr.pickup_time.date().isoformat()].append(tr)
    for v in out.values():
        v.sort(key=lambda tr: tr.pickup_time)
    return dict(out)


# ---------------------------------------------------------------------------
# synthetic instances


@dataclass(frozen=True)
class SyntheticConfig:
    rows: int = 5
    cols: int = 5
    arc_time: int = 240
    fleet_size: int = 20
    requests_per_day: float = 500.0
    origin_weights: dict | None = None  # node -> weight (default 1); None: central hotspot
    destination_weights: dict = field(default_factory=dict)
    peaks: tuple[float, ...] = (8.0, 18.0)  # hour of day
    peak_width: float = 1.0  # hours
    base_share: float = 0.3  # fraction of the daily rate spread uniformly
    base_fare: float = 2.5
    fare_rate: float = 0.01  # per second of direct driving
    pickup_window: int | None = None  # seconds after the request; None: end of day
    passenger_weights: tuple[float, ...] = (0.7, 0.15, 0.1, 0.05)
    n_train: int = 20
    n_test: int = 30
    fleet: str = "DCFC"
    horizon: int = HORIZON_EPOCHS
    epoch_len: int = EPOCH_SECONDS

    def to_dict(self) -> dict:
        d = asdict(self)
        d["origin_weights"] = {str(k): v for k, v in sorted(self.origins().items())}
        d["destination_weights"] = {str(k): v for k, v in sorted(self.destination_weights.items())}
        return d

    def origins(self) -> dict:
        if self.origin_weights is None:
            return central_hotspot(self.rows, self.cols)
        return dict(self.origin_weights)


def central_hotspot(rows: int, cols: int, center: float = 16.0, ring: float = 4.0) -> dict:
    """Origin weights favouring the middle cell and its four neighbours; other cells weigh 1."""
    r, c = rows // 2, cols // 2
    out = {r * cols + c: center}
    for dr, dc in ((-1, 0), (0, -1), (0, 1), (1, 0)):
        if 0 <= r + dr < rows and 0 <= c + dc < cols:
            out[(r + dr) * cols + c + dc] = ring
    return out


_trapezoid = getattr(np, "trapezoid", None) or np.trapz


def rate_profile(cfg: SyntheticConfig, seconds: np.ndarray) -> np.ndarray:
    """Relative request intensity: uniform base plus Gaussian peaks (integrates to 1 over the day)."""
    day = cfg.horizon * cfg.epoch_len
    h = seconds / 3600.0
    bumps = np.zeros_like(h, dtype=float)
    if cfg.peaks:
        for p in cfg.peaks:
            bumps += np.exp(-0.5 * ((h - p) / cfg.peak_width) ** 2)
        grid = np.linspace(0, day, 2001)
        gh = grid / 3600.0
        gb = sum(np.exp(-0.5 * ((gh - p) / cfg.peak_width) ** 2) for p in cfg.peaks)
        bumps = bumps / _trapezoid(gb, grid)
        return cfg.base_share / day + (1 - cfg.base_share) * bumps
    return np.full_like(h, 1.0 / day, dtype=float)


def _weights(n: int, spec: Mapping) -> np.ndarray:
    w = np.ones(n)
    for k, v in spec.items():
        if not 0 <= int(k) < n:
            raise ValueError(f"weight for node {k} outside 0..{n - 1}")
        w[int(k)] = float(v)
    return w / w.sum()


def synthetic_path(cfg: SyntheticConfig, net: Network, rng, path_id: str) -> SamplePath:
    """Poisson-thinned requests over one day."""
    day = cfg.horizon * cfg.epoch_len
    if cfg.requests_per_day <= 0:
        return SamplePath(path_id, [])
    grid = np.linspace(0, day, 2001)
    lam_max = cfg.requests_per_day * float(rate_profile(cfg, grid).max()) * 1.05
    n_cand = rng.poisson(lam_max * day)
    times = np.sort(rng.uniform(0, day, size=n_cand))
    keep = rng.random(n_cand) * lam_max < cfg.requests_per_day * rate_profile(cfg, times)
    times = times[keep]
    n = net.n_nodes
    wo = _weights(n, cfg.origins())
    wd = _weights(n, cfg.destination_weights)
    pw = np.asarray(cfg.passenger_weights, dtype=float)
    pw = pw / pw.sum()
    reqs = []
    for s in times:
        o = int(rng.choice(n, p=wo))
        d = o
        while d == o:
            d = int(rng.choice(n, p=wd))
        pax = int(rng.choice(len(pw), p=pw)) + 1
        sec = int(s)
        fare = round(cfg.base_fare + cfg.fare_rate * net.tau[o][d], 2)
        reqs.append((reveal_epoch(sec, cfg.epoch_len),
                     make_request(o, d, pax, sec, fare, cfg.horizon, cfg.epoch_len, window=cfg.pickup_window)))
    return SamplePath(path_id, reqs)


def generate_synthetic(cfg: SyntheticConfig = SyntheticConfig(), seed: int = 0, name: str = "synthetic") -> Instance:
    root = np.random.SeedSequence(seed)
    s_paths, s_init = root.spawn(2)
    rng = np.random.default_rng(s_paths)
    net = build_grid(cfg.rows, cfg.cols, cfg.arc_time)
    train = [synthetic_path(cfg, net, rng, f"{i:04d}") for i in range(cfg.n_train)]
    test = [synthetic_path(cfg, net, rng, f"{i:04d}") for i in range(cfg.n_train, cfg.n_train + cfg.n_test)]
    init = uniform_initial_states([p.path_id for p in train + test], cfg.fleet_size, net.n_nodes,
                                  np.random.default_rng(s_init))
    fleet = fleet_params(cfg.fleet)
    return Instance(name, net, cfg.fleet_size, fleet, train, test, init, cfg.horizon, cfg.epoch_len,
                    {"generator": cfg.to_dict(), "seed": seed})
