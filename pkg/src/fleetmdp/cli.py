"""``fleetmdp`` command line.

Exit codes: 0 success, 2 usage or input error, 3 corrupt data file,
4 internal invariant violation.

Every command accepts ``--config FILE`` (TOML). Top-level keys apply to all
commands, a ``[train]``/``[eval]``/... table applies to one command, and
explicit flags win over both. Keys use the long flag names with underscores.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import math
import sys
from collections import Counter
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from . import __version__
from .assign import build_problem
from .domain import ContractViolation, CostParams, fleet_params
from .enumeration import EnumerationConfig, enumerate_decisions
from .ingest import (
    CleaningRules,
    GridSpec,
    Instance,
    InstanceFormatError,
    SyntheticConfig,
    clean_trips,
    discretize,
    fit_duration_model,
    fleet_size_from_counts,
    generate_synthetic,
    grid_network,
    group_by_day,
    read_trips_csv,
    sample_demand_paths,
    uniform_initial_states,
)
from .learn import TableFormatError, TrainConfig, ValueTables, train
from .netsimplex import SimplexError
from .policy import Context, PolicyConfig
from .simulate import EpisodeAborted, evaluate, initial_state, write_episode_csv, write_telemetry

log = logging.getLogger("fleetmdp")

EXIT_OK, EXIT_INPUT, EXIT_CORRUPT, EXIT_INTERNAL = 0, 2, 3, 4


class InputError(Exception):
    pass


def _sha256_file(path: Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _canonical(obj) -> str:
    return json.dumps(obj, sort_keys=True, default=str)


def write_manifest(out: Path, command: str, config: dict, outputs: list[Path], instance: Instance | None = None) -> Path:
    manifest = {
        "command": command,
        "version": __version__,
        "config": config,
        "config_hash": hashlib.sha256(_canonical(config).encode()).hexdigest(),
        "seed": config.get("seed"),
        "instance_hash": instance.content_hash() if instance is not None else None,
        "outputs": {p.name: _sha256_file(p) for p in outputs},
    }
    path = out / f"manifest_{command}.json"
    path.write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")
    return path


def _load_instance(path) -> Instance:
    if path is None:
        raise InputError("--instance is required")
    p = Path(path)
    if not p.exists():
        raise InputError(f"instance not found: {p}")
    return Instance.load(p)


def _setting_tag(fleet: str, pooling: bool) -> str:
    return f"{fleet.upper()}_{'pool' if pooling else 'nopool'}"


def _context(instance: Instance, fleet: str | None, pooling: bool, max_wait, kappa: float, max_trip: int) -> Context:
    fp = fleet_params(fleet) if fleet else instance.fleet
    enum = EnumerationConfig(max_trip_size=max_trip, max_wait=max_wait, include_pooling=pooling)
    return Context(instance.network, fp, CostParams(kappa=kappa), enum, instance.epoch_len, instance.horizon)


def _split(value) -> list[str]:
    if isinstance(value, (list, tuple)):
        return [str(v) for v in value]
    return [v for v in str(value).split(",") if v]


def _poolings(value) -> list[bool]:
    v = str(value).lower()
    if v in ("both", "all"):
        return [True, False]
    if v in ("1", "true", "yes", "on", "pool"):
        return [True]
    if v in ("0", "false", "no", "off", "nopool"):
        return [False]
    raise InputError(f"bad pooling value {value!r}; use true, false or both")


# ---------------------------------------------------------------------------
# commands


def cmd_generate(cfg: dict) -> int:
    out = Path(cfg["out"])
    ow = cfg.get("origin_weights")
    origin = None if ow is None else {int(k): float(v) for k, v in ow.items()}
    dest = {int(k): float(v) for k, v in (cfg.get("destination_weights") or {}).items()}
    syn = SyntheticConfig(
        rows=cfg["rows"], cols=cfg["cols"], arc_time=cfg["arc_time"], fleet_size=cfg["fleet_size"],
        requests_per_day=cfg["requests"], origin_weights=origin, destination_weights=dest,
        peak_width=cfg["peak_width"], pickup_window=cfg.get("pickup_window"),
        n_train=cfg["n_train"], n_test=cfg["n_test"], fleet=cfg["fleet"] or "DCFC",
    )
    inst = generate_synthetic(syn, seed=cfg["seed"], name=cfg.get("name") or "synthetic")
    digest = inst.save(out)
    write_manifest(out, "generate", cfg, [out / "meta.json", out / "network.json"], inst)
    print(f"instance {inst.name}: {inst.network.n_nodes} nodes, {len(inst.train_paths)} train / "
          f"{len(inst.test_paths)} test paths, hash {digest[:12]}")
    return EXIT_OK


def cmd_ingest(cfg: dict) -> int:
    trips_path = Path(cfg["trips"])
    if not trips_path.exists():
        raise InputError(f"trip file not found: {trips_path}")
    out = Path(cfg["out"])
    zones = bool(cfg.get("zones"))
    if zones:
        raise InputError("zone-based trips need a zone adjacency; use the library API (zone_network)")
    raw, skipped = read_trips_csv(trips_path, cfg.get("columns"), zones=False)
    cleaned = clean_trips(raw, CleaningRules(base_fare=cfg["base_fare"]))
    if not cleaned.trips:
        raise InputError("no trips left after cleaning")
    lats = [c for tr in cleaned.trips for c in (tr.origin[0], tr.destination[0])]
    lons = [c for tr in cleaned.trips for c in (tr.origin[1], tr.destination[1])]
    grid = GridSpec(min(lats), min(lons), max(lats), max(lons), cfg["cell_width"], cfg["cell_height"])
    beta = fit_duration_model(cleaned.trips)
    net = grid_network(grid, beta)
    rng = np.random.default_rng(cfg["seed"])

    def locate(tr):
        return discretize(tr.origin, grid), discretize(tr.destination, grid)

    by_day = group_by_day(cleaned.trips)
    fleet = fleet_params(cfg["fleet"] or "DCFC")
    train_paths = sample_demand_paths(by_day, cfg["fraction"], cfg["n_train"], locate, rng, prefix="tr", n_max=fleet.n_max)
    test_paths = sample_demand_paths(by_day, cfg["fraction"], cfg["n_test"], locate, rng, prefix="te", n_max=fleet.n_max)
    if cfg.get("taxi_counts"):
        with open(cfg["taxi_counts"], newline="") as fh:
            counts = {row["window"]: int(row["taxis"]) for row in csv.DictReader(fh)}
        fleet_size = fleet_size_from_counts(counts, cfg["fraction"])
    elif cfg.get("fleet_size"):
        fleet_size = int(cfg["fleet_size"])
    else:
        raise InputError("need --taxi-counts or --fleet-size")
    init = uniform_initial_states([p.path_id for p in train_paths + test_paths], fleet_size, net.n_nodes, rng)
    inst = Instance(cfg.get("name") or trips_path.stem, net, fleet_size, fleet, train_paths, test_paths, init,
                    extra={"beta": beta, "grid": grid.__dict__, "dropped": dict(cleaned.dropped),
                           "fare_cap": cleaned.fare_cap, "skipped_rows": skipped})
    inst.save(out)
    write_manifest(out, "ingest", cfg, [out / "meta.json", out / "network.json"], inst)
    print(f"kept {len(cleaned.trips)} of {len(raw) + skipped} trips; grid {grid.rows}x{grid.cols}; "
          f"beta {beta:.4f} s/m; fleet {fleet_size}")
    return EXIT_OK


def cmd_train(cfg: dict) -> int:
    inst = _load_instance(cfg.get("instance"))
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for fleet in _split(cfg["fleet"] or inst.fleet.name):
        for pooling in _poolings(cfg["pooling"]):
            ctx = _context(inst, fleet, pooling, cfg.get("max_wait"), cfg["kappa"], cfg["max_trip"])
            tag = _setting_tag(fleet, pooling)
            tcfg = TrainConfig(iterations=cfg["iterations"], seed=cfg["seed"], demand_mode=cfg["demand_mode"],
                               checkpoint_every=cfg["checkpoint_every"],
                               checkpoint_dir=str(out / f"checkpoints_{tag}") if cfg["checkpoint_every"] else None)
            res = train(inst, ctx, tcfg)
            tpath = out / f"tables_{tag}.bin"
            digest = res.tables.save(tpath)
            cpath = out / f"curve_{tag}.csv"
            with open(cpath, "w", newline="") as fh:
                w = csv.DictWriter(fh, fieldnames=list(res.curve[0]))
                w.writeheader()
                w.writerows(res.curve)
            written += [tpath, cpath]
            print(f"{tag}: {cfg['iterations']} iterations, final RFR {res.curve[-1]['rfr']:.4f}, tables {digest[:12]}")
    mpath = write_manifest(out, "train", cfg, written, inst)
    print(f"manifest {mpath}")
    return EXIT_OK


def _tables_for(spec, tag: str) -> ValueTables:
    if spec is None:
        raise InputError("VFA evaluation needs --tables")
    p = Path(spec)
    if p.is_dir():
        p = p / f"tables_{tag}.bin"
    if not p.exists():
        raise InputError(f"tables not found: {p}")
    return ValueTables.load(p)


SUMMARY_FIELDS = ["instance", "policy", "pooling", "fleet", "n",
                  "reward_mean", "reward_median", "reward_iqr", "reward_me",
                  "rfr_mean", "rfr_median", "rfr_iqr", "rfr_me", "path_ids"]


def cmd_eval(cfg: dict) -> int:
    inst = _load_instance(cfg.get("instance"))
    out = Path(cfg["out"])
    out.parent.mkdir(parents=True, exist_ok=True)
    rows = []
    written = [out]
    policies = _split(cfg["policy"])
    for fleet in _split(cfg["fleet"] or inst.fleet.name):
        for pooling in _poolings(cfg["pooling"]):
            ctx = _context(inst, fleet, pooling, cfg.get("max_wait"), cfg["kappa"], cfg["max_trip"])
            tag = _setting_tag(fleet, pooling)
            for kind in policies:
                tables = _tables_for(cfg.get("tables"), tag) if kind == "vfa" else None
                pol = PolicyConfig(kind, theta=cfg["theta"], tables=tables, seed=cfg["seed"])
                try:
                    ev = evaluate(inst, ctx, pol, jobs=cfg["jobs"], seed=cfg["seed"])
                except EpisodeAborted as exc:
                    if cfg.get("dump_state"):
                        Path(cfg["dump_state"]).write_text(exc.state_json + "\n")
                    raise
                ep_csv = out.with_name(f"{out.stem}_{kind}_{tag}_episodes.csv")
                write_episode_csv(ev.episodes, ep_csv)
                written.append(ep_csv)
                if cfg.get("emit_telemetry"):
                    tdir = Path(cfg["emit_telemetry"])
                    tdir.mkdir(parents=True, exist_ok=True)
                    for ep in ev.episodes:
                        tp = tdir / f"{kind}_{tag}_{ep.path_id}.jsonl"
                        write_telemetry(ep, tp)
                rows.append({
                    "instance": inst.name, "policy": kind, "pooling": pooling, "fleet": fleet.upper(),
                    "n": ev.reward.n,
                    "reward_mean": ev.reward.mean, "reward_median": ev.reward.median,
                    "reward_iqr": ev.reward.iqr, "reward_me": ev.reward.me,
                    "rfr_mean": ev.rfr.mean, "rfr_median": ev.rfr.median,
                    "rfr_iqr": ev.rfr.iqr, "rfr_me": ev.rfr.me,
                    "path_ids": " ".join(e.path_id for e in ev.episodes),
                })
    with open(out, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=SUMMARY_FIELDS)
        w.writeheader()
        w.writerows(rows)
    print(f"{'policy':8} {'fleet':5} {'pool':5} {'reward':>10} {'±ME':>8} {'RFR':>7} {'median':>7} {'IQR':>7}")
    for r in rows:
        print(f"{r['policy']:8} {r['fleet']:5} {str(r['pooling']):5} {r['reward_mean']:10.2f} {r['reward_me']:8.2f} "
              f"{r['rfr_mean']:7.4f} {r['rfr_median']:7.4f} {r['rfr_iqr']:7.4f}")
    write_manifest(out.parent, "eval", cfg, written, inst)
    return EXIT_OK


def _inspect_instance(p: Path, cfg: dict) -> None:
    inst = Instance.load(p)
    net = inst.network
    print(f"instance: {inst.name}")
    print(f"nodes: {net.n_nodes}")
    print(f"arcs: {len(net.arcs)}")
    print(f"fleet: {inst.fleet_size} x {inst.fleet.name}")
    print(f"horizon: {inst.horizon} epochs of {inst.epoch_len} s")
    print(f"paths: {len(inst.train_paths)} train, {len(inst.test_paths)} test")
    hours = Counter()
    n_req = 0
    for path in inst.train_paths + inst.test_paths:
        for e, _ in path.requests:
            hours[(e - 1) * inst.epoch_len // 3600] += 1
            n_req += 1
    n_paths = max(1, len(inst.train_paths) + len(inst.test_paths))
    print(f"requests per path: {n_req / n_paths:.1f}")
    print("requests by hour (mean per path):")
    top = max(hours.values(), default=0)
    for h in range(inst.horizon * inst.epoch_len // 3600):
        v = hours.get(h, 0) / n_paths
        bar = "#" * (round(40 * hours.get(h, 0) / top) if top else 0)
        print(f"  {h:02d} {v:7.1f} {bar}")
    if cfg.get("dump_lp"):
        path = (inst.test_paths or inst.train_paths)[0]
        ctx = _context(inst, None, True, cfg.get("max_wait"), 0.0, 2)
        state = initial_state(inst, path.path_id, ctx)
        sets = enumerate_decisions(state, 1, ctx.net, ctx.fleet, ctx.enum, ctx.epoch_len)
        from .domain import contribution

        prob = build_problem(state, sets, lambda a, d: contribution(a, d, ctx.cost, ctx.net, ctx.fleet))
        Path(cfg["dump_lp"]).write_text(prob.to_lp_text())
        print(f"wrote epoch-1 myopic LP of path {path.path_id} to {cfg['dump_lp']}")


def _inspect_tables(p: Path) -> None:
    t = ValueTables.load(p)
    print(f"tables: {p}")
    print(f"aggregation: {json.dumps(t.header()['aggregation'], sort_keys=True)}")
    print(f"demand mode: {t.demand_mode}")
    print(f"blocks: {len(t.blocks)} ({t.n_entries()} entries)")
    vals = np.concatenate([b.ravel() for b in t.blocks.values()]) if t.blocks else np.zeros(1)
    visited = sum(int(np.count_nonzero(v)) for v in t.visits.values())
    print(f"visited entries: {visited}")
    print(f"values: min {vals.min():.4f} max {vals.max():.4f} mean {vals.mean():.4f}")
    hist, edges = np.histogram(vals, bins=8)
    for c, lo, hi in zip(hist, edges[:-1], edges[1:]):
        print(f"  [{lo:9.3f}, {hi:9.3f}) {c}")
    print(f"meta: {json.dumps(t.meta, sort_keys=True)}")
    print(f"monotone: {'true' if t.is_monotone() else 'false'}")


def cmd_inspect(cfg: dict) -> int:
    target = cfg.get("path") or cfg.get("instance") or cfg.get("tables")
    if not target:
        raise InputError("inspect needs a path to an instance directory or a table file")
    p = Path(target)
    if not p.exists():
        raise InputError(f"not found: {p}")
    if p.is_dir():
        _inspect_instance(p, cfg)
    else:
        _inspect_tables(p)
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument handling

DEFAULTS = {
    "seed": 0,
    "fleet": None,
    "pooling": "true",
    "max_wait": None,
    "kappa": 0.0,
    "max_trip": 2,
    "iterations": 200,
    "checkpoint_every": 100,
    "demand_mode": "rule",
    "policy": "pm",
    "theta": 0.1,
    "jobs": 1,
    "fraction": 0.01,
    "n_train": 20,
    "n_test": 30,
    "base_fare": 2.5,
    "cell_width": 215.0,
    "cell_height": 280.0,
    "rows": 5,
    "cols": 5,
    "arc_time": 240,
    "fleet_size": 20,
    "requests": 500.0,
    "peak_width": 1.0,
    "origin_weights": None,
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="fleetmdp", description="Ride-pooling fleet MDP: instances, training and evaluation.")
    ap.add_argument("--version", action="version", version=f"fleetmdp {__version__}")
    ap.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, instance=True):
        p.add_argument("--config", help="TOML run configuration")
        p.add_argument("--seed", type=int, help="root seed (default 0)")
        if instance:
            p.add_argument("--instance", help="instance directory")

    def setting(p):
        p.add_argument("--fleet", help="ICE, DCFC, L2C or a comma list (default: instance fleet)")
        p.add_argument("--pooling", help="true, false or both (default true)")
        p.add_argument("--max-wait", type=int, dest="max_wait", help="pickup cap in seconds after dispatch (default: none)")
        p.add_argument("--kappa", type=float, help="detour penalty per second (default 0)")
        p.add_argument("--max-trip", type=int, dest="max_trip", help="largest multi-request trip (default 2)")

    p = sub.add_parser("generate", help="write a synthetic grid instance")
    common(p, instance=False)
    p.add_argument("--out", required=True)
    p.add_argument("--name")
    p.add_argument("--rows", type=int)
    p.add_argument("--cols", type=int)
    p.add_argument("--arc-time", type=int, dest="arc_time")
    p.add_argument("--fleet-size", type=int, dest="fleet_size")
    p.add_argument("--requests", type=float, help="expected requests per day")
    p.add_argument("--peak-width", type=float, dest="peak_width")
    p.add_argument("--pickup-window", type=int, dest="pickup_window")
    p.add_argument("--n-train", type=int, dest="n_train")
    p.add_argument("--n-test", type=int, dest="n_test")
    p.add_argument("--fleet")

    p = sub.add_parser("ingest", help="build an instance from a trip CSV")
    common(p, instance=False)
    p.add_argument("--trips", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--name")
    p.add_argument("--fraction", type=float)
    p.add_argument("--fleet")
    p.add_argument("--fleet-size", type=int, dest="fleet_size")
    p.add_argument("--taxi-counts", dest="taxi_counts", help="CSV with columns window,taxis")
    p.add_argument("--zones", action="store_true", default=None)
    p.add_argument("--base-fare", type=float, dest="base_fare")
    p.add_argument("--cell-width", type=float, dest="cell_width")
    p.add_argument("--cell-height", type=float, dest="cell_height")
    p.add_argument("--n-train", type=int, dest="n_train")
    p.add_argument("--n-test", type=int, dest="n_test")

    p = sub.add_parser("train", help="forward ADP training of the value tables")
    common(p)
    setting(p)
    p.add_argument("--out", required=True)
    p.add_argument("--iterations", "-N", type=int)
    p.add_argument("--checkpoint-every", type=int, dest="checkpoint_every")
    p.add_argument("--demand-mode", choices=["rule", "zero", "table"], dest="demand_mode")

    p = sub.add_parser("eval", help="evaluate policies on the test paths")
    common(p)
    setting(p)
    p.add_argument("--policy", help="myopic, pm, vfa or a comma list (default pm)")
    p.add_argument("--theta", type=float, help="PM recharge threshold (default 0.1)")
    p.add_argument("--tables", help="table file, or a train output directory")
    p.add_argument("--out", required=True, help="summary CSV")
    p.add_argument("--jobs", type=int)
    p.add_argument("--emit-telemetry", dest="emit_telemetry", help="directory for per-episode JSONL telemetry")
    p.add_argument("--dump-state", dest="dump_state", help="write the state here if a policy breaks a contract")

    p = sub.add_parser("inspect", help="summarize an instance directory or a table file")
    common(p, instance=False)
    p.add_argument("path")
    p.add_argument("--dump-lp", dest="dump_lp", help="also write the epoch-1 assignment LP of the first test path")
    p.add_argument("--max-wait", type=int, dest="max_wait")
    return ap


def resolve_config(args: argparse.Namespace) -> dict:
    cfg = dict(DEFAULTS)
    if getattr(args, "config", None):
        cpath = Path(args.config)
        if not cpath.exists():
            raise InputError(f"config file not found: {cpath}")
        try:
            data = tomllib.loads(cpath.read_text())
        except tomllib.TOMLDecodeError as exc:
            raise InputError(f"bad config file {cpath}: {exc}") from None
        for k, v in data.items():
            if not isinstance(v, dict) or k in ("origin_weights", "destination_weights", "columns"):
                cfg[k] = v
        cfg.update(data.get(args.command, {}))
    for k, v in vars(args).items():
        if v is not None and k not in ("config", "verbose"):
            cfg[k] = v
    if cfg.get("iterations") is not None and cfg["iterations"] < 1:
        raise InputError("iterations must be >= 1")
    if cfg.get("fleet"):
        for f in _split(cfg["fleet"]):
            fleet_params(f)
    return cfg


COMMANDS = {
    "generate": cmd_generate,
    "ingest": cmd_ingest,
    "train": cmd_train,
    "eval": cmd_eval,
    "inspect": cmd_inspect,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
        return COMMANDS[args.command](cfg)
    except (TableFormatError, InstanceFormatError) as exc:
        print(f"fleetmdp: corrupt data: {exc}", file=sys.stderr)
        return EXIT_CORRUPT
    except (ContractViolation, EpisodeAborted, SimplexError) as exc:
        print(f"fleetmdp: internal invariant violated: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    except (InputError, FileNotFoundError, ValueError, KeyError) as exc:
        print(f"fleetmdp: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
