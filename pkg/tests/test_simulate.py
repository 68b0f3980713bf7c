import json
import math
import statistics

import numpy as np
import pytest

from fleetmdp.domain import DCFC, Kind, RequestAttribute
from fleetmdp.ingest import Instance, SamplePath, SyntheticConfig, generate_synthetic
from fleetmdp.learn import Aggregation, ValueTables
from fleetmdp.network import build_grid
from fleetmdp.policy import Context, PolicyConfig
from fleetmdp.simulate import (
    EvalStats, evaluate, run_episode, sign_test, write_episode_csv, write_telemetry,
)


def tiny(requests, horizon=30, fleet=1):
    net = build_grid(3, 3, 60)
    path = SamplePath("p", requests)
    inst = Instance("tiny", net, fleet, DCFC, [], [path], {"p": [(0, 1.0)] * fleet}, horizon=horizon)
    return inst, Context(net, DCFC, horizon=horizon)


def test_empty_path_has_rfr_one():
    inst, ctx = tiny([])
    res = run_episode(inst, ctx, PolicyConfig("pm"), "p")
    assert (res.reward, res.fares, res.rfr, res.served, res.lost) == (0.0, 0.0, 1.0, 0, 0)
    assert len(res.telemetry) == 30


def test_single_request_is_served():
    b = RequestAttribute(2, 8, 1, 600, 2000, 7.5)
    inst, ctx = tiny([(3, b)])
    res = run_episode(inst, ctx, PolicyConfig("myopic"), "p", keep_log=True)
    assert res.reward == 7.5 and res.rfr == 1.0 and res.served == 1 and res.lost == 0
    served = [(t, d) for t, a, d, k, c in res.decision_log if d.kind == Kind.SINGLE]
    assert served == [(3, next(d for t, a, d, k, c in res.decision_log if d.kind == Kind.SINGLE))]


@pytest.fixture(scope="module")
def small():
    inst = generate_synthetic(SyntheticConfig(rows=3, cols=3, fleet_size=3, requests_per_day=150, n_train=1,
                                              n_test=3, arc_time=120), seed=5)
    return inst, Context(inst.network, DCFC)


def test_full_day_episode_accounting(small):
    inst, ctx = small
    pid = inst.test_paths[0].path_id
    res = run_episode(inst, ctx, PolicyConfig("pm"), pid, keep_log=True)
    assert len(res.telemetry) == 720
    assert [row["t"] for row in res.telemetry] == list(range(1, 721))
    assert res.reward == math.fsum(k * c for _, _, _, k, c in res.decision_log)
    for t in range(1, 721):
        assert sum(k for tt, _, _, k, _ in res.decision_log if tt == t) == inst.fleet_size
    assert res.served + res.lost == res.n_requests
    assert res.rfr == pytest.approx(res.reward / res.fares)
    assert sum(res.family_counts.values()) == 720 * inst.fleet_size


def test_telemetry_and_csv(small, tmp_path):
    inst, ctx = small
    ev = evaluate(inst, ctx, PolicyConfig("pm"), csv_path=tmp_path / "ep.csv")
    write_telemetry(ev.episodes[0], tmp_path / "tel.jsonl")
    rows = [json.loads(line) for line in (tmp_path / "tel.jsonl").read_text().splitlines()]
    assert len(rows) == 720 and {"t", "mean_range", "onboard", "pending", "idle"} <= set(rows[0])
    lines = (tmp_path / "ep.csv").read_text().splitlines()
    assert lines[0].startswith("path_id,") and len(lines) == 4


def test_parallel_evaluation_matches_serial(small):
    inst, ctx = small
    a = evaluate(inst, ctx, PolicyConfig("pm"))
    b = evaluate(inst, ctx, PolicyConfig("pm"), jobs=2)
    assert a.rewards() == b.rewards() and a.rfr == b.rfr


def test_vfa_episode_with_empty_tables_runs(small):
    inst, ctx = small
    tables = ValueTables(Aggregation(DCFC.l_max), "zero")
    vfa = run_episode(inst, ctx, PolicyConfig("vfa", tables=tables), inst.test_paths[0].path_id)
    myopic = run_episode(inst, ctx, PolicyConfig("myopic"), inst.test_paths[0].path_id)
    assert vfa.reward == myopic.reward


def test_stats_hand_values():
    s = EvalStats.from_values([1, 2, 3, 4])
    assert (s.n, s.mean, s.median, s.iqr) == (4, 2.5, 2.5, 1.5)
    assert s.std == pytest.approx(statistics.stdev([1, 2, 3, 4]))
    assert s.me == pytest.approx(1.96 * statistics.stdev([1, 2, 3, 4]) / 2, rel=1e-12)
    same = EvalStats.from_values([0.7] * 5)
    assert same.iqr == 0 and same.me == 0
    assert EvalStats.from_values([3.0]).me == 0.0
    with pytest.raises(ValueError):
        EvalStats.from_values([])


def test_sign_test():
    assert sign_test([2] * 10, [1] * 10) == pytest.approx(0.5 ** 10)
    assert sign_test([1, 1], [1, 1]) == 1.0
    assert sign_test([1, 2, 3], [0, 2, 4]) == pytest.approx(0.75)
    with pytest.raises(ValueError):
        sign_test([1], [1, 2])
