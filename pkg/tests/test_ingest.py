import math
from datetime import datetime, timedelta

import numpy as np
import pytest

from fleetmdp.ingest import (
    CleaningRules, GridSpec, Instance, InstanceFormatError, RawTrip, SyntheticConfig, clean_trips, discretize,
    fit_duration_model, fleet_size_from_counts, generate_synthetic, grid_network, group_by_day, haversine,
    make_request, read_trips_csv, reveal_epoch, sample_demand_paths,
)

R = 6_371_000.0
MONDAY = datetime(2024, 3, 4, 8, 30)


def trip(**kw):
    base = dict(pickup_time=MONDAY, origin=(40.75, -73.99), destination=(40.76, -73.98), passengers=1,
                fare=10.0, duration=600.0, distance=2000.0)
    base.update(kw)
    return RawTrip(**base)


def test_haversine_reference_distances():
    assert haversine((0, 0), (0, 1)) == pytest.approx(111195, abs=1)
    assert haversine((0, 0), (0, 180)) == pytest.approx(math.pi * R, rel=1e-12)
    assert haversine((10, 20), (10, 20)) == 0.0
    with pytest.raises(ValueError):
        haversine((91, 0), (0, 0))


def test_duration_slope():
    assert fit_duration_model([(1000, 216), (2000, 432)]) == pytest.approx(0.216)
    assert fit_duration_model([(100, 10), (100, 30)]) == pytest.approx(0.2)
    assert fit_duration_model([trip(distance=1000.0, duration=216.0)]) == pytest.approx(0.216)
    with pytest.raises(ValueError):
        fit_duration_model([])


def test_discretize_cells():
    g = GridSpec(40.70, -74.02, 40.72, -74.00, cell_width=215, cell_height=280)
    assert g.cols == math.ceil(haversine((40.70, -74.02), (40.70, -74.00)) / 215)
    assert g.rows == math.ceil(haversine((40.70, -74.02), (40.72, -74.02)) / 280)
    assert discretize((40.70, -74.02), g) == 0
    assert discretize((40.72, -74.00), g) == g.rows * g.cols - 1
    lon_one_cell = -74.02 + 1.5 * 215 / haversine((40.70, -74.02), (40.70, -74.01)) * 0.01
    assert discretize((40.70, lon_one_cell), g) == 1
    with pytest.raises(ValueError):
        discretize((40.69, -74.01), g)
    net = grid_network(g, 0.216)
    assert net.n_nodes == g.rows * g.cols
    assert net.tau[0][1] == round(0.216 * 215)


def test_cleaning_rules():
    trips = [
        trip(),
        trip(pickup_time=MONDAY + timedelta(days=5)),  # Saturday
        trip(destination=(40.75, -73.99)),
        trip(distance=10.0),
        trip(duration=30.0),
        trip(passengers=0),
        trip(fare=2.0),
        trip(distance=50000.0, duration=100.0),  # 500 m/s
    ]
    res = clean_trips(trips, CleaningRules(fare_quantile=1.0))
    assert res.trips == [trips[0]]
    assert res.dropped == {"weekend": 1, "same_endpoints": 1, "distance": 1, "duration": 1, "passengers": 1,
                           "fare_floor": 1, "speed": 1, "fare_cap": 0}


def test_fare_quantile_and_idempotence():
    trips = [trip(fare=float(f)) for f in range(3, 103)]
    first = clean_trips(trips)
    assert first.fare_cap == pytest.approx(np.percentile(range(3, 103), 95))
    assert max(t.fare for t in first.trips) <= first.fare_cap
    frozen = CleaningRules(fare_cap=first.fare_cap)
    again = clean_trips(first.trips, frozen)
    assert again.trips == first.trips and again.fare_cap == first.fare_cap


def test_reveal_epoch_and_request():
    assert reveal_epoch(3661) == 31
    assert reveal_epoch(0) == 1 and reveal_epoch(119.9) == 1 and reveal_epoch(120) == 2
    b = make_request(1, 2, 3, 3661, 9.5, 720, 120)
    assert (b.t_r, b.t_p) == (3961, 86400)
    assert make_request(1, 2, 1, 3661, 9.5, 720, 120, window=600).t_p == 4261


def test_fleet_size_from_counts():
    assert fleet_size_from_counts({"08:00": 1000, "08:15": 1234}, 0.01) == 13


def test_sampling_from_days():
    days = group_by_day([trip(pickup_time=MONDAY + timedelta(minutes=k)) for k in range(40)])
    locate = lambda tr: (0, 1)  # noqa: E731
    paths = sample_demand_paths(days, 0.5, 3, locate, np.random.default_rng(0))
    assert [len(p) for p in paths] == [20, 20, 20]
    assert all(e == reveal_epoch(b.t_r - 300) and b.o == 0 for p in paths for e, b in p.requests)
    with pytest.raises(ValueError):
        sample_demand_paths(days, 0.0, 1, locate, np.random.default_rng(0))


def test_full_fraction_keeps_every_trip_in_order():
    day = {"d": [trip(pickup_time=MONDAY + timedelta(minutes=3 * k)) for k in range(10)]}
    (path,) = sample_demand_paths(day, 1.0, 1, lambda tr: (0, 1), np.random.default_rng(0))
    assert len(path) == 10
    assert [b.t_r for _, b in path.requests] == [30600 + 180 * k + 300 for k in range(10)]
    assert all(b.t_p == 86400 for _, b in path.requests)


def test_zero_rate_gives_empty_paths():
    inst = generate_synthetic(SyntheticConfig(rows=3, cols=3, requests_per_day=0, n_train=2, n_test=2, fleet_size=3))
    assert all(len(p) == 0 for p in inst.train_paths + inst.test_paths)


def test_synthetic_generation_is_deterministic():
    cfg = SyntheticConfig(rows=3, cols=3, n_train=2, n_test=2, fleet_size=4, requests_per_day=200)
    a, b = generate_synthetic(cfg, seed=3), generate_synthetic(cfg, seed=3)
    assert a.content_hash() == b.content_hash()
    assert generate_synthetic(cfg, seed=4).content_hash() != a.content_hash()


def test_origin_hotspot_ratio():
    cfg = SyntheticConfig(rows=1, cols=2, origin_weights={0: 10}, requests_per_day=4000, n_train=1, n_test=0,
                          fleet_size=1)
    inst = generate_synthetic(cfg, seed=1)
    o = [b.o for _, b in inst.train_paths[0].requests]
    ratio = o.count(0) / o.count(1)
    assert 8.5 < ratio < 11.5
    with pytest.raises(ValueError):
        generate_synthetic(SyntheticConfig(rows=1, cols=2, origin_weights={5: 1.0}, n_train=1, n_test=0))


def test_default_demand_shape():
    inst = generate_synthetic(SyntheticConfig(n_train=3, n_test=0), seed=2)
    sizes = [len(p) for p in inst.train_paths]
    assert all(400 < s < 600 for s in sizes)
    reqs = [b for p in inst.train_paths for _, b in p.requests]
    assert sum(b.o == 12 for b in reqs) / len(reqs) == pytest.approx(16 / 52, abs=0.03)
    assert all(b.t_p == 86400 for b in reqs)


def test_instance_round_trip_is_bit_exact(tmp_path):
    inst = generate_synthetic(SyntheticConfig(rows=3, cols=3, n_train=2, n_test=1, fleet_size=4, requests_per_day=100))
    h = inst.save(tmp_path / "i")
    back = Instance.load(tmp_path / "i")
    assert back.content_hash() == h
    assert back.files() == inst.files()
    assert back.save(tmp_path / "j") == h


def test_corrupt_instance_is_rejected(tmp_path):
    inst = generate_synthetic(SyntheticConfig(rows=3, cols=3, n_train=1, n_test=1, fleet_size=2, requests_per_day=50))
    inst.save(tmp_path)
    (tmp_path / "meta.json").write_text("{not json")
    with pytest.raises(InstanceFormatError):
        Instance.load(tmp_path)
    inst.save(tmp_path)
    (tmp_path / "initial_states.jsonl").unlink()
    with pytest.raises(InstanceFormatError):
        Instance.load(tmp_path)
    with pytest.raises(FileNotFoundError):
        Instance.load(tmp_path / "missing")


def test_csv_reader_skips_malformed_rows(tmp_path):
    f = tmp_path / "trips.csv"
    f.write_text(
        "pickup_time,duration_s,distance_m,passengers,fare,o_lat,o_lon,d_lat,d_lon\n"
        "2024-03-04T08:30:00,600,2000,1,10.0,40.75,-73.99,40.76,-73.98\n"
        "not-a-date,600,2000,1,10.0,40.75,-73.99,40.76,-73.98\n"
        "2024-03-04T09:00:00,600,2000,2,abc,40.75,-73.99,40.76,-73.98\n"
    )
    trips, skipped = read_trips_csv(f)
    assert skipped == 2 and len(trips) == 1
    assert trips[0].passengers == 1 and trips[0].origin == (40.75, -73.99)
