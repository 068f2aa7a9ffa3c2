import io
from datetime import date

import numpy as np
import pytest

from fleetlab.ingest import (DemandTensor, aggregate_demand,
                             cumulative_net_inflow, estimate_background_demand,
                             generate_synthetic_demand, parse_trips)
from fleetlab.util import read_tijc
from fleetlab.world import build_region_map

HEADER = ("Trip ID,Start Time,End Time,Trip Distance (m),Trip Duration (s),"
          "Start Region,End Region,Vehicle Operator\n")

# the published sample row: coordinates are written lon, lat
SAMPLE_ROW = ('T001,5/28/2022 14:00,5/28/2022 15:00,"2,484","1,544",'
              '"-87.62519, 41.87887","-87.62520 41.88886",Lime\n')


@pytest.fixture
def two_region_map():
    return build_region_map([(41.87887, -87.62519), (41.88887, -87.62519)])


def test_sample_row_parses(two_region_map):
    result = parse_trips(io.StringIO(HEADER + SAMPLE_ROW), two_region_map)
    assert result.skipped == 0
    (rec,) = result.records
    assert rec.trip_id == "T001"
    assert rec.duration_s == 1544.0
    assert rec.distance_m == 2484.0
    assert rec.operator == "Lime"
    assert rec.start_region == 0          # snapped to nearest centroid
    assert rec.end_region == 1
    assert rec.start_time.hour == 14


def test_empty_file_with_header(two_region_map):
    result = parse_trips(io.StringIO(HEADER), two_region_map)
    assert result.records == [] and result.skipped == 0


def test_end_before_start_skipped(two_region_map):
    bad = "T002,5/28/2022 15:00,5/28/2022 14:00,100,60,0,1,Spin\n"
    result = parse_trips(io.StringIO(HEADER + bad + SAMPLE_ROW), two_region_map)
    assert result.skipped == 1
    assert len(result.records) == 1


def test_missing_column_is_hard_error(two_region_map):
    broken = HEADER.replace("Trip Duration (s),", "")
    row = SAMPLE_ROW  # column count mismatch aside, the header lacks duration
    with pytest.raises(ValueError, match="trip duration"):
        parse_trips(io.StringIO(broken + row), two_region_map)


def test_region_index_and_id_forms(two_region_map):
    rows = HEADER + "T1,5/28/2022 08:00,5/28/2022 08:10,500,300,1,0,Bird\n"
    result = parse_trips(io.StringIO(rows), two_region_map)
    assert result.records[0].start_region == 1
    named = build_region_map([(41.0, -87.0), (41.5, -87.0)], region_ids=["8", "32"])
    rows = HEADER + "T1,2022-05-28T08:00:00,2022-05-28T08:10:00,500,300,32,8,Bird\n"
    result = parse_trips(io.StringIO(rows), named)
    assert result.records[0].start_region == 1
    assert result.records[0].end_region == 0


def test_malformed_timestamp_skipped(two_region_map):
    rows = HEADER + "T1,yesterday,5/28/2022 09:00,100,60,0,1,Lime\n"
    result = parse_trips(io.StringIO(rows), two_region_map)
    assert result.skipped == 1 and result.records == []


def test_aggregate_single_trip(two_region_map):
    rows = HEADER + "T1,5/28/2022 14:00,5/28/2022 14:20,500,300,0,1,Lime\n"
    trips = parse_trips(io.StringIO(rows), two_region_map).records
    tensor = aggregate_demand(trips, two_region_map, 24, date(2022, 5, 28))
    assert tensor.counts[14, 0, 1] == 1
    assert tensor.total() == 1
    tensor.check_consistent()


def test_aggregate_zero_trips(two_region_map):
    tensor = aggregate_demand([], two_region_map, 24, date(2022, 5, 28))
    assert tensor.total() == 0


def test_aggregate_two_trips_same_cell(two_region_map):
    rows = (HEADER
            + "T1,5/28/2022 14:00,5/28/2022 14:20,500,300,0,1,Lime\n"
            + "T2,5/28/2022 14:30,5/28/2022 14:50,700,400,0,1,Lime\n")
    trips = parse_trips(io.StringIO(rows), two_region_map).records
    tensor = aggregate_demand(trips, two_region_map, 24, date(2022, 5, 28))
    assert tensor.counts[14, 0, 1] == 2
    assert sorted(tensor.pool[(14, 0, 1)]) == [(500.0, 300.0), (700.0, 400.0)]


def test_aggregate_total_matches_accepted_trips(two_region_map):
    rng = np.random.default_rng(3)
    rows = [HEADER]
    for k in range(40):
        h, m = rng.integers(0, 24), rng.integers(0, 60)
        rows.append(f"T{k},5/28/2022 {h}:{m:02d},5/28/2022 {h}:{m:02d},"
                    f"{rng.integers(100, 5000)},{rng.integers(60, 900)},"
                    f"{rng.integers(0, 2)},{rng.integers(0, 2)},Lime\n")
    trips = parse_trips(io.StringIO("".join(rows)), two_region_map).records
    tensor = aggregate_demand(trips, two_region_map, 24, date(2022, 5, 28))
    assert tensor.total() == len(trips) == 40
    tensor.check_consistent()


def test_aggregate_rejects_out_of_day(two_region_map):
    rows = HEADER + "T1,5/29/2022 10:00,5/29/2022 10:10,100,60,0,1,Lime\n"
    trips = parse_trips(io.StringIO(rows), two_region_map).records
    with pytest.raises(ValueError):
        aggregate_demand(trips, two_region_map, 24, date(2022, 5, 28))


def test_counts_roundtrip(tmp_path, two_region_map):
    tensor = DemandTensor.zeros(4, 2)
    tensor.counts[1, 0, 1] = 3
    tensor.pool[(1, 0, 1)] = [(100.0, 60.0)] * 3
    path = tmp_path / "demand.csv"
    tensor.save_counts(path)
    back = read_tijc(path, intervals=4, regions=2)
    assert np.array_equal(back, tensor.counts)
    loaded = DemandTensor.load_counts(path, intervals=4, regions=2)
    loaded.check_consistent()
    assert loaded.total() == 3


# ---------------------------------------------------------------------------
# background demand

def simple_history(t_count=4, n=3, fill=2):
    """History with demand everywhere so every matched class is populated."""
    hist = DemandTensor.zeros(t_count, n)
    for t in range(t_count):
        for i in range(n):
            j = (i + 1) % n
            hist.counts[t, i, j] = fill
            hist.pool[(t, i, j)] = [(1000.0, 400.0)] * fill
    return [hist]


def test_background_positive_inflow_unchanged():
    n, t_count = 3, 4
    tensor = DemandTensor.zeros(t_count, n)
    # flow into region 0 at t=0, so region 0 has positive net inflow
    tensor.counts[0, 1, 0] = 2
    tensor.pool[(0, 1, 0)] = [(500.0, 200.0)] * 2
    flows = cumulative_net_inflow(tensor)
    assert flows[0, 0] > 0
    res = estimate_background_demand(tensor, flows, simple_history(), seed=1)
    # region 0 stays untouched in every interval (inflow stays positive)
    assert np.array_equal(res.tensor.counts[:, 0, :], tensor.counts[:, 0, :])


def test_background_nonzero_demand_unchanged():
    n, t_count = 3, 4
    tensor = DemandTensor.zeros(t_count, n)
    tensor.counts[0, 0, 1] = 5   # outflow drives inflow negative, but demand > 0
    tensor.pool[(0, 0, 1)] = [(500.0, 200.0)] * 5
    flows = cumulative_net_inflow(tensor)
    assert flows[0, 0] < 0
    res = estimate_background_demand(tensor, flows, simple_history(), seed=1)
    assert np.array_equal(res.tensor.counts[0], tensor.counts[0])


def test_background_fills_exactly_qualifying_cells():
    n, t_count = 3, 4
    tensor = DemandTensor.zeros(t_count, n)
    tensor.counts[0, 0, 1] = 5   # region 0: negative inflow from t=0 onward
    tensor.pool[(0, 0, 1)] = [(500.0, 200.0)] * 5
    flows = cumulative_net_inflow(tensor)
    res = estimate_background_demand(tensor, flows, simple_history(), seed=7)
    qualifying = {(t, i) for t in range(t_count) for i in range(n)
                  if flows[t, i] < 0 and tensor.counts[t, i].sum() == 0}
    assert set(res.filled_cells) == qualifying
    assert qualifying                      # fixture actually exercises the rule
    # bit-unchanged everywhere else
    for t in range(t_count):
        for i in range(n):
            if (t, i) not in qualifying:
                assert np.array_equal(res.tensor.counts[t, i], tensor.counts[t, i])
            else:
                assert res.tensor.counts[t, i].sum() > 0
    res.tensor.check_consistent()


def test_background_never_decreases_and_deterministic():
    n, t_count = 3, 4
    tensor = DemandTensor.zeros(t_count, n)
    tensor.counts[0, 0, 1] = 5
    tensor.pool[(0, 0, 1)] = [(500.0, 200.0)] * 5
    flows = cumulative_net_inflow(tensor)
    r1 = estimate_background_demand(tensor, flows, simple_history(), seed=11)
    r2 = estimate_background_demand(tensor, flows, simple_history(), seed=11)
    assert np.array_equal(r1.tensor.counts, r2.tensor.counts)
    assert np.all(r1.tensor.counts >= tensor.counts)


def test_background_empty_class_reported():
    n, t_count = 3, 4
    tensor = DemandTensor.zeros(t_count, n)
    tensor.counts[0, 0, 1] = 5
    tensor.pool[(0, 0, 1)] = [(500.0, 200.0)] * 5
    flows = cumulative_net_inflow(tensor)
    empty_history = [DemandTensor.zeros(t_count, n)]
    res = estimate_background_demand(tensor, flows, empty_history, seed=1)
    assert res.added_trips == 0
    assert res.unmatched_cells           # every qualifying cell lacks history
    assert np.array_equal(res.tensor.counts, tensor.counts)


# ---------------------------------------------------------------------------
# synthetic generator

def test_synthetic_zero_rates():
    m = build_region_map([(41.0, -87.0), (41.1, -87.0)])
    tensor = generate_synthetic_demand(m, 24, np.zeros((2, 2)), seed=5)
    assert tensor.total() == 0


def test_synthetic_poisson_mean():
    m = build_region_map([(41.0, -87.0), (41.1, -87.0)])
    rates = np.array([[0.0, 4.0], [0.0, 0.0]])
    tensor = generate_synthetic_demand(m, 1000, rates, seed=13)
    counts = tensor.counts[:, 0, 1]
    se = np.sqrt(4.0 / 1000)
    assert abs(counts.mean() - 4.0) < 3 * se


def test_synthetic_surge_scales_mean():
    m = build_region_map([(41.0, -87.0), (41.1, -87.0)])
    rates = np.array([[0.0, 4.0], [0.0, 0.0]])
    surge = [((0, 1000), [0], 1.5)]
    tensor = generate_synthetic_demand(m, 1000, rates, surge, seed=13)
    counts = tensor.counts[:, 0, 1]
    se = np.sqrt(6.0 / 1000)
    assert abs(counts.mean() - 6.0) < 3 * se


def test_synthetic_deterministic_and_attribute_ranges():
    m = build_region_map([(41.0, -87.0), (41.1, -87.0)])
    rates = np.full((2, 2), 1.0)
    t1 = generate_synthetic_demand(m, 24, rates, seed=99)
    t2 = generate_synthetic_demand(m, 24, rates, seed=99)
    assert np.array_equal(t1.counts, t2.counts)
    assert t1.pool == t2.pool
    for attrs in t1.pool.values():
        for dist_m, dur_s in attrs:
            assert 200.0 <= dist_m <= 8000.0
            assert dist_m / 5.0 <= dur_s <= dist_m / 2.0
