import math

import numpy as np
import pytest

from fleetlab.world import (EARTH_RADIUS_MILES, WorldConfig, build_region_map,
                            feasible_targets, haversine_miles, load_region_map,
                            neighbors)


def great_circle_atan2_miles(lat1, lon1, lat2, lon2):
    """Independent great-circle oracle (stable atan2 arrangement)."""
    p1, p2 = math.radians(lat1), math.radians(lat2)
    dl = math.radians(lon2 - lon1)
    y = math.sqrt((math.cos(p2) * math.sin(dl)) ** 2
                  + (math.cos(p1) * math.sin(p2)
                     - math.sin(p1) * math.cos(p2) * math.cos(dl)) ** 2)
    x = math.sin(p1) * math.sin(p2) + math.cos(p1) * math.cos(p2) * math.cos(dl)
    return EARTH_RADIUS_MILES * math.atan2(y, x)


def line_map(n, spacing_deg=0.01, neighbor_k=8):
    pts = [(41.85 + i * spacing_deg, -87.65) for i in range(n)]
    return build_region_map(pts, neighbor_k=neighbor_k)


def test_haversine_against_oracle():
    # coordinates from the dataset's sample trip start region
    a = (41.87887, -87.62519)
    b = (41.88887, -87.62519)
    got = float(haversine_miles(*a, *b))
    oracle = great_circle_atan2_miles(*a, *b)
    assert got == pytest.approx(oracle, abs=1e-9)
    assert abs(got - 0.6907) < 3e-4


def test_identical_centroids_distance_zero_and_flagged():
    m = build_region_map([(41.9, -87.6), (41.9, -87.6)])
    assert m.distance[0, 1] == 0.0
    assert m.duplicate_pairs == 1


def test_collinear_tiebreak_middle_region():
    m = line_map(3)
    # both endpoints are equidistant from the middle; lower index wins
    assert list(m.neighbors(1, 1)) == [0]


def test_neighbors_basics():
    m = line_map(4)
    assert list(m.neighbors(2, 0)) == []
    two = build_region_map([(41.0, -87.0), (41.5, -87.0)])
    assert list(two.neighbors(0, 5)) == [1]          # clamp to N-1
    assert list(m.neighbors(1, 2)) == [0, 2]         # equal distance, index tie
    assert list(neighbors(m, 1, 2)) == [0, 2]


def test_neighbor_prefix_property_and_self_exclusion():
    rng = np.random.default_rng(7)
    pts = np.column_stack([rng.uniform(41.5, 42.0, 9), rng.uniform(-88, -87.3, 9)])
    m = build_region_map(pts)
    for i in range(m.region_count):
        for k in range(m.region_count):
            lst = list(m.neighbors(i, k))
            assert i not in lst
            assert lst == list(m.neighbors(i, k + 1))[:k]


def test_distance_matrix_invariants_and_determinism():
    m1 = line_map(6)
    m2 = line_map(6)
    assert np.array_equal(m1.distance, m1.distance.T)
    assert np.all(np.diag(m1.distance) == 0.0)
    assert np.all(m1.distance[~np.eye(6, dtype=bool)] > 0)
    assert np.array_equal(m1.distance, m2.distance)
    assert np.array_equal(m1.neighbor_order, m2.neighbor_order)


def test_invalid_inputs_rejected():
    with pytest.raises(ValueError):
        build_region_map([])
    with pytest.raises(ValueError):
        build_region_map([(95.0, 0.0)])
    with pytest.raises(ValueError):
        build_region_map([(0.0, 190.0)])
    m = line_map(3)
    with pytest.raises(IndexError):
        m.neighbors(3, 1)
    with pytest.raises(ValueError):
        m.neighbors(0, -1)


def test_load_region_map(tmp_path):
    path = tmp_path / "regions.csv"
    path.write_text("id,lat,lon\n8,41.87887,-87.62519\n32,41.88887,-87.62519\n")
    m = load_region_map(path)
    assert m.region_count == 2
    assert m.region_ids == ("8", "32")
    assert m.index_for_id("32") == 1
    assert m.index_for_id("99") is None


def test_feasible_targets_range_and_battery():
    m = line_map(5)                      # ~0.69 miles per hop
    hop = m.distance[0, 1]
    got = feasible_targets(m, 2, battery_miles=10.0, move_range_miles=hop * 1.5)
    assert list(got) == [1, 2, 3]
    got = feasible_targets(m, 2, battery_miles=hop * 0.5, move_range_miles=10.0)
    assert list(got) == [2]              # battery blocks every move; stay remains


def test_world_config_validation():
    WorldConfig()
    with pytest.raises(ValueError):
        WorldConfig(intervals_per_day=0)
    with pytest.raises(ValueError):
        WorldConfig(battery_threshold_miles=15.0)
    with pytest.raises(ValueError):
        WorldConfig(battery_threshold_miles=-1.0)
