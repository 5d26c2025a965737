import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from shapely.geometry import Point, box

from parcelpop.features import (
    DENSITY_FLOOR_PER_KM2,
    assign_pois,
    center_distance,
    compute_features,
    density_per_km2,
    load_features,
    log_ratio_standardize,
    normalize_poi_density,
    residential_density_std,
    save_features,
)
from parcelpop.geodata import POI, CityContext, POISet
from parcelpop.parcelize import Parcel, ParcelSet


def _parcels(geoms):
    return ParcelSet(parcels=[
        Parcel(id=i + 1, geometry=g, area=g.area, perimeter=g.length)
        for i, g in enumerate(geoms)
    ])


def _pois(points, category="RES"):
    return POISet(pois=[
        POI(id=i + 1, location=Point(*xy), category=category)
        for i, xy in enumerate(points)
    ])


# ---------------------------------------------------------------------------
# POI assignment


def test_poi_inside_parcel_counted_there():
    parcels = _parcels([box(0, 0, 10, 10), box(20, 0, 30, 10)])
    counts = assign_pois(parcels, _pois([(5, 5)]))
    assert counts[1] == {"RES": 1} and counts[2] == {}


def test_equidistant_tie_goes_to_lowest_id():
    # gap between the parcels is [10, 20]; x = 15 is exactly equidistant
    parcels = _parcels([box(0, 0, 10, 10), box(20, 0, 30, 10)])
    counts = assign_pois(parcels, _pois([(15, 5)]))
    assert counts[1] == {"RES": 1} and counts[2] == {}


def test_counts_match_bruteforce_on_toy_layout():
    parcels = _parcels([box(0, 0, 10, 10), box(30, 0, 40, 10), box(0, 30, 10, 40)])
    pts = [(5, 5), (22, 5), (28, 5), (4, 25), (50, 50)]
    pois = _pois(pts)
    counts = assign_pois(parcels, pois)

    # oracle: exhaustive distance enumeration over every POI/parcel pair
    expected = {p.id: 0 for p in parcels.parcels}
    for poi in pois.pois:
        best = min(parcels.parcels,
                   key=lambda p: (p.geometry.distance(poi.location), p.id))
        expected[best.id] += 1
    assert {pid: sum(c.values()) for pid, c in counts.items()} == expected


def test_assignment_partitions_poi_set():
    parcels = _parcels([box(0, 0, 10, 10), box(30, 0, 40, 10)])
    pois = _pois([(i * 3.7, (i % 5) * 2.1) for i in range(40)])
    counts = assign_pois(parcels, pois)
    assert sum(sum(c.values()) for c in counts.values()) == len(pois)


def test_empty_parcels_with_pois_is_error():
    from parcelpop.features import FeatureError

    with pytest.raises(FeatureError):
        assign_pois(_parcels([]), _pois([(0, 0)]))


# ---------------------------------------------------------------------------
# density standardization


def test_max_density_maps_to_one():
    vals = normalize_poi_density({1: 50, 2: 5}, {1: 1e6, 2: 1e6})
    assert vals[1] == 1.0
    assert 0.0 < vals[2] < 1.0


def test_zero_poi_parcel_gets_floor():
    # a parcel with no POIs is assumed to hold the minimum density of
    # 1 per km^2 and standardizes to 0 when any denser parcel exists
    vals = normalize_poi_density({1: 0, 2: 50}, {1: 1e6, 2: 1e6})
    assert vals[1] == 0.0
    assert density_per_km2(0, 1e6) == DENSITY_FLOOR_PER_KM2


def test_equal_densities_equal_values():
    vals = normalize_poi_density({1: 10, 2: 20}, {1: 1e6, 2: 2e6})
    assert vals[1] == vals[2]


def test_density_floor_to_zero_and_max_to_one_and_sqrt_to_half():
    raw = {1: 1.0, 2: 100.0, 3: 10.0}  # 10 = sqrt(100)
    std = log_ratio_standardize(raw)
    assert std[1] == 0.0
    assert std[2] == 1.0
    assert std[3] == pytest.approx(0.5, abs=1e-12)


def test_log_base_invariance():
    raw = {i: 1.0 + 3.7 * i for i in range(1, 30)}
    ours = log_ratio_standardize(raw)
    m = max(raw.values())
    base10 = {k: math.log10(v) / math.log10(m) for k, v in raw.items()}
    for k in raw:
        assert abs(ours[k] - base10[k]) < 1e-12


def test_all_parcels_at_floor_defined_as_one():
    vals = residential_density_std({1: 0, 2: 0}, {1: 1e6, 2: 2e6})
    assert vals == {1: 1.0, 2: 1.0}


@given(st.lists(st.floats(min_value=1.0, max_value=1e6), min_size=2, max_size=30))
@settings(max_examples=200, deadline=None, derandomize=True)
def test_standardization_is_order_preserving(raws):
    std = log_ratio_standardize(dict(enumerate(raws)))
    for i, a in enumerate(raws):
        for j, b in enumerate(raws):
            if a < b:
                assert std[i] <= std[j]


# ---------------------------------------------------------------------------
# center distance


def _city(center=(0.0, 0.0)):
    return CityContext(city_center=Point(*center), extent=box(-1e4, -1e4, 1e4, 1e4))


def test_center_inside_parcel_distance_zero():
    assert center_distance(box(-10, -10, 10, 10), _city()) == 0.0


def test_square_parcel_nearest_corner():
    # oracle: closed form, nearest corner of [100,200]^2 to the origin is
    # (100,100) at distance 100*sqrt(2)
    d = center_distance(box(100, 100, 200, 200), _city())
    assert d == pytest.approx(100.0 * math.sqrt(2.0), rel=1e-12)


def test_feature_table_round_trip(tmp_path):
    parcels = _parcels([box(0, 0, 100, 100), box(200, 0, 320, 100)])
    pois = _pois([(5, 5), (50, 50), (250, 50)])
    feats = compute_features(parcels, pois, _city((10.0, 10.0)))
    assert feats[1].poi_count == 2 and feats[2].poi_count == 1
    assert feats[1].compactness >= 4 * math.pi * 0.99
    path = tmp_path / "features.csv"
    save_features(feats, path)
    assert load_features(path) == feats
