"""Per-parcel descriptors feeding the logistic model and the allocator.

Four descriptors per parcel: natural log of area, compactness
(perimeter^2 / area), Euclidean distance from the parcel to the city
center, and normalized POI density. Residential POI density gets the same
log-ratio standardization and drives allocation downstream.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass

from shapely import STRtree

from .geodata import CityContext, POISet
from .parcelize import ParcelSet, RoadSpace

log = logging.getLogger(__name__)

DENSITY_FLOOR_PER_KM2 = 1.0  # minimum density assumed for zero-POI parcels

MODEL_FEATURES = ("ln_area", "center_distance_km", "poi_density_norm", "compactness")


class FeatureError(ValueError):
    pass


@dataclass(frozen=True)
class ParcelFeatures:
    parcel_id: int
    ln_area: float
    compactness: float
    center_distance: float  # meters
    poi_density_norm: float
    residential_density_std: float
    poi_count: int
    res_poi_count: int

    def model_row(self, feature_names) -> list[float]:
        vals = {
            "ln_area": self.ln_area,
            "center_distance_km": self.center_distance / 1000.0,
            "center_distance_m": self.center_distance,
            "poi_density_norm": self.poi_density_norm,
            "compactness": self.compactness,
        }
        return [vals[f] for f in feature_names]


def assign_pois(parcels: ParcelSet, pois: POISet,
                road_space: RoadSpace | None = None) -> dict[int, dict[str, int]]:
    """Assign every POI to exactly one parcel; returns per-parcel category counts.

    The containing parcel wins; POIs in road space (or anywhere outside all
    parcels) go to the nearest parcel by boundary distance. Ties break by
    lowest parcel id so reruns are stable.
    """
    if not parcels.parcels and len(pois) > 0:
        raise FeatureError("cannot assign POIs: empty parcel set")
    counts: dict[int, dict[str, int]] = {p.id: {} for p in parcels.parcels}
    if not pois.pois:
        return counts

    geoms = [p.geometry for p in parcels.parcels]
    ids = [p.id for p in parcels.parcels]
    tree = STRtree(geoms)

    for poi in pois.pois:
        hits = [int(k) for k in tree.query(poi.location, predicate="intersects")]
        containing = sorted(ids[k] for k in hits if geoms[k].covers(poi.location))
        if containing:
            target = containing[0]
        else:
            near = tree.query_nearest(poi.location, all_matches=True)
            dists = {}
            for k in near:
                k = int(k)
                dists.setdefault(geoms[k].distance(poi.location), []).append(ids[k])
            dmin = min(dists)
            target = min(dists[dmin])
        cat_counts = counts[target]
        cat_counts[poi.category] = cat_counts.get(poi.category, 0) + 1
    return counts


def log_ratio_standardize(raw: dict[int, float]) -> dict[int, float]:
    """Map raw densities to [0, 1] via log(raw)/log(max).

    Inputs must already be floored at DENSITY_FLOOR_PER_KM2. When every
    parcel sits at the floor (max == floor) the ratio is 0/0; all values
    are then defined as 1.0 (downstream only uses relative order).
    """
    if not raw:
        return {}
    dmax = max(raw.values())
    if dmax <= DENSITY_FLOOR_PER_KM2:
        return {pid: 1.0 for pid in raw}
    log_max = math.log(dmax)
    return {pid: math.log(d) / log_max for pid, d in raw.items()}


def density_per_km2(count: int, area_m2: float) -> float:
    if area_m2 <= 0:
        raise FeatureError("parcel area must be > 0 for densities")
    return max(count * 1e6 / area_m2, DENSITY_FLOOR_PER_KM2)


def normalize_poi_density(counts: dict[int, int], areas: dict[int, float]) -> dict[int, float]:
    """Standardized all-category POI density in [0, 1] per parcel."""
    raw = {pid: density_per_km2(counts.get(pid, 0), areas[pid]) for pid in areas}
    return log_ratio_standardize(raw)


def residential_density_std(res_counts: dict[int, int], areas: dict[int, float]) -> dict[int, float]:
    """Standardized residential POI density in [0, 1] per parcel."""
    raw = {pid: density_per_km2(res_counts.get(pid, 0), areas[pid]) for pid in areas}
    return log_ratio_standardize(raw)


def center_distance(parcel_geometry, city: CityContext) -> float:
    """Minimum Euclidean distance from the parcel to the city center (0 inside)."""
    return float(parcel_geometry.distance(city.city_center))


def compute_features(parcels: ParcelSet, pois: POISet, city: CityContext,
                     road_space: RoadSpace | None = None) -> dict[int, ParcelFeatures]:
    """All descriptors for every parcel."""
    cat_counts = assign_pois(parcels, pois, road_space)
    areas = {p.id: p.area for p in parcels.parcels}
    totals = {pid: sum(c.values()) for pid, c in cat_counts.items()}
    res = {pid: c.get("RES", 0) for pid, c in cat_counts.items()}
    poi_norm = normalize_poi_density(totals, areas)
    res_std = residential_density_std(res, areas)

    out: dict[int, ParcelFeatures] = {}
    for p in parcels.parcels:
        if p.area <= 0:
            raise FeatureError(f"parcel {p.id} has non-positive area")
        out[p.id] = ParcelFeatures(
            parcel_id=p.id,
            ln_area=math.log(p.area),
            compactness=p.perimeter * p.perimeter / p.area,
            center_distance=center_distance(p.geometry, city),
            poi_density_norm=poi_norm[p.id],
            residential_density_std=res_std[p.id],
            poi_count=totals[p.id],
            res_poi_count=res[p.id],
        )
    return out


FEATURE_CSV_COLUMNS = [
    "parcel_id", "ln_area", "compactness", "center_distance_m",
    "poi_density_norm", "residential_density_std", "poi_count", "res_poi_count",
]


def save_features(features: dict[int, ParcelFeatures], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(FEATURE_CSV_COLUMNS)
        for pid in sorted(features):
            f = features[pid]
            w.writerow([
                f.parcel_id, repr(f.ln_area), repr(f.compactness),
                repr(f.center_distance), repr(f.poi_density_norm),
                repr(f.residential_density_std), f.poi_count, f.res_poi_count,
            ])


def load_features(path) -> dict[int, ParcelFeatures]:
    out: dict[int, ParcelFeatures] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        for rec in csv.DictReader(fh):
            f = ParcelFeatures(
                parcel_id=int(rec["parcel_id"]),
                ln_area=float(rec["ln_area"]),
                compactness=float(rec["compactness"]),
                center_distance=float(rec["center_distance_m"]),
                poi_density_norm=float(rec["poi_density_norm"]),
                residential_density_std=float(rec["residential_density_std"]),
                poi_count=int(rec["poi_count"]),
                res_poi_count=int(rec["res_poi_count"]),
            )
            out[f.parcel_id] = f
    return out
