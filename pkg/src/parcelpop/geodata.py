"""Input data model and loaders.

All geometry is expected in a projected planar CRS in meters; nothing here
reprojects. Loaders never silently drop features: every input feature is
either accepted or rejected with a reason, and the report keeps the
bookkeeping (accepted + rejected == input count).

File formats: GeoJSON (RFC 7946) for roads / boundaries / constraints /
POIs, long-form CSV for census tables (see README for the column layout).
"""

from __future__ import annotations

import csv
import json
import logging
import math
import os
from dataclasses import dataclass, field

from shapely.geometry import mapping, shape
from shapely.geometry import LineString, Point
from shapely.geometry.base import BaseGeometry

log = logging.getLogger(__name__)

POI_CATEGORIES = ("RES", "COM", "FIR", "TRA", "GOV", "EDU", "GRE", "OTH")

CENSUS_ATTRIBUTES = ("AGE", "SEX", "MARRIAGE", "EDUCATION", "JOB", "INCOME", "FAMILYN")
CROSSTAB_PAIRS = (("AGE", "MARRIAGE"), ("AGE", "EDUCATION"), ("EDUCATION", "JOB"))

MIN_BUFFER_HALF_WIDTH = 2.0
MAX_BUFFER_HALF_WIDTH = 30.0

NORM_TOL = 1e-9


class LoadError(ValueError):
    """Input file missing, malformed, or violating a hard contract."""


@dataclass
class LoadReport:
    source: str
    accepted: int = 0
    rejected: list[tuple[int, str]] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)

    def reject(self, index: int, reason: str) -> None:
        self.rejected.append((index, reason))
        log.warning("%s: feature %d rejected: %s", self.source, index, reason)

    def warn(self, message: str) -> None:
        self.warnings.append(message)
        log.warning("%s: %s", self.source, message)


# ---------------------------------------------------------------------------
# domain types


@dataclass(frozen=True)
class RoadSegment:
    id: int
    geometry: LineString
    road_class: str


@dataclass
class RoadNetwork:
    segments: list[RoadSegment]
    class_width_map: dict[str, float]
    report: LoadReport | None = None

    def __len__(self) -> int:
        return len(self.segments)


@dataclass(frozen=True)
class POI:
    id: int
    location: Point
    category: str


@dataclass
class POISet:
    pois: list[POI]
    report: LoadReport | None = None
    outside_extent: list[int] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.pois)

    def count(self, category: str) -> int:
        return sum(1 for p in self.pois if p.category == category)


@dataclass(frozen=True)
class AdminUnit:
    id: int
    name: str
    boundary: BaseGeometry
    total_population: int
    residential_area_budget: float | None = None


@dataclass(frozen=True)
class ConstraintLayer:
    kind: str  # "steep_slope" | "water"
    geometry: list[BaseGeometry]


@dataclass(frozen=True)
class CityContext:
    city_center: Point
    extent: BaseGeometry
    crs_note: str = ""

    def __post_init__(self):
        if not self.extent.contains(self.city_center):
            raise LoadError("city_center lies outside the extent polygon")


@dataclass
class CensusTables:
    """Normalized marginals and row-normalized cross-tabs per admin unit.

    marginals: admin_id -> attribute -> {category: probability}
    crosstabs: admin_id -> (parent, child) -> parent_cat -> {child_cat: p}
    categories: attribute -> category list in first-seen file order (shared
    across units so sampling order is deterministic).
    """

    marginals: dict[int, dict[str, dict[str, float]]]
    crosstabs: dict[int, dict[tuple[str, str], dict[str, dict[str, float]]]]
    categories: dict[str, list[str]]
    report: LoadReport | None = None

    def admin_ids(self) -> list[int]:
        return sorted(self.marginals)


# ---------------------------------------------------------------------------
# GeoJSON plumbing


def read_feature_collection(path) -> list[dict]:
    if not os.path.exists(path):
        raise LoadError(f"file not found: {path}")
    with open(path, encoding="utf-8") as fh:
        data = json.load(fh)
    if data.get("type") != "FeatureCollection":
        raise LoadError(f"{path}: expected a GeoJSON FeatureCollection")
    return data.get("features", [])


def write_feature_collection(path, features: list[dict]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump({"type": "FeatureCollection", "features": features}, fh)


def make_feature(geometry: BaseGeometry, properties: dict) -> dict:
    return {"type": "Feature", "geometry": mapping(geometry), "properties": properties}


def _finite_coords(geom: BaseGeometry) -> bool:
    return all(
        math.isfinite(c) for pt in _iter_coords(geom) for c in pt[:2]
    )


def _iter_coords(geom: BaseGeometry):
    if hasattr(geom, "coords"):
        yield from geom.coords
    elif hasattr(geom, "exterior"):
        yield from geom.exterior.coords
        for ring in geom.interiors:
            yield from ring.coords
    elif hasattr(geom, "geoms"):
        for g in geom.geoms:
            yield from _iter_coords(g)


# ---------------------------------------------------------------------------
# loaders


def validate_class_width_map(class_width_map: dict[str, float]) -> None:
    for cls, width in class_width_map.items():
        if cls == "default" and width is None:
            continue
        if not (MIN_BUFFER_HALF_WIDTH <= float(width) <= MAX_BUFFER_HALF_WIDTH):
            raise LoadError(
                f"buffer half-width for class '{cls}' is {width}, "
                f"outside [{MIN_BUFFER_HALF_WIDTH}, {MAX_BUFFER_HALF_WIDTH}] m"
            )


def load_roads(path, class_width_map: dict[str, float]) -> RoadNetwork:
    """Load classified road segments from a GeoJSON line layer."""
    validate_class_width_map(class_width_map)
    features = read_feature_collection(path)
    report = LoadReport(source=str(path))
    segments: list[RoadSegment] = []
    if not features:
        report.warn("empty feature collection")
    next_id = 0
    for idx, feat in enumerate(features):
        try:
            geom = shape(feat["geometry"])
        except Exception as exc:
            report.reject(idx, f"unparseable geometry: {exc}")
            continue
        props = feat.get("properties") or {}
        road_class = props.get("road_class")
        if road_class is None:
            report.reject(idx, "missing road_class property")
            continue
        if road_class not in class_width_map and "default" not in class_width_map:
            report.reject(idx, f"unknown road_class '{road_class}' and no default width")
            continue
        parts = list(geom.geoms) if geom.geom_type == "MultiLineString" else [geom]
        ok = True
        for part in parts:
            if part.geom_type != "LineString" or len(part.coords) < 2:
                report.reject(idx, "geometry is not a line with >= 2 vertices")
                ok = False
                break
            if not _finite_coords(part):
                report.reject(idx, "non-finite coordinates")
                ok = False
                break
        if not ok:
            continue
        for part in parts:
            fid = props.get("id", next_id)
            segments.append(RoadSegment(id=int(fid), geometry=part, road_class=road_class))
            next_id = max(next_id, int(fid)) + 1
        report.accepted += 1
    log.info("%s: %d road segments loaded (%d features rejected)",
             path, len(segments), len(report.rejected))
    return RoadNetwork(segments=segments, class_width_map=dict(class_width_map), report=report)


def load_pois(path, extent: BaseGeometry | None = None, drop_outside: bool = False) -> POISet:
    """Load POIs from GeoJSON points or CSV (id,x,y,category).

    Unknown categories map to OTH with a warning. POIs outside the extent
    are kept and flagged unless drop_outside is set.
    """
    if not os.path.exists(path):
        raise LoadError(f"file not found: {path}")
    if str(path).endswith(".csv"):
        rows = _poi_rows_from_csv(path)
    else:
        rows = _poi_rows_from_geojson(path)

    report = LoadReport(source=str(path))
    pois: list[POI] = []
    outside: list[int] = []
    for idx, (pid, x, y, category) in enumerate(rows):
        if x is None or y is None or not (math.isfinite(x) and math.isfinite(y)):
            report.reject(idx, "missing or non-finite coordinates")
            continue
        cat = (category or "").strip().upper()
        if cat not in POI_CATEGORIES:
            report.warn(f"POI {pid}: category '{category}' mapped to OTH")
            cat = "OTH"
        pt = Point(x, y)
        if extent is not None and not extent.intersects(pt):
            if drop_outside:
                report.reject(idx, "outside extent (dropped by option)")
                continue
            outside.append(int(pid))
        pois.append(POI(id=int(pid), location=pt, category=cat))
        report.accepted += 1
    if outside:
        report.warn(f"{len(outside)} POIs outside the extent (kept, flagged)")
    log.info("%s: %d POIs loaded", path, len(pois))
    return POISet(pois=pois, report=report, outside_extent=outside)


def _poi_rows_from_csv(path):
    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        for i, rec in enumerate(reader):
            pid = rec.get("id", i)
            try:
                x = float(rec["x"]) if rec.get("x") not in (None, "") else None
                y = float(rec["y"]) if rec.get("y") not in (None, "") else None
            except (ValueError, KeyError):
                x = y = None
            rows.append((pid, x, y, rec.get("category")))
    return rows


def _poi_rows_from_geojson(path):
    rows = []
    for i, feat in enumerate(read_feature_collection(path)):
        props = feat.get("properties") or {}
        pid = props.get("id", i)
        geom = feat.get("geometry") or {}
        coords = geom.get("coordinates")
        if geom.get("type") == "Point" and coords and len(coords) >= 2:
            rows.append((pid, float(coords[0]), float(coords[1]), props.get("category")))
        else:
            rows.append((pid, None, None, props.get("category")))
    return rows


def load_admin_units(path) -> tuple[list[AdminUnit], LoadReport]:
    """Load administrative boundaries with population totals."""
    features = read_feature_collection(path)
    report = LoadReport(source=str(path))
    units: list[AdminUnit] = []
    for idx, feat in enumerate(features):
        props = feat.get("properties") or {}
        try:
            geom = shape(feat["geometry"])
        except Exception as exc:
            report.reject(idx, f"unparseable geometry: {exc}")
            continue
        if geom.geom_type not in ("Polygon", "MultiPolygon") or not geom.is_valid:
            report.reject(idx, "boundary is not a valid polygon")
            continue
        pop = int(props.get("total_population", 0))
        if pop < 0:
            report.reject(idx, "negative total_population")
            continue
        budget = props.get("residential_area_budget")
        units.append(
            AdminUnit(
                id=int(props.get("id", idx)),
                name=str(props.get("name", f"unit-{idx}")),
                boundary=geom,
                total_population=pop,
                residential_area_budget=float(budget) if budget is not None else None,
            )
        )
        report.accepted += 1
    return units, report


def load_constraints(path) -> tuple[list[ConstraintLayer], LoadReport]:
    """Load constraint polygons; kinds limited to steep_slope and water."""
    features = read_feature_collection(path)
    report = LoadReport(source=str(path))
    by_kind: dict[str, list[BaseGeometry]] = {}
    for idx, feat in enumerate(features):
        props = feat.get("properties") or {}
        kind = props.get("kind")
        if kind not in ("steep_slope", "water"):
            report.reject(idx, f"unknown constraint kind '{kind}'")
            continue
        try:
            geom = shape(feat["geometry"])
        except Exception as exc:
            report.reject(idx, f"unparseable geometry: {exc}")
            continue
        if not geom.is_valid:
            report.reject(idx, "invalid polygon")
            continue
        by_kind.setdefault(kind, []).append(geom)
        report.accepted += 1
    layers = [ConstraintLayer(kind=k, geometry=v) for k, v in sorted(by_kind.items())]
    return layers, report


def load_extent(path) -> BaseGeometry:
    """Read the bounding polygon (first polygon feature) of the study area."""
    for feat in read_feature_collection(path):
        geom = shape(feat["geometry"])
        if geom.geom_type in ("Polygon", "MultiPolygon"):
            return geom
    raise LoadError(f"{path}: no polygon feature found for the extent")


# ---------------------------------------------------------------------------
# census tables


def _normalize(values: dict[str, float], what: str) -> dict[str, float]:
    total = sum(values.values())
    if total <= 0:
        raise LoadError(f"{what}: values sum to 0, cannot normalize")
    if abs(total - 1.0) < 1e-12:
        return dict(values)  # already normalized; keep bitwise identity
    return {k: v / total for k, v in values.items()}


def load_census(path, income_path=None) -> CensusTables:
    """Load census marginals and cross-tabs from a directory of CSVs.

    Expects marginals.csv, crosstabs.csv and income.csv under `path`
    (income may live elsewhere via income_path). Counts or proportions are
    accepted; everything is normalized. Missing attribute tables or the
    three required cross-tab pairs are hard errors naming the attribute.
    """
    if not os.path.isdir(path):
        raise LoadError(f"census directory not found: {path}")
    marg_path = os.path.join(path, "marginals.csv")
    cross_path = os.path.join(path, "crosstabs.csv")
    if income_path is None:
        income_path = os.path.join(path, "income.csv")
    for p in (marg_path, cross_path, income_path):
        if not os.path.exists(p):
            raise LoadError(f"census table file not found: {p}")

    report = LoadReport(source=str(path))
    raw_marg: dict[int, dict[str, dict[str, float]]] = {}
    categories: dict[str, list[str]] = {}

    def note_category(attr: str, cat: str) -> None:
        cats = categories.setdefault(attr, [])
        if cat not in cats:
            cats.append(cat)

    with open(marg_path, newline="", encoding="utf-8") as fh:
        for rec in csv.DictReader(fh):
            admin = int(rec["admin_id"])
            attr = rec["attribute"].strip().upper()
            cat = rec["category"].strip()
            val = float(rec["value"])
            raw_marg.setdefault(admin, {}).setdefault(attr, {})[cat] = val
            note_category(attr, cat)

    # the income marginal comes from a separate survey table; "*" rows
    # apply to every admin unit
    income_rows: dict[str, dict[str, float]] = {}
    with open(income_path, newline="", encoding="utf-8") as fh:
        for rec in csv.DictReader(fh):
            admin = rec.get("admin_id", "*") or "*"
            cat = rec["category"].strip()
            income_rows.setdefault(admin, {})[cat] = float(rec["value"])
            note_category("INCOME", cat)
    for admin in raw_marg:
        table = income_rows.get(str(admin), income_rows.get("*"))
        if table:
            raw_marg[admin]["INCOME"] = dict(table)

    raw_cross: dict[int, dict[tuple[str, str], dict[str, dict[str, float]]]] = {}
    with open(cross_path, newline="", encoding="utf-8") as fh:
        for rec in csv.DictReader(fh):
            admin = int(rec["admin_id"])
            pair = (rec["parent_attr"].strip().upper(), rec["child_attr"].strip().upper())
            pcat = rec["parent_category"].strip()
            ccat = rec["child_category"].strip()
            tab = raw_cross.setdefault(admin, {}).setdefault(pair, {})
            tab.setdefault(pcat, {})[ccat] = float(rec["value"])
            note_category(pair[0], pcat)
            note_category(pair[1], ccat)

    marginals: dict[int, dict[str, dict[str, float]]] = {}
    for admin, tables in raw_marg.items():
        missing = [a for a in CENSUS_ATTRIBUTES if a not in tables]
        if missing:
            raise LoadError(
                f"admin unit {admin}: missing marginal table(s) for {missing}"
            )
        marginals[admin] = {
            attr: _normalize(vals, f"admin {admin} marginal {attr}")
            for attr, vals in tables.items()
        }

    crosstabs: dict[int, dict[tuple[str, str], dict[str, dict[str, float]]]] = {}
    for admin in marginals:
        tabs = raw_cross.get(admin, {})
        missing_pairs = [p for p in CROSSTAB_PAIRS if p not in tabs]
        if missing_pairs:
            raise LoadError(
                f"admin unit {admin}: missing cross-tabulation(s) for {missing_pairs}"
            )
        norm_tabs: dict[tuple[str, str], dict[str, dict[str, float]]] = {}
        for pair, rows in tabs.items():
            norm_rows: dict[str, dict[str, float]] = {}
            for pcat, row in rows.items():
                if sum(row.values()) <= 0:
                    report.warn(
                        f"admin {admin} {pair[0]}x{pair[1]}: row '{pcat}' is all "
                        "zero (unsamplable unless its parent probability is 0)"
                    )
                    norm_rows[pcat] = dict(row)
                else:
                    norm_rows[pcat] = _normalize(row, f"{pair} row {pcat}")
            norm_tabs[pair] = norm_rows
        crosstabs[admin] = norm_tabs
        report.accepted += 1

    return CensusTables(
        marginals=marginals, crosstabs=crosstabs, categories=categories, report=report
    )


# ---------------------------------------------------------------------------
# writers (round-trip support)


def save_roads(network: RoadNetwork, path) -> None:
    feats = [
        make_feature(seg.geometry, {"id": seg.id, "road_class": seg.road_class})
        for seg in network.segments
    ]
    write_feature_collection(path, feats)


def save_pois(pois: POISet, path) -> None:
    feats = [
        make_feature(p.location, {"id": p.id, "category": p.category})
        for p in pois.pois
    ]
    write_feature_collection(path, feats)


def save_admin_units(units: list[AdminUnit], path) -> None:
    feats = []
    for u in units:
        props = {"id": u.id, "name": u.name, "total_population": u.total_population}
        if u.residential_area_budget is not None:
            props["residential_area_budget"] = u.residential_area_budget
        feats.append(make_feature(u.boundary, props))
    write_feature_collection(path, feats)


def save_constraints(layers: list[ConstraintLayer], path) -> None:
    feats = [
        make_feature(geom, {"kind": layer.kind})
        for layer in layers
        for geom in layer.geometry
    ]
    write_feature_collection(path, feats)


def save_census(census: CensusTables, path) -> None:
    os.makedirs(path, exist_ok=True)
    with open(os.path.join(path, "marginals.csv"), "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["admin_id", "attribute", "category", "value"])
        for admin in sorted(census.marginals):
            for attr in CENSUS_ATTRIBUTES:
                if attr == "INCOME":
                    continue
                for cat in census.categories[attr]:
                    if cat in census.marginals[admin].get(attr, {}):
                        w.writerow([admin, attr, cat, repr(census.marginals[admin][attr][cat])])
    with open(os.path.join(path, "income.csv"), "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["admin_id", "category", "value"])
        for admin in sorted(census.marginals):
            for cat in census.categories["INCOME"]:
                if cat in census.marginals[admin].get("INCOME", {}):
                    w.writerow([admin, cat, repr(census.marginals[admin]["INCOME"][cat])])
    with open(os.path.join(path, "crosstabs.csv"), "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["admin_id", "parent_attr", "parent_category",
                    "child_attr", "child_category", "value"])
        for admin in sorted(census.crosstabs):
            for pair in CROSSTAB_PAIRS:
                rows = census.crosstabs[admin][pair]
                for pcat in census.categories[pair[0]]:
                    if pcat not in rows:
                        continue
                    for ccat in census.categories[pair[1]]:
                        if ccat in rows[pcat]:
                            w.writerow([admin, pair[0], pcat, pair[1], ccat,
                                        repr(rows[pcat][ccat])])
