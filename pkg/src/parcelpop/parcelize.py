"""Parcel delineation from a classified road network.

Six steps: merge/node the road lines, trim short dangling chains, extend
free ends to bridge small gaps, buffer by road class into the road space,
take the complement against the study extent, and tag parcels with the
admin unit containing their representative point.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from enum import Enum

from shapely import STRtree
from shapely.geometry import LineString, Point, Polygon, MultiPolygon
from shapely.geometry.base import BaseGeometry
from shapely.ops import substring, unary_union

from .geodata import (
    AdminUnit,
    RoadNetwork,
    make_feature,
    read_feature_collection,
    write_feature_collection,
)
from shapely.geometry import shape

log = logging.getLogger(__name__)

EPS_SNAP = 0.01  # noding / node-key tolerance, meters
DEFAULT_TRIM_THRESHOLD = 200.0
DEFAULT_EXTENSION = 20.0
DEFAULT_MIN_AREA = 1000.0


class ParcelizeError(ValueError):
    pass


class Status(Enum):
    NON_URBAN = "NonUrban"
    URBAN = "Urban"


@dataclass(frozen=True)
class LineSeg:
    geometry: LineString
    road_class: str

    @property
    def length(self) -> float:
        return self.geometry.length


@dataclass
class LineSet:
    segments: list[LineSeg]

    def __len__(self) -> int:
        return len(self.segments)

    def total_length(self) -> float:
        return sum(s.length for s in self.segments)


@dataclass
class RoadSpace:
    geometry: BaseGeometry  # multipolygon union of per-segment buffers

    @property
    def area(self) -> float:
        return self.geometry.area


@dataclass
class Parcel:
    id: int
    geometry: BaseGeometry
    area: float
    perimeter: float
    admin_id: int | None = None
    status: Status = Status.NON_URBAN
    residential: bool = False

    def __post_init__(self):
        if self.residential and self.status is not Status.URBAN:
            raise ParcelizeError(
                f"parcel {self.id}: residential requires Urban status"
            )


@dataclass
class ParcelSet:
    parcels: list[Parcel]
    dropped_count: int = 0
    dropped_area: float = 0.0
    unassigned: list[int] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.parcels)

    def by_id(self) -> dict[int, Parcel]:
        return {p.id: p for p in self.parcels}

    def total_area(self) -> float:
        return sum(p.area for p in self.parcels)


# ---------------------------------------------------------------------------
# node/graph helpers


def _snap_value(v: float, eps: float = EPS_SNAP) -> float:
    return round(v / eps) * eps


def _node_key(x: float, y: float, eps: float = EPS_SNAP) -> tuple[int, int]:
    return (round(x / eps), round(y / eps))


def _quantize_line(geom: LineString, eps: float = EPS_SNAP) -> LineString | None:
    coords = [(_snap_value(x, eps), _snap_value(y, eps)) for x, y in geom.coords]
    dedup = [coords[0]]
    for c in coords[1:]:
        if c != dedup[-1]:
            dedup.append(c)
    if len(dedup) < 2:
        return None
    return LineString(dedup)


def _segment_key(geom: LineString, eps: float = EPS_SNAP):
    coords = tuple(_node_key(x, y, eps) for x, y in geom.coords)
    return min(coords, coords[::-1])


def _dedupe(segments: list[LineSeg], width_of) -> list[LineSeg]:
    """Drop duplicate geometries; on class conflict keep the wider road."""
    best: dict[tuple, LineSeg] = {}
    order: list[tuple] = []
    for seg in segments:
        key = _segment_key(seg.geometry)
        if key not in best:
            best[key] = seg
            order.append(key)
        elif width_of(seg.road_class) > width_of(best[key].road_class):
            best[key] = seg
    return [best[k] for k in order]


def _node_all(segments: list[LineSeg], width_of) -> list[LineSeg]:
    """Split every segment at its intersections with the others."""
    if not segments:
        return []
    geoms = [s.geometry for s in segments]
    tree = STRtree(geoms)
    cuts: list[set[float]] = [set() for _ in segments]

    def add_cut(i: int, pt: Point) -> None:
        d = geoms[i].project(pt)
        if 1e-9 < d < geoms[i].length - 1e-9:
            cuts[i].add(d)

    for i, gi in enumerate(geoms):
        for j in tree.query(gi):
            j = int(j)
            if j <= i:
                continue
            inter = gi.intersection(geoms[j])
            if inter.is_empty:
                continue
            for pt in _intersection_points(inter):
                add_cut(i, pt)
                add_cut(j, pt)

    out: list[LineSeg] = []
    for i, seg in enumerate(segments):
        if not cuts[i]:
            out.append(seg)
            continue
        stops = [0.0] + sorted(cuts[i]) + [seg.geometry.length]
        for a, b in zip(stops[:-1], stops[1:]):
            piece = substring(seg.geometry, a, b)
            if piece.length > 1e-9:
                out.append(LineSeg(geometry=piece, road_class=seg.road_class))
    return _dedupe(out, width_of)


def _intersection_points(geom: BaseGeometry):
    """Point set where two lines meet; overlaps contribute their endpoints."""
    t = geom.geom_type
    if t == "Point":
        yield geom
    elif t == "MultiPoint":
        yield from geom.geoms
    elif t == "LineString":
        yield Point(geom.coords[0])
        yield Point(geom.coords[-1])
    elif t in ("MultiLineString", "GeometryCollection"):
        for g in geom.geoms:
            yield from _intersection_points(g)


def _incidence(segments: list[LineSeg], eps: float = EPS_SNAP):
    """node key -> list of (segment index, end index)."""
    incid: dict[tuple[int, int], list[tuple[int, int]]] = {}
    for i, seg in enumerate(segments):
        coords = list(seg.geometry.coords)
        for end, (x, y) in ((0, coords[0]), (1, coords[-1])):
            incid.setdefault(_node_key(x, y, eps), []).append((i, end))
    return incid


# ---------------------------------------------------------------------------
# the six delineation steps


def merge_roads(network: RoadNetwork) -> LineSet:
    """Merge segments into one noded layer, snapping nodes within EPS_SNAP."""
    width_of = _width_lookup(network.class_width_map)
    segs: list[LineSeg] = []
    for s in network.segments:
        q = _quantize_line(s.geometry)
        if q is None:
            log.warning("segment %d collapsed during snapping, dropped", s.id)
            continue
        segs.append(LineSeg(geometry=q, road_class=s.road_class))
    segs = _dedupe(segs, width_of)
    segs = _node_all(segs, width_of)
    log.info("merged %d input segments into %d noded segments",
             len(network.segments), len(segs))
    return LineSet(segments=segs)


def trim_dangles(lines: LineSet, threshold: float = DEFAULT_TRIM_THRESHOLD) -> LineSet:
    """Remove dangling chains shorter than the threshold, to fixpoint.

    A dangling chain starts at a free (degree-1) node and runs through
    degree-2 nodes until a junction or another free end; its length is the
    sum of member segment lengths. Removal can create new dangles, so the
    pass repeats until nothing changes.
    """
    if threshold <= 0:
        raise ParcelizeError("trim threshold must be > 0")
    segments = list(lines.segments)
    while True:
        incid = _incidence(segments)
        removed: set[int] = set()
        claimed: set[int] = set()
        for key, ends in incid.items():
            if len(ends) != 1:
                continue
            seg_idx, end = ends[0]
            if seg_idx in claimed:
                continue
            chain, length = _walk_chain(segments, incid, seg_idx, end)
            claimed.update(chain)
            if length < threshold:
                removed.update(chain)
        if not removed:
            break
        segments = [s for i, s in enumerate(segments) if i not in removed]
    return LineSet(segments=segments)


def _walk_chain(segments, incid, seg_idx: int, entry_end: int):
    """Follow a chain from a free end until a junction; return (ids, length)."""
    chain = [seg_idx]
    length = segments[seg_idx].length
    cur_seg, cur_end = seg_idx, 1 - entry_end
    while True:
        coords = list(segments[cur_seg].geometry.coords)
        x, y = coords[-1] if cur_end == 1 else coords[0]
        ends = incid[_node_key(x, y)]
        if len(ends) != 2:
            break  # junction (>=3) or another free end (1)
        nxt = [e for e in ends if e != (cur_seg, cur_end)]
        if not nxt or nxt[0][0] == cur_seg:
            break  # self-loop guard
        nseg, nend = nxt[0]
        if nseg in chain:
            break
        chain.append(nseg)
        length += segments[nseg].length
        cur_seg, cur_end = nseg, 1 - nend
    return chain, length


def extend_segments(lines: LineSet, extension: float = DEFAULT_EXTENSION,
                    class_width_map: dict[str, float] | None = None) -> LineSet:
    """Extend every free end along its terminal bearing, then re-node."""
    if extension < 0:
        raise ParcelizeError("extension must be >= 0")
    if extension == 0 or not lines.segments:
        return LineSet(segments=list(lines.segments))
    segments = list(lines.segments)
    incid = _incidence(segments)
    free: set[tuple[int, int]] = set()
    for ends in incid.values():
        if len(ends) == 1:
            free.add(ends[0])

    extended: list[LineSeg] = []
    for i, seg in enumerate(segments):
        coords = list(seg.geometry.coords)
        if (i, 0) in free:
            coords.insert(0, _extrapolate(coords[1], coords[0], extension))
        if (i, 1) in free:
            coords.append(_extrapolate(coords[-2], coords[-1], extension))
        extended.append(LineSeg(geometry=LineString(coords), road_class=seg.road_class))

    width_of = _width_lookup(class_width_map or {})
    return LineSet(segments=_node_all(extended, width_of))


def _extrapolate(prev, tip, dist: float):
    dx, dy = tip[0] - prev[0], tip[1] - prev[1]
    norm = (dx * dx + dy * dy) ** 0.5
    if norm == 0:
        return tip
    return (tip[0] + dx / norm * dist, tip[1] + dy / norm * dist)


def _width_lookup(class_width_map: dict[str, float]):
    def width_of(cls: str) -> float:
        if cls in class_width_map:
            return float(class_width_map[cls])
        if "default" in class_width_map:
            return float(class_width_map["default"])
        return 0.0

    return width_of


def buffer_roads(lines: LineSet, class_width_map: dict[str, float]) -> RoadSpace:
    """Union of flat-capped, round-joined buffers at per-class half-widths."""
    buffers = []
    for seg in lines.segments:
        if seg.road_class in class_width_map:
            half = float(class_width_map[seg.road_class])
        elif "default" in class_width_map:
            half = float(class_width_map["default"])
        else:
            raise ParcelizeError(
                f"no buffer half-width for road class '{seg.road_class}'"
            )
        buffers.append(seg.geometry.buffer(half, cap_style="flat", join_style="round"))
    if not buffers:
        return RoadSpace(geometry=Polygon())
    return RoadSpace(geometry=unary_union(buffers))


def polygonize_complement(extent: BaseGeometry, road_space: RoadSpace,
                          min_area: float = DEFAULT_MIN_AREA) -> ParcelSet:
    """Parcels are the connected faces of extent minus road space."""
    if extent.is_empty or not extent.is_valid:
        raise ParcelizeError("extent polygon is empty or invalid")
    remainder = extent.difference(road_space.geometry)
    pieces: list[Polygon] = []
    _collect_polygons(remainder, pieces)

    kept, dropped, dropped_area = [], 0, 0.0
    for poly in pieces:
        if poly.area >= min_area:
            kept.append(poly)
        else:
            dropped += 1
            dropped_area += poly.area
    if dropped:
        log.info("dropped %d slivers below %.0f m^2 (%.1f m^2 total)",
                 dropped, min_area, dropped_area)

    # stable ids: sweep parcels by centroid position
    kept.sort(key=lambda p: (round(p.centroid.x, 6), round(p.centroid.y, 6)))
    parcels = [
        Parcel(id=i + 1, geometry=poly, area=poly.area, perimeter=poly.length)
        for i, poly in enumerate(kept)
    ]
    return ParcelSet(parcels=parcels, dropped_count=dropped, dropped_area=dropped_area)


def _collect_polygons(geom: BaseGeometry, out: list[Polygon]) -> None:
    if geom.is_empty:
        return
    if isinstance(geom, Polygon):
        out.append(geom)
    elif isinstance(geom, MultiPolygon) or geom.geom_type == "GeometryCollection":
        for g in geom.geoms:
            _collect_polygons(g, out)


def assign_admin(parcels: ParcelSet, units: list[AdminUnit]) -> ParcelSet:
    """Tag each parcel with the unit containing its representative point."""
    boundaries = [u.boundary for u in units]
    tree = STRtree(boundaries) if boundaries else None
    assigned: list[Parcel] = []
    unassigned: list[int] = []
    for p in parcels.parcels:
        rp = p.geometry.representative_point()
        admin_id = None
        if tree is not None:
            hits = [int(k) for k in tree.query(rp, predicate="intersects")]
            containing = sorted(units[k].id for k in hits if boundaries[k].covers(rp))
            if containing:
                admin_id = containing[0]
        if admin_id is None:
            unassigned.append(p.id)
        assigned.append(replace(p, admin_id=admin_id))
    if unassigned:
        log.warning("%d parcels outside all admin units", len(unassigned))
    return ParcelSet(
        parcels=assigned,
        dropped_count=parcels.dropped_count,
        dropped_area=parcels.dropped_area,
        unassigned=unassigned,
    )


def delineate(network: RoadNetwork, extent: BaseGeometry,
              units: list[AdminUnit] | None = None,
              trim_threshold: float = DEFAULT_TRIM_THRESHOLD,
              extension: float = DEFAULT_EXTENSION,
              min_area: float = DEFAULT_MIN_AREA) -> tuple[ParcelSet, RoadSpace, LineSet]:
    """Run all six steps; returns (parcels, road space, final line layer)."""
    lines = merge_roads(network)
    lines = trim_dangles(lines, trim_threshold)
    lines = extend_segments(lines, extension, network.class_width_map)
    space = buffer_roads(lines, network.class_width_map)
    parcels = polygonize_complement(extent, space, min_area)
    if units:
        parcels = assign_admin(parcels, units)
    return parcels, space, lines


# ---------------------------------------------------------------------------
# parcel I/O


def save_parcels(parcels: ParcelSet, path, extra: dict[int, dict] | None = None) -> None:
    feats = []
    for p in parcels.parcels:
        props = {
            "id": p.id,
            "area": p.area,
            "perimeter": p.perimeter,
            "admin_id": p.admin_id,
        }
        if extra and p.id in extra:
            props.update(extra[p.id])
        feats.append(make_feature(p.geometry, props))
    write_feature_collection(path, feats)


def load_parcels(path) -> ParcelSet:
    parcels = []
    for feat in read_feature_collection(path):
        props = feat.get("properties") or {}
        geom = shape(feat["geometry"])
        parcels.append(
            Parcel(
                id=int(props["id"]),
                geometry=geom,
                area=float(props.get("area", geom.area)),
                perimeter=float(props.get("perimeter", geom.length)),
                admin_id=props.get("admin_id"),
                status=Status(props["status"]) if "status" in props else Status.NON_URBAN,
                residential=bool(props.get("residential", False)),
            )
        )
    return ParcelSet(parcels=parcels)
