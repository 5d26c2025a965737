"""Deterministic synthetic test city.

A 6 km x 6 km town on a 600 m road grid (100 interior blocks), with POIs
clustered around the center, two constraint patches in far corners, four
quadrant admin units, census tables, and an observed-urban layer for
calibration. Every placement decision is driven by counter-based
substreams of one seed, so the fixture is byte-stable across reruns.

The road layer deliberately contains a 150 m spur (must be trimmed), a
250 m spur (must survive trimming), and a 30 m gap in one grid line (must
be bridged by the 20 m end extensions).
"""

from __future__ import annotations

import csv
import math
import os

from shapely.geometry import LineString, Point, box
from shapely.ops import unary_union

from .config import PipelineConfig, save_config
from .geodata import make_feature, write_feature_collection
from .rng import substream, uniform_open

EXTENT = 6000.0
# uneven road spacing gives the 10x10 blocks a real size spread, so the
# log-area descriptor carries information instead of aliasing the intercept
GRID = [0.0, 700.0, 1200.0, 1850.0, 2400.0, 3000.0,
        3600.0, 4150.0, 4800.0, 5300.0, 6000.0]
CENTER = (3000.0, 3000.0)

UNIT_POPULATIONS = {1: 1200, 2: 1500, 3: 900, 4: 1400}

AGE_BANDS = ["0-15", "16-24", "25-44", "45-64", "65-89"]
AGE_PROBS = [0.16, 0.13, 0.34, 0.24, 0.13]
SEX_CATS = ["male", "female"]
SEX_PROBS = [0.51, 0.49]
MARRIAGE_CATS = ["unmarried", "married", "divorced", "remarried", "widowed"]
MARRIAGE_PROBS = [0.28, 0.58, 0.06, 0.04, 0.04]
EDU_CATS = ["elementary", "junior_middle", "high_school", "undergraduate"]
EDU_PROBS = [0.18, 0.34, 0.30, 0.18]
JOB_CATS = ["none", "production", "service", "professional", "farming"]
JOB_PROBS = [0.22, 0.28, 0.26, 0.16, 0.08]
INCOME_BANDS = ["0-999", "1000-2999", "3000-5999", "6000-9999", "10000-19999"]
INCOME_PROBS = [0.10, 0.28, 0.34, 0.18, 0.10]
FAMILYN_CATS = ["one_person", "two_persons", "three_persons", "four_persons", "five_plus"]
FAMILYN_PROBS = [0.14, 0.24, 0.36, 0.16, 0.10]

AGE_MARRIAGE = {
    "0-15": [1.00, 0.00, 0.00, 0.00, 0.00],
    "16-24": [0.85, 0.15, 0.00, 0.00, 0.00],
    "25-44": [0.25, 0.65, 0.06, 0.03, 0.01],
    "45-64": [0.06, 0.75, 0.08, 0.06, 0.05],
    "65-89": [0.02, 0.60, 0.04, 0.04, 0.30],
}
AGE_EDUCATION = {
    "0-15": [0.70, 0.30, 0.00, 0.00],
    "16-24": [0.05, 0.30, 0.40, 0.25],
    "25-44": [0.08, 0.27, 0.35, 0.30],
    "45-64": [0.25, 0.40, 0.25, 0.10],
    "65-89": [0.45, 0.35, 0.15, 0.05],
}
EDUCATION_JOB = {
    "elementary": [0.30, 0.35, 0.20, 0.03, 0.12],
    "junior_middle": [0.20, 0.38, 0.28, 0.06, 0.08],
    "high_school": [0.18, 0.30, 0.32, 0.16, 0.04],
    "undergraduate": [0.12, 0.10, 0.28, 0.48, 0.02],
}

POI_CATEGORY_PROBS = [
    ("RES", 0.40), ("COM", 0.18), ("FIR", 0.10), ("TRA", 0.08),
    ("GOV", 0.06), ("EDU", 0.08), ("GRE", 0.05), ("OTH", 0.05),
]


def _road_class(coord: float) -> str:
    if coord in (0.0, EXTENT):
        return "primary"
    if coord == EXTENT / 2:
        return "secondary"
    return "residential"


def _road_features() -> list[dict]:
    feats = []
    fid = 0
    for x in GRID:
        feats.append(make_feature(
            LineString([(x, 0.0), (x, EXTENT)]),
            {"id": fid, "road_class": _road_class(x)},
        ))
        fid += 1
    for y in GRID:
        if y == 2400.0:
            # 30 m gap around x = 3300, bridged by the 20 m end extensions
            feats.append(make_feature(
                LineString([(0.0, y), (3285.0, y)]),
                {"id": fid, "road_class": _road_class(y)}))
            fid += 1
            feats.append(make_feature(
                LineString([(3315.0, y), (EXTENT, y)]),
                {"id": fid, "road_class": _road_class(y)}))
            fid += 1
            continue
        feats.append(make_feature(
            LineString([(0.0, y), (EXTENT, y)]),
            {"id": fid, "road_class": _road_class(y)},
        ))
        fid += 1
    # 150 m spur: shorter than the 200 m dangle threshold, gets trimmed
    feats.append(make_feature(
        LineString([(900.0, 700.0), (900.0, 850.0)]),
        {"id": fid, "road_class": "residential"}))
    fid += 1
    # 250 m spur: survives trimming, notches the block above
    feats.append(make_feature(
        LineString([(2100.0, 1200.0), (2100.0, 1450.0)]),
        {"id": fid, "road_class": "residential"}))
    return feats


def _cell_center(i: int, j: int) -> tuple[float, float]:
    return ((GRID[i] + GRID[i + 1]) / 2.0, (GRID[j] + GRID[j + 1]) / 2.0)


def _poi_features(seed: int) -> list[dict]:
    feats = []
    pid = 0
    n = len(GRID) - 1
    for i in range(n):
        for j in range(n):
            cx, cy = _cell_center(i, j)
            half_w = (GRID[i + 1] - GRID[i]) / 2.0 - 20.0
            half_h = (GRID[j + 1] - GRID[j]) / 2.0 - 20.0
            d = math.hypot(cx - CENTER[0], cy - CENTER[1])
            count = int(round(20.0 * math.exp(-d / 1800.0)))
            gen = substream(seed, 100 + i, j)
            for _ in range(count):
                x = gen.uniform(cx - half_w, cx + half_w)
                y = gen.uniform(cy - half_h, cy + half_h)
                u = gen.random()
                acc = 0.0
                cat = "OTH"
                for name, p in POI_CATEGORY_PROBS:
                    acc += p
                    if u < acc:
                        cat = name
                        break
                feats.append(make_feature(Point(x, y),
                                          {"id": pid, "category": cat}))
                pid += 1
    # a few POIs inside road buffers: assigned to their nearest parcel
    for x, y in ((1200.0, 1805.0), (3000.0, 3002.0), (4205.0, 4200.0)):
        feats.append(make_feature(Point(x, y), {"id": pid, "category": "RES"}))
        pid += 1
    # two POIs outside the extent: kept but flagged by the loader
    for x, y in ((-150.0, 300.0), (6200.0, 5900.0)):
        feats.append(make_feature(Point(x, y), {"id": pid, "category": "COM"}))
        pid += 1
    return feats


def _admin_features() -> list[dict]:
    half = EXTENT / 2
    quads = {
        1: box(0, 0, half, half),
        2: box(half, 0, EXTENT, half),
        3: box(0, half, half, EXTENT),
        4: box(half, half, EXTENT, EXTENT),
    }
    return [
        make_feature(geom, {
            "id": uid,
            "name": f"quadrant-{uid}",
            "total_population": UNIT_POPULATIONS[uid],
        })
        for uid, geom in quads.items()
    ]


def _constraint_features() -> list[dict]:
    return [
        make_feature(box(GRID[8], 0, GRID[10], GRID[1]), {"kind": "water"}),
        make_feature(box(0, GRID[9], GRID[1], GRID[10]), {"kind": "steep_slope"}),
    ]


def _truth_cells(seed: int) -> list[tuple[int, int]]:
    """Urban ground-truth blocks, graded by distance from the center.

    The urban probability falls smoothly with distance so the calibration
    classes overlap in feature space; a hard disk would be linearly
    separable at this parcel count and blow up the logistic fit.
    """
    cells = []
    n = len(GRID) - 1
    for i in range(n):
        for j in range(n):
            cx, cy = _cell_center(i, j)
            d = math.hypot(cx - CENTER[0], cy - CENTER[1])
            p_urban = 1.0 / (1.0 + math.exp((d - 2300.0) / 350.0))
            urban = uniform_open(seed, 500, i * n + j) < p_urban
            # constraint corners are never built up
            if (i >= 8 and j == 0) or (i == 0 and j == 9):
                urban = False
            if urban:
                cells.append((i, j))
    return cells


def _truth_features(seed: int) -> list[dict]:
    polys = [box(GRID[i], GRID[j], GRID[i + 1], GRID[j + 1])
             for i, j in _truth_cells(seed)]
    return [make_feature(unary_union(polys), {"kind": "observed_urban"})]


def _unit_age_probs(uid: int) -> list[float]:
    # small per-unit shift so plans genuinely differ between units
    shift = (uid - 1) * 0.01
    p = list(AGE_PROBS)
    p[0] -= shift
    p[2] += shift
    return p


def _write_census(census_dir: str) -> None:
    os.makedirs(census_dir, exist_ok=True)
    with open(os.path.join(census_dir, "marginals.csv"), "w", newline="",
              encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["admin_id", "attribute", "category", "value"])
        for uid, pop in UNIT_POPULATIONS.items():
            tables = [
                ("AGE", AGE_BANDS, _unit_age_probs(uid)),
                ("SEX", SEX_CATS, SEX_PROBS),
                ("MARRIAGE", MARRIAGE_CATS, MARRIAGE_PROBS),
                ("EDUCATION", EDU_CATS, EDU_PROBS),
                ("JOB", JOB_CATS, JOB_PROBS),
                ("FAMILYN", FAMILYN_CATS, FAMILYN_PROBS),
            ]
            for attr, cats, probs in tables:
                for cat, p in zip(cats, probs):
                    w.writerow([uid, attr, cat, round(p * pop, 3)])
    with open(os.path.join(census_dir, "income.csv"), "w", newline="",
              encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["admin_id", "category", "value"])
        for cat, p in zip(INCOME_BANDS, INCOME_PROBS):
            w.writerow(["*", cat, p])
    with open(os.path.join(census_dir, "crosstabs.csv"), "w", newline="",
              encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["admin_id", "parent_attr", "parent_category",
                    "child_attr", "child_category", "value"])
        for uid, pop in UNIT_POPULATIONS.items():
            age_probs = _unit_age_probs(uid)
            for band, ap in zip(AGE_BANDS, age_probs):
                for cat, cp in zip(MARRIAGE_CATS, AGE_MARRIAGE[band]):
                    if cp > 0:
                        w.writerow([uid, "AGE", band, "MARRIAGE", cat,
                                    round(ap * cp * pop, 3)])
                for cat, cp in zip(EDU_CATS, AGE_EDUCATION[band]):
                    if cp > 0:
                        w.writerow([uid, "AGE", band, "EDUCATION", cat,
                                    round(ap * cp * pop, 3)])
            for edu, ep in zip(EDU_CATS, EDU_PROBS):
                for cat, cp in zip(JOB_CATS, EDUCATION_JOB[edu]):
                    if cp > 0:
                        w.writerow([uid, "EDUCATION", edu, "JOB", cat,
                                    round(ep * cp * pop, 3)])


def generate(out_dir, seed: int = 42) -> PipelineConfig:
    """Write the full toy-city dataset plus a ready-to-run config."""
    os.makedirs(out_dir, exist_ok=True)
    write_feature_collection(os.path.join(out_dir, "roads.geojson"),
                             _road_features())
    write_feature_collection(os.path.join(out_dir, "pois.geojson"),
                             _poi_features(seed))
    write_feature_collection(os.path.join(out_dir, "admin_units.geojson"),
                             _admin_features())
    write_feature_collection(os.path.join(out_dir, "constraints.geojson"),
                             _constraint_features())
    write_feature_collection(os.path.join(out_dir, "extent.geojson"),
                             [make_feature(box(0, 0, EXTENT, EXTENT), {})])
    write_feature_collection(os.path.join(out_dir, "urban_truth.geojson"),
                             _truth_features(seed))
    _write_census(os.path.join(out_dir, "census"))

    cfg = PipelineConfig()
    cfg.city_center = list(CENTER)
    cfg.crs_note = "synthetic planar meters"
    cfg.seed = seed
    cfg.paths.roads = os.path.join(out_dir, "roads.geojson")
    cfg.paths.pois = os.path.join(out_dir, "pois.geojson")
    cfg.paths.admin_units = os.path.join(out_dir, "admin_units.geojson")
    cfg.paths.constraints = os.path.join(out_dir, "constraints.geojson")
    cfg.paths.extent = os.path.join(out_dir, "extent.geojson")
    cfg.paths.census_dir = os.path.join(out_dir, "census")
    cfg.paths.urban_truth = os.path.join(out_dir, "urban_truth.geojson")
    cfg.ca.urban_area_budget = 14.0e6
    cfg.allocation.residential_area_budget = 6.0e6
    save_config(cfg, os.path.join(out_dir, "config.json"))
    return cfg
