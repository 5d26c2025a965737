"""Stage orchestration with file-based handoff and a run manifest.

Stages communicate only through files in the output directory, so any
stage can be rerun in isolation. The manifest records input hashes, the
seed, a config echo, per-stage output hashes and timings; output hashes
are pure functions of (inputs, config, seed), which is what the
rerun-stability check compares.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import time
from dataclasses import dataclass

import numpy as np
from shapely.geometry import Point, shape
from shapely.ops import unary_union

from . import allocate as alloc_mod
from . import ca as ca_mod
from . import features as feat_mod
from . import logit, metrics, synthesize
from .config import PipelineConfig, config_to_dict
from .geodata import (
    CityContext,
    load_admin_units,
    load_census,
    load_constraints,
    load_extent,
    load_pois,
    load_roads,
    make_feature,
    read_feature_collection,
    write_feature_collection,
)
from .parcelize import ParcelSet, Status, delineate, load_parcels, save_parcels

log = logging.getLogger(__name__)

STAGES = ("parcelize", "features", "calibrate", "ca", "allocate",
          "synthesize", "validate")


class StageError(RuntimeError):
    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"stage '{stage}' failed: {cause}")
        self.stage = stage
        self.cause = cause


class StageInputError(ValueError):
    pass


@dataclass
class RunContext:
    cfg: PipelineConfig
    out_dir: str
    threads: int = 1
    dump_intermediates: bool = False

    def path(self, name: str) -> str:
        return os.path.join(self.out_dir, name)

    def require(self, name: str, producer: str) -> str:
        p = self.path(name)
        if not os.path.exists(p):
            raise StageInputError(
                f"missing {name}; run the '{producer}' stage first"
            )
        return p

    def city(self) -> CityContext:
        extent = load_extent(self.cfg.paths.extent)
        return CityContext(
            city_center=Point(*self.cfg.city_center),
            extent=extent,
            crs_note=self.cfg.crs_note,
        )


def _sha256(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


# ---------------------------------------------------------------------------
# stages


def stage_parcelize(ctx: RunContext) -> list[str]:
    cfg = ctx.cfg
    network = load_roads(cfg.paths.roads, cfg.parcelize.class_width_map)
    extent = load_extent(cfg.paths.extent)
    units, _ = load_admin_units(cfg.paths.admin_units)
    parcels, space, lines = delineate(
        network, extent, units,
        trim_threshold=cfg.parcelize.trim_threshold,
        extension=cfg.parcelize.extension,
        min_area=cfg.parcelize.min_area,
    )
    save_parcels(parcels, ctx.path("parcels.geojson"))
    write_feature_collection(ctx.path("road_space.geojson"),
                             [make_feature(space.geometry, {"kind": "road_space"})])
    outputs = ["parcels.geojson", "road_space.geojson"]
    if ctx.dump_intermediates:
        feats = [make_feature(s.geometry, {"road_class": s.road_class})
                 for s in lines.segments]
        write_feature_collection(ctx.path("final_lines.geojson"), feats)
        outputs.append("final_lines.geojson")
    return outputs


def stage_features(ctx: RunContext) -> list[str]:
    cfg = ctx.cfg
    parcels = load_parcels(ctx.require("parcels.geojson", "parcelize"))
    city = ctx.city()
    pois = load_pois(cfg.paths.pois, extent=city.extent,
                     drop_outside=cfg.features.exclude_outside_pois)
    feats = feat_mod.compute_features(parcels, pois, city)
    feat_mod.save_features(feats, ctx.path("features.csv"))
    return ["features.csv"]


def stage_calibrate(ctx: RunContext) -> list[str]:
    cfg = ctx.cfg
    if cfg.paths.model:
        model = logit.LogisticModel.load(cfg.paths.model)
        log.info("using pre-supplied model from %s (fit skipped)", cfg.paths.model)
        model.save(ctx.path("model.json"))
        return ["model.json"]
    if not cfg.paths.urban_truth:
        raise StageInputError(
            "calibration needs paths.urban_truth (observed urban polygons) "
            "or a pre-supplied paths.model file"
        )
    parcels = load_parcels(ctx.require("parcels.geojson", "parcelize"))
    feats = feat_mod.load_features(ctx.require("features.csv", "features"))
    truth = unary_union([
        shape(f["geometry"]) for f in read_feature_collection(cfg.paths.urban_truth)
    ])
    ids = sorted(feats)
    X = np.array([feats[pid].model_row(cfg.model.features) for pid in ids])
    by_id = parcels.by_id()
    y = np.array([
        1.0 if by_id[pid].geometry.intersection(truth).area / by_id[pid].area
        >= cfg.model.label_overlap_fraction else 0.0
        for pid in ids
    ])
    model = logit.fit_logistic(X, y, feature_names=list(cfg.model.features),
                               max_iter=cfg.model.max_iter, tol=cfg.model.tol)
    acc = logit.classification_accuracy(model, X, y)
    log.info("calibrated on %d parcels, accuracy %.3f", len(ids), acc)
    model.save(ctx.path("model.json"))
    return ["model.json"]


def stage_ca(ctx: RunContext, budget: float | None = None) -> list[str]:
    cfg = ctx.cfg
    parcels = load_parcels(ctx.require("parcels.geojson", "parcelize"))
    feats = feat_mod.load_features(ctx.require("features.csv", "features"))
    model = logit.LogisticModel.load(ctx.require("model.json", "calibrate"))
    constraints, _ = load_constraints(cfg.paths.constraints)

    if budget is None:
        budget = cfg.ca.urban_area_budget
    if budget is None:
        raise StageInputError("ca.urban_area_budget is not set")

    ids = [p.id for p in parcels.parcels]
    X = np.array([feats[pid].model_row(model.features) for pid in sorted(ids)])
    potentials = dict(zip(sorted(ids), model.predict(X)))
    masks = {
        p.id: ca_mod.constraint_mask(p.geometry, p.area, constraints,
                                     cfg.ca.overlap_threshold)
        for p in parcels.parcels
    }
    graph = ca_mod.build_neighbor_graph(parcels, cfg.ca.neighborhood_radius)
    inputs = ca_mod.CAInputs(
        ids=sorted(ids),
        areas={p.id: p.area for p in parcels.parcels},
        local_potentials=potentials,
        masks=masks,
        graph=graph,
    )
    params = ca_mod.CAParams(
        p_thd=cfg.ca.p_thd,
        beta=cfg.ca.beta,
        neighborhood_radius=cfg.ca.neighborhood_radius,
        max_iterations=cfg.ca.max_iterations,
        rng_seed=cfg.seed,
        omega_floor=cfg.ca.omega_floor,
        fill_fraction=cfg.ca.fill_fraction,
        seed_fraction=cfg.ca.seed_fraction,
    )
    result = ca_mod.run(inputs, params, budget, threads=ctx.threads)
    ca_mod.save_status(result, ctx.path("ca_status.csv"))
    ca_mod.save_log(result, ctx.path("ca_log.json"))
    outputs = ["ca_status.csv", "ca_log.json"]
    if cfg.ca.snapshots:
        outputs.extend(_write_snapshots(ctx, parcels, result))
    return outputs


def _write_snapshots(ctx: RunContext, parcels: ParcelSet,
                     result: ca_mod.CAResult) -> list[str]:
    snap_dir = ctx.path("ca_snapshots")
    os.makedirs(snap_dir, exist_ok=True)
    urban: set[int] = set()
    outputs = []
    for entry in result.log:
        urban.update(entry["converted"])
        feats = [
            make_feature(p.geometry, {
                "id": p.id,
                "status": Status.URBAN.value if p.id in urban
                else Status.NON_URBAN.value,
            })
            for p in parcels.parcels
        ]
        name = os.path.join("ca_snapshots", f"iter_{entry['iteration']:03d}.geojson")
        write_feature_collection(ctx.path(name), feats)
        outputs.append(name)
    return outputs


def stage_allocate(ctx: RunContext) -> list[str]:
    cfg = ctx.cfg
    parcels = load_parcels(ctx.require("parcels.geojson", "parcelize"))
    feats = feat_mod.load_features(ctx.require("features.csv", "features"))
    status = ca_mod.load_status(ctx.require("ca_status.csv", "ca"))
    units, _ = load_admin_units(cfg.paths.admin_units)

    budget = cfg.allocation.residential_area_budget
    if budget is None:
        unit_budgets = [u.residential_area_budget for u in units]
        if any(b is None for b in unit_budgets):
            raise StageInputError(
                "allocation.residential_area_budget is not set and not every "
                "admin unit carries one"
            )
        budget = float(sum(unit_budgets))

    candidates = [
        alloc_mod.ResidentialParcel(
            parcel_id=p.id, admin_id=p.admin_id, area=p.area,
            residential_density_std=feats[p.id].residential_density_std,
        )
        for p in parcels.parcels if status.get(p.id) is Status.URBAN
    ]
    selected = set(alloc_mod.select_residential(candidates, budget))
    residential = [c for c in candidates if c.parcel_id in selected]
    totals = {u.id: u.total_population for u in units}
    allocation = alloc_mod.allocate_population(
        totals, residential, weight_mode=cfg.allocation.weight_mode)
    allocation.write_csv(ctx.path("allocation.csv"))
    return ["allocation.csv"]


def _load_allocation(path) -> alloc_mod.ResidentialAllocation:
    import csv as _csv

    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        for rec in _csv.DictReader(fh):
            rows.append(alloc_mod.AllocationRow(
                parcel_id=int(rec["parcel_id"]),
                admin_id=int(rec["admin_id"]),
                residential_density_std=0.0,
                population=int(rec["population"]),
            ))
    return alloc_mod.ResidentialAllocation(rows=rows)


def stage_synthesize(ctx: RunContext) -> list[str]:
    cfg = ctx.cfg
    allocation = _load_allocation(ctx.require("allocation.csv", "allocate"))
    feats = feat_mod.load_features(ctx.require("features.csv", "features"))
    census = load_census(cfg.paths.census_dir, income_path=cfg.paths.income)
    plan = synthesize.build_conditionals(
        census, age_cap=cfg.synthesis.age_cap, income_cap=cfg.synthesis.income_cap)
    plan.save(ctx.path("plan.json"))
    tam = {pid: f.center_distance for pid, f in feats.items()}
    agents = synthesize.synthesize(
        allocation, plan, tam, cfg.seed,
        working_age=cfg.synthesis.working_age,
        apply_working_age_rule=cfg.synthesis.apply_working_age_rule,
    )
    parcels = load_parcels(ctx.require("parcels.geojson", "parcelize"))
    geoms = {p.id: p.geometry for p in parcels.parcels}
    synthesize.export_agents(
        agents, ctx.path("agents.csv"), ctx.path("agents.geojson"),
        parcel_geoms=geoms, jitter=cfg.synthesis.jitter_points, seed=cfg.seed,
    )
    return ["plan.json", "agents.csv", "agents.geojson"]


def stage_validate(ctx: RunContext) -> list[str]:
    cfg = ctx.cfg
    agents = synthesize.AgentSet.read_csv(ctx.require("agents.csv", "synthesize"))
    allocation = _load_allocation(ctx.path("allocation.csv"))
    feats = feat_mod.load_features(ctx.path("features.csv"))
    census = load_census(cfg.paths.census_dir, income_path=cfg.paths.income)
    plan = synthesize.build_conditionals(
        census, age_cap=cfg.synthesis.age_cap, income_cap=cfg.synthesis.income_cap)
    tam = {pid: f.center_distance for pid, f in feats.items()}

    si_cfg = metrics.SimilarityConfig(ratio_tolerances={
        "AGE": cfg.metrics.age_tolerance,
        "INCOME": cfg.metrics.income_tolerance,
        "TAM": cfg.metrics.tam_tolerance,
    })
    reference = synthesize.synthesize(
        allocation, plan, tam, cfg.seed + 1000,
        working_age=cfg.synthesis.working_age,
        apply_working_age_rule=cfg.synthesis.apply_working_age_rule,
    )
    null_set = synthesize.null_synthesize(allocation, plan, tam, cfg.seed + 2000)
    report: dict = {
        "agents": len(agents),
        "allocated": allocation.total(),
        "similarity_index": metrics.similarity_index(agents, reference, config=si_cfg),
        "similarity_index_null": metrics.similarity_index(null_set, reference,
                                                          config=si_cfg),
        "marginal_tv": _marginal_tv(agents, plan, allocation),
    }

    pops = allocation.by_parcel()
    pids = sorted(pops)
    if len(pids) >= 2:
        x = [feats[pid].res_poi_count for pid in pids]
        y = [pops[pid] for pid in pids]
        try:
            report["pearson_population_vs_res_pois"] = metrics.pearson(x, y)
        except metrics.MetricError as exc:
            report["pearson_population_vs_res_pois"] = None
            report["pearson_note"] = str(exc)

    if cfg.paths.urban_truth and os.path.exists(ctx.path("ca_status.csv")):
        parcels = load_parcels(ctx.path("parcels.geojson"))
        status = ca_mod.load_status(ctx.path("ca_status.csv"))
        urban = [p for p in parcels.parcels if status.get(p.id) is Status.URBAN]
        truth_polys = [shape(f["geometry"])
                       for f in read_feature_collection(cfg.paths.urban_truth)]
        truth_set = [type("T", (), {"geometry": g})() for g in truth_polys]
        if urban:
            report["urban_overlap_ratio"] = metrics.area_overlap_ratio(urban, truth_set)

    with open(ctx.path("validation.json"), "w", encoding="utf-8") as fh:
        json.dump(report, fh, indent=2)
    return ["validation.json"]


def _marginal_tv(agents: synthesize.AgentSet, plan: synthesize.SamplingPlan,
                 allocation: alloc_mod.ResidentialAllocation) -> dict:
    """Total variation between sampled category shares and the plan's
    effective marginals, with units weighted by their allocated share.

    JOB deviates by construction when the working-age override is active;
    the report states the raw figure.
    """
    unit_share: dict[int, float] = {}
    for r in allocation.rows:
        unit_share[r.admin_id] = unit_share.get(r.admin_id, 0) + r.population
    total = sum(unit_share.values()) or 1

    out: dict[str, float] = {}
    first = plan.units[next(iter(plan.units))]
    for name in ("SEX", "MARRIAGE", "EDUCATION", "JOB", "FAMILYN"):
        cats = first[name].categories
        counts = {c: 0 for c in cats}
        for a in agents.agents:
            v = a.values[name]
            if v in counts:
                counts[v] += 1
        n = max(1, len(agents))
        emp = {c: counts[c] / n for c in cats}
        target = np.zeros(len(cats))
        for uid, share in unit_share.items():
            eff = _effective_marginal(plan.units[uid], name)
            target += (share / total) * np.array([eff.get(c, 0.0) for c in cats])
        out[name] = 0.5 * float(sum(abs(emp[c] - t) for c, t in zip(cats, target)))
    return out


def _effective_marginal(unit_plan, name: str) -> dict[str, float]:
    """Marginal implied by the sampling plan: conditional attributes mix
    their rows over the parent's effective marginal."""
    ap = unit_plan[name]
    if ap.source == "marginal":
        return dict(zip(ap.categories, (float(p) for p in ap.probs)))
    parent_eff = _effective_marginal(unit_plan, ap.parent)
    acc = np.zeros(len(ap.categories))
    for pcat, w in parent_eff.items():
        row = ap.cond.get(pcat)
        if row is not None and row.sum() > 0:
            acc += w * row / row.sum()
    return dict(zip(ap.categories, (float(p) for p in acc)))


# ---------------------------------------------------------------------------
# orchestration


_STAGE_FUNCS = {
    "parcelize": stage_parcelize,
    "features": stage_features,
    "calibrate": stage_calibrate,
    "ca": stage_ca,
    "allocate": stage_allocate,
    "synthesize": stage_synthesize,
    "validate": stage_validate,
}


def run_stage(name: str, ctx: RunContext, **kwargs) -> list[str]:
    if name not in _STAGE_FUNCS:
        raise StageInputError(f"unknown stage '{name}'")
    os.makedirs(ctx.out_dir, exist_ok=True)
    try:
        return _STAGE_FUNCS[name](ctx, **kwargs)
    except StageError:
        raise
    except Exception as exc:
        raise StageError(name, exc) from exc


def run_pipeline(ctx: RunContext) -> dict:
    """Execute all stages in order and write the manifest."""
    os.makedirs(ctx.out_dir, exist_ok=True)
    cfg = ctx.cfg
    input_paths = [cfg.paths.roads, cfg.paths.pois, cfg.paths.admin_units,
                   cfg.paths.constraints, cfg.paths.extent]
    for name in ("marginals.csv", "crosstabs.csv"):
        input_paths.append(os.path.join(cfg.paths.census_dir, name))
    input_paths.append(cfg.paths.income
                       or os.path.join(cfg.paths.census_dir, "income.csv"))
    if cfg.paths.urban_truth:
        input_paths.append(cfg.paths.urban_truth)
    if cfg.paths.model:
        input_paths.append(cfg.paths.model)

    manifest: dict = {
        "seed": cfg.seed,
        "threads": ctx.threads,
        "config": config_to_dict(cfg),
        "inputs": {p: _sha256(p) for p in input_paths if os.path.exists(p)},
        "stages": [],
    }
    for name in STAGES:
        t0 = time.perf_counter()
        outputs = run_stage(name, ctx)
        seconds = time.perf_counter() - t0
        manifest["stages"].append({
            "name": name,
            "outputs": {o: _sha256(ctx.path(o)) for o in outputs},
            "seconds": round(seconds, 4),
        })
        log.info("stage %-10s done in %.2fs (%d outputs)", name, seconds, len(outputs))
    with open(ctx.path("manifest.json"), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2)
    return manifest


# ---------------------------------------------------------------------------
# map emission


def emit_map(ctx: RunContext, stage: str, dest: str) -> list[str]:
    """Symbology-ready GeoJSON for a stage's output."""
    parcels = load_parcels(ctx.require("parcels.geojson", "parcelize"))
    if stage == "parcelize":
        save_parcels(parcels, dest)
        return [dest]
    if stage == "features":
        feats = feat_mod.load_features(ctx.require("features.csv", "features"))
        extra = {pid: {
            "poi_density_norm": f.poi_density_norm,
            "residential_density_std": f.residential_density_std,
        } for pid, f in feats.items()}
        save_parcels(parcels, dest, extra=extra)
        return [dest]
    if stage == "ca":
        with open(ctx.require("ca_log.json", "ca"), encoding="utf-8") as fh:
            log_data = json.load(fh)
        os.makedirs(dest, exist_ok=True)
        urban: set[int] = set()
        written = []
        for entry in log_data["iterations"]:
            urban.update(entry["converted"])
            out = os.path.join(dest, f"iter_{entry['iteration']:03d}.geojson")
            feats = [make_feature(p.geometry, {
                "id": p.id,
                "status": Status.URBAN.value if p.id in urban
                else Status.NON_URBAN.value,
            }) for p in parcels.parcels]
            write_feature_collection(out, feats)
            written.append(out)
        return written
    if stage == "allocate":
        allocation = _load_allocation(ctx.require("allocation.csv", "allocate"))
        pops = allocation.by_parcel()
        feats = [make_feature(p.geometry, {
            "id": p.id,
            "population": pops[p.id],
            "admin_id": p.admin_id,
        }) for p in parcels.parcels if p.id in pops]
        write_feature_collection(dest, feats)
        return [dest]
    raise StageInputError(f"unknown stage '{stage}' for emit-map")
