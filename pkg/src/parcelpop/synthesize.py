"""Individual-agent synthesis from census marginals and cross-tabulations.

Synthetic construction, no seed samples: each agent draws its attributes
in schema order, marginally or conditioned on an already-drawn parent
(marriage and education on the age band, occupation on education). Ratio
attributes sample a census band first, then a uniform integer within the
band. Location comes from the allocation; the center distance is copied
from the parcel, never sampled.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field

import numpy as np

from .allocate import ResidentialAllocation
from .geodata import CensusTables, make_feature, write_feature_collection
from .rng import substream

log = logging.getLogger(__name__)

DEFAULT_AGE_CAP = 100
DEFAULT_INCOME_CAP = 50_000
DEFAULT_WORKING_AGE = 16
CHILD_JOB_CATEGORY = "none"

AGENT_COLUMNS = ["AID", "AGE", "SEX", "MARRIAGE", "EDUCATION", "JOB",
                 "INCOME", "FAMILYN", "PARCEL", "TAM"]


class SynthesisError(ValueError):
    pass


@dataclass(frozen=True)
class AttributeSpec:
    name: str
    order: int
    kind: str  # nominal | ordinal | ratio
    source: str  # marginal | conditional | derived
    parent: str | None = None


@dataclass
class AttributeSchema:
    specs: list[AttributeSpec]

    def __post_init__(self):
        orders = [s.order for s in self.specs]
        if sorted(orders) != list(range(1, len(self.specs) + 1)):
            raise SynthesisError("attribute orders must be unique and 1..n")
        seen = set()
        for s in sorted(self.specs, key=lambda s: s.order):
            if s.source == "conditional":
                if s.parent is None or s.parent not in seen:
                    raise SynthesisError(
                        f"conditional attribute {s.name} needs an earlier parent"
                    )
            seen.add(s.name)

    def ordered(self) -> list[AttributeSpec]:
        return sorted(self.specs, key=lambda s: s.order)

    def sampled(self) -> list[AttributeSpec]:
        return [s for s in self.ordered() if s.source != "derived"]


def default_schema() -> AttributeSchema:
    return AttributeSchema([
        AttributeSpec("AGE", 1, "ratio", "marginal"),
        AttributeSpec("SEX", 2, "nominal", "marginal"),
        AttributeSpec("MARRIAGE", 3, "nominal", "conditional", parent="AGE"),
        AttributeSpec("EDUCATION", 4, "ordinal", "conditional", parent="AGE"),
        AttributeSpec("JOB", 5, "nominal", "conditional", parent="EDUCATION"),
        AttributeSpec("INCOME", 6, "ratio", "marginal"),
        AttributeSpec("FAMILYN", 7, "ordinal", "marginal"),
        AttributeSpec("PARCEL", 8, "nominal", "derived"),
        AttributeSpec("TAM", 9, "ratio", "derived"),
    ])


def parse_band(category: str, cap: int) -> tuple[int, int]:
    """Census band label -> inclusive integer range. '25-44' or '85+'."""
    cat = category.strip()
    try:
        if cat.endswith("+"):
            lo = int(cat[:-1])
            return lo, max(lo, cap)
        lo_s, hi_s = cat.split("-", 1)
        lo, hi = int(lo_s), int(hi_s)
    except ValueError as exc:
        raise SynthesisError(f"cannot parse ratio band '{category}'") from exc
    if hi < lo:
        raise SynthesisError(f"band '{category}' has hi < lo")
    return lo, hi


@dataclass
class AttributePlan:
    name: str
    kind: str
    source: str
    parent: str | None
    categories: list[str]
    probs: np.ndarray | None = None  # marginal source
    cond: dict[str, np.ndarray] | None = None  # parent category -> probs
    bands: dict[str, tuple[int, int]] | None = None  # ratio attributes
    _cum_cache: dict = field(default_factory=dict, repr=False)

    def cum(self, parent_cat: str | None = None) -> np.ndarray:
        cached = self._cum_cache.get(parent_cat)
        if cached is not None:
            return cached
        if self.source == "marginal":
            out = np.cumsum(self.probs)
        else:
            if parent_cat not in self.cond:
                raise SynthesisError(
                    f"{self.name}: no conditional row for parent category '{parent_cat}'"
                )
            row = self.cond[parent_cat]
            if row.sum() <= 0:
                raise SynthesisError(
                    f"{self.name}: all-zero conditional row for '{parent_cat}'"
                )
            out = np.cumsum(row)
        self._cum_cache[parent_cat] = out
        return out


@dataclass
class SamplingPlan:
    units: dict[int, dict[str, AttributePlan]]
    schema: AttributeSchema

    def to_json(self) -> dict:
        out = {}
        for uid, attrs in self.units.items():
            unit = {}
            for name, ap in attrs.items():
                d = {"kind": ap.kind, "source": ap.source, "categories": ap.categories}
                if ap.parent:
                    d["parent"] = ap.parent
                if ap.probs is not None:
                    d["probs"] = [float(p) for p in ap.probs]
                if ap.cond is not None:
                    d["conditional"] = {k: [float(p) for p in v] for k, v in ap.cond.items()}
                if ap.bands is not None:
                    d["bands"] = {k: list(v) for k, v in ap.bands.items()}
                unit[name] = d
            out[str(uid)] = unit
        return out

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_json(), fh, indent=2)


def build_conditionals(census: CensusTables,
                       schema: AttributeSchema | None = None,
                       age_cap: int = DEFAULT_AGE_CAP,
                       income_cap: int = DEFAULT_INCOME_CAP) -> SamplingPlan:
    """Turn normalized census tables into a per-unit sampling plan.

    Raises when a conditional row is all zero while its parent category
    carries marginal mass (the row would be sampled but cannot be).
    """
    schema = schema or default_schema()
    pair_by_child = {child: (parent, child)
                     for s in schema.specs if s.source == "conditional"
                     for parent, child in [(s.parent, s.name)]}
    caps = {"AGE": age_cap, "INCOME": income_cap}

    units: dict[int, dict[str, AttributePlan]] = {}
    for uid in census.admin_ids():
        marg = census.marginals[uid]
        tabs = census.crosstabs[uid]
        unit_plan: dict[str, AttributePlan] = {}
        for spec in schema.sampled():
            cats = [c for c in census.categories[spec.name]
                    if c in marg.get(spec.name, {})
                    or spec.name in pair_by_child]
            bands = None
            if spec.kind == "ratio":
                bands = {c: parse_band(c, caps.get(spec.name, 10**9)) for c in cats}
            if spec.source == "marginal":
                probs = np.array([marg[spec.name].get(c, 0.0) for c in cats])
                unit_plan[spec.name] = AttributePlan(
                    name=spec.name, kind=spec.kind, source="marginal",
                    parent=None, categories=cats, probs=probs, bands=bands,
                )
            else:
                pair = (spec.parent, spec.name)
                rows = tabs[pair]
                parent_marg = marg[spec.parent]
                cond: dict[str, np.ndarray] = {}
                for pcat, row in rows.items():
                    vec = np.array([row.get(c, 0.0) for c in cats])
                    if vec.sum() <= 0 and parent_marg.get(pcat, 0.0) > 0:
                        raise SynthesisError(
                            f"unit {uid}: conditional {spec.name}|{spec.parent} "
                            f"row '{pcat}' is all zero but the parent category "
                            f"has probability {parent_marg[pcat]:.6f}"
                        )
                    cond[pcat] = vec
                unit_plan[spec.name] = AttributePlan(
                    name=spec.name, kind=spec.kind, source="conditional",
                    parent=spec.parent, categories=cats, cond=cond, bands=bands,
                )
        units[uid] = unit_plan
    return SamplingPlan(units=units, schema=schema)


@dataclass(frozen=True)
class Agent:
    aid: int
    values: dict[str, object]
    parcel_id: int
    tam: float

    def row(self) -> list:
        return [self.aid,
                self.values["AGE"], self.values["SEX"], self.values["MARRIAGE"],
                self.values["EDUCATION"], self.values["JOB"],
                self.values["INCOME"], self.values["FAMILYN"],
                self.parcel_id, repr(self.tam)]


@dataclass
class AgentSet:
    agents: list[Agent]

    def __len__(self) -> int:
        return len(self.agents)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(AGENT_COLUMNS)
            for a in self.agents:
                w.writerow(a.row())

    @classmethod
    def read_csv(cls, path) -> "AgentSet":
        agents = []
        with open(path, newline="", encoding="utf-8") as fh:
            for rec in csv.DictReader(fh):
                values = {
                    "AGE": int(rec["AGE"]), "SEX": rec["SEX"],
                    "MARRIAGE": rec["MARRIAGE"], "EDUCATION": rec["EDUCATION"],
                    "JOB": rec["JOB"], "INCOME": int(rec["INCOME"]),
                    "FAMILYN": rec["FAMILYN"],
                }
                agents.append(Agent(aid=int(rec["AID"]), values=values,
                                    parcel_id=int(rec["PARCEL"]),
                                    tam=float(rec["TAM"])))
        return cls(agents=agents)


def _draw(gen: np.random.Generator, categories: list[str], cum: np.ndarray) -> str:
    u = gen.random() * cum[-1]
    idx = int(np.searchsorted(cum, u, side="right"))
    return categories[min(idx, len(categories) - 1)]


def synthesize(allocation: ResidentialAllocation,
               plan: SamplingPlan,
               tam_by_parcel: dict[int, float],
               seed: int,
               working_age: int = DEFAULT_WORKING_AGE,
               apply_working_age_rule: bool = True) -> AgentSet:
    """Generate exactly the allocated number of agents per parcel.

    Each agent draws from its own counter-based substream keyed by
    (seed, admin unit, agent index within the unit), so changing one
    unit's inputs leaves every other unit's agents bit-identical.
    Agents younger than the working age get no occupation and zero income
    unless the rule is disabled.
    """
    schema = plan.schema
    agents: list[Agent] = []
    rows_by_unit: dict[int, list] = {}
    for r in allocation.rows:
        rows_by_unit.setdefault(r.admin_id, []).append(r)

    aid = 1
    for uid in sorted(rows_by_unit):
        if uid not in plan.units:
            raise SynthesisError(f"no sampling plan for admin unit {uid}")
        unit_plan = plan.units[uid]
        agent_index = 0
        for row in sorted(rows_by_unit[uid], key=lambda r: r.parcel_id):
            if row.parcel_id not in tam_by_parcel:
                raise SynthesisError(f"no center distance for parcel {row.parcel_id}")
            tam = tam_by_parcel[row.parcel_id]
            for _ in range(row.population):
                gen = substream(seed, uid, agent_index)
                values: dict[str, object] = {}
                band_cats: dict[str, str] = {}
                for spec in schema.sampled():
                    ap = unit_plan[spec.name]
                    parent_cat = band_cats.get(spec.parent) if spec.parent else None
                    if spec.source == "conditional":
                        cat = _draw(gen, ap.categories, ap.cum(parent_cat))
                    else:
                        cat = _draw(gen, ap.categories, ap.cum())
                    band_cats[spec.name] = cat
                    if spec.kind == "ratio":
                        lo, hi = ap.bands[cat]
                        values[spec.name] = int(gen.integers(lo, hi + 1))
                    else:
                        values[spec.name] = cat
                if apply_working_age_rule and values["AGE"] < working_age:
                    values["JOB"] = CHILD_JOB_CATEGORY
                    values["INCOME"] = 0
                agents.append(Agent(aid=aid, values=values,
                                    parcel_id=row.parcel_id, tam=tam))
                aid += 1
                agent_index += 1
    log.info("synthesized %d agents over %d admin units",
             len(agents), len(rows_by_unit))
    return AgentSet(agents=agents)


def null_synthesize(allocation: ResidentialAllocation,
                    plan: SamplingPlan,
                    tam_by_parcel: dict[int, float],
                    seed: int) -> AgentSet:
    """Baseline generator: same locations, attributes uniform over their
    category sets, ignoring marginals and dependencies."""
    uniform_units: dict[int, dict[str, AttributePlan]] = {}
    for uid, unit_plan in plan.units.items():
        uniform_plan: dict[str, AttributePlan] = {}
        for name, ap in unit_plan.items():
            n = len(ap.categories)
            uniform_plan[name] = AttributePlan(
                name=name, kind=ap.kind, source="marginal", parent=None,
                categories=ap.categories, probs=np.full(n, 1.0 / n),
                bands=ap.bands,
            )
        uniform_units[uid] = uniform_plan
    flat = SamplingPlan(units=uniform_units, schema=plan.schema)
    return synthesize(allocation, flat, tam_by_parcel, seed,
                      apply_working_age_rule=False)


def export_agents(agents: AgentSet, csv_path, geojson_path=None,
                  parcel_geoms: dict[int, object] | None = None,
                  jitter: bool = False, seed: int = 0) -> None:
    """Write the agent table; optionally GeoJSON points at the parcel
    representative point or uniformly jittered inside the parcel."""
    agents.write_csv(csv_path)
    if geojson_path is None:
        return
    if parcel_geoms is None:
        raise SynthesisError("parcel geometries required for GeoJSON export")
    feats = []
    for a in agents.agents:
        geom = parcel_geoms.get(a.parcel_id)
        if geom is None:
            raise SynthesisError(f"no geometry for parcel {a.parcel_id}")
        pt = _jitter_point(geom, seed, a.aid) if jitter else geom.representative_point()
        props = {"AID": a.aid, **{k: a.values[k] for k in
                                  ("AGE", "SEX", "MARRIAGE", "EDUCATION",
                                   "JOB", "INCOME", "FAMILYN")},
                 "PARCEL": a.parcel_id, "TAM": a.tam}
        feats.append(make_feature(pt, props))
    write_feature_collection(geojson_path, feats)


def _jitter_point(geom, seed: int, aid: int):
    from shapely.geometry import Point

    gen = substream(seed, aid)
    minx, miny, maxx, maxy = geom.bounds
    for _ in range(1000):
        pt = Point(gen.uniform(minx, maxx), gen.uniform(miny, maxy))
        if geom.contains(pt):
            return pt
    return geom.representative_point()
