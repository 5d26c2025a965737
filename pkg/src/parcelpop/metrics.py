"""Validation metrics: similarity index, area overlap, Pearson correlation,
sub-region area distribution.

The similarity index aligns two equally sized agent sets by sorting both
with the same rule (location first, then the remaining attributes in
schema order) and averages, over the aligned pairs, the fraction of
attributes that match. Nominal/ordinal attributes match on equality;
ratio attributes match within a configurable band tolerance.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from shapely.ops import unary_union

from .synthesize import Agent, AgentSet, AttributeSchema, default_schema

log = logging.getLogger(__name__)

SI_ATTRIBUTES = ("AGE", "SEX", "MARRIAGE", "EDUCATION", "JOB",
                 "INCOME", "FAMILYN", "PARCEL", "TAM")
RATIO_ATTRIBUTES = ("AGE", "INCOME", "TAM")


class MetricError(ValueError):
    pass


@dataclass
class SimilarityConfig:
    # |a - b| <= tolerance counts as a match for ratio attributes
    ratio_tolerances: dict[str, float] = field(
        default_factory=lambda: {"AGE": 0.0, "INCOME": 0.0, "TAM": 0.0}
    )


def _agent_value(agent: Agent, attr: str):
    if attr == "PARCEL":
        return agent.parcel_id
    if attr == "TAM":
        return agent.tam
    return agent.values[attr]


def _sort_key(agent: Agent):
    # location first, then the other attributes in increasing schema order
    return tuple(_agent_value(agent, a) for a in
                 ("PARCEL", "AGE", "SEX", "MARRIAGE", "EDUCATION",
                  "JOB", "INCOME", "FAMILYN", "TAM"))


def similarity_index(set_a: AgentSet, set_b: AgentSet,
                     schema: AttributeSchema | None = None,
                     config: SimilarityConfig | None = None) -> float:
    """Mean per-pair fraction of matching attributes after aligned sorting.

    1.0 for identical sets; raises on size mismatch (both sets must hold
    the same number of agents). Agent ids are ignored.
    """
    if len(set_a) != len(set_b):
        raise MetricError(
            f"agent set sizes differ: {len(set_a)} vs {len(set_b)}"
        )
    if len(set_a) == 0:
        return 1.0
    config = config or SimilarityConfig()
    tol = {a: config.ratio_tolerances.get(a, 0.0) for a in RATIO_ATTRIBUTES}

    sorted_a = sorted(set_a.agents, key=_sort_key)
    sorted_b = sorted(set_b.agents, key=_sort_key)
    n_attrs = len(SI_ATTRIBUTES)
    total = 0.0
    for a, b in zip(sorted_a, sorted_b):
        matches = 0
        for attr in SI_ATTRIBUTES:
            va, vb = _agent_value(a, attr), _agent_value(b, attr)
            if attr in tol:
                if abs(float(va) - float(vb)) <= tol[attr]:
                    matches += 1
            elif va == vb:
                matches += 1
        total += matches / n_attrs
    return total / len(sorted_a)


def area_overlap_ratio(parcels_a, parcels_b) -> float:
    """area(union(A) intersect union(B)) / area(union(A))."""
    union_a = unary_union([p.geometry for p in parcels_a])
    union_b = unary_union([p.geometry for p in parcels_b])
    if union_a.area <= 0:
        raise MetricError("first parcel set has zero total area")
    return union_a.intersection(union_b).area / union_a.area


def pearson(x, y) -> float:
    """Product-moment correlation; raises on length < 2 or zero variance."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise MetricError("inputs must be equal-length vectors")
    if len(x) < 2:
        raise MetricError("need at least 2 points")
    dx = x - x.mean()
    dy = y - y.mean()
    sx = float(np.sqrt(np.sum(dx * dx)))
    sy = float(np.sqrt(np.sum(dy * dy)))
    if sx == 0.0 or sy == 0.0:
        raise MetricError("constant vector has no correlation")
    return float(np.sum(dx * dy) / (sx * sy))


def subregion_distribution(parcels, regions: dict[int, object]) -> dict[int, float]:
    """Parcel area apportioned by intersection per (disjoint) region."""
    out: dict[int, float] = {}
    for rid, region in regions.items():
        total = 0.0
        for p in parcels:
            total += p.geometry.intersection(region).area
        out[rid] = total
    return out
