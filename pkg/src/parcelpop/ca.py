"""Vector constrained cellular automaton for urban parcel selection.

Each parcel is a cell with a NonUrban/Urban status. Per iteration the
transition score is the product

    score = local_potential * neighborhood_potential * constraint * noise

where the local potential comes from the logistic model, the neighborhood
potential is the urban fraction among parcels within the neighborhood
radius, the constraint is a binary suitability mask (steep slope / water),
and the noise term is 1 + (-ln gamma)^beta. A parcel converts when its
score strictly exceeds the threshold and the area budget still has room;
Urban is absorbing. Updates are synchronous: every score is computed from
the state at t before any conversion is applied.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from shapely import STRtree

from .geodata import ConstraintLayer
from .parcelize import ParcelSet, Status
from .rng import uniform_open_array
from shapely.ops import unary_union

log = logging.getLogger(__name__)

DEFAULT_RADIUS = 500.0
DEFAULT_OMEGA_FLOOR = 0.05
DEFAULT_OVERLAP_THRESHOLD = 0.5
DEFAULT_FILL_FRACTION = 0.95


class CAError(ValueError):
    pass


@dataclass(frozen=True)
class CAParams:
    p_thd: float
    beta: float
    neighborhood_radius: float = DEFAULT_RADIUS
    max_iterations: int = 100
    rng_seed: int = 0
    omega_floor: float = DEFAULT_OMEGA_FLOOR
    fill_fraction: float = DEFAULT_FILL_FRACTION
    seed_fraction: float = 0.1  # initial urban seeds: top local-potential share

    def __post_init__(self):
        if not (0.0 < self.p_thd <= 1.0):
            raise CAError(f"p_thd must be in (0, 1], got {self.p_thd}")
        if not (0.0 <= self.beta <= 10.0):
            raise CAError(f"beta must be in [0, 10], got {self.beta}")
        if self.neighborhood_radius <= 0:
            raise CAError("neighborhood radius must be > 0")


@dataclass
class NeighborGraph:
    neighbors: dict[int, list[int]]

    def degree(self, pid: int) -> int:
        return len(self.neighbors.get(pid, ()))


@dataclass
class CAState:
    iteration: int
    status: dict[int, Status]
    urban_area: float
    converted_at: dict[int, int] = field(default_factory=dict)

    def urban_ids(self) -> set[int]:
        return {pid for pid, s in self.status.items() if s is Status.URBAN}


@dataclass
class CAResult:
    state: CAState
    log: list[dict]
    stop_reason: str


def build_neighbor_graph(parcels: ParcelSet, radius: float = DEFAULT_RADIUS) -> NeighborGraph:
    """Link parcel pairs whose boundary-to-boundary distance is <= radius."""
    geoms = [p.geometry for p in parcels.parcels]
    ids = [p.id for p in parcels.parcels]
    neighbors: dict[int, list[int]] = {pid: [] for pid in ids}
    if len(geoms) > 1:
        tree = STRtree(geoms)
        for i, g in enumerate(geoms):
            for j in tree.query(g, predicate="dwithin", distance=radius):
                j = int(j)
                if j != i:
                    neighbors[ids[i]].append(ids[j])
    for pid in neighbors:
        neighbors[pid].sort()
    return NeighborGraph(neighbors=neighbors)


def neighborhood_potential(pid: int, state: CAState, graph: NeighborGraph) -> float:
    """Fraction of the parcel's neighbors currently Urban; 0 when isolated."""
    nbrs = graph.neighbors.get(pid, ())
    if not nbrs:
        return 0.0
    urban = sum(1 for j in nbrs if state.status[j] is Status.URBAN)
    return urban / len(nbrs)


def constraint_mask(parcel_geometry, parcel_area: float,
                    layers: list[ConstraintLayer],
                    overlap_threshold: float = DEFAULT_OVERLAP_THRESHOLD) -> int:
    """1 when the parcel is developable, 0 when any constraint layer covers
    more than `overlap_threshold` of its area."""
    for layer in layers:
        union = unary_union(layer.geometry)
        frac = parcel_geometry.intersection(union).area / parcel_area
        if frac > overlap_threshold:
            return 0
    return 1


def stochastic_factor(gamma: float, beta: float) -> float:
    """Noise multiplier 1 + (-ln gamma)^beta for gamma in (0, 1)."""
    if not (0.0 < gamma < 1.0):
        raise CAError(f"gamma must lie in (0, 1), got {gamma}")
    return 1.0 + (-math.log(gamma)) ** beta


def transition_score(p_l: float, p_omega: float, con: int, p_r: float,
                     omega_floor: float = 0.0) -> float:
    """Product of the four factors; may exceed 1 since the noise term is > 1."""
    return p_l * max(p_omega, omega_floor) * con * p_r


@dataclass
class CAInputs:
    """Static per-parcel quantities the automaton iterates over."""

    ids: list[int]  # sorted ascending
    areas: dict[int, float]
    local_potentials: dict[int, float]
    masks: dict[int, int]
    graph: NeighborGraph

    def __post_init__(self):
        if self.ids != sorted(self.ids):
            self.ids = sorted(self.ids)


def initial_state(inputs: CAInputs, params: CAParams, budget: float,
                  seed_ids: list[int] | None = None) -> CAState:
    """All NonUrban except a seed set.

    By default the seeds are the top `seed_fraction` share of developable
    parcels by local potential (ties by lower id), admitted in that order
    while they fit the budget.
    """
    if seed_ids is None:
        eligible = [pid for pid in inputs.ids if inputs.masks[pid] == 1]
        n_seed = math.ceil(len(eligible) * params.seed_fraction)
        ranked = sorted(eligible, key=lambda pid: (-inputs.local_potentials[pid], pid))
        seed_ids = ranked[:n_seed]
    status = {pid: Status.NON_URBAN for pid in inputs.ids}
    area = 0.0
    converted_at: dict[int, int] = {}
    for pid in seed_ids:
        if inputs.masks[pid] == 0:
            raise CAError(f"seed parcel {pid} violates a constraint layer")
        if area + inputs.areas[pid] > budget:
            continue
        status[pid] = Status.URBAN
        converted_at[pid] = 0
        area += inputs.areas[pid]
    return CAState(iteration=0, status=status, urban_area=area,
                   converted_at=converted_at)


def _iteration_scores(inputs: CAInputs, state: CAState, params: CAParams,
                      t: int, threads: int = 1) -> dict[int, float]:
    """Scores for every currently NonUrban parcel, computed from state at t."""
    pending = [pid for pid in inputs.ids if state.status[pid] is Status.NON_URBAN]
    if not pending:
        return {}
    id_arr = np.array(pending, dtype=np.uint64)
    gammas = uniform_open_array(params.rng_seed, t, id_arr)

    def score_slice(lo: int, hi: int) -> list[float]:
        out = []
        for k in range(lo, hi):
            pid = pending[k]
            con = inputs.masks[pid]
            if con == 0:
                out.append(0.0)
                continue
            p_l = inputs.local_potentials[pid]
            p_omega = neighborhood_potential(pid, state, inputs.graph)
            p_r = stochastic_factor(float(gammas[k]), params.beta)
            out.append(transition_score(p_l, p_omega, con, p_r, params.omega_floor))
        return out

    if threads <= 1 or len(pending) < 64:
        scores = score_slice(0, len(pending))
    else:
        bounds = np.linspace(0, len(pending), threads + 1, dtype=int)
        with ThreadPoolExecutor(max_workers=threads) as pool:
            chunks = pool.map(lambda ab: score_slice(*ab),
                              list(zip(bounds[:-1], bounds[1:])))
        scores = [s for chunk in chunks for s in chunk]
    return dict(zip(pending, scores))


def step(state: CAState, inputs: CAInputs, params: CAParams, budget: float,
         threads: int = 1) -> tuple[CAState, list[int]]:
    """One synchronous iteration; returns the new state and converted ids.

    Candidates (score strictly above the threshold) are admitted in
    descending score order, lowest id first on ties; a candidate whose area
    would push the urban total past the budget is deferred to later
    iterations. Urban parcels never revert.
    """
    t = state.iteration + 1
    scores = _iteration_scores(inputs, state, params, t, threads)
    candidates = [(s, pid) for pid, s in scores.items() if s > params.p_thd]
    candidates.sort(key=lambda sp: (-sp[0], sp[1]))

    status = dict(state.status)
    converted_at = dict(state.converted_at)
    area = state.urban_area
    converted: list[int] = []
    for s, pid in candidates:
        if area + inputs.areas[pid] > budget:
            continue
        status[pid] = Status.URBAN
        converted_at[pid] = t
        area += inputs.areas[pid]
        converted.append(pid)
    new_state = CAState(iteration=t, status=status, urban_area=area,
                        converted_at=converted_at)
    return new_state, converted


def run(inputs: CAInputs, params: CAParams, budget: float,
        seed_ids: list[int] | None = None, threads: int = 1) -> CAResult:
    """Iterate until the fill fraction of the budget, a quiet iteration,
    or max_iterations."""
    if budget <= 0:
        raise CAError("urban area budget must be > 0")
    state = initial_state(inputs, params, budget, seed_ids)
    log_entries = [{
        "iteration": 0,
        "converted": sorted(state.converted_at),
        "urban_area": state.urban_area,
    }]
    stop_reason = "max_iterations"
    for _ in range(params.max_iterations):
        if state.urban_area >= params.fill_fraction * budget:
            break
        state, converted = step(state, inputs, params, budget, threads)
        log_entries.append({
            "iteration": state.iteration,
            "converted": sorted(converted),
            "urban_area": state.urban_area,
        })
        if not converted:
            stop_reason = "no_conversions"
            break
    if state.urban_area >= params.fill_fraction * budget:
        stop_reason = "budget_filled"
    log.info("CA stopped after %d iterations (%s), urban area %.1f of %.1f",
             state.iteration, stop_reason, state.urban_area, budget)
    return CAResult(state=state, log=log_entries, stop_reason=stop_reason)


# ---------------------------------------------------------------------------
# I/O


def save_status(result: CAResult, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["parcel_id", "status", "converted_iteration"])
        for pid in sorted(result.state.status):
            s = result.state.status[pid]
            w.writerow([pid, s.value, result.state.converted_at.get(pid, "")])


def load_status(path) -> dict[int, Status]:
    out: dict[int, Status] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        for rec in csv.DictReader(fh):
            out[int(rec["parcel_id"])] = Status(rec["status"])
    return out


def save_log(result: CAResult, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump({"stop_reason": result.stop_reason, "iterations": result.log}, fh, indent=2)
