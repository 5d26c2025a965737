"""Residential parcel selection and population allocation.

Urban parcels are ranked by standardized residential density and taken
greedily until the residential area budget is hit; sub-district population
totals are then apportioned over the selected parcels with the largest
remainder method, so unit totals are conserved exactly as integers.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass

log = logging.getLogger(__name__)


class AllocationError(ValueError):
    pass


@dataclass(frozen=True)
class ResidentialParcel:
    parcel_id: int
    admin_id: int | None
    area: float  # m^2
    residential_density_std: float  # [0, 1]


@dataclass(frozen=True)
class AllocationRow:
    parcel_id: int
    admin_id: int
    residential_density_std: float
    population: int


@dataclass
class ResidentialAllocation:
    rows: list[AllocationRow]

    def total(self) -> int:
        return sum(r.population for r in self.rows)

    def by_parcel(self) -> dict[int, int]:
        return {r.parcel_id: r.population for r in self.rows}

    def write_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["parcel_id", "admin_id", "population"])
            for r in self.rows:
                w.writerow([r.parcel_id, r.admin_id, r.population])


def largest_remainder(shares: list[float], total: int) -> list[int]:
    """Integerize real-valued shares so they sum exactly to `total`.

    Each result is floor(share) or ceil(share); the leftover units go to
    the largest fractional parts, ties broken by lowest index.
    """
    if total < 0:
        raise AllocationError("total must be non-negative")
    floors = [math.floor(s) for s in shares]
    remainder = total - sum(floors)
    if remainder < 0 or remainder > len(shares):
        raise AllocationError(
            f"shares (sum {sum(shares):.6f}) inconsistent with total {total}"
        )
    out = list(floors)
    order = sorted(range(len(shares)), key=lambda i: (floors[i] - shares[i], i))
    for i in order[:remainder]:
        out[i] += 1
    return out


def select_residential(
    parcels: list[ResidentialParcel], residential_area_budget: float
) -> list[int]:
    """Pick urban parcels in descending density until the budget is hit.

    Greedy take-while: stop at the first parcel whose area would push the
    running total past the budget (prefixes are nested, so enlarging the
    budget never drops a selected parcel). Density ties break by lower
    parcel id.
    """
    if residential_area_budget <= 0:
        raise AllocationError("residential area budget must be > 0")
    if not parcels:
        raise AllocationError("no urban parcels to select from")
    ranked = sorted(parcels, key=lambda p: (-p.residential_density_std, p.parcel_id))
    selected: list[int] = []
    used = 0.0
    for p in ranked:
        if used + p.area > residential_area_budget:
            break
        selected.append(p.parcel_id)
        used += p.area
    if not selected:
        log.warning(
            "budget %.1f m^2 below the smallest parcel; empty residential set",
            residential_area_budget,
        )
    return selected


def allocate_population(
    unit_totals: dict[int, int],
    parcels: list[ResidentialParcel],
    weight_mode: str = "density_area",
) -> ResidentialAllocation:
    """Apportion each unit's total over its residential parcels.

    Weights are residential_density_std * area by default ("density_area");
    "density" uses the standardized density alone. Units with zero
    population are skipped. Raises when a populated unit has no parcel or
    only zero weights.
    """
    if weight_mode not in ("density_area", "density"):
        raise AllocationError(f"unknown weight_mode '{weight_mode}'")

    by_unit: dict[int, list[ResidentialParcel]] = {}
    for p in parcels:
        if p.admin_id is None:
            continue
        by_unit.setdefault(p.admin_id, []).append(p)

    missing = [
        uid for uid, tot in unit_totals.items() if tot > 0 and uid not in by_unit
    ]
    if missing:
        raise AllocationError(
            f"units with population but no residential parcel: {sorted(missing)}"
        )

    rows: list[AllocationRow] = []
    for uid in sorted(unit_totals):
        total = int(unit_totals[uid])
        if total == 0:
            continue
        unit_parcels = sorted(by_unit[uid], key=lambda p: p.parcel_id)
        if weight_mode == "density_area":
            weights = [p.residential_density_std * p.area for p in unit_parcels]
        else:
            weights = [p.residential_density_std for p in unit_parcels]
        wsum = sum(weights)
        if wsum <= 0:
            raise AllocationError(f"all-zero allocation weights in unit {uid}")
        shares = [total * w / wsum for w in weights]
        counts = largest_remainder(shares, total)
        for p, n in zip(unit_parcels, counts):
            rows.append(
                AllocationRow(
                    parcel_id=p.parcel_id,
                    admin_id=uid,
                    residential_density_std=p.residential_density_std,
                    population=n,
                )
            )
    return ResidentialAllocation(rows=rows)
