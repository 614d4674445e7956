"""Per-run metrics, cross-run normalization and long-format sweep tables."""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Mapping, NamedTuple

import numpy as np

from .exceptions import NormalizationError
from .sim import SimResult, write_csv

METRICS = (
    "emissions_g_per_trip",
    "fairness_gap_km",
    "mean_wait_s",
    "mean_assign_delay_s",
    "mean_deadhead_km",
    "served_count",
    "dropped_count",
    "lev_trip_share",
)


@dataclass(frozen=True)
class MetricsReport:
    """Headline metrics for one run. Mean fields are ``None`` when the run
    served no trips."""

    emissions_g_per_trip: float | None
    fairness_gap_km: float
    mean_wait_s: float | None
    mean_assign_delay_s: float | None
    mean_deadhead_km: float | None
    served_count: int
    dropped_count: int
    lev_trip_share: float | None
    total_emission_g: float = 0.0
    pending_count: int = 0
    per_driver_utility: tuple[tuple[str, float], ...] = field(default=(), repr=False)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["per_driver_utility"] = [list(x) for x in self.per_driver_utility]
        return d


@dataclass(frozen=True)
class NormalizedReport:
    """Ratios to a baseline. ``fairness`` is baseline gap over report gap,
    so values above 1 mean fairer than the baseline; the others are report
    over baseline."""

    emissions: float
    fairness: float
    wait: float
    served: float


def fairness_gap(utilities) -> float:
    u = np.asarray(list(utilities), dtype=float)
    return float(u.max() - u.min()) if u.size else 0.0


def summarize(result: SimResult) -> MetricsReport:
    trips = result.trips
    n = len(trips)
    per_driver = tuple((d.id, d.cumulative_utility_km) for d in result.final_drivers)
    lev = {d.id for d in result.final_drivers if d.spec.vehicle_class == "LEV"}
    total = math.fsum(t.emission_g for t in trips)

    def mean(xs):
        return math.fsum(xs) / n if n else None

    return MetricsReport(
        emissions_g_per_trip=total / n if n else None,
        fairness_gap_km=fairness_gap(u for _, u in per_driver),
        mean_wait_s=mean(t.wait_s for t in trips),
        mean_assign_delay_s=mean(t.assign_delay_s for t in trips),
        mean_deadhead_km=mean(t.deadhead_km for t in trips),
        served_count=n,
        dropped_count=len(result.dropped),
        lev_trip_share=sum(t.driver_id in lev for t in trips) / n if n else None,
        total_emission_g=total,
        pending_count=len(result.pending),
        per_driver_utility=per_driver,
    )


def _ratio(name, num, den):
    if num is None:
        raise NormalizationError(name, "absent in report")
    if den is None or den == 0:
        raise NormalizationError(name)
    return num / den


def normalize(report: MetricsReport, baseline: MetricsReport) -> NormalizedReport:
    if baseline.served_count == 0:
        raise NormalizationError("served_count")
    gap, base_gap = report.fairness_gap_km, baseline.fairness_gap_km
    if gap == base_gap:
        fair = 1.0
    elif gap == 0:
        fair = math.inf
    else:
        fair = base_gap / gap
    return NormalizedReport(
        emissions=_ratio("emissions_g_per_trip", report.emissions_g_per_trip, baseline.emissions_g_per_trip),
        fairness=fair,
        wait=_ratio("mean_wait_s", report.mean_wait_s, baseline.mean_wait_s),
        served=_ratio("served_count", report.served_count, baseline.served_count),
    )


class SweepKey(NamedTuple):
    policy: str
    batch_duration_s: float
    eta: float
    lev_pct: float | None = None


SWEEP_COLUMNS = ["policy", "batch_duration_s", "eta", "lev_pct", "metric", "value"]


def sweep_table(reports: Mapping[tuple, MetricsReport]) -> list[dict]:
    """Long-format rows, one per (run, metric), sorted by run key then
    metric order."""
    if not reports:
        raise ValueError("sweep_table needs at least one report")
    rows = []
    keys = sorted((SweepKey(*k) for k in reports),
                  key=lambda k: (k.policy, k.batch_duration_s, k.eta, -1 if k.lev_pct is None else k.lev_pct))
    lookup = {SweepKey(*k): v for k, v in reports.items()}
    for key in keys:
        rep = lookup[key]
        for m in METRICS:
            rows.append({**key._asdict(), "metric": m, "value": getattr(rep, m)})
    return rows


def _cell(v):
    return "" if v is None else v


def write_report(report: MetricsReport, path: str | Path) -> None:
    """Two-column ``metric,value`` CSV."""
    write_csv(path, ["metric", "value"],
              [{"metric": m, "value": _cell(getattr(report, m))} for m in METRICS])


def write_sweep(rows: list[dict], csv_path: str | Path, json_path: str | Path | None = None) -> None:
    write_csv(csv_path, SWEEP_COLUMNS, [{k: _cell(r[k]) for k in SWEEP_COLUMNS} for r in rows])
    if json_path is not None:
        Path(json_path).write_text(json.dumps({"rows": rows}, indent=1, sort_keys=True) + "\n")
