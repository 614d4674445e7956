"""Batched dispatch simulation.

Time advances in fixed batch steps. At each batch close the engine drops
requests that have waited too long, forms the available-driver pool, caps
the batch at the pool size, asks the policy for a matching, executes the
matched trips at constant speed and feeds the served transitions back to
learning policies.
"""
from __future__ import annotations

import csv
import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

from sklearn.base import clone

from .assign import BatchDriver, build_problem, overflow_split
from .baselines import PolicyKind
from .exceptions import ConfigError, ContractViolation
from .geo import OutOfAreaError, deadhead_km, tile_of
from .ingest import DriverSpec, RideRequest, Scenario
from .policies import DispatchPolicy, LEADPolicy, make_policy
from .values import Transition, ValueTable


@dataclass(frozen=True)
class SimConfig:
    batch_duration_s: float = 300.0
    eta_g_per_km: float = 5.0
    gamma: float = 0.9
    alpha: float = 0.025
    speed_kmh: float = 30.0
    max_wait_s: float = 900.0
    availability_window_s: float = 900.0
    candidate_radius_km: float = 8.0
    circuity: float = 1.0
    seed: int = 0
    utility_mode: str = "derived"
    fairness_scope: str = "all_available"
    e2d_threshold: float = 100.0
    laf_equity_weight: float = 1.0

    def __post_init__(self):
        for name in ("batch_duration_s", "speed_kmh", "max_wait_s", "candidate_radius_km"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive")
        for name in ("eta_g_per_km", "availability_window_s", "e2d_threshold", "laf_equity_weight"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be non-negative")
        if self.circuity < 1.0:
            raise ConfigError("circuity must be >= 1.0")
        if not 0.0 <= self.gamma <= 1.0 or not 0.0 < self.alpha <= 1.0:
            raise ConfigError("gamma must lie in [0, 1] and alpha in (0, 1]")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "SimConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ConfigError(f"unknown SimConfig keys: {sorted(unknown)}")
        return cls(**d)

    def policy_params(self) -> dict:
        return {
            "eta": self.eta_g_per_km, "gamma": self.gamma, "alpha": self.alpha,
            "utility_mode": self.utility_mode, "fairness_scope": self.fairness_scope,
            "e2d_threshold": self.e2d_threshold, "equity_weight": self.laf_equity_weight,
        }


@dataclass
class DriverRuntime:
    spec: DriverSpec
    location: object  # GeoPoint; dropoff of the latest assigned trip
    cumulative_utility_km: float = 0.0
    busy_until: float = 0.0
    trips_served: int = 0

    @property
    def id(self) -> str:
        return self.spec.id

    @classmethod
    def start(cls, spec: DriverSpec) -> "DriverRuntime":
        return cls(spec, spec.initial_location)

    def snapshot(self) -> BatchDriver:
        return BatchDriver(self.spec.id, self.location, self.spec.emission_g_per_km,
                           self.cumulative_utility_km, self.busy_until)


@dataclass(frozen=True)
class TripRecord:
    request_id: str
    driver_id: str
    request_time: float
    assign_time: float
    depart_time: float
    pickup_time: float
    dropoff_time: float
    deadhead_km: float
    trip_km: float
    emission_g_per_km: float
    emission_g: float
    assign_delay_s: float  # request -> batch close
    driver_delay_s: float  # batch close -> driver free to leave
    deadhead_s: float
    wait_s: float


TRIP_COLUMNS = [f.name for f in dataclasses.fields(TripRecord)]
DRIVER_COLUMNS = ["driver_id", "vehicle_class", "emission_g_per_km", "trips_served",
                  "cumulative_utility_km", "busy_until", "final_lat", "final_lon"]


@dataclass
class SimResult:
    trips: list[TripRecord] = field(default_factory=list)
    dropped: list[tuple[str, str, float]] = field(default_factory=list)  # (request_id, reason, time)
    pending: list[str] = field(default_factory=list)
    final_drivers: list[DriverRuntime] = field(default_factory=list)
    value_table: ValueTable | None = None
    n_batches: int = 0

    def driver_rows(self) -> list[dict]:
        return [{
            "driver_id": d.id,
            "vehicle_class": d.spec.vehicle_class,
            "emission_g_per_km": d.spec.emission_g_per_km,
            "trips_served": d.trips_served,
            "cumulative_utility_km": d.cumulative_utility_km,
            "busy_until": d.busy_until,
            "final_lat": d.location.lat,
            "final_lon": d.location.lon,
        } for d in self.final_drivers]


def available_drivers(pool: Sequence[DriverRuntime], batch_close_time: float,
                      cfg: SimConfig) -> list[DriverRuntime]:
    """Idle drivers plus those finishing within the availability window.

    A busy driver's location is already the dropoff of its current trip and
    its next deadhead starts at ``busy_until``.
    """
    horizon = batch_close_time + cfg.availability_window_s
    return [d for d in pool if d.busy_until <= horizon]


def execute_trip(d: DriverRuntime, r: RideRequest, assign_time: float, cfg: SimConfig) -> TripRecord:
    if d.busy_until > assign_time + cfg.availability_window_s:
        raise ContractViolation(f"driver {d.id} busy until {d.busy_until}, assigned at {assign_time}")
    if assign_time < r.request_time:
        raise ContractViolation(f"request {r.id} assigned before it was made")
    dh = deadhead_km(d.location, r.pickup, cfg.circuity)
    depart = max(assign_time, d.busy_until)
    deadhead_s = dh / cfg.speed_kmh * 3600.0
    pickup = depart + deadhead_s
    dropoff = pickup + r.trip_km / cfg.speed_kmh * 3600.0
    assign_delay = assign_time - r.request_time
    driver_delay = depart - assign_time
    e = d.spec.emission_g_per_km
    rec = TripRecord(
        request_id=r.id, driver_id=d.id, request_time=r.request_time,
        assign_time=assign_time, depart_time=depart, pickup_time=pickup, dropoff_time=dropoff,
        deadhead_km=dh, trip_km=r.trip_km, emission_g_per_km=e,
        emission_g=(dh + r.trip_km) * e,
        assign_delay_s=assign_delay, driver_delay_s=driver_delay, deadhead_s=deadhead_s,
        wait_s=assign_delay + driver_delay + deadhead_s,
    )
    d.location = r.dropoff
    d.busy_until = dropoff
    d.cumulative_utility_km += r.trip_km - dh
    d.trips_served += 1
    return rec


def _check_scenario(scenario: Scenario) -> None:
    g = scenario.grid
    try:
        for r in scenario.requests:
            tile_of(r.pickup, g)
            tile_of(r.dropoff, g)
        for d in scenario.fleet:
            tile_of(d.initial_location, g)
    except OutOfAreaError as exc:
        raise ConfigError(f"scenario does not fit its grid: {exc}") from exc


def _resolve_policy(policy, cfg: SimConfig) -> DispatchPolicy:
    if isinstance(policy, DispatchPolicy):
        return clone(policy)
    return make_policy(policy, **cfg.policy_params())


def run(scenario: Scenario, policy, cfg: SimConfig = SimConfig(),
        horizon_s: float | None = None) -> SimResult:
    """Simulate ``scenario`` under ``policy`` (a name, PolicyKind or an
    unfitted/fitted policy estimator, which is cloned and refit)."""
    _check_scenario(scenario)
    pol = _resolve_policy(policy, cfg)
    pol.fit()
    grid = scenario.grid
    drivers = sorted((DriverRuntime.start(s) for s in scenario.fleet), key=lambda d: d.id)
    by_id = {d.id: d for d in drivers}
    requests = scenario.requests
    result = SimResult(final_drivers=drivers)
    B = cfg.batch_duration_s

    pending: list[RideRequest] = []
    idx, k = 0, 1
    while idx < len(requests) or pending:
        close = k * B
        if horizon_s is not None and close > horizon_s:
            break
        if not pending and requests[idx].request_time > close:
            # fast-forward over empty batches
            k = max(k + 1, int(requests[idx].request_time // B))
            continue
        while idx < len(requests) and requests[idx].request_time <= close:
            pending.append(requests[idx])
            idx += 1
        waiting = []
        for r in pending:
            if close - r.request_time > cfg.max_wait_s:
                result.dropped.append((r.id, "wait_exceeded", close))
            else:
                waiting.append(r)

        pool = available_drivers(drivers, close, cfg)
        head, deferred = overflow_split(waiting, len(pool))
        served = set()
        if head:
            result.n_batches += 1
            problem = build_problem([d.snapshot() for d in pool], head, grid,
                                    circuity=cfg.circuity, radius_km=cfg.candidate_radius_km)
            matching = pol.predict(problem)
            assigned = {r: d for d, r in matching.pairs}
            transitions = []
            for r in head:
                if r.id not in assigned:
                    continue
                d = by_id[assigned[r.id]]
                src = tile_of(d.location, grid)
                rec = execute_trip(d, r, close, cfg)
                result.trips.append(rec)
                served.add(r.id)
                transitions.append(Transition(src, tile_of(r.dropoff, grid), rec.deadhead_km, rec.trip_km))
            if pol.learns and transitions:
                pol.partial_fit(transitions)
        pending = [r for r in head if r.id not in served] + deferred
        k += 1

    result.pending = [r.id for r in pending] + [r.id for r in requests[idx:]]
    if isinstance(pol, LEADPolicy):
        result.value_table = pol.value_table_.copy()
    return result


# -- export -------------------------------------------------------------------

def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_csv(path: str | Path, columns: list[str], rows: list[dict]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([_fmt(row[c]) for c in columns])


def export_result(result: SimResult, outdir: str | Path) -> dict[str, Path]:
    """Write ``trips.csv``, ``drivers.csv`` and ``dropped.csv`` into
    ``outdir``; returns the written paths."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    paths = {
        "trips": outdir / "trips.csv",
        "drivers": outdir / "drivers.csv",
        "dropped": outdir / "dropped.csv",
    }
    write_csv(paths["trips"], TRIP_COLUMNS, [dataclasses.asdict(t) for t in result.trips])
    write_csv(paths["drivers"], DRIVER_COLUMNS, result.driver_rows())
    write_csv(paths["dropped"], ["request_id", "reason", "time"],
              [{"request_id": a, "reason": b, "time": c} for a, b, c in result.dropped]
              + [{"request_id": a, "reason": "pending_at_end", "time": ""} for a in result.pending])
    return paths

