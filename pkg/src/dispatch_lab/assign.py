"""Per-batch weighted bipartite problem and its solvers.

A batch pairs available drivers with pending requests. Each edge carries a
long-term expected emission (grams) and the driver's expected final utility
(km) if matched. The batch objective is

    sum of matched expected emissions + eta * (max - min of projected utilities)

which is the emission total minus ``eta`` times the (non-positive) fairness
score. Matchings always serve as many requests as the feasible edges allow.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

from .exceptions import ContractViolation, OracleSizeError
from .geo import GeoPoint, GridSpec, TileId, deadhead_km, tile_of
from .ingest import RideRequest
from .values import ValueTable

UTILITY_MODES = ("derived", "literal")
FAIRNESS_SCOPES = ("all_available", "matched_only")
EXACT_MAX_SIDE = 10
_REL_TOL = 1e-9


@dataclass(frozen=True)
class BatchDriver:
    """Snapshot of a driver as seen by one batch."""

    id: str
    location: GeoPoint
    emission_g_per_km: float
    cumulative_utility_km: float = 0.0
    busy_until: float = 0.0


@dataclass(frozen=True)
class CandidateEdge:
    driver_id: str
    request_id: str
    deadhead_km: float
    trip_km: float
    expected_emission_g: float
    expected_utility_km: float


@dataclass(frozen=True)
class Matching:
    pairs: frozenset  # of (driver_id, request_id)
    objective_value: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "pairs", frozenset(self.pairs))

    def sorted_pairs(self) -> list[tuple[str, str]]:
        return sorted(self.pairs, key=lambda p: (p[1], p[0]))

    def driver_of(self, request_id: str) -> str | None:
        for d, r in self.pairs:
            if r == request_id:
                return d
        return None

    def __len__(self):
        return len(self.pairs)


# -- edge weights -------------------------------------------------------------

def _value_terms(table: ValueTable | None, src: TileId, dst: TileId):
    if table is None:
        return 0.0, 0.0, 0.0, 0.0
    return table.value_t(dst), table.value_d(dst), table.value_t(src), table.value_d(src)


def expected_emission(driver: BatchDriver, request: RideRequest, table: ValueTable | None,
                      grid: GridSpec, circuity: float = 1.0, deadhead: float | None = None) -> float:
    """Long-term expected emission (g) of ``driver`` serving ``request``."""
    d_d = deadhead_km(driver.location, request.pickup, circuity) if deadhead is None else deadhead
    gamma = table.gamma if table is not None else 0.0
    vt_q, vd_q, vt_l, vd_l = _value_terms(
        table, tile_of(driver.location, grid), tile_of(request.dropoff, grid))
    km = (request.trip_km + d_d) + gamma * (vt_q + vd_q) - (vt_l + vd_l)
    return km * driver.emission_g_per_km


def expected_utility(driver: BatchDriver, request: RideRequest, table: ValueTable | None,
                     grid: GridSpec, baseline_term: str = "derived", circuity: float = 1.0,
                     deadhead: float | None = None) -> float:
    """Expected final utility (km) of ``driver`` if matched to ``request``.

    ``baseline_term="literal"`` subtracts V_T(l) + V_D(l) from the projection;
    ``"derived"`` subtracts V_T(l) - V_D(l), mirroring the emission weight.
    """
    if baseline_term not in UTILITY_MODES:
        raise ValueError(f"baseline_term must be one of {UTILITY_MODES}")
    d_d = deadhead_km(driver.location, request.pickup, circuity) if deadhead is None else deadhead
    gamma = table.gamma if table is not None else 0.0
    vt_q, vd_q, vt_l, vd_l = _value_terms(
        table, tile_of(driver.location, grid), tile_of(request.dropoff, grid))
    here = vt_l + vd_l if baseline_term == "literal" else vt_l - vd_l
    return driver.cumulative_utility_km + (request.trip_km - d_d) + gamma * (vt_q - vd_q) - here


# -- problem ------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class BatchProblem:
    """Dense driver x request weight grid for one batch.

    Rows follow ``drivers``, columns follow ``requests``. ``feasible`` masks
    edges beyond the candidate radius; infeasible cells of the weight
    matrices are meaningless.
    """

    drivers: tuple[BatchDriver, ...]
    requests: tuple[RideRequest, ...]
    deadhead: np.ndarray
    feasible: np.ndarray
    emission: np.ndarray
    utility: np.ndarray
    eta: float = 0.0
    fairness_scope: str = "all_available"
    grid: GridSpec | None = field(default=None, repr=False)
    circuity: float = 1.0

    def __post_init__(self):
        if self.eta < 0:
            raise ValueError("eta must be non-negative")
        if self.fairness_scope not in FAIRNESS_SCOPES:
            raise ValueError(f"fairness_scope must be one of {FAIRNESS_SCOPES}")
        shape = (len(self.drivers), len(self.requests))
        for name in ("deadhead", "feasible", "emission", "utility"):
            if getattr(self, name).shape != shape:
                raise ValueError(f"{name} has shape {getattr(self, name).shape}, expected {shape}")

    @property
    def n_drivers(self) -> int:
        return len(self.drivers)

    @property
    def n_requests(self) -> int:
        return len(self.requests)

    @property
    def trip(self) -> np.ndarray:
        return np.array([r.trip_km for r in self.requests], dtype=float)

    @property
    def base_utility(self) -> np.ndarray:
        return np.array([d.cumulative_utility_km for d in self.drivers], dtype=float)

    @property
    def emission_rates(self) -> np.ndarray:
        return np.array([d.emission_g_per_km for d in self.drivers], dtype=float)

    @property
    def edges(self) -> list[CandidateEdge]:
        out = []
        for i, d in enumerate(self.drivers):
            for j, r in enumerate(self.requests):
                if self.feasible[i, j]:
                    out.append(CandidateEdge(d.id, r.id, float(self.deadhead[i, j]), r.trip_km,
                                             float(self.emission[i, j]), float(self.utility[i, j])))
        return out

    def reweighted(self, table: ValueTable | None, eta: float | None = None,
                   utility_mode: str = "derived", fairness_scope: str | None = None) -> "BatchProblem":
        """Same drivers, requests and distances with weights from ``table``."""
        if self.grid is None:
            raise ContractViolation("problem was built without a grid")
        em, ut = _weights(self.drivers, self.requests, self.deadhead, table, self.grid, utility_mode)
        return BatchProblem(
            self.drivers, self.requests, self.deadhead, self.feasible, em, ut,
            self.eta if eta is None else eta,
            self.fairness_scope if fairness_scope is None else fairness_scope,
            self.grid, self.circuity)


def _weights(drivers, requests, deadhead, table, grid, utility_mode):
    nd, nr = len(drivers), len(requests)
    em = np.zeros((nd, nr))
    ut = np.zeros((nd, nr))
    for i, d in enumerate(drivers):
        for j, r in enumerate(requests):
            em[i, j] = expected_emission(d, r, table, grid, deadhead=deadhead[i, j])
            ut[i, j] = expected_utility(d, r, table, grid, utility_mode, deadhead=deadhead[i, j])
    return em, ut


def build_problem(
    drivers: Sequence[BatchDriver],
    requests: Sequence[RideRequest],
    grid: GridSpec,
    table: ValueTable | None = None,
    eta: float = 0.0,
    circuity: float = 1.0,
    radius_km: float | None = 8.0,
    utility_mode: str = "derived",
    fairness_scope: str = "all_available",
) -> BatchProblem:
    drivers = tuple(drivers)
    requests = tuple(requests)
    nd, nr = len(drivers), len(requests)
    dead = np.zeros((nd, nr))
    for i, d in enumerate(drivers):
        for j, r in enumerate(requests):
            dead[i, j] = deadhead_km(d.location, r.pickup, circuity)
    feasible = np.ones((nd, nr), dtype=bool) if radius_km is None else dead <= radius_km
    em, ut = _weights(drivers, requests, dead, table, grid, utility_mode)
    return BatchProblem(drivers, requests, dead, feasible, em, ut, eta, fairness_scope, grid, circuity)


# -- objective ----------------------------------------------------------------

def _as_assignment(m: Matching, p: BatchProblem) -> np.ndarray:
    """Matching -> array of request index per driver (-1 if unmatched)."""
    d_idx = {d.id: i for i, d in enumerate(p.drivers)}
    r_idx = {r.id: j for j, r in enumerate(p.requests)}
    a = np.full(p.n_drivers, -1, dtype=int)
    seen_r = set()
    for d, r in m.pairs:
        if d not in d_idx or r not in r_idx:
            raise ContractViolation(f"pair ({d}, {r}) not in batch")
        i, j = d_idx[d], r_idx[r]
        if a[i] >= 0:
            raise ContractViolation(f"driver {d} matched twice")
        if j in seen_r:
            raise ContractViolation(f"request {r} matched twice")
        if not p.feasible[i, j]:
            raise ContractViolation(f"pair ({d}, {r}) is outside the candidate radius")
        a[i] = j
        seen_r.add(j)
    return a


def _to_matching(a: np.ndarray, p: BatchProblem, objective: float) -> Matching:
    return Matching(
        frozenset((p.drivers[i].id, p.requests[j].id) for i, j in enumerate(a) if j >= 0),
        float(objective))


def projected_utilities(A: np.ndarray, utility: np.ndarray, base: np.ndarray, scope: str) -> np.ndarray:
    """Per-driver utility after a batch, for one or many assignments ``A``
    (shape ``(..., n_drivers)``)."""
    matched = A >= 0
    cols = np.where(matched, A, 0)
    rows = np.broadcast_to(np.arange(A.shape[-1]), A.shape)
    picked = utility[rows, cols] if utility.size else np.zeros(A.shape)
    # matched_only is the literal per-batch reading: unmatched drivers count as 0
    fallback = base if scope == "all_available" else np.zeros_like(base)
    return np.where(matched, picked, fallback)


def _emission_sums(A: np.ndarray, weight: np.ndarray) -> np.ndarray:
    matched = A >= 0
    cols = np.where(matched, A, 0)
    rows = np.broadcast_to(np.arange(A.shape[-1]), A.shape)
    picked = weight[rows, cols] if weight.size else np.zeros(A.shape)
    return np.where(matched, picked, 0.0).sum(axis=-1)


def lead_objectives(A: np.ndarray, p: BatchProblem) -> np.ndarray:
    A = np.atleast_2d(A)
    em = _emission_sums(A, p.emission)
    if p.eta == 0 or p.n_drivers == 0:
        return em
    u = projected_utilities(A, p.utility, p.base_utility, p.fairness_scope)
    return em + p.eta * (u.max(axis=-1) - u.min(axis=-1))


def batch_objective(m: Matching, p: BatchProblem) -> float:
    """Expected batch emissions minus eta times the batch fairness score."""
    a = _as_assignment(m, p)
    return float(lead_objectives(a, p)[0])


# -- solvers ------------------------------------------------------------------

def _hungarian(cost: np.ndarray, feasible: np.ndarray, row_order=None) -> np.ndarray:
    """Min-cost assignment of maximum cardinality over feasible edges.

    Rows are presented to the solver in ``row_order`` (default: as given),
    which decides exact ties in favour of earlier rows.
    """
    nd, nr = cost.shape
    a = np.full(nd, -1, dtype=int)
    if nd == 0 or nr == 0 or not feasible.any():
        return a
    order = np.arange(nd) if row_order is None else np.asarray(row_order)
    big = 1.0 + 2.0 * np.abs(cost[feasible]).sum()
    c = np.where(feasible, cost, big)[order]
    rows, cols = linear_sum_assignment(c)
    for i, j in zip(order[rows], cols):
        if feasible[i, j]:
            a[i] = j
    return a


def id_order(p: "BatchProblem") -> np.ndarray:
    return np.array(sorted(range(p.n_drivers), key=lambda i: p.drivers[i].id), dtype=int)


def max_cardinality(feasible: np.ndarray) -> int:
    return int((_hungarian(np.zeros(feasible.shape), feasible) >= 0).sum())


def _neighbours(a: np.ndarray, feasible: np.ndarray) -> np.ndarray:
    """All assignments one move away: swap two matched drivers' requests,
    hand a matched request to an idle driver, or replace a matched request
    with an unserved one on the same driver."""
    nd, nr = feasible.shape
    matched = [i for i in range(nd) if a[i] >= 0]
    idle = [i for i in range(nd) if a[i] < 0]
    served = set(a[a >= 0].tolist())
    unserved = [j for j in range(nr) if j not in served]
    moves = []
    for x, i in enumerate(matched):
        for k in matched[x + 1:]:
            if feasible[i, a[k]] and feasible[k, a[i]]:
                b = a.copy()
                b[i], b[k] = a[k], a[i]
                moves.append(b)
        for k in idle:
            if feasible[k, a[i]]:
                b = a.copy()
                b[k], b[i] = a[i], -1
                moves.append(b)
        for j in unserved:
            if feasible[i, j]:
                b = a.copy()
                b[i] = j
                moves.append(b)
    return np.array(moves, dtype=int).reshape(len(moves), nd)


def local_search(a0: np.ndarray, feasible: np.ndarray,
                 objective: Callable[[np.ndarray], np.ndarray],
                 max_iter: int | None = None) -> tuple[np.ndarray, float, list[float]]:
    """Best-improvement descent from ``a0``.

    Returns the final assignment, its objective and the objective trace.
    Among equally good moves the first generated wins, so the result is
    deterministic.
    """
    if max_iter is None:
        max_iter = 10 * int(feasible.sum())
    a = a0.copy()
    best = float(objective(a[None, :])[0])
    trace = [best]
    for _ in range(max_iter):
        moves = _neighbours(a, feasible)
        if len(moves) == 0:
            break
        vals = objective(moves)
        k = int(np.argmin(vals))
        if not vals[k] < best - _REL_TOL * max(1.0, abs(best)):
            break
        a, best = moves[k], float(vals[k])
        trace.append(best)
    return a, best, trace


def solve_batch(p: BatchProblem, max_iter: int | None = None) -> Matching:
    """Hungarian seed on expected emissions, then local search on the full
    batch objective."""
    a0 = _hungarian(p.emission, p.feasible, id_order(p))
    a, _, _ = local_search(a0, p.feasible, lambda A: lead_objectives(A, p), max_iter)
    m = _to_matching(a, p, 0.0)
    return Matching(m.pairs, batch_objective(m, p))


def solve_batch_exact(p: BatchProblem) -> Matching:
    """Exhaustive branch-and-bound over maximum-cardinality matchings.

    Ties in objective go to the lexicographically smallest sorted list of
    (request_id, driver_id) pairs.
    """
    nd, nr = p.n_drivers, p.n_requests
    if nd > EXACT_MAX_SIDE or nr > EXACT_MAX_SIDE:
        raise OracleSizeError(f"exact solver handles at most {EXACT_MAX_SIDE}x{EXACT_MAX_SIDE}, got {nd}x{nr}")
    k = max_cardinality(p.feasible)
    if k == 0:
        return Matching(frozenset(), batch_objective(Matching(frozenset()), p))

    E, U, feas = p.emission, p.utility, p.feasible
    base = p.base_utility
    eta = p.eta
    order = [np.argsort(E[:, j], kind="stable") for j in range(nr)]
    r_ids = [r.id for r in p.requests]
    d_ids = [d.id for d in p.drivers]

    best = {"obj": np.inf, "key": None, "a": None}
    a = np.full(nd, -1, dtype=int)
    used = np.zeros(nd, dtype=bool)

    def key_of(assign):
        return sorted((r_ids[j], d_ids[i]) for i, j in enumerate(assign) if j >= 0)

    def bound(j, n_assigned, em_sum, fixed_u):
        need = k - n_assigned
        mins = []
        for jj in range(j, nr):
            cand = E[~used & feas[:, jj], jj]
            if cand.size:
                mins.append(cand.min())
        if len(mins) < need:
            return np.inf
        lb = em_sum + (sum(sorted(mins)[:need]) if need else 0.0)
        if eta and fixed_u:
            lb += eta * (max(fixed_u) - min(fixed_u))
        return lb

    def leaf():
        obj = float(lead_objectives(a, p)[0])
        tol = _REL_TOL * max(1.0, abs(best["obj"]) if np.isfinite(best["obj"]) else 1.0)
        if obj < best["obj"] - tol:
            best.update(obj=obj, key=key_of(a), a=a.copy())
        elif abs(obj - best["obj"]) <= tol:
            kk = key_of(a)
            if kk < best["key"]:
                best.update(obj=obj, key=kk, a=a.copy())

    def visit(j, n_assigned, em_sum, fixed_u):
        if n_assigned == k:
            leaf()
            return
        if j == nr or n_assigned + (nr - j) < k:
            return
        lb = bound(j, n_assigned, em_sum, fixed_u)
        if np.isfinite(best["obj"]) and lb > best["obj"] + _REL_TOL * max(1.0, abs(best["obj"])):
            return
        for i in order[j]:
            if used[i] or not feas[i, j]:
                continue
            used[i] = True
            a[i] = j
            visit(j + 1, n_assigned + 1, em_sum + E[i, j], fixed_u + [U[i, j]])
            a[i] = -1
            used[i] = False
        visit(j + 1, n_assigned, em_sum, fixed_u)

    visit(0, 0, 0.0, [])
    m = _to_matching(best["a"], p, 0.0)
    return Matching(m.pairs, batch_objective(m, p))


def overflow_split(requests: Sequence, capacity: int) -> tuple[list, list]:
    """First ``capacity`` requests (time order) and the rest, deferred."""
    requests = list(requests)
    capacity = max(0, capacity)
    return requests[:capacity], requests[capacity:]
