from dataclasses import replace

import numpy as np
import pytest

from dispatch_lab.assign import BatchDriver, build_problem
from dispatch_lab.baselines import PolicyKind, assign_cd, assign_laf, assign_tora, laf_increments
from dispatch_lab.geo import haversine_km
from dispatch_lab.ingest import RideRequest
from dispatch_lab.values import Transition, UtilityTable

from .conftest import random_batch


def _req(grid, rid, east, north, t=0.0, dest=(9.5, 9.5)):
    p, q = grid.point_at(east, north), grid.point_at(*dest)
    return RideRequest(rid, p, q, t, haversine_km(p, q))


def _drv(grid, did, east, north, rate=200.0, u=0.0):
    return BatchDriver(did, grid.point_at(east, north), rate, u)


def test_policy_kind_parse():
    assert PolicyKind.parse(" LEAD ") is PolicyKind.LEAD
    assert {k.value for k in PolicyKind} == {"lead", "cd", "tora", "laf"}
    with pytest.raises(ValueError, match="unknown policy"):
        PolicyKind.parse("greedy")


def test_cd_nearest(grid):
    p = build_problem([_drv(grid, "a", 1, 0), _drv(grid, "b", 3, 0)], [_req(grid, "r", 0, 0)], grid)
    assert assign_cd(p).sorted_pairs() == [("a", "r")]


def test_cd_sequential_order(grid):
    drivers = [_drv(grid, "a", 5, 5), _drv(grid, "b", 8, 5)]
    reqs = [_req(grid, "r2", 5, 4, t=2.0), _req(grid, "r1", 5, 6, t=1.0)]
    m = assign_cd(build_problem(drivers, reqs, grid))
    assert m.driver_of("r1") == "a" and m.driver_of("r2") == "b"


def test_cd_tie_by_driver_id(grid):
    drivers = [_drv(grid, "b", 4, 5), _drv(grid, "a", 6, 5)]
    m = assign_cd(build_problem(drivers, [_req(grid, "r", 5, 5)], grid))
    assert m.driver_of("r") == "a"


def test_empty_batch(grid):
    p = build_problem([_drv(grid, "a", 1, 1)], [], grid)
    assert len(assign_cd(p)) == len(assign_tora(p)) == len(assign_laf(p)) == 0


def test_cd_greedy_local_optimality(grid):
    rng = np.random.default_rng(11)
    for _ in range(30):
        p = random_batch(rng, grid, 5, 4)
        m = assign_cd(p)
        ids = [d.id for d in p.drivers]
        used = set()
        for j in sorted(range(p.n_requests), key=lambda j: p.requests[j].request_time):
            i = ids.index(m.driver_of(p.requests[j].id))
            assert p.deadhead[i, j] == min(p.deadhead[k, j] for k in range(len(ids)) if ids[k] not in used)
            used.add(ids[i])


def test_tora_e2d_example(grid):
    # closest: 1 km at 300 g/km; alternative: 2 km at 63.35 g/km -> E2D = -173.3
    r = _req(grid, "r", 5, 5)
    near = BatchDriver("c", grid.point_at(5, 5), 300.0)
    far = BatchDriver("v", grid.point_at(5, 5), 63.35)
    p = build_problem([near, far], [r], grid)
    p = replace(p, deadhead=np.array([[1.0], [2.0]]))
    assert assign_tora(p, 100.0).driver_of("r") == "v"
    assert assign_tora(p, 200.0).driver_of("r") == "c"
    assert assign_cd(p).driver_of("r") == "c"


def test_tora_identical_rates_is_cd(grid):
    rng = np.random.default_rng(3)
    for _ in range(20):
        p = random_batch(rng, grid, 5, 5)
        drivers = tuple(replace(d, emission_g_per_km=200.0) for d in p.drivers)
        q = build_problem(drivers, p.requests, grid, radius_km=None)
        assert assign_tora(q, 0.0) == assign_cd(q)


def test_tora_infinite_threshold_is_cd(grid):
    rng = np.random.default_rng(4)
    for _ in range(50):
        p = random_batch(rng, grid, 6, 5)
        assert assign_tora(p, float("inf")).sorted_pairs() == assign_cd(p).sorted_pairs()


def test_tora_rejects_negative_threshold(grid):
    p = build_problem([_drv(grid, "a", 1, 1)], [_req(grid, "r", 1, 1)], grid)
    with pytest.raises(ValueError):
        assign_tora(p, -1.0)


def test_laf_prefers_lower_utility_driver(grid):
    drivers = [_drv(grid, "rich", 4, 5, u=10.0), _drv(grid, "poor", 6, 5, u=0.0)]
    p = build_problem(drivers, [_req(grid, "r", 5, 5)], grid)
    assert assign_laf(p).driver_of("r") == "poor"


def test_laf_single_driver_ignores_rate(grid):
    for rate in (0.0, 63.35, 900.0):
        p = build_problem([_drv(grid, "a", 1, 1, rate=rate)], [_req(grid, "r", 4, 4)], grid)
        assert assign_laf(p).driver_of("r") == "a"


def test_laf_tie_is_deterministic(grid):
    drivers = [_drv(grid, "b", 5, 5), _drv(grid, "a", 5, 5)]
    p = build_problem(drivers, [_req(grid, "r", 5, 6)], grid)
    assert assign_laf(p).driver_of("r") == "a"
    assert assign_laf(p) == assign_laf(p)


def test_laf_invariant_to_emission_rates(grid):
    rng = np.random.default_rng(5)
    for _ in range(30):
        p = random_batch(rng, grid, 6, 5)
        scaled = tuple(replace(d, emission_g_per_km=d.emission_g_per_km * float(rng.uniform(0.01, 50)))
                       for d in p.drivers)
        q = build_problem(scaled, p.requests, grid, radius_km=None)
        assert assign_laf(q).pairs == assign_laf(p).pairs


def test_laf_increments_use_table(grid):
    p = build_problem([_drv(grid, "a", 1.5, 1.5)], [_req(grid, "r", 2, 2, dest=(6.5, 6.5))], grid)
    base = laf_increments(p, None)
    assert base[0, 0] == pytest.approx(p.trip[0] - p.deadhead[0, 0])
    t = UtilityTable(gamma=0.5, alpha=1.0)
    from dispatch_lab.geo import TileId
    t.td_update(Transition(TileId(6, 6), TileId(0, 0), 1.0, 5.0))  # V_U(6,6) = 4
    inc = laf_increments(p, t)
    assert inc[0, 0] == pytest.approx(base[0, 0] + 0.5 * 4.0)


def test_baselines_feasible_matchings(grid):
    rng = np.random.default_rng(9)
    for _ in range(30):
        p = random_batch(rng, grid, int(rng.integers(1, 7)), int(rng.integers(1, 7)), radius_km=5.0)
        for m in (assign_cd(p), assign_tora(p), assign_laf(p)):
            ds = [d for d, _ in m.pairs]
            rs = [r for _, r in m.pairs]
            assert len(set(ds)) == len(ds) and len(set(rs)) == len(rs)
            for d, r in m.pairs:
                i = [x.id for x in p.drivers].index(d)
                j = [x.id for x in p.requests].index(r)
                assert p.feasible[i, j]
