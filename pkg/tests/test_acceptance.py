"""Acceptance criteria 1-9. A one-line verdict per criterion is printed in
the terminal summary (see ``pytest_terminal_summary`` in conftest)."""
import time
from dataclasses import replace

import numpy as np
import pytest

from dispatch_lab.assign import BatchDriver, build_problem, solve_batch, solve_batch_exact
from dispatch_lab.baselines import assign_cd, assign_laf, assign_tora
from dispatch_lab.cli import main
from dispatch_lab.geo import TileId, haversine_km
from dispatch_lab.ingest import RideRequest, city_layout, electrify, lev_share, synth_scenario
from dispatch_lab.metrics import summarize
from dispatch_lab.policies import LEADPolicy
from dispatch_lab.sim import SimConfig, run
from dispatch_lab.values import Transition, ValueTable

from .conftest import assert_bookkeeping, random_batch, random_table

# Desk-scale scenario: 20 drivers, default mixed profile, 2,000 requests over
# one simulated day on a 5 x 5 km city (see README for the choice of area).
DESK = dict(n_requests=2000, n_drivers=20, duration_s=86400.0, seed=0)
DESK_AREA_KM = 5


# -- 1 ------------------------------------------------------------------------

def test_criterion_1_solver_matches_oracle(grid):
    rng = np.random.default_rng(2024)
    etas = (0.0, 1.0, 5.0, 10.0)
    problems = []
    for k in range(200):
        nd, nr = int(rng.integers(1, 7)), int(rng.integers(1, 7))
        table = random_table(rng, grid) if k % 2 else None
        problems.append(random_batch(rng, grid, nd, nr, eta=etas[k % 4], table=table, radius_km=6.0))
    t0 = time.perf_counter()
    exact_hits, worst = 0, 0.0
    for p in problems:
        heur, opt = solve_batch(p), solve_batch_exact(p)
        assert len(heur) == len(opt)
        gap = (heur.objective_value - opt.objective_value) / max(1.0, abs(opt.objective_value))
        worst = max(worst, gap)
        exact_hits += abs(heur.objective_value - opt.objective_value) <= 1e-9 * max(1.0, abs(opt.objective_value))
    elapsed = time.perf_counter() - t0
    assert worst <= 0.02, f"worst relative gap {worst:.4f}"
    assert exact_hits >= 180, f"exact on {exact_hits}/200"
    assert elapsed < 10.0, f"{elapsed:.1f} s"


# -- 2 ------------------------------------------------------------------------

def test_criterion_2_td_closed_form():
    rng = np.random.default_rng(7)
    tiles = [TileId(c, r) for c in range(6) for r in range(6)]
    t = ValueTable()
    for _ in range(1000):
        s, s2 = (tiles[i] for i in rng.integers(0, len(tiles), 2))
        dd, dt = float(rng.uniform(0, 8)), float(rng.uniform(0, 25))
        vd_s, vd_s2, vt_s, vt_s2 = t.value_d(s), t.value_d(s2), t.value_t(s), t.value_t(s2)
        want_d = vd_s + t.alpha * (dd + t.gamma * vd_s2 - vd_s)
        want_t = vt_s + t.alpha * (dt + t.gamma * vt_s2 - vt_s)
        t.td_update(Transition(s, s2, dd, dt))
        assert abs(t.value_d(s) - want_d) <= 1e-9
        assert abs(t.value_t(s) - want_t) <= 1e-9

    d = 3.0
    loop = ValueTable()
    a, b = TileId(0, 0), TileId(1, 0)
    target = d / (1 - loop.gamma)
    for _ in range(20000):
        loop.td_update(Transition(a, b, d, d))
        loop.td_update(Transition(b, a, d, d))
    for s in (a, b):
        assert abs(loop.value_d(s) - target) <= 1e-6
        assert abs(loop.value_t(s) - target) <= 1e-6


# -- 3 ------------------------------------------------------------------------

def test_criterion_3_myopic_reduction(grid):
    rng = np.random.default_rng(3)
    policy = LEADPolicy(eta=0.0).fit()
    for _ in range(100):
        p = random_batch(rng, grid, int(rng.integers(1, 9)), 1)
        got = policy.predict(p).driver_of(p.requests[0].id)
        cost = [(p.deadhead[i, 0] + p.trip[0]) * d.emission_g_per_km for i, d in enumerate(p.drivers)]
        assert got == p.drivers[int(np.argmin(cost))].id


# -- 4 ------------------------------------------------------------------------

def test_criterion_4_degenerate_policies(grid):
    rng = np.random.default_rng(4)
    for _ in range(100):
        p = random_batch(rng, grid, int(rng.integers(1, 8)), int(rng.integers(1, 8)), radius_km=6.0)
        assert assign_tora(p, float("inf")).sorted_pairs() == assign_cd(p).sorted_pairs()
        scaled = tuple(replace(d, emission_g_per_km=d.emission_g_per_km * float(rng.uniform(0.01, 100)))
                       for d in p.drivers)
        q = build_problem(scaled, p.requests, grid, radius_km=6.0)
        assert assign_laf(q).pairs == assign_laf(p).pairs


# -- 5 to 8: one shared desk-scale experiment ------------------------------------

@pytest.fixture(scope="module")
def desk():
    t0 = time.perf_counter()
    grid, hotspots = city_layout(DESK_AREA_KM)
    sc = synth_scenario(DESK["n_requests"], DESK["n_drivers"], DESK["duration_s"], hotspots,
                        seed=DESK["seed"], grid=grid)
    runs = {}
    for pol in ("lead", "cd", "tora", "laf"):
        cfg = SimConfig(batch_duration_s=300.0, eta_g_per_km=5.0)
        runs[pol] = (sc, cfg, run(sc, pol, cfg))
    for eta in (0.0, 10.0):
        cfg = SimConfig(batch_duration_s=300.0, eta_g_per_km=eta)
        runs[f"lead_eta{eta:g}"] = (sc, cfg, run(sc, "lead", cfg))
    ev = sc.with_fleet(electrify(sc.fleet, 25.0, seed=DESK["seed"]))
    cfg = SimConfig(batch_duration_s=300.0, eta_g_per_km=5.0)
    runs["lead_lev25"] = (ev, cfg, run(ev, "lead", cfg))
    reports = {k: summarize(v[2]) for k, v in runs.items()}
    return {"scenario": sc, "runs": runs, "reports": reports, "seconds": time.perf_counter() - t0}


def _m(desk, key, metric):
    return getattr(desk["reports"][key], metric)


def test_criterion_5_emissions_vs_cd(desk):
    assert _m(desk, "lead", "emissions_g_per_trip") <= _m(desk, "cd", "emissions_g_per_trip")


def test_criterion_5_emissions_vs_laf(desk):
    assert _m(desk, "lead", "emissions_g_per_trip") <= _m(desk, "laf", "emissions_g_per_trip")


def test_criterion_5_fairness_vs_tora(desk):
    lead, tora = _m(desk, "lead", "fairness_gap_km"), _m(desk, "tora", "fairness_gap_km")
    assert lead <= tora, f"LEAD gap {lead:.1f} km > TORA gap {tora:.1f} km"


def test_criterion_5_wait_vs_laf(desk):
    lead, laf = _m(desk, "lead", "mean_wait_s"), _m(desk, "laf", "mean_wait_s")
    assert lead <= laf, f"LEAD wait {lead:.0f} s > LAF wait {laf:.0f} s"


def test_criterion_5_runtime(desk):
    assert desk["seconds"] < 300.0


def test_criterion_6_eta_monotonicity(desk):
    assert _m(desk, "lead_eta10", "fairness_gap_km") <= _m(desk, "lead_eta0", "fairness_gap_km")


def test_criterion_7_lev_monotonicity(desk):
    before = desk["runs"]["lead"][0]
    after = desk["runs"]["lead_lev25"][0]
    assert lev_share(after.fleet) == pytest.approx(0.25) and lev_share(before.fleet) < 0.25
    assert _m(desk, "lead_lev25", "emissions_g_per_trip") <= _m(desk, "lead", "emissions_g_per_trip")


def test_criterion_8_bookkeeping(desk):
    for sc, cfg, res in desk["runs"].values():
        assert_bookkeeping(sc, res, cfg)


# -- 9 ------------------------------------------------------------------------

def _tree(d):
    return {p.relative_to(d): p.read_bytes() for p in sorted(d.rglob("*")) if p.is_file()}


def test_criterion_9_manifest_determinism(tmp_path):
    args = ["run", "--synthetic", "--requests", "300", "--drivers", "10", "--hours", "6",
            "--policy", "lead,cd,tora,laf", "--lev-pct", "25", "--seed", "3"]
    assert main([*args, "--out", str(tmp_path / "first")]) == 0
    manifests = sorted((tmp_path / "first").glob("*/*/manifest.json"))
    assert len(manifests) == 4
    for m in manifests:
        for rep in ("a", "b"):
            assert main(["run", "--manifest", str(m), "--out", str(tmp_path / rep)]) == 0
    assert _tree(tmp_path / "a") == _tree(tmp_path / "b")
    first = _tree(tmp_path / "first")
    for path, data in _tree(tmp_path / "a").items():
        if path.parts[0] in ("lead", "cd", "tora", "laf"):
            assert first[path] == data
