"""Command-line entry point: single runs, cross-policy comparisons and sweeps.

Flags take user-facing units (minutes, gCO2/km, percent); everything is
converted to seconds, km and grams before it reaches the simulator. Each
run writes ``<out>/<policy>/<config-hash>/`` holding ``trips.csv``,
``drivers.csv``, ``dropped.csv``, ``metrics.csv`` and ``manifest.json``.
A manifest alone is enough to reproduce its run (``run --manifest``).
"""
from __future__ import annotations

import argparse
import hashlib
import itertools
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

from . import __version__
from .baselines import PolicyKind
from .exceptions import ConfigError, InvalidTargetError
from .ingest import (DEFAULT_COLUMNS, RIDEAUSTIN_COLUMNS, Scenario, city_layout, electrify,
                     fleet_from_trips, grid_covering, load_trips, synth_scenario)
from .metrics import summarize, sweep_table, write_report, write_sweep
from .sim import SimConfig, export_result, run

EXIT_OK, EXIT_CONFIG, EXIT_IO = 0, 2, 3
LAYOUTS = {"default": (DEFAULT_COLUMNS, 1.0), "rideaustin": (RIDEAUSTIN_COLUMNS, 1e-3)}

# flag dest -> (SimConfig field, multiplier to canonical units)
SIM_FLAGS = {
    "gamma": ("gamma", 1.0),
    "alpha": ("alpha", 1.0),
    "speed_kmh": ("speed_kmh", 1.0),
    "max_wait_min": ("max_wait_s", 60.0),
    "availability_min": ("availability_window_s", 60.0),
    "radius_km": ("candidate_radius_km", 1.0),
    "circuity": ("circuity", 1.0),
    "utility_mode": ("utility_mode", None),
    "fairness_scope": ("fairness_scope", None),
    "e2d_threshold": ("e2d_threshold", 1.0),
    "laf_equity_weight": ("laf_equity_weight", 1.0),
}
SOURCE_DEFAULTS = {"requests": 2000, "drivers": 20, "hours": 24.0, "area_km": 10}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    src = common.add_mutually_exclusive_group()
    src.add_argument("--dataset", metavar="PATH", help="trip log CSV")
    src.add_argument("--synthetic", action="store_true", help="synthetic scenario (default)")
    common.add_argument("--layout", choices=sorted(LAYOUTS), help="trip log column layout")
    common.add_argument("--distance", choices=["recorded", "geometric"], help="trip distance source")
    common.add_argument("--requests", type=int, metavar="N")
    common.add_argument("--drivers", type=int, metavar="N")
    common.add_argument("--hours", type=float, help="synthetic horizon (default 24)")
    common.add_argument("--area-km", type=int, help="synthetic city side in 1 km tiles (default 10)")
    common.add_argument("--policy", metavar="LIST", help="comma list of lead,cd,tora,laf")
    common.add_argument("--eta", metavar="F", help="gCO2 per km of fairness gap")
    common.add_argument("--batch-minutes", metavar="F")
    common.add_argument("--lev-pct", metavar="F", help="electrify the fleet to this LEV share")
    common.add_argument("--gamma", type=float)
    common.add_argument("--alpha", type=float)
    common.add_argument("--speed-kmh", type=float)
    common.add_argument("--max-wait-min", type=float)
    common.add_argument("--availability-min", type=float)
    common.add_argument("--radius-km", type=float)
    common.add_argument("--circuity", type=float)
    common.add_argument("--utility-mode", choices=["derived", "literal"])
    common.add_argument("--fairness-scope", choices=["all_available", "matched_only"])
    common.add_argument("--e2d-threshold", type=float)
    common.add_argument("--laf-equity-weight", type=float)
    common.add_argument("--seed", type=int)
    common.add_argument("--out", metavar="DIR", help="output root (default $DISPATCH_LAB_OUT or ./runs)")
    common.add_argument("--workers", type=int, metavar="N")
    common.add_argument("--config", metavar="JSON", help="file of flag defaults, keys as flag names")

    parser = argparse.ArgumentParser(prog="dispatch-lab", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"dispatch-lab {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", parents=[common], help="one configuration, one or more policies")
    r.add_argument("--manifest", metavar="JSON", help="reproduce a previous run")
    sub.add_parser("sweep", parents=[common],
                   help="Cartesian product of --batch-minutes, --eta, --lev-pct lists and policies")
    return parser


# -- option resolution ---------------------------------------------------------

def _floats(text, name, allow_empty_default=None) -> list:
    if text is None:
        return [allow_empty_default]
    parts = [p.strip() for p in str(text).split(",")]
    if not any(parts):
        raise ConfigError(f"--{name} axis is empty")
    try:
        return [float(p) for p in parts if p]
    except ValueError:
        raise ConfigError(f"--{name}: not a number list: {text!r}") from None


def _merge_config(args: argparse.Namespace) -> dict:
    opts = {k: v for k, v in vars(args).items() if v is not None and v is not False}
    if args.config:
        with open(args.config) as fh:
            try:
                file_opts = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"{args.config}: {exc}") from None
        if not isinstance(file_opts, dict):
            raise ConfigError(f"{args.config}: expected a JSON object")
        known = set(vars(build_parser().parse_args(["sweep"]))) - {"command", "config"}
        file_opts = {k.replace("-", "_"): v for k, v in file_opts.items()}
        unknown = set(file_opts) - known
        if unknown:
            raise ConfigError(f"{args.config}: unknown keys {sorted(unknown)}")
        for k, v in file_opts.items():
            if isinstance(v, list):
                v = ",".join(str(x) for x in v)
            opts.setdefault(k, v)
    return opts


def _sim_overrides(opts: dict) -> dict:
    out = {}
    for flag, (name, scale) in SIM_FLAGS.items():
        if flag in opts:
            out[name] = opts[flag] if scale is None else float(opts[flag]) * scale
    return out


def _source(opts: dict) -> dict:
    if opts.get("dataset"):
        path = Path(opts["dataset"])
        digest = hashlib.sha256(path.read_bytes()).hexdigest()
        return {"kind": "dataset", "path": str(path), "sha256": digest,
                "layout": opts.get("layout", "default"), "distance": opts.get("distance", "recorded"),
                "requests": opts.get("requests"), "drivers": opts.get("drivers")}
    src = {"kind": "synthetic"}
    for k, v in SOURCE_DEFAULTS.items():
        src[k] = type(v)(opts.get(k, v))
    return src


def _policies(opts: dict) -> list[str]:
    names = [p for p in str(opts.get("policy", "lead")).split(",") if p.strip()]
    if not names:
        raise ConfigError("at least one policy is required")
    out = []
    for n in names:
        v = PolicyKind.parse(n).value
        if v not in out:
            out.append(v)
    return out


# -- scenarios and jobs -----------------------------------------------------------

def make_scenario(source: dict, seed: int, lev_pct: float | None) -> Scenario:
    if source["kind"] == "dataset":
        path = Path(source["path"])
        if hashlib.sha256(path.read_bytes()).hexdigest() != source["sha256"]:
            raise ConfigError(f"{path} differs from the file the manifest was made from")
        columns, scale = LAYOUTS[source["layout"]]
        requests, _ = load_trips(path, source["distance"], columns, scale)
        if source.get("requests") is not None:
            requests = requests[:source["requests"]]
        if not requests:
            raise ConfigError(f"{path}: no usable trips")
        fleet = fleet_from_trips(requests, seed=seed, n_drivers=source.get("drivers"))
        pts = [r.pickup for r in requests] + [r.dropoff for r in requests] + [d.initial_location for d in fleet]
        sc = Scenario(tuple(requests), tuple(fleet), grid_covering(pts), seed)
    else:
        grid, hotspots = city_layout(source["area_km"])
        sc = synth_scenario(source["requests"], source["drivers"], source["hours"] * 3600.0,
                            hotspots, seed=seed, grid=grid)
    if lev_pct is not None:
        sc = sc.with_fleet(electrify(sc.fleet, lev_pct, seed=seed))
    return sc


def config_hash(manifest: dict) -> str:
    body = {k: manifest[k] for k in ("scenario", "policy", "sim_config")}
    return hashlib.sha256(json.dumps(body, sort_keys=True).encode()).hexdigest()[:12]


def _manifest(source, seed, lev_pct, policy, cfg: SimConfig) -> dict:
    return {
        "code_version": __version__,
        "scenario": {"source": source, "seed": seed, "lev_pct": lev_pct},
        "policy": policy,
        "sim_config": cfg.to_dict(),
    }


@dataclass(frozen=True)
class Job:
    scenario: Scenario
    manifest: dict
    out_root: str

    @property
    def outdir(self) -> Path:
        return Path(self.out_root) / self.manifest["policy"] / config_hash(self.manifest)

    @property
    def key(self) -> tuple:
        cfg = self.manifest["sim_config"]
        return (self.manifest["policy"], cfg["batch_duration_s"], cfg["eta_g_per_km"],
                self.manifest["scenario"]["lev_pct"])


def execute(job: Job):
    cfg = SimConfig.from_dict(job.manifest["sim_config"])
    result = run(job.scenario, job.manifest["policy"], cfg)
    report = summarize(result)
    outdir = job.outdir
    export_result(result, outdir)
    write_report(report, outdir / "metrics.csv")
    (outdir / "manifest.json").write_text(json.dumps(job.manifest, indent=1, sort_keys=True) + "\n")
    return job.key, report


def plan(opts: dict, sweep: bool) -> list[Job]:
    if "manifest" in opts:
        with open(opts["manifest"]) as fh:
            m = json.load(fh)
        try:
            sc = m["scenario"]
            scenario = make_scenario(sc["source"], sc["seed"], sc["lev_pct"])
            SimConfig.from_dict(m["sim_config"])
            PolicyKind.parse(m["policy"])
        except (KeyError, TypeError) as exc:
            raise ConfigError(f"{opts['manifest']}: malformed manifest ({exc})") from None
        return [Job(scenario, m, opts["out"])]

    batches = _floats(opts.get("batch_minutes"), "batch-minutes", 5.0)
    etas = _floats(opts.get("eta"), "eta", 5.0)
    levs = _floats(opts.get("lev_pct"), "lev-pct", None)
    if not sweep and max(len(batches), len(etas), len(levs)) > 1:
        raise ConfigError("run takes single values; use `sweep` for lists")
    policies = _policies(opts)
    source = _source(opts)
    seed = int(opts.get("seed", 0))
    base = _sim_overrides(opts)

    jobs = []
    for lev in levs:
        scenario = make_scenario(source, seed, lev)  # shared by every run on this axis value
        for b, eta, pol in itertools.product(batches, etas, policies):
            cfg = SimConfig(**{**base, "batch_duration_s": b * 60.0, "eta_g_per_km": eta, "seed": seed})
            jobs.append(Job(scenario, _manifest(source, seed, lev, pol, cfg), opts["out"]))
    return jobs


def _run_jobs(jobs: list[Job], workers: int) -> dict:
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=min(workers, len(jobs))) as pool:
            return dict(pool.map(execute, jobs))
    return dict(execute(j) for j in jobs)


def _fmt(x, spec):
    return "-" if x is None else format(x, spec)


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        opts = _merge_config(args)
        opts.setdefault("out", os.environ.get("DISPATCH_LAB_OUT", "runs"))
        workers = int(opts.get("workers", 1))
        if workers < 1:
            raise ConfigError("--workers must be >= 1")
        jobs = plan(opts, sweep=args.command == "sweep")
        reports = _run_jobs(jobs, workers)
        rows = sweep_table(reports)
        stem = "sweep" if args.command == "sweep" else "summary"
        out = Path(opts["out"])
        out.mkdir(parents=True, exist_ok=True)
        write_sweep(rows, out / f"{stem}.csv", out / f"{stem}.json")
    except (ConfigError, InvalidTargetError, ValueError) as exc:
        print(f"dispatch-lab: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"dispatch-lab: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO

    for job in jobs:
        r = reports[job.key]
        print(f"{job.outdir}  served={r.served_count} dropped={r.dropped_count} "
              f"g/trip={_fmt(r.emissions_g_per_trip, '.1f')} gap_km={r.fairness_gap_km:.2f} "
              f"wait_s={_fmt(r.mean_wait_s, '.0f')}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
