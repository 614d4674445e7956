"""Batch ridesharing dispatch simulator with emission- and fairness-aware
assignment policies."""
from .assign import BatchDriver, BatchProblem, Matching, build_problem, solve_batch, solve_batch_exact
from .baselines import PolicyKind
from .geo import GeoPoint, GridSpec, TileId
from .ingest import DriverSpec, RideRequest, Scenario, synth_scenario
from .metrics import MetricsReport, normalize, summarize
from .policies import CDPolicy, LAFPolicy, LEADPolicy, TORAPolicy, make_policy
from .sim import SimConfig, SimResult, run
from .values import Transition, ValueTable

__version__ = "0.1.0"
