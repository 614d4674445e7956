"""Comparison policies: closest driver, TORA-style E2D thresholding, and a
LAF-style utility/equity matcher."""
from __future__ import annotations

import enum
import math

import numpy as np

from .assign import BatchProblem, Matching, _hungarian, _to_matching, id_order, local_search
from .geo import tile_of
from .values import UtilityTable


class PolicyKind(str, enum.Enum):
    LEAD = "lead"
    CD = "cd"
    TORA = "tora"
    LAF = "laf"

    @classmethod
    def parse(cls, name: str) -> "PolicyKind":
        try:
            return cls(name.strip().lower())
        except ValueError:
            raise ValueError(f"unknown policy {name!r}; expected one of "
                             f"{', '.join(k.value for k in cls)}") from None


def _request_order(p: BatchProblem) -> list[int]:
    return sorted(range(p.n_requests), key=lambda j: (p.requests[j].request_time, p.requests[j].id))


def _closest(p: BatchProblem, j: int, free: np.ndarray) -> int | None:
    cand = [i for i in range(p.n_drivers) if free[i] and p.feasible[i, j]]
    if not cand:
        return None
    return min(cand, key=lambda i: (p.deadhead[i, j], p.drivers[i].id))


def assign_cd(p: BatchProblem) -> Matching:
    """Requests in arrival order each take the nearest free driver."""
    free = np.ones(p.n_drivers, dtype=bool)
    pairs = []
    for j in _request_order(p):
        i = _closest(p, j, free)
        if i is None:
            continue
        free[i] = False
        pairs.append((p.drivers[i].id, p.requests[j].id))
    return Matching(frozenset(pairs))


def assign_tora(p: BatchProblem, e2d_threshold: float = 100.0) -> Matching:
    """Sequential E2D rule.

    For each request the closest free driver ``c`` is the default. A farther
    driver ``v`` scores ``(dh_em(v) - dh_em(c)) / (dist(v) - dist(c))``
    where ``dh_em`` is deadhead emission; the most negative score wins if it
    is at most ``-e2d_threshold``.
    """
    if e2d_threshold < 0:
        raise ValueError("e2d_threshold must be non-negative")
    free = np.ones(p.n_drivers, dtype=bool)
    rates = p.emission_rates
    pairs = []
    for j in _request_order(p):
        c = _closest(p, j, free)
        if c is None:
            continue
        choice = c
        if math.isfinite(e2d_threshold):
            dc = p.deadhead[c, j]
            em_c = dc * rates[c]
            best = None
            for v in range(p.n_drivers):
                if not free[v] or not p.feasible[v, j] or not p.deadhead[v, j] > dc:
                    continue
                e2d = (p.deadhead[v, j] * rates[v] - em_c) / (p.deadhead[v, j] - dc)
                key = (e2d, p.drivers[v].id)
                if best is None or key < best[0]:
                    best = (key, v)
            if best is not None and best[0][0] <= -e2d_threshold:
                choice = best[1]
        free[choice] = False
        pairs.append((p.drivers[choice].id, p.requests[j].id))
    return Matching(frozenset(pairs))


def laf_increments(p: BatchProblem, table: UtilityTable | None) -> np.ndarray:
    """Expected utility gain (km) per edge: immediate trip minus deadhead
    plus the discounted change in achievable utility between tiles."""
    inc = p.trip[None, :] - p.deadhead
    if table is None or p.grid is None or not table.v_u:
        return inc
    src = [table.value(tile_of(d.location, p.grid)) for d in p.drivers]
    dst = [table.value(tile_of(r.dropoff, p.grid)) for r in p.requests]
    return inc + table.gamma * np.asarray(dst)[None, :] - np.asarray(src)[:, None]


def assign_laf(p: BatchProblem, table: UtilityTable | None = None, equity_weight: float = 1.0,
               max_iter: int | None = None) -> Matching:
    """Maximize batch utility while penalizing the spread of drivers'
    projected cumulative utilities. Emission rates never enter.

    Objective minimized: ``-sum(matched gains) + equity_weight * (max - min)``
    over every available driver's projected utility.
    """
    inc = laf_increments(p, table)
    base = p.base_utility
    projected = base[:, None] + inc

    def objective(A):
        A = np.atleast_2d(A)
        matched = A >= 0
        cols = np.where(matched, A, 0)
        rows = np.broadcast_to(np.arange(A.shape[-1]), A.shape)
        gain = np.where(matched, inc[rows, cols], 0.0).sum(axis=-1) if inc.size else np.zeros(len(A))
        u = np.where(matched, projected[rows, cols], base) if inc.size else np.broadcast_to(base, A.shape)
        spread = u.max(axis=-1) - u.min(axis=-1) if A.shape[-1] else 0.0
        return -gain + equity_weight * spread

    a0 = _hungarian(-inc, p.feasible, id_order(p))
    a, obj, _ = local_search(a0, p.feasible, objective, max_iter)
    return _to_matching(a, p, obj)
