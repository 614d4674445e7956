"""Tabular TD(0) value functions over grid tiles.

Two tables are learned jointly: expected discounted deadhead distance and
expected discounted trip distance from each tile. All drivers share one
table.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from .geo import TileId

DEFAULT_GAMMA = 0.9
DEFAULT_ALPHA = 0.025


def _check_rates(gamma: float, alpha: float) -> None:
    if not 0.0 <= gamma <= 1.0:
        raise ValueError(f"gamma must lie in [0, 1], got {gamma}")
    if not 0.0 < alpha <= 1.0:
        raise ValueError(f"alpha must lie in (0, 1], got {alpha}")


@dataclass(frozen=True)
class Transition:
    """One served request seen from the driver: tile before, tile after."""

    src: TileId
    dst: TileId
    deadhead_km: float
    trip_km: float

    def __post_init__(self):
        if self.deadhead_km < 0 or self.trip_km < 0:
            raise ValueError("transition distances must be non-negative")


@dataclass
class ValueTable:
    gamma: float = DEFAULT_GAMMA
    alpha: float = DEFAULT_ALPHA
    v_d: dict[TileId, float] = field(default_factory=dict)
    v_t: dict[TileId, float] = field(default_factory=dict)

    def __post_init__(self):
        _check_rates(self.gamma, self.alpha)

    def value_d(self, s: TileId) -> float:
        return self.v_d.get(s, 0.0)

    def value_t(self, s: TileId) -> float:
        return self.v_t.get(s, 0.0)

    def td_update(self, tr: Transition) -> tuple[float, float]:
        """Apply one TD(0) step to both tables; returns the increments.

        Targets are read before either write, so a self-loop (src == dst)
        bootstraps from the pre-update value.
        """
        a, g = self.alpha, self.gamma
        delta_d = a * (tr.deadhead_km + g * self.value_d(tr.dst) - self.value_d(tr.src))
        delta_t = a * (tr.trip_km + g * self.value_t(tr.dst) - self.value_t(tr.src))
        self.v_d[tr.src] = self.value_d(tr.src) + delta_d
        self.v_t[tr.src] = self.value_t(tr.src) + delta_t
        return delta_d, delta_t

    def copy(self) -> "ValueTable":
        return ValueTable(self.gamma, self.alpha, dict(self.v_d), dict(self.v_t))

    def tiles(self) -> list[TileId]:
        return sorted(set(self.v_d) | set(self.v_t))

    # snapshot I/O -------------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "gamma": self.gamma,
            "alpha": self.alpha,
            "tiles": [
                {"col": s.col, "row": s.row, "v_d": self.value_d(s), "v_t": self.value_t(s)}
                for s in self.tiles()
            ],
        }

    @classmethod
    def from_dict(cls, d: dict, gamma: float | None = None, alpha: float | None = None) -> "ValueTable":
        table = cls(
            gamma=d["gamma"] if gamma is None else gamma,
            alpha=d["alpha"] if alpha is None else alpha,
        )
        for row in d["tiles"]:
            s = TileId(int(row["col"]), int(row["row"]))
            table.v_d[s] = float(row["v_d"])
            table.v_t[s] = float(row["v_t"])
        return table

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1) + "\n")

    @classmethod
    def load(cls, path: str | Path, **overrides) -> "ValueTable":
        return cls.from_dict(json.loads(Path(path).read_text()), **overrides)


def value_d(table: ValueTable, s: TileId) -> float:
    return table.value_d(s)


def value_t(table: ValueTable, s: TileId) -> float:
    return table.value_t(s)


def td_update(table: ValueTable, tr: Transition) -> tuple[float, float]:
    return table.td_update(tr)


@dataclass
class UtilityTable:
    """Single value function of expected achievable utility (trip minus
    deadhead distance) per tile; the learner behind the LAF baseline."""

    gamma: float = DEFAULT_GAMMA
    alpha: float = DEFAULT_ALPHA
    v_u: dict[TileId, float] = field(default_factory=dict)

    def __post_init__(self):
        _check_rates(self.gamma, self.alpha)

    def value(self, s: TileId) -> float:
        return self.v_u.get(s, 0.0)

    def td_update(self, tr: Transition) -> float:
        reward = tr.trip_km - tr.deadhead_km
        delta = self.alpha * (reward + self.gamma * self.value(tr.dst) - self.value(tr.src))
        self.v_u[tr.src] = self.value(tr.src) + delta
        return delta

    def copy(self) -> "UtilityTable":
        return UtilityTable(self.gamma, self.alpha, dict(self.v_u))
