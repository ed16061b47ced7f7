"""Emergency gridworld: a burning building with humans to rescue.

States are immutable values, so any earlier state can be stepped again.
Coordinates are ``(x, y)`` with ``y`` growing downward; the playable
interior spans ``1..size`` on both axes and the border is wall.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import IntEnum
from typing import Iterable

import numpy as np

Pos = tuple[int, int]


class ConfigurationError(ValueError):
    """Entities do not fit on the grid or a field is out of range."""


class StepPastHorizonError(RuntimeError):
    pass


class Action(IntEnum):
    MOVE_UP = 0
    MOVE_DOWN = 1
    MOVE_LEFT = 2
    MOVE_RIGHT = 3
    INTERACT_UP = 4
    INTERACT_DOWN = 5
    INTERACT_LEFT = 6
    INTERACT_RIGHT = 7
    STAND = 8

    @property
    def kind(self) -> str:
        if self <= Action.MOVE_RIGHT:
            return "walk"
        if self <= Action.INTERACT_RIGHT:
            return "interact"
        return "stand"

    @property
    def delta(self) -> Pos:
        return _DELTAS[self]


N_ACTIONS = len(Action)
ACTIONS = tuple(Action)

_DELTAS = {
    Action.MOVE_UP: (0, -1),
    Action.MOVE_DOWN: (0, 1),
    Action.MOVE_LEFT: (-1, 0),
    Action.MOVE_RIGHT: (1, 0),
    Action.INTERACT_UP: (0, -1),
    Action.INTERACT_DOWN: (0, 1),
    Action.INTERACT_LEFT: (-1, 0),
    Action.INTERACT_RIGHT: (1, 0),
    Action.STAND: (0, 0),
}


@dataclass(frozen=True)
class GridConfig:
    size: int = 6
    n_humans: int = 7
    n_obstacles: int = 4
    horizon: int = 75
    extinguisher: Pos | None = None  # defaults to the bottom-right cell
    seed: int = 0

    def __post_init__(self) -> None:
        if self.extinguisher is None:
            object.__setattr__(self, "extinguisher", (self.size, self.size))
        else:
            object.__setattr__(self, "extinguisher", tuple(self.extinguisher))
        if self.size < 1 or self.horizon < 1:
            raise ConfigurationError("size and horizon must be >= 1")
        if self.n_humans < 0 or self.n_obstacles < 0:
            raise ConfigurationError("entity counts must be non-negative")
        if self.n_humans + self.n_obstacles + 2 > self.size * self.size:
            raise ConfigurationError(
                f"{self.n_humans} humans + {self.n_obstacles} obstacles + player + "
                f"extinguisher do not fit in {self.size * self.size} cells"
            )

    @property
    def cells(self) -> list[Pos]:
        return [(x, y) for y in range(1, self.size + 1) for x in range(1, self.size + 1)]

    def to_dict(self) -> dict:
        return {
            "size": self.size,
            "n_humans": self.n_humans,
            "n_obstacles": self.n_obstacles,
            "horizon": self.horizon,
            "extinguisher": list(self.extinguisher),
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GridConfig":
        d = dict(d)
        if d.get("extinguisher") is not None:
            d["extinguisher"] = tuple(d["extinguisher"])
        return cls(**d)


@dataclass(frozen=True)
class GridState:
    player: Pos
    humans: frozenset[Pos]
    obstacles: frozenset[Pos]
    t: int = 0
    saved_count: int = 0

    def to_dict(self) -> dict:
        return {
            "player": list(self.player),
            "humans": [list(h) for h in sorted(self.humans)],
            "obstacles": [list(o) for o in sorted(self.obstacles)],
            "t": self.t,
            "saved_count": self.saved_count,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GridState":
        return cls(
            player=tuple(d["player"]),
            humans=frozenset(tuple(h) for h in d["humans"]),
            obstacles=frozenset(tuple(o) for o in d["obstacles"]),
            t=int(d["t"]),
            saved_count=int(d["saved_count"]),
        )

    def same_configuration(self, other: "GridState") -> bool:
        """Equality ignoring the clock and the rescue counter."""
        return (
            self.player == other.player
            and self.humans == other.humans
            and self.obstacles == other.obstacles
        )


def manhattan(a: Pos, b: Pos) -> int:
    return abs(a[0] - b[0]) + abs(a[1] - b[1])


@dataclass(frozen=True)
class Emergency:
    """Pure transition, reward and rendering functions for one configuration."""

    cfg: GridConfig = field(default_factory=GridConfig)

    @property
    def horizon(self) -> int:
        return self.cfg.horizon

    @property
    def extinguisher(self) -> Pos:
        return self.cfg.extinguisher

    def inside(self, p: Pos) -> bool:
        return 1 <= p[0] <= self.cfg.size and 1 <= p[1] <= self.cfg.size

    def init_random(self, rng: np.random.Generator) -> GridState:
        cfg = self.cfg
        free = [c for c in cfg.cells if c != cfg.extinguisher]
        k = 1 + cfg.n_humans + cfg.n_obstacles
        if k > len(free):
            raise ConfigurationError("entities do not fit on the grid")
        idx = rng.choice(len(free), size=k, replace=False)
        picked = [free[i] for i in idx]
        return GridState(
            player=picked[0],
            humans=frozenset(picked[1 : 1 + cfg.n_humans]),
            obstacles=frozenset(picked[1 + cfg.n_humans :]),
        )

    def transition(self, s: GridState, a: Action) -> tuple[GridState, bool]:
        """Apply ``a`` ignoring the horizon; returns the successor and whether a human was saved."""
        a = Action(a)
        dx, dy = _DELTAS[a]
        player, humans, saved = s.player, s.humans, False
        if a.kind == "walk":
            target = (player[0] + dx, player[1] + dy)
            if self.inside(target) and target not in s.obstacles:
                player = target
        elif a.kind == "interact":
            target = (player[0] + dx, player[1] + dy)
            if target in humans:
                humans = humans - {target}
                saved = True
        nxt = GridState(player, humans, s.obstacles, s.t + 1, s.saved_count + int(saved))
        return nxt, saved

    def step(self, s: GridState, a: Action) -> tuple[GridState, float, bool]:
        if s.t >= self.cfg.horizon:
            raise StepPastHorizonError(f"state at t={s.t} is past horizon {self.cfg.horizon}")
        nxt, saved = self.transition(s, a)
        reward = 10.0 * saved + 1.0 * (nxt.player == self.cfg.extinguisher)
        return nxt, reward, nxt.t == self.cfg.horizon

    def is_terminal(self, s: GridState) -> bool:
        return s.t >= self.cfg.horizon

    def render(self, s: GridState) -> str:
        n = self.cfg.size + 2
        grid = [[" "] * n for _ in range(n)]
        for i in range(n):
            grid[0][i] = grid[n - 1][i] = grid[i][0] = grid[i][n - 1] = "#"
        ex, ey = self.cfg.extinguisher
        grid[ey][ex] = "G"
        for x, y in s.obstacles:
            grid[y][x] = "H"
        for x, y in s.humans:
            grid[y][x] = "C"
        px, py = s.player
        grid[py][px] = "P"
        return "\n".join("".join(row) for row in grid)


def replay(env: Emergency, start: GridState, actions: Iterable[Action]) -> list[GridState]:
    states = [start]
    for a in actions:
        states.append(env.step(states[-1], a)[0])
    return states
