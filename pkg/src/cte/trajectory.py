from __future__ import annotations

from dataclasses import dataclass

from .env import Action, GridState


class EmptyTrajectoryError(ValueError):
    pass


@dataclass(frozen=True)
class PartialTrajectory:
    """Consecutive (state, action) steps starting at ``start_index`` of a full episode.

    ``states`` has one more entry than ``actions``: the last one is the state
    reached after the final action.
    """

    start_index: int
    states: tuple[GridState, ...]
    actions: tuple[Action, ...]

    def __post_init__(self) -> None:
        if len(self.actions) < 1:
            raise EmptyTrajectoryError("a partial trajectory needs at least one step")
        if len(self.states) != len(self.actions) + 1:
            raise ValueError("states must contain exactly one entry more than actions")

    def __len__(self) -> int:
        return len(self.actions)

    @property
    def steps(self) -> list[tuple[GridState, Action]]:
        return list(zip(self.states[:-1], self.actions))

    @property
    def first(self) -> GridState:
        return self.states[0]

    @property
    def end(self) -> GridState:
        return self.states[-1]

    def truncated(self, length: int) -> "PartialTrajectory":
        return PartialTrajectory(self.start_index, self.states[: length + 1], self.actions[:length])

    def to_dict(self) -> dict:
        return {
            "start_index": self.start_index,
            "states": [s.to_dict() for s in self.states],
            "actions": [int(a) for a in self.actions],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PartialTrajectory":
        return cls(
            start_index=int(d["start_index"]),
            states=tuple(GridState.from_dict(s) for s in d["states"]),
            actions=tuple(Action(a) for a in d["actions"]),
        )


@dataclass(frozen=True)
class Trajectory:
    """A full play-through: ``horizon`` actions and ``horizon + 1`` states."""

    states: tuple[GridState, ...]
    actions: tuple[Action, ...]
    gt_rewards: tuple[float, ...]

    def __len__(self) -> int:
        return len(self.actions)

    @property
    def steps(self) -> list[tuple[GridState, Action]]:
        return list(zip(self.states[:-1], self.actions))

    def subset(self, n: int, length: int) -> PartialTrajectory:
        """The slice starting at step ``n`` with at most ``length`` steps."""
        if not 0 <= n < len(self):
            raise IndexError(f"start index {n} outside trajectory of length {len(self)}")
        if length < 1:
            raise EmptyTrajectoryError("slice length must be >= 1")
        m = min(n + length, len(self))
        return PartialTrajectory(n, self.states[n : m + 1], self.actions[n:m])

    def to_dict(self) -> dict:
        return {
            "states": [s.to_dict() for s in self.states],
            "actions": [int(a) for a in self.actions],
            "gt_rewards": list(self.gt_rewards),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Trajectory":
        return cls(
            states=tuple(GridState.from_dict(s) for s in d["states"]),
            actions=tuple(Action(a) for a in d["actions"]),
            gt_rewards=tuple(float(r) for r in d["gt_rewards"]),
        )
