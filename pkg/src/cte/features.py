"""Handcrafted trajectory features, labels and datasets for the proxy-human model."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .agents import RewardModel, avg_reward, closest_human_distance
from .env import GridConfig, manhattan
from .quality import CTE
from .trajectory import EmptyTrajectoryError, PartialTrajectory

DATASET_VERSION = 1

FEATURE_NAMES: tuple[str, ...] = (
    "humans_saved",
    "avg_unsaved",
    "final_unsaved",
    *(f"unsaved_count_{n}" for n in range(8)),
    "avg_inter_human_distance",
    "extinguisher_steps",
    "avg_extinguisher_distance",
    "could_have_saved",
    "moved_toward_closest",
    "actions_walk",
    "actions_interact",
    "actions_stand",
    "avg_closest_human_distance",
    *(f"closest_distance_{d}" for d in range(11)),
    "closest_right",
    "closest_left",
    "closest_down",
    "closest_up",
    "avg_x",
    "avg_y",
    "wall_steps",
    "middle_steps",
    "ring_steps",
    "quadrant_top_left",
    "quadrant_top_right",
    "quadrant_bottom_left",
    "quadrant_bottom_right",
    "length",
)
N_FEATURES = len(FEATURE_NAMES)
# The enumerated list yields 45 columns; a total of 46 is sometimes quoted but has no matching column.
FEATURE_COUNT_NOTE = "45 enumerated features; a quoted total of 46 has no matching 46th column"

_IDX = {name: i for i, name in enumerate(FEATURE_NAMES)}


class SchemaMismatchError(ValueError):
    pass


def _closest(player, humans):
    """(distance, position) of the nearest human, ties broken by position order."""
    return min((manhattan(player, h), h) for h in humans)


def extract(t: PartialTrajectory, grid: GridConfig = GridConfig()) -> np.ndarray:
    if len(t) == 0:
        raise EmptyTrajectoryError("cannot extract features from an empty trajectory")
    L = len(t)
    size = grid.size
    ext = grid.extinguisher
    half = size // 2
    middle = {(x, y) for x in (half, half + 1) for y in (half, half + 1)}
    f = np.zeros(N_FEATURES)

    states = t.states  # L step states plus the state after the final action
    n_unsaved = [len(s.humans) for s in states]

    f[_IDX["humans_saved"]] = n_unsaved[0] - n_unsaved[-1]
    f[_IDX["avg_unsaved"]] = sum(n_unsaved[:L]) / L
    f[_IDX["final_unsaved"]] = n_unsaved[-1]

    closest_total, closest_count = 0.0, 0
    inter_total = 0.0
    for i in range(L):
        s, a = states[i], t.actions[i]
        nxt = states[i + 1]
        p = s.player
        k = min(n_unsaved[i], 7)
        f[_IDX[f"unsaved_count_{k}"]] += 1

        if s.humans:
            hs = list(s.humans)
            pair_sum = sum(manhattan(h, g) for h in hs for g in hs)
            inter_total += pair_sum / len(hs) ** 2

            d, (hx, hy) = _closest(p, s.humans)
            closest_total += d
            closest_count += 1
            f[_IDX[f"closest_distance_{min(d, 10)}"]] += 1
            if hx > p[0]:
                f[_IDX["closest_right"]] += 1
            if hx < p[0]:
                f[_IDX["closest_left"]] += 1
            if hy > p[1]:
                f[_IDX["closest_down"]] += 1
            if hy < p[1]:
                f[_IDX["closest_up"]] += 1
            if n_unsaved[i + 1] == n_unsaved[i] and any(manhattan(p, h) == 1 for h in hs):
                f[_IDX["could_have_saved"]] += 1

        if p == ext:
            f[_IDX["extinguisher_steps"]] += 1
        f[_IDX["avg_extinguisher_distance"]] += manhattan(p, ext)

        f[_IDX[f"actions_{a.kind}"]] += 1

        if i < L - 1:
            if n_unsaved[i + 1] < n_unsaved[i]:
                f[_IDX["moved_toward_closest"]] += 1
            elif s.humans and nxt.humans:
                if closest_human_distance(p, s.humans) > closest_human_distance(nxt.player, nxt.humans):
                    f[_IDX["moved_toward_closest"]] += 1
        elif n_unsaved[i + 1] < n_unsaved[i]:
            f[_IDX["moved_toward_closest"]] += 1

        f[_IDX["avg_x"]] += p[0]
        f[_IDX["avg_y"]] += p[1]
        if p[0] in (1, size) or p[1] in (1, size):
            f[_IDX["wall_steps"]] += 1
        elif p in middle:
            f[_IDX["middle_steps"]] += 1
        else:
            f[_IDX["ring_steps"]] += 1
        left, top = p[0] <= half, p[1] <= half
        quadrant = ("top" if top else "bottom") + "_" + ("left" if left else "right")
        f[_IDX[f"quadrant_{quadrant}"]] += 1

    f[_IDX["avg_inter_human_distance"]] = inter_total / L
    f[_IDX["avg_extinguisher_distance"]] /= L
    f[_IDX["avg_closest_human_distance"]] = closest_total / closest_count if closest_count else 0.0
    f[_IDX["avg_x"]] /= L
    f[_IDX["avg_y"]] /= L
    f[_IDX["length"]] = L
    return f


def label(t: PartialTrajectory, m: RewardModel) -> float:
    return avg_reward(m, t)


@dataclass
class Dataset:
    X_org: np.ndarray
    X_cf: np.ndarray
    y_org: np.ndarray
    y_cf: np.ndarray
    mean: np.ndarray | None = None
    std: np.ndarray | None = None
    standardized: bool = False
    tags: list = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.y_org)

    @property
    def X(self) -> np.ndarray:
        """Concatenated (original | counterfactual) model input."""
        return np.hstack([self.X_org, self.X_cf])

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx, dtype=int)
        return Dataset(
            self.X_org[idx], self.X_cf[idx], self.y_org[idx], self.y_cf[idx],
            self.mean, self.std, self.standardized, [self.tags[i] for i in idx] if self.tags else [],
        )

    @staticmethod
    def concat(parts: Sequence["Dataset"]) -> "Dataset":
        standardized = {p.standardized for p in parts}
        if len(standardized) != 1:
            raise ValueError("cannot mix standardized and raw datasets")
        first = parts[0]
        return Dataset(
            np.vstack([p.X_org for p in parts]),
            np.vstack([p.X_cf for p in parts]),
            np.concatenate([p.y_org for p in parts]),
            np.concatenate([p.y_cf for p in parts]),
            first.mean, first.std, first.standardized,
            [t for p in parts for t in p.tags],
        )


def build_dataset(ctes: Sequence[CTE], m: RewardModel, grid: GridConfig = GridConfig(), tag=None) -> Dataset:
    if not ctes:
        raise ValueError("no CTEs given")
    X_org = np.stack([extract(c.t_org, grid) for c in ctes])
    X_cf = np.stack([extract(c.t_cf, grid) for c in ctes])
    y_org = np.array([label(c.t_org, m) for c in ctes])
    y_cf = np.array([label(c.t_cf, m) for c in ctes])
    return Dataset(X_org, X_cf, y_org, y_cf, tags=[tag] * len(ctes) if tag is not None else [])


def standardize(train: Dataset, others: Sequence[Dataset] = ()) -> tuple[list[Dataset], tuple[np.ndarray, np.ndarray]]:
    """Zero-mean unit-variance scaling with statistics from ``train`` only.

    Each of the 90 input columns (45 per side) is scaled separately;
    constant columns become 0. A dataset can be standardized only once.
    """
    if len(train) == 0:
        raise ValueError("empty training set")
    X = train.X
    mean = X.mean(axis=0)
    std = X.std(axis=0)
    std[std < 1e-12] = 1.0
    out = [apply_stats(d, mean, std) for d in (train, *others)]
    return out, (mean, std)


def apply_stats(d: Dataset, mean: np.ndarray, std: np.ndarray) -> Dataset:
    if d.standardized:
        raise ValueError("dataset is already standardized")
    k = N_FEATURES
    Z = (d.X - mean) / std
    return Dataset(Z[:, :k], Z[:, k:], d.y_org.copy(), d.y_cf.copy(), mean, std, True, list(d.tags))


# --- persistence ---------------------------------------------------------------


def save_dataset(path, d: Dataset, meta: dict | None = None) -> None:
    header = {
        "format": "cte-features",
        "version": DATASET_VERSION,
        "feature_names": list(FEATURE_NAMES),
        "note": FEATURE_COUNT_NOTE,
        "standardized": d.standardized,
        "meta": meta or {},
    }
    lines = [json.dumps(header)]
    for i in range(len(d)):
        lines.append(json.dumps({
            "features_org": d.X_org[i].tolist(),
            "features_cf": d.X_cf[i].tolist(),
            "label_org": float(d.y_org[i]),
            "label_cf": float(d.y_cf[i]),
        }))
    Path(path).write_text("\n".join(lines) + "\n")
    if d.mean is not None:
        stats = {"format": "cte-feature-stats", "version": DATASET_VERSION, "mean": d.mean.tolist(), "std": d.std.tolist()}
        Path(str(path) + ".stats.json").write_text(json.dumps(stats) + "\n")


def check_feature_header(header: dict, source="") -> None:
    if header.get("version") != DATASET_VERSION:
        raise SchemaMismatchError(f"{source}: unsupported version {header.get('version')}")
    if list(header.get("feature_names", [])) != list(FEATURE_NAMES):
        raise SchemaMismatchError(f"{source}: feature columns differ from the frozen order")


def load_dataset(path) -> Dataset:
    lines = Path(path).read_text().splitlines()
    header = json.loads(lines[0])
    if header.get("format") != "cte-features":
        raise SchemaMismatchError(f"{path}: not a feature dataset")
    check_feature_header(header, str(path))
    rows = [json.loads(line) for line in lines[1:] if line.strip()]
    d = Dataset(
        np.array([r["features_org"] for r in rows], dtype=float).reshape(-1, N_FEATURES),
        np.array([r["features_cf"] for r in rows], dtype=float).reshape(-1, N_FEATURES),
        np.array([r["label_org"] for r in rows], dtype=float),
        np.array([r["label_cf"] for r in rows], dtype=float),
        standardized=header.get("standardized", False),
    )
    stats_path = Path(str(path) + ".stats.json")
    if stats_path.exists():
        stats = json.loads(stats_path.read_text())
        d.mean = np.array(stats["mean"])
        d.std = np.array(stats["std"])
    return d


def dataset_from_records(ctes: Sequence[CTE], grid: GridConfig = GridConfig(), tag=None) -> Dataset:
    """Like ``build_dataset`` but labels come from the rewards stored in each record."""
    if not ctes:
        raise ValueError("no CTEs given")
    return Dataset(
        np.stack([extract(c.t_org, grid) for c in ctes]),
        np.stack([extract(c.t_cf, grid) for c in ctes]),
        np.array([c.r_org for c in ctes]),
        np.array([c.r_cf for c in ctes]),
        tags=[tag] * len(ctes) if tag is not None else [],
    )
