"""CTE data model, quality criteria, normalisation and scalarisation."""
from __future__ import annotations

import bisect
import logging
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from .agents import Policy, RewardModel, policy_entropy
from .env import Emergency
from .trajectory import EmptyTrajectoryError, PartialTrajectory, Trajectory

log = logging.getLogger(__name__)

CRITERIA = ("validity", "proximity", "diversity", "state_importance", "realisticness", "sparsity")
MINIMIZED = ("proximity", "sparsity")
_MIN_MASK = np.array([c in MINIMIZED for c in CRITERIA])

# weights found most informative for MCTO and DaC on the contrastive task
CALIBRATED_WEIGHTS = (0.982, 0.98, 0.576, 0.528, 0.303, 0.851)


class UncalibratedBoundsError(ValueError):
    pass


class StartStateMismatchError(ValueError):
    pass


@dataclass(frozen=True)
class CriterionVector:
    validity: float
    proximity: float
    diversity: float
    state_importance: float
    realisticness: float
    sparsity: float

    def as_array(self) -> np.ndarray:
        return np.array([getattr(self, c) for c in CRITERIA], dtype=float)

    @classmethod
    def from_array(cls, v) -> "CriterionVector":
        return cls(*(float(x) for x in v))

    def to_dict(self) -> dict:
        return {c: getattr(self, c) for c in CRITERIA}

    @classmethod
    def from_dict(cls, d: dict) -> "CriterionVector":
        return cls(**{c: float(d[c]) for c in CRITERIA})


def check_weights(w) -> np.ndarray:
    w = np.asarray(w, dtype=float)
    if w.shape != (len(CRITERIA),) or np.any(w < 0) or np.any(w > 1):
        raise ValueError(f"weights must be {len(CRITERIA)} values in [0, 1], got {w}")
    return w


def sample_weights(rng: np.random.Generator) -> np.ndarray:
    return rng.uniform(0.0, 1.0, size=len(CRITERIA))


@dataclass
class NormalizationBounds:
    lo: np.ndarray = field(default_factory=lambda: np.zeros(len(CRITERIA)))
    hi: np.ndarray = field(default_factory=lambda: np.ones(len(CRITERIA)))
    converged: bool = True
    rounds: int = 0

    def __post_init__(self) -> None:
        self.lo = np.asarray(self.lo, dtype=float).copy()
        self.hi = np.asarray(self.hi, dtype=float).copy()

    def check(self) -> None:
        if not np.all(self.hi > self.lo):
            raise UncalibratedBoundsError(f"bounds need max > min for every criterion: {self.lo}, {self.hi}")

    def widen(self, values: np.ndarray) -> bool:
        """Stretch to cover ``values`` (rows of criterion vectors); True if anything moved."""
        values = np.atleast_2d(values)
        lo = np.minimum(self.lo, values.min(axis=0))
        hi = np.maximum(self.hi, values.max(axis=0))
        changed = bool(np.any(lo != self.lo) or np.any(hi != self.hi))
        self.lo, self.hi = lo, hi
        return changed

    def contributions(self, raw: np.ndarray) -> np.ndarray:
        """Clamped [0, 1] scores where larger is always better."""
        norm = np.clip((raw - self.lo) / (self.hi - self.lo), 0.0, 1.0)
        return np.where(_MIN_MASK, 1.0 - norm, norm)

    def to_dict(self) -> dict:
        return {
            "lo": dict(zip(CRITERIA, self.lo.tolist())),
            "hi": dict(zip(CRITERIA, self.hi.tolist())),
            "converged": self.converged,
            "rounds": self.rounds,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NormalizationBounds":
        return cls(
            lo=[d["lo"][c] for c in CRITERIA],
            hi=[d["hi"][c] for c in CRITERIA],
            converged=d.get("converged", True),
            rounds=d.get("rounds", 0),
        )


@dataclass(frozen=True, eq=False)
class CTE:
    t_org: PartialTrajectory
    t_cf: PartialTrajectory
    rewards_org: tuple[float, ...]
    rewards_cf: tuple[float, ...]
    criteria: CriterionVector | None = None
    rho: float | None = None
    generator: str = ""
    meta: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.t_org.first != self.t_cf.first:
            raise StartStateMismatchError("original and counterfactual must share their start state")

    @property
    def r_org(self) -> float:
        return float(np.mean(self.rewards_org))

    @property
    def r_cf(self) -> float:
        return float(np.mean(self.rewards_cf))

    @property
    def start_index(self) -> int:
        return self.t_org.start_index

    def __eq__(self, other) -> bool:
        if not isinstance(other, CTE):
            return NotImplemented
        return self.to_dict() == other.to_dict()

    def to_dict(self) -> dict:
        return {
            "generator": self.generator,
            "start_index": self.start_index,
            "t_org": self.t_org.to_dict(),
            "t_cf": self.t_cf.to_dict(),
            "rewards_org": list(self.rewards_org),
            "rewards_cf": list(self.rewards_cf),
            "r_org": self.r_org,
            "r_cf": self.r_cf,
            "criteria": None if self.criteria is None else self.criteria.to_dict(),
            "rho": self.rho,
            "meta": self.meta,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CTE":
        return cls(
            t_org=PartialTrajectory.from_dict(d["t_org"]),
            t_cf=PartialTrajectory.from_dict(d["t_cf"]),
            rewards_org=tuple(float(r) for r in d["rewards_org"]),
            rewards_cf=tuple(float(r) for r in d["rewards_cf"]),
            criteria=None if d.get("criteria") is None else CriterionVector.from_dict(d["criteria"]),
            rho=d.get("rho"),
            generator=d.get("generator", ""),
            meta=d.get("meta", {}),
        )


def make_cte(t_org: PartialTrajectory, t_cf: PartialTrajectory, reward: RewardModel, **kw) -> CTE:
    ro = tuple(float(r) for r in reward.rewards(t_org.states[:-1], t_org.actions))
    rc = tuple(float(r) for r in reward.rewards(t_cf.states[:-1], t_cf.actions))
    return CTE(t_org, t_cf, ro, rc, **kw)


# --- individual criteria -----------------------------------------------------


def is_upward(r_org: float, r_cf: float) -> bool:
    return r_cf > r_org


def direction(cte: CTE) -> str:
    return "up" if is_upward(cte.r_org, cte.r_cf) else "down"


def measure_validity(cte: CTE) -> float:
    return abs(cte.r_org - cte.r_cf)


def measure_realisticness(cte: CTE) -> float:
    return cte.r_cf - cte.r_org


def measure_sparsity(cte: CTE) -> float:
    return float(len(cte.t_org) + len(cte.t_cf))


def measure_state_importance(cte: CTE, policy: Policy) -> float:
    return -policy_entropy(policy(cte.t_cf.first))


@dataclass(frozen=True)
class MhdWeights:
    player: float = 1.5
    action: float = 0.5
    humans: float = 1.0


def humans_edit_distance(a: frozenset, b: frozenset) -> int:
    """Half the symmetric difference, rounded up: a moved human costs 1, as does a rescued one."""
    return (len(a ^ b) + 1) // 2


def _points(t: PartialTrajectory) -> list[tuple]:
    return [(s.player[0], s.player[1], int(a), s.humans) for s, a in zip(t.states, t.actions)]


def _directed(A, B, w: MhdWeights) -> float:
    wp, wa, wh = w.player, w.action, w.humans
    total = 0.0
    for ax, ay, aa, ah in A:
        best = math.inf
        for bx, by, ba, bh in B:
            d = wp * (abs(ax - bx) + abs(ay - by)) + wa * (aa != ba) + wh * ((len(ah ^ bh) + 1) // 2)
            if d < best:
                best = d
        total += best
    return total / len(A)


def mhd_points(A, B, w: MhdWeights = MhdWeights()) -> float:
    return max(_directed(A, B, w), _directed(B, A, w))


def mhd(tA: PartialTrajectory, tB: PartialTrajectory, w: MhdWeights = MhdWeights()) -> float:
    """Modified Hausdorff distance over (state, action) pairs."""
    if len(tA) == 0 or len(tB) == 0:
        raise EmptyTrajectoryError("mhd needs two non-empty trajectories")
    return mhd_points(_points(tA), _points(tB), w)


@dataclass(frozen=True)
class HistoryEntry:
    length: int
    start: int
    upward: bool


class CteHistory:
    """Append-only record of the CTEs already shown in one session."""

    def __init__(self, entries: Sequence[HistoryEntry] = ()):
        self.entries: list[HistoryEntry] = []
        self._lengths: list[int] = []
        self._starts: list[int] = []
        self.n_up = 0
        for e in entries:
            self.append(e)

    def __len__(self) -> int:
        return len(self.entries)

    def append(self, e: HistoryEntry) -> None:
        self.entries.append(e)
        bisect.insort(self._lengths, e.length)
        bisect.insort(self._starts, e.start)
        self.n_up += int(e.upward)

    def add(self, cte: CTE) -> None:
        self.append(HistoryEntry(len(cte.t_cf), cte.start_index, is_upward(cte.r_org, cte.r_cf)))

    def snapshot(self) -> "CteHistory":
        return CteHistory(self.entries)

    def diversity(self, length: int, start: int, upward: bool) -> float:
        n = len(self.entries)
        if n == 0:
            return 0.0
        opposite = (n - self.n_up) if upward else self.n_up
        return _closest_mean(self._lengths, length) + _closest_mean(self._starts, start) + opposite / n


def _closest_mean(sorted_vals: list[int], x: int, k: int = 3) -> float:
    i = bisect.bisect_left(sorted_vals, x)
    window = sorted_vals[max(0, i - k) : i + k]
    diffs = sorted(abs(v - x) for v in window)[:k]
    return sum(diffs) / len(diffs)


def measure_diversity(cte: CTE, history: CteHistory) -> float:
    return history.diversity(len(cte.t_cf), cte.start_index, is_upward(cte.r_org, cte.r_cf))


# --- scalarisation -------------------------------------------------------------


def scalarize(cv: CriterionVector | np.ndarray, bounds: NormalizationBounds, w) -> float:
    bounds.check()
    raw = cv.as_array() if isinstance(cv, CriterionVector) else np.asarray(cv, dtype=float)
    return float(np.dot(check_weights(w), bounds.contributions(raw)))


@dataclass
class ScoringContext:
    """Everything needed to turn a candidate into criteria and a quality value."""

    env: Emergency
    reward: RewardModel
    policy: Policy
    bounds: NormalizationBounds
    weights: np.ndarray
    history: CteHistory = field(default_factory=CteHistory)
    mhd_weights: MhdWeights = MhdWeights()

    def with_(self, **kw) -> "ScoringContext":
        return replace(self, **kw)


def measure_all(cte: CTE, ctx: ScoringContext) -> CriterionVector:
    validity = measure_validity(cte)
    return CriterionVector(
        validity=validity,
        proximity=mhd(cte.t_org, cte.t_cf, ctx.mhd_weights),
        diversity=measure_diversity(cte, ctx.history),
        state_importance=measure_state_importance(cte, ctx.policy),
        realisticness=measure_realisticness(cte),
        sparsity=measure_sparsity(cte),
    )


def score(cte: CTE, ctx: ScoringContext) -> CTE:
    """Returns ``cte`` with its criteria and quality value filled in."""
    cv = measure_all(cte, ctx)
    return replace(cte, criteria=cv, rho=scalarize(cv, ctx.bounds, ctx.weights))


class CandidateScorer:
    """Scores counterfactuals against one original trajectory with cached per-trajectory terms.

    Equivalent to ``score(make_cte(...), ctx)``; the generators call this in
    their inner loops.
    """

    def __init__(self, tau: Trajectory, ctx: ScoringContext):
        ctx.bounds.check()
        self.tau = tau
        self.ctx = ctx
        self.weights = check_weights(ctx.weights)
        r = ctx.reward.rewards(tau.states[:-1], tau.actions)
        self.org_rewards = r
        self.org_prefix = np.concatenate([[0.0], np.cumsum(r)])
        self.org_points = [(s.player[0], s.player[1], int(a), s.humans) for s, a in zip(tau.states, tau.actions)]
        self._importance: dict[int, float] = {}

    def importance(self, n: int) -> float:
        v = self._importance.get(n)
        if v is None:
            v = -policy_entropy(self.ctx.policy(self.tau.states[n]))
            self._importance[n] = v
        return v

    def criteria(self, n: int, cf_states, cf_actions, cf_rewards) -> np.ndarray:
        L = min(len(cf_actions), len(self.tau) - n)
        r_org = (self.org_prefix[n + L] - self.org_prefix[n]) / L
        r_cf = float(np.sum(cf_rewards[:L])) / L
        cf_points = [(s.player[0], s.player[1], int(a), s.humans) for s, a in zip(cf_states[:L], cf_actions[:L])]
        prox = mhd_points(self.org_points[n : n + L], cf_points, self.ctx.mhd_weights)
        div = self.ctx.history.diversity(L, n, r_cf > r_org)
        return np.array([abs(r_org - r_cf), prox, div, self.importance(n), r_cf - r_org, 2.0 * L])

    def rho(self, raw: np.ndarray) -> float:
        return float(np.dot(self.weights, self.ctx.bounds.contributions(raw)))

    def build(self, n: int, cf_states, cf_actions, **kw) -> CTE:
        """Materialises the CTE (truncating both sides to the shorter length) and scores it."""
        L = min(len(cf_actions), len(self.tau) - n)
        t_org = self.tau.subset(n, L)
        t_cf = PartialTrajectory(n, tuple(cf_states[: L + 1]), tuple(cf_actions[:L]))
        rewards_org = tuple(float(x) for x in self.org_rewards[n : n + L])
        rewards_cf = tuple(float(x) for x in self.ctx.reward.rewards(t_cf.states[:-1], t_cf.actions))
        cte = CTE(t_org, t_cf, rewards_org, rewards_cf, **kw)
        return score(cte, self.ctx)


# --- calibration -----------------------------------------------------------------

Generator = Callable[[Trajectory, ScoringContext, np.random.Generator], CTE]


def calibrate_bounds(
    generators: dict[str, Generator],
    trajectories: Sequence[Trajectory],
    base_ctx: ScoringContext,
    rng: np.random.Generator,
    max_rounds: int = 10,
    n_per_round: int = 20,
) -> NormalizationBounds:
    """Adaptive min/max search: generate with the current bounds, widen, repeat until stable."""
    if not generators:
        raise ValueError("calibration needs at least one generator")
    bounds = NormalizationBounds()
    k = 0
    for rnd in range(1, max_rounds + 1):
        observed = []
        for name, gen in generators.items():
            history = CteHistory()
            for _ in range(n_per_round):
                tau = trajectories[k % len(trajectories)]
                k += 1
                ctx = base_ctx.with_(bounds=NormalizationBounds(bounds.lo, bounds.hi), weights=sample_weights(rng), history=history)
                cte = gen(tau, ctx, rng)
                observed.append(cte.criteria.as_array())
                history.add(cte)
        changed = bounds.widen(np.array(observed))
        bounds.rounds = rnd
        log.info("calibration round %d: lo=%s hi=%s", rnd, bounds.lo.round(3), bounds.hi.round(3))
        if not changed:
            bounds.converged = True
            return bounds
    bounds.converged = False
    log.warning("normalisation bounds still moving after %d rounds", max_rounds)
    return bounds
