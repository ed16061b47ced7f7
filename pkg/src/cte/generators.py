"""CTE generation: Monte Carlo trajectory optimisation, deviate-and-continue, random."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Callable, Literal

import numpy as np

from .agents import sample_action
from .env import ACTIONS, N_ACTIONS, Action
from .quality import CTE, CandidateScorer, ScoringContext
from .trajectory import EmptyTrajectoryError, Trajectory

END = N_ACTIONS  # index of the terminal pseudo-action in a node's branch table

OnCandidate = Callable[[int, np.ndarray, float], None]


@dataclass(frozen=True)
class MctoConfig:
    p_end: float = 0.35
    threshold_a: float = 0.003
    n_iterations: int = 10
    c_uct: float = math.sqrt(2)
    gamma: float = 1.0
    n_starts: int | None = None  # None: every state of the original
    expansion_mode: Literal["random", "heuristic"] = "random"
    simulation_mode: Literal["random", "policy"] = "random"

    def __post_init__(self) -> None:
        if not 0 < self.p_end <= 1:
            raise ValueError("p_end must be in (0, 1]")
        if not 0 <= self.threshold_a < 1:
            raise ValueError("threshold_a must be in [0, 1)")
        if self.n_iterations < 1:
            raise ValueError("n_iterations must be >= 1")
        if self.expansion_mode not in ("random", "heuristic"):
            raise ValueError(f"unknown expansion_mode {self.expansion_mode!r}")
        if self.simulation_mode not in ("random", "policy"):
            raise ValueError(f"unknown simulation_mode {self.simulation_mode!r}")


@dataclass(frozen=True)
class DacConfig:
    n_deviations: int = 3
    p_end: float = 0.55
    continuation_mode: Literal["policy", "random"] = "policy"

    def __post_init__(self) -> None:
        if self.n_deviations < 1:
            raise ValueError("n_deviations must be >= 1")
        if not 0 < self.p_end <= 1:
            raise ValueError("p_end must be in (0, 1]")
        if self.continuation_mode not in ("policy", "random"):
            raise ValueError(f"unknown continuation_mode {self.continuation_mode!r}")


@dataclass(frozen=True)
class RandomConfig:
    p_end: float = 0.15

    def __post_init__(self) -> None:
        if not 0 < self.p_end <= 1:
            raise ValueError("p_end must be in (0, 1]")


def _check(tau: Trajectory, ctx: ScoringContext) -> CandidateScorer:
    if len(tau) == 0:
        raise EmptyTrajectoryError("original trajectory is empty")
    return CandidateScorer(tau, ctx)


def _uniform_action(rng) -> Action:
    return ACTIONS[int(rng.integers(N_ACTIONS))]


# --- MCTO ------------------------------------------------------------------------


class TreeNode:
    __slots__ = ("states", "actions", "terminal", "children", "untried", "N", "Q", "parent")

    def __init__(self, states: tuple, actions: tuple, terminal: bool, parent: "TreeNode | None" = None):
        self.states = states
        self.actions = actions
        self.terminal = terminal
        self.children: dict[int, TreeNode] = {}
        self.untried: list[int] | None = None
        self.N = 0
        self.Q = 0.0
        self.parent = parent

    def backpropagate(self, rho: float, gamma: float = 1.0, stop: "TreeNode | None" = None) -> None:
        """Running-mean update of every node from here up to ``stop`` (inclusive)."""
        node, v = self, rho
        while node is not None:
            node.N += 1
            node.Q += (v - node.Q) / node.N
            if node is stop:
                break
            v *= gamma
            node = node.parent


class _Mcto:
    def __init__(self, scorer: CandidateScorer, cfg: MctoConfig, rng: np.random.Generator):
        self.scorer = scorer
        self.ctx = scorer.ctx
        self.env = scorer.ctx.env
        self.cfg = cfg
        self.rng = rng

    def branches(self, node: TreeNode) -> list[int]:
        s = node.states[-1]
        p = self.ctx.policy(s)
        allowed = [int(a) for a in ACTIONS if p[a] > self.cfg.threshold_a]
        if not allowed:
            allowed = [int(np.argmax(p))]
        if node.actions:
            allowed.append(END)
        return allowed

    def child(self, node: TreeNode, a: int) -> TreeNode:
        if a == END:
            c = TreeNode(node.states, node.actions, True, node)
        else:
            nxt, _, done = self.env.step(node.states[-1], ACTIONS[a])
            c = TreeNode(node.states + (nxt,), node.actions + (ACTIONS[a],), done, node)
        node.children[a] = c
        return c

    def evaluate(self, n: int, states, actions) -> tuple[np.ndarray, float]:
        rewards = self.ctx.reward.rewards(states[:-1], actions)
        raw = self.scorer.criteria(n, states, actions, rewards)
        return raw, self.scorer.rho(raw)

    def expand(self, node: TreeNode, n: int) -> TreeNode:
        if self.cfg.expansion_mode == "random":
            a = node.untried.pop(int(self.rng.integers(len(node.untried))))
            return self.child(node, a)
        best, best_rho = 0, -math.inf
        for i, a in enumerate(node.untried):
            if a == END:
                states, actions = node.states, node.actions
            else:
                nxt = self.env.step(node.states[-1], ACTIONS[a])[0]
                states, actions = node.states + (nxt,), node.actions + (ACTIONS[a],)
            rho = self.evaluate(n, states, actions)[1]
            if rho > best_rho:
                best, best_rho = i, rho
        return self.child(node, node.untried.pop(best))

    def simulate(self, node: TreeNode, n: int) -> float:
        states, actions = list(node.states), list(node.actions)
        if not node.terminal:
            env, rng, p_end = self.env, self.rng, self.cfg.p_end
            s = states[-1]
            while not env.is_terminal(s) and rng.random() >= p_end:
                if self.cfg.simulation_mode == "policy":
                    a = sample_action(self.ctx.policy(s), rng)
                else:
                    a = _uniform_action(rng)
                s = env.step(s, a)[0]
                states.append(s)
                actions.append(a)
        return self.evaluate(n, states, actions)[1]

    def select(self, node: TreeNode) -> TreeNode:
        c = self.cfg.c_uct
        while not node.terminal:
            if node.untried is None:
                node.untried = self.branches(node)
            if node.untried:
                return node
            log_n = math.log(node.N)
            node = max(
                node.children.values(),
                key=lambda ch: ch.Q + c * math.sqrt(log_n / ch.N),
            )
        return node

    def search(self, n: int) -> TreeNode:
        root = TreeNode((self.scorer.tau.states[n],), (), False)
        while not root.terminal:
            for _ in range(self.cfg.n_iterations):
                leaf = self.select(root)
                if not leaf.terminal and leaf.untried:
                    leaf = self.expand(leaf, n)
                rho = self.simulate(leaf, n)
                leaf.backpropagate(rho, self.cfg.gamma, stop=root)
            # children are keyed by branch index; ties go to the lowest index
            a_star = max(sorted(root.children), key=lambda a: root.children[a].Q)
            root = root.children[a_star]
            root.parent = None
        return root


def select_starts(scorer: CandidateScorer, n_starts: int | None) -> list[int]:
    H = len(scorer.tau)
    if n_starts is None or n_starts >= H:
        return list(range(H))
    ranked = sorted(range(H), key=lambda i: (-scorer.importance(i), i))
    return sorted(ranked[:n_starts])


def generate_mcto(
    tau: Trajectory,
    ctx: ScoringContext,
    cfg: MctoConfig = MctoConfig(),
    rng: np.random.Generator | None = None,
    on_candidate: OnCandidate | None = None,
) -> CTE:
    rng = np.random.default_rng() if rng is None else rng
    scorer = _check(tau, ctx)
    search = _Mcto(scorer, cfg, rng)
    best = None
    for n in select_starts(scorer, cfg.n_starts):
        leaf = search.search(n)
        raw, rho = search.evaluate(n, leaf.states, leaf.actions)
        if on_candidate is not None:
            on_candidate(n, raw, rho)
        if best is None or rho > best[0]:
            best = (rho, n, leaf)
    _, n, leaf = best
    return scorer.build(n, leaf.states, leaf.actions, generator="mcto", meta={"config": asdict(cfg)})


# --- Deviate and Continue ----------------------------------------------------------


def _deviate(env, policy, s, target, rng) -> tuple:
    """One policy action whose successor differs from ``target``; least likely action if none does."""
    p = policy(s)
    succ = [env.step(s, a) for a in ACTIONS]
    ok = np.array([not nxt.same_configuration(target) for nxt, _, _ in succ])
    if ok.any():
        q = np.where(ok, p, 0.0)
        if q.sum() <= 0:  # probabilities underflowed
            q = ok.astype(float)
        a = sample_action(q / q.sum(), rng)
    else:
        a = ACTIONS[int(np.argmin(p))]
    nxt, _, done = succ[a]
    return a, nxt, done


def generate_dac(
    tau: Trajectory,
    ctx: ScoringContext,
    cfg: DacConfig = DacConfig(),
    rng: np.random.Generator | None = None,
    on_candidate: OnCandidate | None = None,
) -> CTE:
    rng = np.random.default_rng() if rng is None else rng
    scorer = _check(tau, ctx)
    env, policy = ctx.env, ctx.policy
    best = None
    for n in range(len(tau)):
        s = tau.states[n]
        states, actions = [s], []
        done = False
        for i in range(cfg.n_deviations):
            if done:
                break
            a, s, done = _deviate(env, policy, s, tau.states[n + i + 1], rng)
            states.append(s)
            actions.append(a)
        while not done and rng.random() >= cfg.p_end:
            if cfg.continuation_mode == "policy":
                a = sample_action(policy(s), rng)
            else:
                a = _uniform_action(rng)
            s, _, done = env.step(s, a)
            states.append(s)
            actions.append(a)
        rewards = ctx.reward.rewards(states[:-1], actions)
        raw = scorer.criteria(n, states, actions, rewards)
        rho = scorer.rho(raw)
        if on_candidate is not None:
            on_candidate(n, raw, rho)
        if best is None or rho > best[0]:
            best = (rho, n, states, actions)
    _, n, states, actions = best
    return scorer.build(n, states, actions, generator="dac", meta={"config": asdict(cfg)})


# --- Random baseline -------------------------------------------------------------------


def generate_random(
    tau: Trajectory,
    ctx: ScoringContext,
    cfg: RandomConfig = RandomConfig(),
    rng: np.random.Generator | None = None,
    on_candidate: OnCandidate | None = None,
) -> CTE:
    rng = np.random.default_rng() if rng is None else rng
    scorer = _check(tau, ctx)
    env = ctx.env
    n = int(rng.integers(len(tau)))
    s = tau.states[n]
    states, actions = [s], []
    while True:
        a = _uniform_action(rng)
        s, _, done = env.step(s, a)
        states.append(s)
        actions.append(a)
        if done or rng.random() < cfg.p_end:
            break
    cte = scorer.build(n, states, actions, generator="random", meta={"config": asdict(cfg)})
    if on_candidate is not None:
        on_candidate(n, cte.criteria.as_array(), cte.rho)
    return cte


def subset_original(tau: Trajectory, n: int, length: int):
    return tau.subset(n, length)


GENERATORS = {"mcto": (generate_mcto, MctoConfig), "dac": (generate_dac, DacConfig), "random": (generate_random, RandomConfig)}


def make_generator(name: str, cfg=None):
    """A ``(tau, ctx, rng) -> CTE`` callable for ``name`` with its config bound."""
    fn, cfg_cls = GENERATORS[name]
    cfg = cfg_cls() if cfg is None else cfg

    def gen(tau, ctx, rng, on_candidate=None):
        return fn(tau, ctx, cfg, rng, on_candidate)

    gen.__name__ = f"generate_{name}"
    gen.config = cfg
    return gen
