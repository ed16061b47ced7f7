"""Reward and policy providers plus episode rollout.

The explained reward function and its policy are normally learned by
inverse RL. Here they are replaced by stand-ins: the exact ground truth,
a small regressor distilled from noisy ground-truth samples, or any
parameter file on disk, and a softmax policy over hand-written action
scores.
"""
from __future__ import annotations

import math
from typing import Callable, Sequence

import numpy as np

from .env import ACTIONS, N_ACTIONS, Action, Emergency, GridState, manhattan
from .nn import Adam, DenseNet, dense_backward, dense_forward, init_dense, load_params, save_params
from .trajectory import EmptyTrajectoryError, PartialTrajectory, Trajectory

Policy = Callable[[GridState], np.ndarray]

_CACHE_LIMIT = 400_000


class TooFewSamplesError(ValueError):
    pass


def closest_human_distance(player, humans, colocated: int = 2) -> int | None:
    """Manhattan distance to the nearest human; sharing a cell counts as ``colocated``."""
    if not humans:
        return None
    return min(colocated if h == player else manhattan(player, h) for h in humans)


def check_distribution(p: np.ndarray) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    if p.shape != (N_ACTIONS,) or np.any(p < 0) or abs(p.sum() - 1.0) > 1e-9:
        raise ValueError(f"not a distribution over {N_ACTIONS} actions: {p}")
    return p


def softmax(scores: np.ndarray) -> np.ndarray:
    z = scores - scores.max()
    e = np.exp(z)
    return e / e.sum()


class HeuristicPolicy:
    """Softmax over greedy rescue scores, standing in for a trained policy.

    A saving interaction scores +10; any other action scores minus the
    distance from its landing cell to the nearest human (2 when standing on
    one, since saving it then takes two actions). Once everyone is saved
    actions score minus the distance to the extinguisher, +1 for landing on it.
    """

    def __init__(self, env: Emergency, temperature: float = 0.5):
        if not temperature > 0:
            raise ValueError("temperature must be positive")
        self.env = env
        self.temperature = float(temperature)
        self._cache: dict = {}

    def scores(self, s: GridState) -> np.ndarray:
        out = np.empty(N_ACTIONS)
        ext = self.env.extinguisher
        for a in ACTIONS:
            nxt, saved = self.env.transition(s, a)
            if saved:
                out[a] = 10.0
            elif nxt.humans:
                out[a] = -closest_human_distance(nxt.player, nxt.humans)
            else:
                out[a] = -manhattan(nxt.player, ext) + (1.0 if nxt.player == ext else 0.0)
        return out

    def __call__(self, s: GridState) -> np.ndarray:
        key = (s.player, s.humans, s.obstacles)
        p = self._cache.get(key)
        if p is None:
            if len(self._cache) > _CACHE_LIMIT:
                self._cache.clear()
            p = softmax(self.scores(s) / self.temperature)
            self._cache[key] = p
        return p


class UniformPolicy:
    def __call__(self, s: GridState) -> np.ndarray:
        return np.full(N_ACTIONS, 1.0 / N_ACTIONS)


def heuristic_policy(env: Emergency, s: GridState, temperature: float = 0.5) -> np.ndarray:
    return HeuristicPolicy(env, temperature)(s)


def sample_action(d: np.ndarray, rng: np.random.Generator) -> Action:
    c = np.cumsum(d)
    i = int(np.searchsorted(c, rng.random() * c[-1], side="right"))
    return ACTIONS[min(i, N_ACTIONS - 1)]


def policy_entropy(d: np.ndarray) -> float:
    d = np.asarray(d, dtype=float)
    nz = d[d > 0]
    return float(-(nz * np.log(nz)).sum())


def rollout(env: Emergency, policy: Policy, rng: np.random.Generator, start: GridState | None = None) -> Trajectory:
    s = env.init_random(rng) if start is None else start
    states, actions, rewards = [s], [], []
    done = env.is_terminal(s)
    while not done:
        a = sample_action(policy(s), rng)
        s, r, done = env.step(s, a)
        states.append(s)
        actions.append(a)
        rewards.append(r)
    return Trajectory(tuple(states), tuple(actions), tuple(rewards))


# --- reward models ---------------------------------------------------------


class RewardModel:
    """Maps a (state, action) pair to a scalar. Subclasses override ``reward``."""

    name = "reward"

    def reward(self, s: GridState, a: Action) -> float:
        raise NotImplementedError

    def rewards(self, states: Sequence[GridState], actions: Sequence[Action]) -> np.ndarray:
        return np.array([self.reward(s, a) for s, a in zip(states, actions)], dtype=float)


class GroundTruthReward(RewardModel):
    name = "ground_truth"

    def __init__(self, env: Emergency):
        self.env = env

    def reward(self, s, a):
        nxt, saved = self.env.transition(s, a)
        return 10.0 * saved + 1.0 * (nxt.player == self.env.extinguisher)


class ConstantReward(RewardModel):
    def __init__(self, value: float):
        self.value = float(value)
        self.name = f"constant({value})"

    def reward(self, s, a):
        return self.value


def encode_state_action(env: Emergency, s: GridState, a: Action) -> np.ndarray:
    """Player x/y one-hots, per-cell human flags, post-step extinguisher flag, action one-hot, save flag."""
    n = env.cfg.size
    v = np.zeros(2 * n + n * n + 1 + N_ACTIONS + 1)
    px, py = s.player
    v[px - 1] = 1.0
    v[n + py - 1] = 1.0
    off = 2 * n
    for hx, hy in s.humans:
        v[off + (hy - 1) * n + (hx - 1)] = 1.0
    off += n * n
    nxt, saved = env.transition(s, a)
    v[off] = float(nxt.player == env.extinguisher)
    v[off + 1 + int(a)] = 1.0
    v[-1] = float(saved)
    return v


class MlpReward(RewardModel):
    """Feed-forward regressor over ``encode_state_action``; evaluations are memoised."""

    def __init__(self, env: Emergency, params: list[np.ndarray], name: str = "distilled"):
        self.env = env
        self.net = DenseNet(params)
        self.name = name
        self.history: list[float] = []
        self._cache: dict = {}

    @property
    def params(self):
        return self.net.params

    def _key(self, s, a):
        return (s.player, s.humans, s.obstacles, int(a))

    def rewards(self, states, actions):
        out = np.empty(len(actions))
        todo = []
        for i, (s, a) in enumerate(zip(states, actions)):
            r = self._cache.get(self._key(s, a))
            if r is None:
                todo.append(i)
            else:
                out[i] = r
        if todo:
            X = np.stack([encode_state_action(self.env, states[i], actions[i]) for i in todo])
            y = self.net(X)[:, 0]
            if len(self._cache) > _CACHE_LIMIT:
                self._cache.clear()
            for i, r in zip(todo, y):
                out[i] = r
                self._cache[self._key(states[i], actions[i])] = float(r)
        return out

    def reward(self, s, a):
        return float(self.rewards([s], [a])[0])

    def save(self, path) -> None:
        save_params(path, "reward", {"net": self.params}, {"name": self.name, "env": self.env.cfg.to_dict()})


def load_reward(path, env: Emergency) -> MlpReward:
    kind, blocks, meta = load_params(path)
    if kind != "reward":
        raise ValueError(f"{path}: expected a reward parameter file, found {kind!r}")
    return MlpReward(env, blocks["net"], name=meta.get("name", "file"))


def collect_samples(
    env: Emergency, policy: Policy, n: int, rng: np.random.Generator, epsilon: float = 0.5
) -> list[tuple[GridState, Action, float]]:
    """(state, action, ground-truth reward) triples from epsilon-mixed policy rollouts."""
    out = []
    while len(out) < n:
        s = env.init_random(rng)
        done = False
        while not done and len(out) < n:
            if rng.random() < epsilon:
                a = ACTIONS[int(rng.integers(N_ACTIONS))]
            else:
                a = sample_action(policy(s), rng)
            nxt, r, done = env.step(s, a)
            out.append((s, a, r))
            s = nxt
    return out


def distill_reward(
    env: Emergency,
    samples: Sequence[tuple[GridState, Action, float]],
    noise_sigma: float = 0.0,
    hidden_sizes: Sequence[int] = (32,),
    seed: int = 0,
    epochs: int = 20,
    lr: float = 3e-3,
    batch_size: int = 128,
) -> MlpReward:
    """Fits a regressor to ground-truth rewards corrupted by Gaussian label noise."""
    if len(samples) < 100:
        raise TooFewSamplesError(f"need at least 100 samples, got {len(samples)}")
    if noise_sigma < 0:
        raise ValueError("noise_sigma must be >= 0")
    rng = np.random.default_rng(seed)
    X = np.stack([encode_state_action(env, s, a) for s, a, _ in samples])
    y = np.array([r for _, _, r in samples], dtype=float)
    if noise_sigma > 0:
        y = y + rng.normal(0.0, noise_sigma, size=y.shape)
    params = init_dense([X.shape[1], *hidden_sizes, 1], rng)
    opt = Adam(params, lr=lr)
    history = []
    n = len(y)
    for _ in range(epochs):
        order = rng.permutation(n)
        for lo in range(0, n, batch_size):
            idx = order[lo : lo + batch_size]
            out, cache = dense_forward(params, X[idx])
            err = out[:, 0] - y[idx]
            grads, _ = dense_backward(params, cache, (2.0 / len(idx)) * err[:, None])
            opt.step(grads)
        pred = dense_forward(params, X)[0][:, 0]
        history.append(float(np.mean((pred - y) ** 2)))
    model = MlpReward(env, params, name=f"distilled(sigma={noise_sigma})")
    model.history = history
    return model


def avg_reward(m: RewardModel, t: PartialTrajectory) -> float:
    if len(t) == 0:
        raise EmptyTrajectoryError("average reward of an empty trajectory")
    return float(np.mean(m.rewards(t.states[:-1], t.actions)))


def max_entropy() -> float:
    return math.log(N_ACTIONS)
