"""Proxy-human regressors that learn reward judgements from CTEs.

The multi-task network has a shared ReLU body over the concatenated
(original | counterfactual) features and two linear heads: a *single* head
predicting both average rewards and a *contrastive* head predicting their
difference. Each head is updated by its own loss; the body by a weighted
mix of the two. The linear ablation drops the body, which leaves two
independent linear models.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field, replace
from typing import Sequence

import numpy as np

from .features import N_FEATURES, Dataset, standardize
from .nn import Adam, dense_backward, dense_forward, init_dense, load_params, save_params
from .stats import DegenerateVarianceError, pearson


class DivergenceError(RuntimeError):
    pass


class FeatureDimensionError(ValueError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-3
    weight_decay: float = 1e-3
    epochs: int = 150
    hidden: tuple[int, ...] = (128, 64, 32)
    mix: float = 0.5  # share of the single-task loss in the body update
    batch_size: int = 32
    seed: int = 0
    kind: str = "mlp"

    def __post_init__(self) -> None:
        if not self.lr > 0:
            raise ValueError("learning rate must be positive")
        if not 0 <= self.mix <= 1:
            raise ValueError("mix must be in [0, 1]")
        if self.kind not in ("mlp", "linear"):
            raise ValueError(f"unknown proxy kind {self.kind!r}")
        object.__setattr__(self, "hidden", tuple(self.hidden))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        return d


LINEAR_DEFAULTS = TrainConfig(lr=0.1, weight_decay=0.01, epochs=300, hidden=(), batch_size=0, kind="linear")


@dataclass
class ProxyModel:
    body: list[np.ndarray]
    head_single: list[np.ndarray]
    head_contrastive: list[np.ndarray]
    kind: str = "mlp"
    loss_history: list[float] = field(default_factory=list)

    @classmethod
    def init(cls, n_in: int, hidden: Sequence[int], rng: np.random.Generator, kind="mlp", zero_heads=False):
        hidden = tuple(hidden)
        body = init_dense([n_in, *hidden], rng) if hidden else []
        width = hidden[-1] if hidden else n_in
        hs = init_dense([width, 2], rng)
        hc = init_dense([width, 1], rng)
        if kind == "linear" or zero_heads:
            hs = [np.zeros_like(p) for p in hs] if zero_heads else [p * 0.01 for p in hs]
            hc = [np.zeros_like(p) for p in hc] if zero_heads else [p * 0.01 for p in hc]
        return cls(body, hs, hc, kind)

    @property
    def n_inputs(self) -> int:
        return (self.body[0] if self.body else self.head_single[0]).shape[0]

    def params(self) -> list[np.ndarray]:
        return [*self.body, *self.head_single, *self.head_contrastive]

    def _embed(self, X):
        if not self.body:
            return X, None
        return dense_forward(self.body, X, final_relu=True)

    def forward(self, X: np.ndarray):
        X = np.atleast_2d(X)
        if X.shape[1] != self.n_inputs:
            raise FeatureDimensionError(f"expected {self.n_inputs} input columns, got {X.shape[1]}")
        h, _ = self._embed(X)
        s = dense_forward(self.head_single, h)[0]
        d = dense_forward(self.head_contrastive, h)[0][:, 0]
        return s[:, 0], s[:, 1], d

    def predict_dataset(self, data: Dataset):
        return self.forward(data.X)

    def save(self, path, meta: dict | None = None) -> None:
        blocks = {"head_single": self.head_single, "head_contrastive": self.head_contrastive}
        if self.body:
            blocks["body"] = self.body
        save_params(path, f"proxy-{self.kind}", blocks, meta)

    @classmethod
    def load(cls, path) -> "ProxyModel":
        kind, blocks, _ = load_params(path)
        if not kind.startswith("proxy-"):
            raise ValueError(f"{path}: expected a proxy model file, found {kind!r}")
        return cls(blocks.get("body", []), blocks["head_single"], blocks["head_contrastive"], kind[len("proxy-"):])


def predict(m: ProxyModel, row: np.ndarray) -> tuple[float, float, float]:
    row = np.asarray(row, dtype=float)
    if row.shape != (m.n_inputs,):
        raise FeatureDimensionError(f"expected a row of {m.n_inputs} features, got shape {row.shape}")
    a, b, c = m.forward(row[None, :])
    return float(a[0]), float(b[0]), float(c[0])


def losses_and_grads(m: ProxyModel, X, y_org, y_cf, mix: float):
    """Mean per-sample losses and the per-block gradients used for training.

    Single head <- d L_single, contrastive head <- d L_contrastive,
    body <- d (mix * L_single + (1 - mix) * L_contrastive).
    """
    n = len(X)
    h, cache = m._embed(X)
    s, s_cache = dense_forward(m.head_single, h)
    d, d_cache = dense_forward(m.head_contrastive, h)
    Y = np.stack([y_org, y_cf], axis=1)
    delta = (y_org - y_cf)[:, None]
    l_single = float(np.sum((s - Y) ** 2) / n)
    l_contrastive = float(np.sum((d - delta) ** 2) / n)
    g_hs, dh_s = dense_backward(m.head_single, s_cache, 2.0 * (s - Y) / n)
    g_hc, dh_c = dense_backward(m.head_contrastive, d_cache, 2.0 * (d - delta) / n)
    g_body = []
    if m.body:
        g_body, _ = dense_backward(m.body, cache, mix * dh_s + (1 - mix) * dh_c, final_relu=True)
    return l_single, l_contrastive, [*g_body, *g_hs, *g_hc]


def train_proxy(train: Dataset, cfg: TrainConfig = TrainConfig()) -> ProxyModel:
    if len(train) == 0:
        raise ValueError("empty training set")
    rng = np.random.default_rng(cfg.seed)
    m = ProxyModel.init(train.X.shape[1], cfg.hidden if cfg.kind == "mlp" else (), rng, kind=cfg.kind)
    mix = cfg.mix if cfg.kind == "mlp" else 0.5
    opt = Adam(m.params(), lr=cfg.lr, weight_decay=cfg.weight_decay)
    bs = cfg.batch_size if cfg.batch_size and cfg.batch_size > 0 else len(train)
    with np.errstate(over="ignore", invalid="ignore"):  # divergence is detected below
        _train_loop(m, train, cfg, opt, mix, bs, rng)
    return m


def _train_loop(m, train, cfg, opt, mix, bs, rng) -> None:
    X, n = train.X, len(train)
    for _ in range(cfg.epochs):
        order = rng.permutation(n)
        for lo in range(0, n, bs):
            idx = order[lo : lo + bs]
            ls, lc, grads = losses_and_grads(m, X[idx], train.y_org[idx], train.y_cf[idx], mix)
            if not (np.isfinite(ls) and np.isfinite(lc)):
                raise DivergenceError("proxy training produced a non-finite loss")
            opt.step(grads)
        ls, lc, _ = losses_and_grads(m, X, train.y_org, train.y_cf, mix)
        if not (np.isfinite(ls) and np.isfinite(lc)):
            raise DivergenceError("proxy training produced a non-finite loss")
        m.loss_history.append(ls + lc)


def train_linear(train: Dataset, task: str = "both", cfg: TrainConfig = LINEAR_DEFAULTS) -> ProxyModel:
    """Linear regressors with bias; ``task`` picks which head is fitted ("single", "contrastive", "both").

    The heads never share parameters, so fitting both at once is the same as
    training two independent models.
    """
    if task not in ("single", "contrastive", "both"):
        raise ValueError(f"unknown task {task!r}")
    m = train_proxy(train, replace(cfg, kind="linear", hidden=()))
    return m


@dataclass(frozen=True)
class InformativenessReport:
    pearson_single: float
    pearson_contrastive: float
    n_test: int


def single_task_pearson(pred_org, pred_cf, y_org, y_cf) -> float:
    return pearson(np.concatenate([pred_org, pred_cf]), np.concatenate([y_org, y_cf]))


def evaluate_informativeness(m, test: Dataset) -> InformativenessReport:
    po, pc, pd = m.predict_dataset(test)
    return InformativenessReport(
        pearson_single=single_task_pearson(po, pc, test.y_org, test.y_cf),
        pearson_contrastive=pearson(pd, test.y_org - test.y_cf),
        n_test=len(test),
    )


class LabelOracle:
    """Stand-in model that already knows the labels; checks evaluation plumbing."""

    def __init__(self, scale: float = 1.0, shift: float = 0.0):
        self.scale, self.shift = scale, shift

    def predict_dataset(self, data: Dataset):
        a, b = self.scale, self.shift
        return a * data.y_org + b, a * data.y_cf + b, a * (data.y_org - data.y_cf) + b


def fit(train: Dataset, cfg: TrainConfig) -> ProxyModel:
    return train_proxy(train, cfg) if cfg.kind == "mlp" else train_linear(train, "both", cfg)


def cross_validate(data: Dataset, grid: Sequence[TrainConfig], folds: int = 5, fold_seed: int = 0) -> TrainConfig:
    """Config with the best mean validation single-task Pearson; ties go to the earliest."""
    if not grid:
        raise ValueError("empty hyperparameter grid")
    if len(data) < folds:
        raise ValueError(f"need at least {folds} rows for {folds}-fold cross-validation")
    perm = np.random.default_rng(fold_seed).permutation(len(data))
    parts = np.array_split(perm, folds)
    best, best_score = grid[0], -np.inf
    for cfg in grid:
        scores = []
        for k in range(folds):
            val_idx = parts[k]
            tr_idx = np.concatenate([parts[j] for j in range(folds) if j != k])
            tr, va = data.subset(tr_idx), data.subset(val_idx)
            if not tr.standardized:
                (tr, va), _ = standardize(tr, [va])
            model = fit(tr, cfg)
            po, pc, _ = model.predict_dataset(va)
            try:
                scores.append(single_task_pearson(po, pc, va.y_org, va.y_cf))
            except DegenerateVarianceError:
                scores.append(0.0)
        mean = float(np.mean(scores))
        if mean > best_score:
            best, best_score = cfg, mean
    return best


def input_width() -> int:
    return 2 * N_FEATURES
