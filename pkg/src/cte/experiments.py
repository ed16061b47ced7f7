"""Experiment orchestration: worlds, CTE sessions, the three experiments and the criterion analyses.

Every random stream is derived from the plan's master seed and a tuple of
string labels (see ``derive_rng``), so each stage can be rerun in isolation
and reports are reproducible byte for byte. Wall-clock measurements are kept
out of the reproducible tables and written to a separate timings file.
"""
from __future__ import annotations

import csv
import io
import itertools
import logging
import math
import time
import zlib
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .agents import (
    GroundTruthReward,
    HeuristicPolicy,
    RewardModel,
    collect_samples,
    distill_reward,
    load_reward,
    rollout,
)
from .env import Emergency, GridConfig
from .features import Dataset, build_dataset, standardize
from .generators import DacConfig, MctoConfig, RandomConfig, make_generator
from .proxy import TrainConfig, LINEAR_DEFAULTS, evaluate_informativeness, fit
from .quality import (
    CRITERIA,
    CTE,
    MINIMIZED,
    CALIBRATED_WEIGHTS,
    CteHistory,
    NormalizationBounds,
    ScoringContext,
    calibrate_bounds,
    check_weights,
    sample_weights,
)
from .stats import DegenerateVarianceError, pearson, spearman, summarize, welch_ttest
from .trajectory import Trajectory

log = logging.getLogger(__name__)

GENERATOR_ORDER = ("mcto", "dac", "random")


# --- seeding -----------------------------------------------------------------------


def _label_key(label) -> int:
    if isinstance(label, (int, np.integer)):
        return int(label)
    return zlib.crc32(str(label).encode())


def derive_seed(master: int, *labels) -> np.random.SeedSequence:
    """Counter-style split: the master seed plus a spawn key made from the labels."""
    return np.random.SeedSequence(master, spawn_key=tuple(_label_key(x) for x in labels))


def derive_rng(master: int, *labels) -> np.random.Generator:
    return np.random.default_rng(derive_seed(master, *labels))


def derive_int(master: int, *labels) -> int:
    return int(derive_seed(master, *labels).generate_state(1)[0])


# --- plan ------------------------------------------------------------------------


@dataclass(frozen=True)
class ExperimentPlan:
    scale: str = "desk"
    master_seed: int = 0
    generators: tuple[str, ...] = GENERATOR_ORDER
    n_generate: int = 200
    n_train: int = 160
    n_test: int = 40
    n_quality: int = 200  # CTEs per generator for the quality/efficiency comparison
    n_weight_sets: int = 8
    n_seeds: int = 5
    weights: tuple[float, ...] | None = CALIBRATED_WEIGHTS
    exp3_generator: str = "mcto"
    proxy_kind: str = "mlp"
    train: TrainConfig = TrainConfig()
    linear: TrainConfig = LINEAR_DEFAULTS
    reward: str = "distilled"  # "ground_truth", "distilled" or a parameter-file path
    policy: str = "heuristic"
    policy_temperature: float = 0.5
    distill_samples: int = 1000
    distill_noise: float = 5.0
    distill_hidden: tuple[int, ...] = (64,)
    distill_epochs: int = 150
    grid: GridConfig = GridConfig()
    mcto: MctoConfig = MctoConfig()
    dac: DacConfig = DacConfig()
    random: RandomConfig = RandomConfig()
    calibration_rounds: int = 10
    calibration_per_round: int = 20
    calibration_trajectories: int = 40
    n_analysis_runs: int = 60  # weight sets for the criterion trade-off and influence analyses
    analysis_generator: str = "dac"
    n_ablation: int = 40

    def __post_init__(self) -> None:
        if self.n_train + self.n_test > self.n_generate:
            raise ValueError("train + test must not exceed the generated count")
        if self.n_weight_sets < 1 or self.n_seeds < 1:
            raise ValueError("need at least one weight set and one seed")
        if self.n_train < 1 or self.n_test < 1:
            raise ValueError("train and test splits must be non-empty")
        for g in (*self.generators, self.exp3_generator, self.analysis_generator):
            if g not in GENERATOR_ORDER:
                raise ValueError(f"unknown generator {g!r}")
        if self.proxy_kind not in ("mlp", "linear"):
            raise ValueError(f"unknown proxy kind {self.proxy_kind!r}")
        if self.weights is not None:
            check_weights(self.weights)
        if self.scale not in ("desk", "paper", "custom"):
            raise ValueError(f"unknown scale {self.scale!r}")

    @classmethod
    def desk(cls, **kw) -> "ExperimentPlan":
        return cls(**kw)

    @classmethod
    def paper(cls, **kw) -> "ExperimentPlan":
        base = dict(
            scale="paper", n_generate=1000, n_train=800, n_test=200, n_quality=1000,
            n_weight_sets=30, n_seeds=10, n_analysis_runs=200, n_ablation=200,
        )
        base.update(kw)
        return cls(**base)

    @classmethod
    def preset(cls, scale: str, **kw) -> "ExperimentPlan":
        if scale == "desk":
            return cls.desk(**kw)
        if scale == "paper":
            return cls.paper(**kw)
        raise ValueError(f"unknown scale {scale!r}")

    def generator_config(self, name: str):
        return getattr(self, name)

    def proxy_config(self) -> TrainConfig:
        return self.train if self.proxy_kind == "mlp" else self.linear

    def to_dict(self) -> dict:
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            if hasattr(v, "to_dict"):
                v = v.to_dict()
            elif hasattr(v, "__dataclass_fields__"):
                v = asdict(v)
            elif isinstance(v, tuple):
                v = list(v)
            out[f.name] = v
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentPlan":
        d = dict(d)
        scale = d.get("scale", "desk")
        nested = {
            "train": TrainConfig, "linear": TrainConfig, "mcto": MctoConfig, "dac": DacConfig, "random": RandomConfig,
        }
        kw = {}
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown plan fields: {sorted(unknown)}")
        for k, v in d.items():
            if k in nested and isinstance(v, dict):
                v = nested[k](**v)
            elif k == "grid" and isinstance(v, dict):
                v = GridConfig.from_dict(v)
            elif isinstance(v, list):
                v = tuple(v)
            kw[k] = v
        if scale in ("desk", "paper"):
            return cls.preset(scale, **kw)
        return cls(**kw)


# --- world -------------------------------------------------------------------------


@dataclass
class World:
    """The agent being explained plus calibrated normalisation bounds."""

    env: Emergency
    policy: object
    reward: RewardModel
    bounds: NormalizationBounds

    def context(self, weights, history: CteHistory | None = None) -> ScoringContext:
        return ScoringContext(
            self.env, self.reward, self.policy, self.bounds, np.asarray(weights, dtype=float),
            history if history is not None else CteHistory(),
        )


def make_reward(plan: ExperimentPlan, env: Emergency, policy) -> RewardModel:
    if plan.reward == "ground_truth":
        return GroundTruthReward(env)
    if plan.reward == "distilled":
        rng = derive_rng(plan.master_seed, "distill", "samples")
        samples = collect_samples(env, policy, plan.distill_samples, rng)
        return distill_reward(
            env, samples, noise_sigma=plan.distill_noise, hidden_sizes=plan.distill_hidden,
            seed=derive_int(plan.master_seed, "distill", "train"), epochs=plan.distill_epochs,
        )
    return load_reward(plan.reward, env)


def make_policy(plan: ExperimentPlan, env: Emergency):
    if plan.policy != "heuristic":
        raise ValueError(f"unknown policy provider {plan.policy!r}")
    return HeuristicPolicy(env, plan.policy_temperature)


def rollouts(env: Emergency, policy, n: int, rng) -> list[Trajectory]:
    return [rollout(env, policy, rng) for _ in range(n)]


def calibrate(plan: ExperimentPlan, env, policy, reward) -> NormalizationBounds:
    rng = derive_rng(plan.master_seed, "calibration", "trajectories")
    taus = rollouts(env, policy, plan.calibration_trajectories, rng)
    gens = {g: make_generator(g, plan.generator_config(g)) for g in GENERATOR_ORDER}
    base = ScoringContext(env, reward, policy, NormalizationBounds(), np.ones(len(CRITERIA)))
    return calibrate_bounds(
        gens, taus, base, derive_rng(plan.master_seed, "calibration", "search"),
        max_rounds=plan.calibration_rounds, n_per_round=plan.calibration_per_round,
    )


def _world_key(plan: ExperimentPlan) -> tuple:
    return (
        plan.master_seed, plan.reward, plan.policy, plan.policy_temperature, plan.distill_samples,
        plan.distill_noise, plan.distill_hidden, plan.distill_epochs, plan.grid, plan.mcto, plan.dac,
        plan.random, plan.calibration_rounds, plan.calibration_per_round, plan.calibration_trajectories,
    )


_WORLDS: dict[tuple, World] = {}


def build_world(plan: ExperimentPlan, bounds: NormalizationBounds | None = None) -> World:
    """Environment, policy, reward and (unless given) calibrated bounds; memoised per plan."""
    key = _world_key(plan)
    if bounds is None and key in _WORLDS:
        return _WORLDS[key]
    env = Emergency(plan.grid)
    policy = make_policy(plan, env)
    reward = make_reward(plan, env, policy)
    world = World(env, policy, reward, bounds if bounds is not None else calibrate(plan, env, policy, reward))
    if bounds is None:
        _WORLDS[key] = world
    return world


# --- sessions ------------------------------------------------------------------------


@dataclass
class Session:
    ctes: list[CTE]
    seconds: list[float]
    candidates: list[list[tuple[int, np.ndarray, float]]] = field(default_factory=list)


def generate_session(
    world: World,
    generator: str,
    gen_cfg,
    n: int,
    master: int,
    labels: tuple,
    weights=None,
    record_candidates: bool = False,
) -> Session:
    """``n`` CTEs, one per fresh rollout. ``weights=None`` draws a new weight vector per CTE.

    Diversity is measured against the CTEs already produced in this session.
    """
    gen = make_generator(generator, gen_cfg)
    traj_rng = derive_rng(master, *labels, "trajectories")
    weight_rng = derive_rng(master, *labels, "weights")
    gen_rng = derive_rng(master, *labels, "search")
    history = CteHistory()
    out = Session([], [])
    for _ in range(n):
        tau = rollout(world.env, world.policy, traj_rng)
        w = sample_weights(weight_rng) if weights is None else weights
        ctx = world.context(w, history)
        cands: list = []
        cb = (lambda i, raw, rho: cands.append((i, raw.copy(), rho))) if record_candidates else None
        t0 = time.perf_counter()
        cte = gen(tau, ctx, gen_rng, cb)
        out.seconds.append(time.perf_counter() - t0)
        if weights is None:
            cte.meta["weights"] = [float(x) for x in w]
        history.add(cte)
        out.ctes.append(cte)
        if record_candidates:
            out.candidates.append(cands)
    return out


# --- reports -----------------------------------------------------------------------


def _fmt(v):
    if isinstance(v, float):
        return repr(round(v, 12)) if math.isfinite(v) else ("nan" if math.isnan(v) else repr(v))
    return v


@dataclass
class AnalysisReport:
    name: str
    tables: dict[str, list[dict]] = field(default_factory=dict)
    summary: list[str] = field(default_factory=list)
    timings: list[dict] = field(default_factory=list)  # wall-clock data, never byte-stable

    def table(self, name: str) -> list[dict]:
        return self.tables[name]

    def lookup(self, table: str, **match) -> dict:
        for row in self.tables[table]:
            if all(row.get(k) == v for k, v in match.items()):
                return row
        raise KeyError(f"no row in {table} matching {match}")

    def csv_text(self, table: str) -> str:
        return _csv(self.tables[table])

    def text(self) -> str:
        lines = [f"== {self.name} =="] + self.summary
        for name, rows in self.tables.items():
            lines += ["", f"[{name}]", _csv(rows).rstrip("\n")]
        return "\n".join(lines) + "\n"

    def write(self, out_dir) -> list[Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        from .io import atomic_write_text

        paths = []
        for name, rows in self.tables.items():
            p = out / f"{self.name}_{name}.csv"
            atomic_write_text(p, _csv(rows))
            paths.append(p)
        p = out / f"{self.name}_summary.txt"
        atomic_write_text(p, self.text())
        paths.append(p)
        if self.timings:
            p = out / f"{self.name}_timings.csv"
            atomic_write_text(p, _csv(self.timings))
            paths.append(p)
        return paths


def _csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    if not rows:
        return ""
    cols = list(rows[0])
    for r in rows[1:]:
        cols += [k for k in r if k not in cols]
    w = csv.DictWriter(buf, fieldnames=cols, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: _fmt(v) for k, v in r.items()})
    return buf.getvalue()


def safe_welch(a, b) -> tuple[float, bool]:
    """(p, degenerate); a degenerate comparison of identical constants is reported as p = nan."""
    try:
        return welch_ttest(a, b), False
    except DegenerateVarianceError:
        return float("nan"), True


def safe_corr(fn, x, y) -> float:
    try:
        return fn(x, y)
    except DegenerateVarianceError:
        return float("nan")


def pairwise_tests(groups: dict[str, Sequence[float]], metric: str) -> list[dict]:
    rows = []
    for a, b in itertools.combinations(groups, 2):
        p, degenerate = safe_welch(groups[a], groups[b])
        rows.append({"metric": metric, "a": a, "b": b, "mean_a": float(np.mean(groups[a])),
                     "mean_b": float(np.mean(groups[b])), "p_value": p, "degenerate": degenerate})
    return rows


# --- proxy evaluation helpers --------------------------------------------------------------


ModelFactory = Callable[[Dataset, int], object]


def default_factory(plan: ExperimentPlan) -> ModelFactory:
    cfg = plan.proxy_config()

    def factory(train: Dataset, seed: int):
        return fit(train, replace(cfg, seed=seed))

    return factory


def evaluate_sets(
    plan: ExperimentPlan, trains: dict, test: Dataset, labels: tuple, factory: ModelFactory | None = None
) -> list[dict]:
    """Trains ``n_seeds`` models per training set and scores each on the shared test set."""
    factory = factory or default_factory(plan)
    rows = []
    for key, train in trains.items():
        (tr, te), _ = standardize(train, [test])
        for seed in range(plan.n_seeds):
            s = derive_int(plan.master_seed, *labels, key, "model", seed) % (2**31)
            rep = evaluate_informativeness(factory(tr, s), te)
            rows.append({"set": key, "seed": seed, "pearson_single": rep.pearson_single,
                         "pearson_contrastive": rep.pearson_contrastive, "n_test": rep.n_test})
    return rows


class SplitOverlapError(AssertionError):
    pass


def split_indices(plan: ExperimentPlan, n: int) -> tuple[range, range]:
    train, test = range(plan.n_train), range(plan.n_train, plan.n_train + plan.n_test)
    if set(train) & set(test) or test.stop > n:
        raise SplitOverlapError(f"train/test split {train}/{test} invalid for {n} CTEs")
    return train, test


def _split(plan: ExperimentPlan, ctes: list[CTE]):
    train, test = split_indices(plan, len(ctes))
    return [ctes[i] for i in train], [ctes[i] for i in test]


# --- Experiment 1 -------------------------------------------------------------------------


def run_experiment1(plan: ExperimentPlan, world: World | None = None, factory: ModelFactory | None = None) -> AnalysisReport:
    world = world or build_world(plan)
    weights = np.asarray(plan.weights if plan.weights is not None else CALIBRATED_WEIGHTS)
    trains, tests = {}, []
    timings = []
    for g in plan.generators:
        sess = generate_session(world, g, plan.generator_config(g), plan.n_generate, plan.master_seed, ("exp1", g), weights)
        tr, te = _split(plan, sess.ctes)
        trains[g] = build_dataset(tr, world.reward, plan.grid, tag=g)
        tests.append(build_dataset(te, world.reward, plan.grid, tag=g))
        timings.append({"generator": g, "seconds_per_cte": float(np.mean(sess.seconds))})
    test = Dataset.concat(tests)
    rows = evaluate_sets(plan, trains, test, ("exp1",), factory)
    for r in rows:
        r["generator"] = r.pop("set")
    rep = AnalysisReport("experiment1", timings=timings)
    rep.tables["models"] = [{"generator": r["generator"], "weight_set": "calibrated", "seed": r["seed"],
                             "pearson_single": r["pearson_single"], "pearson_contrastive": r["pearson_contrastive"],
                             "n_test": r["n_test"]} for r in rows]
    summary, tests_rows = [], []
    for task in ("single", "contrastive"):
        groups = {g: [r[f"pearson_{task}"] for r in rows if r["generator"] == g] for g in plan.generators}
        for g, vals in groups.items():
            s = summarize(vals)
            summary.append({"generator": g, "task": task, **s})
        tests_rows += pairwise_tests(groups, f"pearson_{task}")
    rep.tables["summary"] = summary
    rep.tables["tests"] = tests_rows
    rep.summary = [
        f"{r['task']:>11} {r['generator']:>6}: mean {r['mean']:.3f} median {r['median']:.3f}" for r in summary
    ]
    return rep


# --- Experiment 2 ---------------------------------------------------------------------------


def run_experiment2(plan: ExperimentPlan, world: World | None = None) -> AnalysisReport:
    world = world or build_world(plan)
    rows, timings, rho_groups = [], [], {}
    for g in plan.generators:
        sess = generate_session(world, g, plan.generator_config(g), plan.n_quality, plan.master_seed, ("exp2", g))
        rhos = [c.rho for c in sess.ctes]
        lengths = [len(c.t_cf) + len(c.t_org) for c in sess.ctes]
        rho_groups[g] = rhos
        rows.append({
            "generator": g, "n": len(rhos), "mean_rho": float(np.mean(rhos)), "std_rho": float(np.std(rhos, ddof=1)),
            "mean_combined_length": float(np.mean(lengths)),
            "mean_start": float(np.mean([c.start_index for c in sess.ctes])),
        })
        timings.append({"generator": g, "n": len(rhos), "seconds_per_cte": float(np.mean(sess.seconds)),
                        "total_seconds": float(np.sum(sess.seconds))})
    rep = AnalysisReport("experiment2", timings=timings)
    rep.tables["quality"] = rows
    rep.tables["tests"] = pairwise_tests(rho_groups, "rho")
    rep.summary = [
        f"{r['generator']:>6}: rho {r['mean_rho']:.3f} +- {r['std_rho']:.3f}, length {r['mean_combined_length']:.2f}"
        for r in rows
    ]
    return rep


# --- Experiment 3 ----------------------------------------------------------------------------


def run_experiment3(plan: ExperimentPlan, world: World | None = None, factory: ModelFactory | None = None) -> AnalysisReport:
    world = world or build_world(plan)
    g = plan.exp3_generator
    wrng = derive_rng(plan.master_seed, "exp3", "weight_sets")
    weight_sets = [sample_weights(wrng) for _ in range(plan.n_weight_sets)]
    trains, tests = {}, []
    for k, w in enumerate(weight_sets):
        sess = generate_session(world, g, plan.generator_config(g), plan.n_generate, plan.master_seed, ("exp3", k), w)
        tr, te = _split(plan, sess.ctes)
        trains[k] = build_dataset(tr, world.reward, plan.grid, tag=k)
        tests.append(build_dataset(te, world.reward, plan.grid, tag=k))
    test = Dataset.concat(tests)
    rows = evaluate_sets(plan, trains, test, ("exp3",), factory)
    per_set = []
    for k, w in enumerate(weight_sets):
        mine = [r for r in rows if r["set"] == k]
        per_set.append({
            "weight_set": k, **{f"w_{c}": float(x) for c, x in zip(CRITERIA, w)},
            "informativeness_single": float(np.mean([r["pearson_single"] for r in mine])),
            "informativeness_contrastive": float(np.mean([r["pearson_contrastive"] for r in mine])),
        })
    spear = []
    for c in CRITERIA:
        x = [r[f"w_{c}"] for r in per_set]
        spear.append({
            "criterion": c,
            "spearman_single": safe_corr(spearman, x, [r["informativeness_single"] for r in per_set]),
            "spearman_contrastive": safe_corr(spearman, x, [r["informativeness_contrastive"] for r in per_set]),
        })
    extremes = []
    for task in ("single", "contrastive"):
        key = f"informativeness_{task}"
        best = max(per_set, key=lambda r: r[key])
        worst = min(per_set, key=lambda r: r[key])
        extremes.append({"task": task, "kind": "best", **best})
        extremes.append({"task": task, "kind": "worst", **worst})
    rep = AnalysisReport("experiment3")
    rep.tables["models"] = [{"weight_set": r["set"], "seed": r["seed"], "pearson_single": r["pearson_single"],
                             "pearson_contrastive": r["pearson_contrastive"], "n_test": r["n_test"]} for r in rows]
    rep.tables["weight_sets"] = per_set
    rep.tables["spearman"] = spear
    rep.tables["extremes"] = extremes
    top = max(spear, key=lambda r: -math.inf if math.isnan(r["spearman_contrastive"]) else r["spearman_contrastive"])
    rep.summary = [f"strongest contrastive weight correlation: {top['criterion']} ({top['spearman_contrastive']:.3f})"]
    return rep


# --- criterion analyses ---------------------------------------------------------------------


def oriented(raw: np.ndarray) -> np.ndarray:
    """Criterion values flipped so that larger is better for every column."""
    raw = np.asarray(raw, dtype=float)
    sign = np.array([-1.0 if c in MINIMIZED else 1.0 for c in CRITERIA])
    return raw * sign


def _analysis_sessions(plan: ExperimentPlan, world: World, label: str):
    g = plan.analysis_generator
    return generate_session(world, g, plan.generator_config(g), plan.n_analysis_runs, plan.master_seed,
                            (label, g), None, record_candidates=True)


def analyze_criterion_tradeoffs(plan: ExperimentPlan, world: World | None = None) -> AnalysisReport:
    world = world or build_world(plan)
    sess = _analysis_sessions(plan, world, "tradeoffs")
    k = len(CRITERIA)
    sums = np.zeros((k, k))
    counts = np.zeros((k, k))
    for cands in sess.candidates:
        if len(cands) < 3:
            continue
        V = oriented(np.stack([raw for _, raw, _ in cands]))
        for i in range(k):
            for j in range(k):
                r = 1.0 if i == j else safe_corr(pearson, V[:, i], V[:, j])
                if not math.isnan(r):
                    sums[i, j] += r
                    counts[i, j] += 1
    M = np.where(counts > 0, sums / np.maximum(counts, 1), np.nan)
    rows = [{"criterion": CRITERIA[i], **{c: float(M[i, j]) for j, c in enumerate(CRITERIA)}} for i in range(k)]
    rep = AnalysisReport("tradeoffs")
    rep.tables["correlations"] = rows
    rep.tables["runs"] = [{"runs": len(sess.candidates), "generator": plan.analysis_generator,
                           "orientation": "minimised criteria negated"}]
    rep.summary = [f"validity vs sparsity: {M[0, 5]:.3f}", f"validity vs proximity: {M[0, 1]:.3f}"]
    return rep


def influence_stats(chosen: np.ndarray, candidates: np.ndarray, bounds: NormalizationBounds):
    """Per-criterion percentile rank (in (0, 100]) and value relative to the candidate maximum."""
    C = np.stack([bounds.contributions(c) for c in candidates])
    x = bounds.contributions(chosen)
    pct = 100.0 * np.mean(C <= x[None, :] + 1e-12, axis=0)
    mx = C.max(axis=0)
    rel = np.where(mx > 0, x / np.where(mx > 0, mx, 1.0), 1.0)
    return pct, rel


def analyze_criterion_influence(plan: ExperimentPlan, world: World | None = None) -> AnalysisReport:
    world = world or build_world(plan)
    sess = _analysis_sessions(plan, world, "influence")
    pcts, rels, values, rhos = [], [], [], []
    for cte, cands in zip(sess.ctes, sess.candidates):
        chosen = cte.criteria.as_array()
        pct, rel = influence_stats(chosen, np.stack([raw for _, raw, _ in cands]), world.bounds)
        pcts.append(pct)
        rels.append(rel)
        values.append(world.bounds.contributions(chosen))
        rhos.append(cte.rho)
    pcts, rels, values = np.array(pcts), np.array(rels), np.array(values)
    rows = []
    for j, c in enumerate(CRITERIA):
        rows.append({
            "criterion": c,
            "percentile_mean": float(pcts[:, j].mean()), "percentile_median": float(np.median(pcts[:, j])),
            "relative_mean": float(rels[:, j].mean()), "relative_median": float(np.median(rels[:, j])),
            "rho_correlation": safe_corr(pearson, values[:, j], rhos),
        })
    rep = AnalysisReport("influence")
    rep.tables["criteria"] = rows
    rep.summary = [f"{r['criterion']:>16}: percentile {r['percentile_mean']:.1f}, rho-corr {r['rho_correlation']:.3f}"
                   for r in rows]
    return rep


# --- ablations -----------------------------------------------------------------------------


ABLATION_KNOBS = {
    "n_starts": ("mcto",),
    "n_iterations": ("mcto",),
    "threshold_a": ("mcto",),
    "gamma": ("mcto",),
    "expansion_mode": ("mcto",),
    "simulation_mode": ("mcto",),
    "p_end": ("mcto", "dac", "random"),
    "n_deviations": ("dac",),
    "continuation_mode": ("dac",),
    "proxy_kind": (),
}


class UnknownKnobError(ValueError):
    pass


def run_ablation(
    plan: ExperimentPlan, knob: str, values: Sequence, world: World | None = None, generator: str | None = None
) -> AnalysisReport:
    """Sweeps one knob. Every value sees the same trajectories, weights and search seeds."""
    if knob not in ABLATION_KNOBS:
        raise UnknownKnobError(f"unknown knob {knob!r}; choose from {sorted(ABLATION_KNOBS)}")
    world = world or build_world(plan)
    rep = AnalysisReport(f"ablation_{knob}")
    if knob == "proxy_kind":
        rows, groups = [], {}
        for v in values:
            sub = replace(plan, proxy_kind=v, generators=(generator or "mcto",))
            r1 = run_experiment1(sub, world)
            for task in ("single", "contrastive"):
                vals = [r[f"pearson_{task}"] for r in r1.tables["models"]]
                groups.setdefault(task, {})[v] = vals
                rows.append({"value": v, "task": task, "mean": float(np.mean(vals)), "std": float(np.std(vals, ddof=1)) if len(vals) > 1 else 0.0})
        rep.tables["sweep"] = rows
        rep.tables["tests"] = [t for task, gr in groups.items() for t in pairwise_tests(gr, f"pearson_{task}")]
        return rep
    gens = ABLATION_KNOBS[knob]
    g = generator or gens[0]
    if g not in gens:
        raise UnknownKnobError(f"knob {knob!r} does not apply to {g!r}")
    rows, groups, timings = [], {}, []
    for v in values:
        cfg = replace(plan.generator_config(g), **{knob: v})
        sess = generate_session(world, g, cfg, plan.n_ablation, plan.master_seed, ("ablation", g))
        rhos = [c.rho for c in sess.ctes]
        groups[str(v)] = rhos
        rows.append({"generator": g, "knob": knob, "value": str(v), "n": len(rhos), "mean_rho": float(np.mean(rhos)),
                     "std_rho": float(np.std(rhos, ddof=1)) if len(rhos) > 1 else 0.0,
                     "mean_length": float(np.mean([len(c.t_cf) for c in sess.ctes]))})
        timings.append({"generator": g, "knob": knob, "value": str(v), "seconds_per_cte": float(np.mean(sess.seconds))})
    rep.tables["sweep"] = rows
    rep.tables["tests"] = pairwise_tests(groups, "rho")
    rep.timings = timings
    return rep


EXPERIMENTS = {
    "exp1": run_experiment1,
    "exp2": run_experiment2,
    "exp3": run_experiment3,
    "tradeoffs": analyze_criterion_tradeoffs,
    "influence": analyze_criterion_influence,
}
