"""Command-line entry points: ``cte {generate,evaluate,experiment,render,calibrate}``."""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import experiments as ex
from .features import Dataset, SchemaMismatchError, dataset_from_records, standardize
from .io import (
    InvalidConfigError,
    atomic_write_text,
    load_config,
    read_bounds,
    read_ctes,
    read_header,
    write_bounds,
    write_ctes,
)
from .env import GridConfig
from .proxy import LabelOracle, evaluate_informativeness
from .quality import CALIBRATED_WEIGHTS, check_weights

log = logging.getLogger("cte")

EXPERIMENT_IDS = (*ex.EXPERIMENTS, "ablation")


class UsageError(Exception):
    pass


def _plan(cfg: dict, args) -> ex.ExperimentPlan:
    d = dict(cfg.get("plan", {}))
    if args.seed is not None:
        d["master_seed"] = args.seed
    elif "master_seed" not in d:
        raise InvalidConfigError("a master seed is required (--seed or plan.master_seed)")
    if args.scale is not None:
        d["scale"] = args.scale
    try:
        return ex.ExperimentPlan.from_dict(d)
    except (TypeError, ValueError) as e:
        raise InvalidConfigError(str(e)) from e


def _world(plan: ex.ExperimentPlan, cfg: dict) -> ex.World:
    path = cfg.get("bounds")
    if path is not None:
        if not Path(path).exists():
            raise InvalidConfigError(f"bounds file {path} does not exist")
        return ex.build_world(plan, bounds=read_bounds(path))
    return ex.build_world(plan)


def cmd_calibrate(cfg: dict, args) -> list[Path]:
    plan = _plan(cfg, args)
    world = ex.build_world(plan)
    out = Path(args.out) / "bounds.json"
    write_bounds(out, world.bounds, {"master_seed": plan.master_seed, "reward": plan.reward})
    return [out]


def cmd_generate(cfg: dict, args) -> list[Path]:
    plan = _plan(cfg, args)
    generator = cfg.get("generator", "mcto")
    if generator not in ex.GENERATOR_ORDER:
        raise InvalidConfigError(f"unknown generator {generator!r}")
    n = int(cfg.get("n", 50))
    if n < 1:
        raise InvalidConfigError("n must be >= 1")
    weights = cfg.get("weights", list(CALIBRATED_WEIGHTS))
    if weights != "sample":
        try:
            weights = check_weights(weights)
        except ValueError as e:
            raise InvalidConfigError(str(e)) from e
    world = _world(plan, cfg)
    sess = ex.generate_session(
        world, generator, plan.generator_config(generator), n, plan.master_seed, ("generate", generator),
        None if isinstance(weights, str) else weights,
    )
    provenance = {
        "generator": generator,
        "config": ex.asdict(plan.generator_config(generator)),
        "master_seed": plan.master_seed,
        "weights": weights if isinstance(weights, str) else [float(x) for x in weights],
        "bounds": world.bounds.to_dict(),
        "grid": plan.grid.to_dict(),
        "reward": plan.reward,
    }
    out = Path(args.out) / cfg.get("output", f"ctes_{generator}.jsonl")
    write_ctes(out, sess.ctes, provenance)
    timing = Path(args.out) / f"timings_{generator}.csv"
    atomic_write_text(timing, "seconds_per_cte\n" + f"{float(np.mean(sess.seconds))!r}\n")
    return [out, timing]


def _load_sets(paths) -> tuple[Dataset, list]:
    if isinstance(paths, str):
        paths = [paths]
    headers = []
    for p in paths:
        if not Path(p).exists():
            raise FileNotFoundError(f"dataset {p} does not exist")
        headers.append(read_header(p))  # schema check before anything is written
    parts = []
    for p, h in zip(paths, headers):
        grid = GridConfig.from_dict(h["provenance"]["grid"]) if "grid" in h.get("provenance", {}) else GridConfig()
        _, ctes = read_ctes(p)
        parts.append(dataset_from_records(ctes, grid, tag=str(p)))
    return Dataset.concat(parts), headers


def cmd_evaluate(cfg: dict, args) -> list[Path]:
    plan = _plan(cfg, args)
    if "train" not in cfg or "test" not in cfg:
        raise InvalidConfigError("evaluate needs 'train' and 'test' dataset paths")
    train, _ = _load_sets(cfg["train"])
    test, _ = _load_sets(cfg["test"])
    (tr, te), _ = standardize(train, [test])
    oracle = bool(cfg.get("oracle", False))
    factory = ex.default_factory(plan)
    rows = []
    for seed in range(plan.n_seeds):
        s = ex.derive_int(plan.master_seed, "evaluate", "model", seed) % (2**31)
        model = LabelOracle() if oracle else factory(tr, s)
        rep = evaluate_informativeness(model, te)
        rows.append({"generator": cfg.get("label", "dataset"), "weight_set": cfg.get("weight_set", ""), "seed": seed,
                     "pearson_single": rep.pearson_single, "pearson_contrastive": rep.pearson_contrastive,
                     "n_test": rep.n_test})
    out = Path(args.out) / cfg.get("output", "results.csv")
    atomic_write_text(out, ex._csv(rows))
    return [out]


def cmd_experiment(cfg: dict, args) -> list[Path]:
    name = args.name
    if name not in EXPERIMENT_IDS:
        raise UsageError(f"unknown experiment {name!r}; choose from {', '.join(EXPERIMENT_IDS)}")
    plan = _plan(cfg, args)
    world = _world(plan, cfg)
    if name == "ablation":
        knob = cfg.get("knob")
        values = cfg.get("values")
        if knob is None or not values:
            raise InvalidConfigError("ablation needs 'knob' and 'values'")
        rep = ex.run_ablation(plan, knob, values, world, cfg.get("generator"))
    else:
        rep = ex.EXPERIMENTS[name](plan, world)
    return rep.write(args.out)


def render_cte(cte, gap: int = 4) -> str:
    from .env import Emergency

    env = Emergency(GridConfig())
    lines = [f"start index {cte.start_index}, original {len(cte.t_org)} steps, counterfactual {len(cte.t_cf)} steps"]
    n = max(len(cte.t_org), len(cte.t_cf))
    width = GridConfig().size + 2
    for i in range(n):
        left = env.render(cte.t_org.states[i]).splitlines() if i < len(cte.t_org) else [" " * width] * width
        right = env.render(cte.t_cf.states[i]).splitlines() if i < len(cte.t_cf) else [" " * width] * width
        lines.append(f"step {i}")
        lines += [a + " " * gap + b for a, b in zip(left, right)]
        ro = f"{cte.rewards_org[i]:+.3f} {cte.t_org.actions[i].name}" if i < len(cte.t_org) else ""
        rc = f"{cte.rewards_cf[i]:+.3f} {cte.t_cf.actions[i].name}" if i < len(cte.t_cf) else ""
        lines.append(f"  original: {ro}")
        lines.append(f"  counterfactual: {rc}")
    lines.append(f"average reward: original {cte.r_org:.4f}, counterfactual {cte.r_cf:.4f}")
    return "\n".join(lines) + "\n"


def cmd_render(cfg: dict, args) -> str:
    _, ctes = read_ctes(args.dataset)
    if not 0 <= args.index < len(ctes):
        raise IndexError(f"record {args.index} out of range (dataset has {len(ctes)})")
    return render_cte(ctes[args.index])


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cte", description="Counterfactual trajectory explanations for the Emergency gridworld.")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run configuration")
    common.add_argument("--seed", type=int, help="master seed (overrides the config)")
    common.add_argument("--scale", choices=("desk", "paper"), help="plan preset")
    common.add_argument("--out", default=".", help="output directory")
    common.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("generate", parents=[common], help="roll out trajectories and write one CTE each")
    sub.add_parser("calibrate", parents=[common], help="compute normalisation bounds")
    sub.add_parser("evaluate", parents=[common], help="train proxy models and report informativeness")
    e = sub.add_parser("experiment", parents=[common], help="run an experiment or analysis")
    e.add_argument("name", help=f"one of: {', '.join(EXPERIMENT_IDS)}")
    r = sub.add_parser("render", parents=[common], help="ASCII playback of a stored CTE")
    r.add_argument("dataset")
    r.add_argument("--index", type=int, default=0)
    return p


COMMANDS = {"generate": cmd_generate, "calibrate": cmd_calibrate, "evaluate": cmd_evaluate,
            "experiment": cmd_experiment, "render": cmd_render}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = load_config(args.config)
        result = COMMANDS[args.command](cfg, args)
    except UsageError as e:
        parser.error(str(e))  # exits with status 2
    except (InvalidConfigError, SchemaMismatchError, FileNotFoundError, IndexError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    if isinstance(result, str):
        sys.stdout.write(result)
    else:
        for path in result:
            print(path)
    return 0


if __name__ == "__main__":
    sys.exit(main())
