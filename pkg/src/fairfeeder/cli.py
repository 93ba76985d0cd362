"""Command-line entry point: ``fairfeeder <command> [options]``.

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
The seed comes from ``--seed``, else ``FAIRFEEDER_SEED``, else the config.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

from . import config as cfgmod
from .data import DatasetError, episode, synthesize, write_dataset
from .evaluate import AgentPolicy, ConfigMismatch, evaluate_checkpoint, evaluate_policy, write_report
from .feeder import ConfigurationError
from .learner import CheckpointError, load_checkpoint, save_checkpoint, train
from .oracle import (
    BudgetExceeded,
    OracleProblem,
    ParetoPoint,
    load_problem,
    pareto_sweep,
    save_problem,
    solve,
    write_sweep_csv,
)
from .fairness import gini_index
from .tariff import electricity_cost

log = logging.getLogger("fairfeeder")

USAGE_ERRORS = (ConfigurationError, DatasetError, ConfigMismatch, CheckpointError, BudgetExceeded,
                FileNotFoundError)


class UsageError(Exception):
    pass


def _seed(args, cfg) -> int:
    if getattr(args, "seed", None) is not None:
        return int(args.seed)
    env = os.environ.get("FAIRFEEDER_SEED")
    if env:
        try:
            return int(env)
        except ValueError:
            raise UsageError(f"FAIRFEEDER_SEED must be an integer, got {env!r}") from None
    return int(cfg["seed"])


def _overrides(args) -> dict:
    o: dict = {}
    if getattr(args, "fairness", None):
        o.setdefault("fairness", {})["definition"] = args.fairness
    if getattr(args, "horizon", None):
        o.setdefault("fairness", {})["horizon"] = args.horizon
    if getattr(args, "data", None):
        o.setdefault("data", {})["path"] = args.data
    if getattr(args, "steps", None) is not None:
        o.setdefault("train", {})["total_steps"] = args.steps
    if getattr(args, "w2", None) is not None:
        o.setdefault("reward", {})["w2"] = args.w2
    if getattr(args, "beta", None) is not None:
        o.setdefault("oracle", {})["beta"] = args.beta
    if getattr(args, "mode", None):
        o.setdefault("oracle", {})["mode"] = args.mode
    for key in ("day", "start_slot", "timesteps", "households"):
        if getattr(args, f"oracle_{key}", None) is not None:
            o.setdefault("oracle", {})[key] = getattr(args, f"oracle_{key}")
    return o


def _build_run(cfg: dict) -> cfgmod.Run:
    try:
        return cfgmod.build_run(cfg)
    except (ConfigurationError, DatasetError):
        raise
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _config(args) -> dict:
    cfg = cfgmod.load_config(getattr(args, "config", None), _overrides(args))
    path = cfg["data"]["path"]
    if path and not Path(path).exists():
        raise UsageError(f"dataset not found: {path}")
    return cfg


# --------------------------------------------------------------------------- commands


def cmd_synth(args) -> int:
    cfg = cfgmod.load_config(None)
    seed = _seed(args, cfg)
    ds = synthesize(args.households, args.days, seed)
    out = Path(args.out)
    try:
        write_dataset(ds, out)
    except OSError as exc:
        raise UsageError(f"cannot write {out}: {exc.strerror or exc}") from None
    print(f"wrote {ds.n_days * 48 * ds.n_households} rows to {out}")
    return 0


def cmd_train(args) -> int:
    cfg = _config(args)
    seed = _seed(args, cfg)
    cfg["seed"] = seed
    run = _build_run(cfg)
    tcfg = cfgmod.build_train_config(cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cfgmod.write_snapshot(cfg, out)

    def progress(step, reward, agent):
        log.info("step %d episode mean reward %.4f temperature %.4f", step, reward, agent.temperature)

    result = train(run.env, run.dataset, run.train_days, tcfg, seed=seed, progress=progress)
    save_checkpoint(out / "checkpoint.json", result.agent, cfg, run.hash)
    with (out / "curve.csv").open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["episode", "mean_step_reward"])
        for i, r in enumerate(result.curve):
            w.writerow([i, repr(r)])
    print(f"trained {result.steps} steps ({len(result.curve)} episodes); checkpoint {out / 'checkpoint.json'}")
    return 0


def cmd_eval(args) -> int:
    if args.config is None:
        _, doc = load_checkpoint(args.checkpoint)
        cfg = cfgmod.load_config(None, doc["config"])
        cfg = cfgmod.merge_config(cfg, _overrides(args))
    else:
        cfg = _config(args)
    _build_run(cfg)
    report = evaluate_checkpoint(args.checkpoint, cfg, workers=args.workers)
    out = Path(args.out)
    run_ids = cfgmod.load_data(cfg).household_ids
    paths = write_report(report, out, tuple(cfg["eval"]["window"]), list(run_ids))
    cfgmod.write_snapshot(cfg, out)
    print(json.dumps({k: v for k, v in report.to_dict().items() if k not in ("curtailed_kwh", "exported_kwh")}))
    print(f"wrote {', '.join(str(p) for p in paths.values())}")
    return 0


def build_problem(cfg: dict) -> OracleProblem:
    o = cfg["oracle"]
    ds = cfgmod.load_data(cfg)
    H = int(o["households"])
    if H > ds.n_households:
        raise UsageError(f"oracle.households={H} exceeds the dataset's {ds.n_households} households")
    day = int(o["day"])
    if not 0 <= day < ds.n_days:
        raise UsageError(f"oracle.day={day} outside 0..{ds.n_days - 1}")
    f = cfg["feeder"]
    net = _build_run(cfg).model.network
    network = replace(net, branch_resistance=net.branch_resistance[:H], branch_reactance=net.branch_reactance[:H])
    return OracleProblem.from_episode(
        network, episode(ds, day), start_slot=int(o["start_slot"]),
        timesteps=int(o["timesteps"]), tariff=cfgmod.build_tariff(cfg), fairness=cfgmod.build_case(cfg),
        beta=float(o["beta"]), vvc=cfgmod.build_curve(cfg), mode=o["mode"], pricing=cfg["tariff"]["pricing"],
        sign=o["sign"], levels=int(o["levels"]), budget=int(o["budget"]), boundary_mode=f["boundary_mode"],
        reactive_fraction=float(f["reactive_fraction"]),
    )


def cmd_oracle(args) -> int:
    if args.problem:
        problem = load_problem(args.problem)
        if args.beta is not None or args.mode:
            problem = replace(problem, beta=args.beta if args.beta is not None else problem.beta,
                              mode=args.mode or problem.mode)
        cfg = None
    else:
        cfg = _config(args)
        problem = build_problem(cfg)
    kwargs = {}
    if problem.mode == "descent" and cfg is not None:
        kwargs = {"max_iters": int(cfg["oracle"]["max_iters"]), "mu0": float(cfg["oracle"]["mu0"])}
    sol = solve(problem, **kwargs)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_problem(problem, out / "problem.yaml")
    doc = sol.to_dict()
    doc["meta"] = {k: v for k, v in sol.meta.items() if k != "history"}
    (out / f"solution_{problem.fairness.name}.json").write_text(json.dumps(doc, indent=2))
    if cfg is not None:
        cfgmod.write_snapshot(cfg, out)
    print(json.dumps({"objective": sol.objective, "cost": sol.cost, "fairness_penalty": sol.fairness_penalty,
                      "feasible": sol.feasible}))
    return 0


def _policy_points(paths) -> list[ParetoPoint]:
    points = []
    for path in paths:
        agent, doc = load_checkpoint(path)
        cfg = cfgmod.load_config(None, doc["config"])
        run = _build_run(cfg)
        rep = evaluate_policy(AgentPolicy(agent), run, checkpoint_hash=doc["config_hash"])
        cost = sum(electricity_cost(t.profile, run.tariff, cfg["tariff"]["pricing"]) for t in rep.trajectories)
        points.append(ParetoPoint(float(cfg["reward"]["w2"]), cost, gini_index(rep.curtailed_kwh), rep.safe))
    order = sorted(range(len(points)), key=lambda i: (points[i].cost, i))
    return [points[i] for i in order]


def cmd_pareto(args) -> int:
    cfg = _config(args)
    weights = args.weights if args.weights else cfg["pareto"]["weights"]
    solver = args.solver or cfg["pareto"]["solver"]
    if solver == "policy":
        if not args.checkpoints or len(args.checkpoints) < 2:
            raise UsageError("--solver policy needs at least two --checkpoints (one per w2)")
        points = _policy_points(args.checkpoints)
    else:
        if len(weights) < 2:
            raise UsageError("a sweep needs at least two weights")
        points = pareto_sweep(build_problem(cfg), weights, solver)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    path = out / f"pareto_{cfgmod.build_case(cfg).name}.csv"
    write_sweep_csv(points, path)
    cfgmod.write_snapshot(cfg, out)
    print(f"wrote {len(points)} points to {path}")
    return 0


# --------------------------------------------------------------------------- parser


def _common(p, config=True, seed=True, workers=True):
    if config:
        p.add_argument("--config", type=Path, help="YAML run configuration (defaults apply when omitted)")
    if seed:
        p.add_argument("--seed", type=int, help="random seed (fallback: FAIRFEEDER_SEED, then config)")
    if workers:
        p.add_argument("--workers", type=int, default=1, help="parallel workers; 1 is bit-reproducible")


def _case_flags(p):
    p.add_argument("--fairness", choices=["d1", "d2", "d3"], help="fairness definition")
    p.add_argument("--horizon", choices=["instant", "acc"], help="fairness horizon")
    p.add_argument("--data", help="dataset CSV (overrides data.path)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fairfeeder", description="Fair PV curtailment on a radial feeder.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write a synthetic household dataset CSV")
    p.add_argument("--households", type=int, default=10, help="number of households")
    p.add_argument("--days", type=int, default=60, help="number of days")
    p.add_argument("--out", required=True, help="output CSV path")
    _common(p, config=False, workers=False)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train a SAC curtailment policy")
    _common(p)
    _case_flags(p)
    p.add_argument("--steps", type=int, help="total environment steps (overrides train.total_steps)")
    p.add_argument("--w2", type=float, help="fairness weight in the reward (overrides reward.w2)")
    p.add_argument("--out", required=True, help="output directory for checkpoint.json and curve.csv")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on the test days")
    _common(p, seed=False)
    _case_flags(p)
    p.add_argument("--checkpoint", required=True, help="checkpoint.json from 'train'")
    p.add_argument("--out", required=True, help="output directory for report and matrices")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("oracle", help="solve the model-based curtailment oracle")
    _common(p, seed=False)
    _case_flags(p)
    p.add_argument("--beta", type=float, help="fairness weight")
    p.add_argument("--mode", choices=["exhaustive", "descent"], help="solver")
    p.add_argument("--problem", help="problem YAML (instead of building one from the config)")
    p.add_argument("--day", dest="oracle_day", type=int, help="dataset day index")
    p.add_argument("--start-slot", dest="oracle_start_slot", type=int, help="first half-hour slot")
    p.add_argument("--timesteps", dest="oracle_timesteps", type=int, help="window length in slots")
    p.add_argument("--households", dest="oracle_households", type=int, help="households on the feeder")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_oracle)

    p = sub.add_parser("pareto", help="sweep the fairness weight and record cost vs Gini")
    _common(p, seed=False)
    _case_flags(p)
    p.add_argument("--weights", type=float, nargs="+", help="fairness weights (β for the oracle)")
    p.add_argument("--solver", choices=["exhaustive", "descent", "policy"], help="how each point is obtained")
    p.add_argument("--checkpoints", nargs="+", help="trained checkpoints, one per w2 (solver=policy)")
    p.add_argument("--day", dest="oracle_day", type=int, help="dataset day index")
    p.add_argument("--start-slot", dest="oracle_start_slot", type=int, help="first half-hour slot")
    p.add_argument("--timesteps", dest="oracle_timesteps", type=int, help="window length in slots")
    p.add_argument("--households", dest="oracle_households", type=int, help="households on the feeder")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_pareto)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(levelname)s %(message)s")
    try:
        return args.func(args)
    except (UsageError, *USAGE_ERRORS) as exc:
        print(f"fairfeeder {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - top-level reporting
        log.debug("failure", exc_info=True)
        print(f"fairfeeder {args.command}: failed: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
