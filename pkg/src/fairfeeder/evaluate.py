"""Evaluation of trained policies and oracle schedules on test days.

Reports per-household curtailed/exported energy, cost, voltage-violation
statistics and the Gini index of curtailment, plus household × slot
matrices for a time window and side-by-side comparison tables.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
from concurrent.futures import ProcessPoolExecutor
from copy import deepcopy
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .config import Run, build_run, config_hash
from .data import episode
from .env import CurtailmentEnv, Trajectory, rollout
from .fairness import STEP_HOURS, gini_index
from .feeder import voltage_violation
from .learner import SACAgent, load_checkpoint
from .oracle import OracleProblem, OracleSolution, evaluate_schedule
from .tariff import TariffSchedule, electricity_cost

DEFAULT_WINDOW = (16, 30)  # 08:00-15:00
SAFE_BAND = 0.005


class ConfigMismatch(ValueError):
    """Checkpoint was trained on a different environment configuration."""


class AgentPolicy:
    """Picklable EnvState -> action wrapper around a SAC agent."""

    def __init__(self, agent: SACAgent, deterministic: bool = True):
        self.agent = agent
        self.deterministic = deterministic

    def __call__(self, state):
        return self.agent.act(self.agent.normalizer(state.vector()), self.deterministic)


@dataclass
class EvalReport:
    case: str
    instance: str
    pricing: str
    days: list
    curtailed_kwh: list  # per household, summed over days
    exported_kwh: list  # per household, summed over days
    total_cost: float
    max_violation: float
    mean_violation: float
    max_voltage: float
    gini: float
    mean_step_reward: float = float("nan")
    objective: float = float("nan")
    safe: bool = True
    label: str = "policy"
    trajectories: list = field(default_factory=list, repr=False, compare=False)

    @property
    def total_curtailed_kwh(self) -> float:
        return float(np.sum(self.curtailed_kwh))

    @property
    def total_exported_kwh(self) -> float:
        return float(np.sum(self.exported_kwh))

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("trajectories")
        d["total_curtailed_kwh"] = self.total_curtailed_kwh
        d["total_exported_kwh"] = self.total_exported_kwh
        return d

    def to_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, allow_nan=True))


def _rollout_days(env: CurtailmentEnv, policy, dataset, days) -> list[Trajectory]:
    return [rollout(env, policy, episode(dataset, int(d))) for d in days]


def _rollout_worker(args):
    env, policy, dataset, days = args
    return _rollout_days(env, policy, dataset, days)


def run_days(env: CurtailmentEnv, policy, dataset, days, workers: int = 1) -> list[Trajectory]:
    """Roll ``policy`` over ``days``; results are in ``days`` order for any worker count."""
    days = [int(d) for d in days]
    if workers <= 1 or len(days) < 2:
        return _rollout_days(env, policy, dataset, days)
    chunks = [days[i::workers] for i in range(workers)]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        parts = list(pool.map(_rollout_worker, [(deepcopy(env), policy, dataset, c) for c in chunks]))
    by_day = {}
    for chunk, trajs in zip(chunks, parts):
        by_day.update(zip(chunk, trajs))
    return [by_day[d] for d in days]


def report_from_trajectories(trajectories: list[Trajectory], case: str, tariff: TariffSchedule | None = None,
                             pricing: str = "split", instance: str = "", label: str = "policy",
                             safe_band: float = SAFE_BAND) -> EvalReport:
    if not trajectories:
        raise ValueError("no trajectories to report on")
    tariff = tariff or TariffSchedule()
    curtailed = np.zeros(trajectories[0].actions.shape[1])
    exported = np.zeros_like(curtailed)
    cost = 0.0
    violations, rewards, vmax = [], [], -np.inf
    for tj in trajectories:
        curtailed += np.sum(tj.profile.curtailed_energy(), axis=0)
        exported += np.sum(np.maximum(0.0, tj.net_power) * STEP_HOURS, axis=0)
        cost += electricity_cost(tj.profile, tariff, pricing)
        violations.append(voltage_violation(tj.voltages).ravel())
        rewards.append(tj.rewards)
        vmax = max(vmax, float(np.max(tj.voltages)))
    viol = np.concatenate(violations)
    return EvalReport(
        case=case,
        instance=instance,
        pricing=pricing,
        days=[int(tj.day_index) for tj in trajectories],
        curtailed_kwh=curtailed.tolist(),
        exported_kwh=exported.tolist(),
        total_cost=float(cost),
        max_violation=float(viol.max()),
        mean_violation=float(viol.mean()),
        max_voltage=vmax,
        gini=gini_index(curtailed),
        mean_step_reward=float(np.mean(np.concatenate(rewards))),
        safe=bool(viol.max() <= safe_band),
        label=label,
        trajectories=trajectories,
    )


def evaluate_policy(policy, run: Run, days=None, checkpoint_hash: str | None = None, workers: int = 1,
                    label: str = "policy") -> EvalReport:
    """Roll a policy over test days (default: the run's test split).

    Raises:
        ConfigMismatch: if ``checkpoint_hash`` is given and differs from the
            run's config hash.
    """
    if checkpoint_hash is not None and checkpoint_hash != run.hash:
        raise ConfigMismatch(
            f"checkpoint config hash {checkpoint_hash[:12]} does not match evaluation config {run.hash[:12]};"
            " data, feeder, tariff, fairness and reward sections must be identical"
        )
    days = run.test_days if days is None else days
    if len(days) == 0:
        raise ValueError("no test days to evaluate")
    trajs = run_days(run.env, policy, run.dataset, days, workers)
    return report_from_trajectories(trajs, run.env.case.name, run.tariff, run.config["tariff"]["pricing"],
                                    instance=run.hash, label=label,
                                    safe_band=float(run.config["eval"]["safe_band"]))


def evaluate_checkpoint(path, cfg: dict, workers: int = 1) -> EvalReport:
    """Load a checkpoint and evaluate it under ``cfg`` after checking the config hash."""
    agent, doc = load_checkpoint(path)
    run = build_run(cfg)
    if doc["config_hash"] != config_hash(cfg):
        raise ConfigMismatch(
            f"{path}: trained with config hash {doc['config_hash'][:12]}, evaluation config is"
            f" {config_hash(cfg)[:12]}"
        )
    return evaluate_policy(AgentPolicy(agent, True), run, checkpoint_hash=doc["config_hash"], workers=workers)


def _window_slots(window) -> slice:
    lo, hi = int(window[0]), int(window[1])
    if not 0 <= lo < hi:
        raise ValueError(f"empty or invalid slot window {window}")
    return slice(lo, hi)


def curtailment_matrix(trajectories: list[Trajectory], window=DEFAULT_WINDOW) -> np.ndarray:
    """Mean over days of α·gen·Δ, shape (households, slots in window), kWh."""
    if not trajectories:
        raise ValueError("no trajectories")
    sl = _window_slots(window)
    mats = [tj.profile.curtailed_energy()[sl].T for tj in trajectories]
    if mats[0].shape[1] == 0:
        raise ValueError(f"window {window} selects no slots")
    return np.mean(mats, axis=0)


def export_matrix(trajectories: list[Trajectory], window=DEFAULT_WINDOW) -> np.ndarray:
    """Mean over days of max(0, net export)·Δ, shape (households, slots in window), kWh."""
    if not trajectories:
        raise ValueError("no trajectories")
    sl = _window_slots(window)
    mats = [(np.maximum(0.0, tj.net_power) * STEP_HOURS)[sl].T for tj in trajectories]
    if mats[0].shape[1] == 0:
        raise ValueError(f"window {window} selects no slots")
    return np.mean(mats, axis=0)


def write_matrix_csv(matrix: np.ndarray, path, window=DEFAULT_WINDOW, household_ids=None) -> None:
    lo = int(window[0])
    ids = household_ids or [str(i) for i in range(matrix.shape[0])]
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["household"] + [f"slot_{lo + j}" for j in range(matrix.shape[1])])
        for hid, row in zip(ids, matrix):
            w.writerow([hid] + [repr(float(x)) for x in row])


def read_matrix_csv(path) -> np.ndarray:
    with Path(path).open(newline="") as fh:
        rows = list(csv.reader(fh))[1:]
    return np.array([[float(x) for x in r[1:]] for r in rows])


def write_report(report: EvalReport, out_dir, window=DEFAULT_WINDOW, household_ids=None) -> dict:
    """Report JSON plus ``curtail_{case}.csv`` and ``export_{case}.csv``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"report": out / f"report_{report.case}.json",
             "curtail": out / f"curtail_{report.case}.csv",
             "export": out / f"export_{report.case}.csv"}
    report.to_json(paths["report"])
    if report.trajectories:
        write_matrix_csv(curtailment_matrix(report.trajectories, window), paths["curtail"], window, household_ids)
        write_matrix_csv(export_matrix(report.trajectories, window), paths["export"], window, household_ids)
    return paths


# --------------------------------------------------------------------------- oracle instances


def problem_instance_key(problem: OracleProblem) -> str:
    h = hashlib.sha256()
    for arr in (problem.generation, problem.load, problem.network.branch_resistance,
                problem.network.branch_reactance):
        h.update(np.ascontiguousarray(arr, dtype=float).tobytes())
    h.update(f"{problem.start_slot}|{problem.boundary_mode}|{problem.beta}".encode())
    return h.hexdigest()


def schedule_report(problem: OracleProblem, alpha, label: str = "policy") -> EvalReport:
    """Report for any (T, H) schedule on an oracle instance, re-simulated by the oracle model."""
    ev = evaluate_schedule(problem, alpha)
    profile = problem.profile(alpha)
    curtailed = np.sum(profile.curtailed_energy(), axis=0)
    exported = np.sum(np.maximum(0.0, profile.net_power()) * STEP_HOURS, axis=0)
    viol = voltage_violation(ev.voltages)
    return EvalReport(
        case=problem.fairness.name,
        instance=problem_instance_key(problem),
        pricing=problem.pricing,
        days=[],
        curtailed_kwh=curtailed.tolist(),
        exported_kwh=exported.tolist(),
        total_cost=ev.cost,
        max_violation=float(viol.max()),
        mean_violation=float(viol.mean()),
        max_voltage=float(ev.voltages.max()),
        gini=gini_index(curtailed),
        objective=ev.objective,
        safe=ev.feasible,
        label=label,
    )


def oracle_report(problem: OracleProblem, solution: OracleSolution) -> EvalReport:
    return schedule_report(problem, solution.alpha.alpha, label="oracle")


@dataclass
class ComparisonTable:
    rows: list  # (metric, policy, oracle, gap)

    def gap(self, metric: str) -> float:
        for m, _, _, g in self.rows:
            if m == metric:
                return g
        raise KeyError(metric)

    def to_csv(self, path) -> None:
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["metric", "policy", "oracle", "gap"])
            for m, a, b, g in self.rows:
                w.writerow([m, repr(a), repr(b), repr(g)])

    @classmethod
    def from_csv(cls, path) -> "ComparisonTable":
        with Path(path).open(newline="") as fh:
            rows = [(r["metric"], float(r["policy"]), float(r["oracle"]), float(r["gap"]))
                    for r in csv.DictReader(fh)]
        return cls(rows)


COMPARED_METRICS = ("total_cost", "gini", "max_violation", "mean_violation", "objective")


def compare(policy: EvalReport, oracle: EvalReport) -> ComparisonTable:
    """Side-by-side metrics; ``gap = policy - oracle``.

    Raises:
        ValueError: if the reports come from different instances, fairness
            cases or pricing modes.
    """
    for attr in ("instance", "case", "pricing"):
        if getattr(policy, attr) != getattr(oracle, attr):
            raise ValueError(f"instance mismatch: {attr} {getattr(policy, attr)!r} vs {getattr(oracle, attr)!r}")
    rows = []
    for m in COMPARED_METRICS:
        a, b = float(getattr(policy, m)), float(getattr(oracle, m))
        gap = a - b if not (math.isnan(a) or math.isnan(b)) else float("nan")
        rows.append((m, a, b, gap))
    return ComparisonTable(rows)
