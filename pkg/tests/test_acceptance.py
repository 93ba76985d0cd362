"""Acceptance checks, one test per criterion.

Each test records a single ``criterion N: PASS|FAIL ...`` line that is
printed in the pytest terminal summary (and to stdout when run with ``-s``).
Criterion 4 trains 30 agents and takes most of half an hour on one core; it
carries the ``slow`` marker so it can be deselected with ``-m "not slow"``.
"""

from __future__ import annotations

import subprocess
import sys
import time
from pathlib import Path

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES
from fairfeeder import config as cfgmod
from fairfeeder.env import CurtailmentEnv, RewardWeights, voltage_penalty
from fairfeeder.evaluate import AgentPolicy, evaluate_policy
from fairfeeder.fairness import (
    CurtailmentProfile,
    FairnessCase,
    f1_accumulative,
    f1_instant,
    f2_accumulative,
    f2_instant,
    f3_accumulative,
    f3_instant,
    gini_index,
)
from fairfeeder.feeder import (
    FeederModel,
    InverterSpec,
    VvcCurve,
    capacity_feasible,
    net_power,
    simulate_timestep,
    vvc_reactive,
)
from fairfeeder.data import episode
from fairfeeder.learner import TrainConfig, random_policy_mean_reward, train
from fairfeeder.oracle import (
    FEASIBILITY_TOL,
    grid_level_gap,
    pareto_front,
    pareto_sweep,
    random_tiny_problem,
    solve_descent,
    solve_exhaustive,
)
from fairfeeder.tariff import TariffSchedule, price_at

TESTS = Path(__file__).parent
CASES = [FairnessCase(d, h) for h in ("instant", "acc") for d in ("d1", "d2", "d3")]


def record(n: int, ok: bool, detail: str) -> None:
    line = f"criterion {n}: {'PASS' if ok else 'FAIL'} ({detail})"
    ACCEPTANCE_LINES[n] = line
    print(line)


def _worked_examples():
    """(label, computed, expected) for every tabulated example."""
    curve = VvcCurve(q_max=1.0)
    spec3 = InverterSpec(s_max=3.0, q_max=3.0)
    rows = [
        ("net_power zero", net_power(0.0, 0.0, 0.0), 0.0),
        ("net_power export", net_power(4.0, 1.0, 0.5), 1.0),
        ("net_power import", net_power(2.0, 3.0, 0.0), -1.0),
        ("vvc 0.93", vvc_reactive(0.93, curve), 1.0),
        ("vvc 0.96", vvc_reactive(0.96, curve), 0.5),
        ("vvc 1.00", vvc_reactive(1.00, curve), 0.0),
        ("vvc 1.08", vvc_reactive(1.08, curve), -0.5),
        ("capacity full output", capacity_feasible(3.0, 0.0, 0.0, spec3), True),
        ("capacity exceeded", capacity_feasible(3.0, 0.0, 0.3, spec3), False),
        ("capacity curtailed", capacity_feasible(3.0, 1.0, 0.3, InverterSpec(0.3, 0.3)), True),
        ("voltage_penalty 1.00", voltage_penalty(1.00), 0.0),
        ("voltage_penalty 1.07", voltage_penalty(1.07), 0.02),
        ("voltage_penalty 0.93", voltage_penalty(0.93), 0.02),
        ("f1_instant zero", f1_instant([4.0, 2.0], [0.0, 0.0]), 0.0),
        ("f1_instant tie", f1_instant([4.0, 2.0], [0.5, 1.0]), 2.0),
        ("f1_instant", f1_instant([4.0, 2.0], [0.25, 0.6]), 1.2),
        ("f1_accumulative", f1_accumulative(CurtailmentProfile([[0.5], [0.5]], [[4.0], [4.0]], [[0.0], [0.0]])),
         2.0),
        ("f2_instant zero", f2_instant([4.0], [2.0], [0.0]), 0.0),
        ("f2_instant", f2_instant([4.0], [2.0], [0.5]), 1.0),
        ("f2_instant no surplus", f2_instant([1.0], [2.0], [0.5], epsilon=1e-3), 500.0),
        ("f2_instant capped", f2_instant([1.0], [2.0], [0.5], epsilon=1e-3, ratio_cap=100.0), 100.0),
        ("f2_accumulative", f2_accumulative(CurtailmentProfile([[0.5], [0.5]], [[4.0], [4.0]], [[2.0], [2.0]])),
         1.0),
        ("f3_instant zero", f3_instant([4.0, 3.0], [1.0, 1.0], [0.0, 0.0]), -3.0),
        ("f3_instant", f3_instant([4.0, 4.0], [1.0, 1.0], [0.5, 0.0]), -1.0),
        ("f3_accumulative zero",
         f3_accumulative(CurtailmentProfile([[0.0, 0.0]], [[4.0, 2.0]], [[1.0, 1.0]])), -1.5),
        ("f3_accumulative one curtailed",
         f3_accumulative(CurtailmentProfile([[0.25], [0.25]], [[4.0], [4.0]], [[2.0], [2.0]])), -1.0),
        ("gini equal", gini_index([2.0, 2.0, 2.0]), 0.0),
        ("gini (1, 0)", gini_index([1.0, 0.0]), 0.5),
        ("gini one-hot of four", gini_index([0.0, 0.0, 0.0, 1.0]), 0.75),
    ]
    return rows


def test_criterion_1_formula_fidelity():
    t0 = time.perf_counter()
    rows = _worked_examples()
    elapsed = time.perf_counter() - t0
    bad = [label for label, got, want in rows
           if (isinstance(want, bool) and got is not want) or abs(float(got) - float(want)) > 1e-9]
    ok = not bad and elapsed < 1.0
    record(1, ok, f"{len(rows) - len(bad)}/{len(rows)} examples within 1e-9 in {elapsed:.3f} s"
           + (f"; failing: {bad}" if bad else ""))
    assert not bad, bad
    assert elapsed < 1.0


def _resimulated_in_band(problem, alpha) -> bool:
    model = FeederModel(problem.network, problem.vvc, vvc_mode="fixed-point",
                        boundary_mode=problem.boundary_mode, reactive_fraction=problem.reactive_fraction)
    for t in range(problem.shape[0]):
        flow, _, _ = simulate_timestep(model, problem.generation[t], problem.load[t], alpha[t])
        v = flow.household_voltage
        if v.min() < 0.95 - FEASIBILITY_TOL or v.max() > 1.05 + FEASIBILITY_TOL:
            return False
    return True


def test_criterion_2_oracle_equivalence():
    t0 = time.perf_counter()
    rng = np.random.default_rng(2024)
    worst, uncertified, n_feasible = -np.inf, 0, 0
    for k in range(20):
        problem = random_tiny_problem(rng, CASES[k % 6], beta=float(rng.choice([0.0, 0.5, 1.0, 5.0, 10.0])))
        exact = solve_exhaustive(problem)
        approx = solve_descent(problem)
        worst = max(worst, (approx.objective - exact.objective) / grid_level_gap(problem))
        for sol in (exact, approx):
            if sol.feasible:
                n_feasible += 1
                uncertified += not _resimulated_in_band(problem, sol.alpha.alpha)
    elapsed = time.perf_counter() - t0
    ok = worst <= 1.0 and uncertified == 0 and elapsed < 120
    record(2, ok, f"worst descent gap {worst:.3f} grid levels, {n_feasible - uncertified}/{n_feasible} feasible"
           f" solutions certified, {elapsed:.1f} s")
    assert worst <= 1.0
    assert uncertified == 0
    assert elapsed < 120


def test_criterion_3_reward_ceiling():
    cfg = cfgmod.load_config()
    run = cfgmod.build_run(cfg)
    assert run.env.H == 10
    ep = episode(run.dataset, int(run.test_days[0]))
    run.env.reset(ep)
    in_band = []
    for _ in range(48):
        out = run.env.step(np.zeros(10))
        if out.voltages.min() >= 0.95 and out.voltages.max() <= 1.05:
            in_band.append(out.reward)
    err = max(abs(r - 10.0) for r in in_band)
    ok = len(in_band) > 0 and err <= 1e-9
    record(3, ok, f"{len(in_band)} in-band zero-curtailment steps, max |reward - 10| = {err:.1e}")
    assert in_band
    assert err <= 1e-9


def test_criterion_5_pareto_direction():
    t0 = time.perf_counter()
    weights = [0.0, 0.5, 1.0, 5.0, 10.0]
    rng = np.random.default_rng(55)
    broken = []
    for case in CASES:
        for i in range(5):
            problem = random_tiny_problem(rng, case)
            front = sorted(pareto_front(pareto_sweep(problem, weights, "exhaustive")), key=lambda p: p.weight)
            for a, b in zip(front, front[1:]):
                if b.cost < a.cost - 1e-9 or b.gini > a.gini + 1e-9:
                    broken.append((case.name, i))
                    break
    elapsed = time.perf_counter() - t0
    n = len(CASES) * 5
    ok = not broken and elapsed < 120
    record(5, ok, f"{n - len(broken)}/{n} tiny-instance sweeps monotone after dominance removal, {elapsed:.1f} s")
    assert not broken, broken
    assert elapsed < 120


def test_criterion_6_property_suites():
    t0 = time.perf_counter()
    proc = subprocess.run([sys.executable, "-m", "pytest", "-q", "-p", "no:cacheprovider",
                           str(TESTS / "test_properties.py")], capture_output=True, text=True)
    elapsed = time.perf_counter() - t0
    summary = proc.stdout.strip().splitlines()[-1] if proc.stdout.strip() else proc.stderr[-200:]
    ok = proc.returncode == 0 and elapsed < 300
    record(6, ok, f"{summary.strip('= ')}, {elapsed:.0f} s")
    assert proc.returncode == 0, proc.stdout[-3000:]
    assert elapsed < 300


def test_criterion_7_tariff_table():
    schedule = TariffSchedule()
    expected = np.array([0.12] * 14 + [0.22] * 14 + [0.52] * 11 + [0.22] * 7 + [0.12] * 2)
    table = np.array([price_at(s, schedule) for s in range(48)])
    partition = schedule.window_membership().sum(axis=0)
    ok = (np.array_equal(table, expected) and schedule.feed_in == 0.1
          and np.all(partition == 1) and price_at(39) == 0.22 and price_at(28) == 0.52)
    record(7, bool(ok), "48-slot table, feed-in 0.1 and half-open window partition"
           + (" match" if ok else " differ"))
    assert np.array_equal(table, expected)
    assert schedule.feed_in == 0.1
    assert np.all(partition == 1)


@pytest.mark.slow
def test_criterion_4_learning_signal():
    t0 = time.perf_counter()
    seeds = range(5)
    learned = {c.name: 0 for c in CASES}
    vmax = []
    curtailment = {}
    for seed in seeds:
        for case in CASES:
            cfg = cfgmod.load_config(None, {"fairness": {"definition": case.definition.value,
                                                         "horizon": case.horizon.value}})
            run = cfgmod.build_run(cfg)
            result = train(run.env, run.dataset, run.train_days, TrainConfig(), seed=seed)
            curve = np.asarray(result.curve)
            final = curve[-max(1, len(curve) // 4):].mean()
            baseline = random_policy_mean_reward(run.env, run.dataset, run.train_days, seed=seed)
            learned[case.name] += bool(final > baseline)
            report = evaluate_policy(AgentPolicy(result.agent), run)
            curtailment[seed, case.name] = report.total_curtailed_kwh / len(report.days)
            if case.name == "d1_instant":
                vmax.append(report.max_voltage)
    ordered = 0
    for seed in seeds:
        ordered += all(curtailment[seed, f"d1_{h}"] <= curtailment[seed, f"d2_{h}"] <= curtailment[seed, f"d3_{h}"]
                       for h in ("instant", "acc"))
    elapsed = time.perf_counter() - t0
    signal_ok = learned["d1_instant"] >= 4
    volt_ok = max(vmax) <= 1.055
    order_ok = ordered >= 3
    ok = signal_ok and volt_ok and order_ok and elapsed < 1800
    means = {c.name: np.mean([curtailment[s, c.name] for s in seeds]) for c in CASES}
    record(4, ok, f"learning signal {learned} of 5 seeds; d1-instant test vmax {max(vmax):.4f};"
           f" ordering d1<=d2<=d3 in {ordered}/5 seeds; mean kWh/day "
           + ", ".join(f"{k} {v:.1f}" for k, v in means.items()) + f"; {elapsed / 60:.1f} min")
    assert signal_ok
    assert volt_ok
    assert order_ok
    assert elapsed < 1800
