import numpy as np
import pytest

from fairfeeder.config import build_run, load_config
from fairfeeder.env import rollout
from fairfeeder.data import episode
from fairfeeder.evaluate import (
    AgentPolicy,
    ComparisonTable,
    ConfigMismatch,
    compare,
    curtailment_matrix,
    evaluate_checkpoint,
    evaluate_policy,
    export_matrix,
    oracle_report,
    read_matrix_csv,
    report_from_trajectories,
    run_days,
    schedule_report,
    write_matrix_csv,
    write_report,
)
from fairfeeder.fairness import FairnessCase, gini_index
from fairfeeder.learner import SACAgent, TrainConfig, save_checkpoint
from fairfeeder.oracle import random_tiny_problem, solve_exhaustive


@pytest.fixture(scope="module")
def run():
    return build_run(load_config(overrides={"data": {"households": 3, "days": 10}}))


def half(state):
    return np.full(state.gen_now.shape, 0.5)


class TestReport:
    def test_zero_policy_has_no_curtailment(self, run):
        rep = evaluate_policy(lambda s: np.zeros(3), run)
        assert rep.total_curtailed_kwh == 0.0
        assert rep.gini == 0.0
        assert rep.days == [int(d) for d in run.test_days]

    def test_totals_match_trajectories(self, run):
        rep = evaluate_policy(half, run)
        curtailed = sum(np.sum(tj.profile.curtailed_energy(), axis=0) for tj in rep.trajectories)
        np.testing.assert_allclose(rep.curtailed_kwh, curtailed)
        assert rep.gini == pytest.approx(gini_index(curtailed))
        assert rep.max_voltage == max(float(tj.voltages.max()) for tj in rep.trajectories)

    def test_hash_mismatch(self, run):
        with pytest.raises(ConfigMismatch):
            evaluate_policy(half, run, checkpoint_hash="0" * 64)

    def test_no_days(self, run):
        with pytest.raises(ValueError):
            evaluate_policy(half, run, days=[])

    def test_empty_trajectories(self):
        with pytest.raises(ValueError):
            report_from_trajectories([], "d1_instant")

    def test_parallel_matches_serial(self, run):
        days = list(run.train_days[:4])
        serial = run_days(run.env, half, run.dataset, days, workers=1)
        parallel = run_days(run.env, AgentPolicy(SACAgent(run.env.observation_size, 3, TrainConfig(hidden=(4,)),
                                                          np.random.default_rng(0))), run.dataset, days, workers=2)
        assert [t.day_index for t in parallel] == [int(d) for d in days]
        assert len(serial) == len(parallel)

    def test_to_dict_is_plain(self, run):
        d = evaluate_policy(half, run).to_dict()
        assert "trajectories" not in d
        assert d["total_curtailed_kwh"] == pytest.approx(sum(d["curtailed_kwh"]))


class TestMatrices:
    def test_shapes_and_values(self, run):
        trajs = [rollout(run.env, half, episode(run.dataset, d)) for d in (0, 1)]
        m = curtailment_matrix(trajs, (16, 30))
        assert m.shape == (3, 14)
        expected = np.mean([tj.profile.curtailed_energy()[16:30].T for tj in trajs], axis=0)
        np.testing.assert_allclose(m, expected)
        assert np.all(export_matrix(trajs) >= 0)

    def test_empty_window(self, run):
        trajs = [rollout(run.env, half, episode(run.dataset, 0))]
        with pytest.raises(ValueError):
            curtailment_matrix(trajs, (20, 20))

    def test_csv_round_trip(self, tmp_path, rng):
        m = rng.uniform(0, 1, (3, 5))
        write_matrix_csv(m, tmp_path / "m.csv", (10, 15))
        np.testing.assert_array_equal(read_matrix_csv(tmp_path / "m.csv"), m)
        assert (tmp_path / "m.csv").read_text().splitlines()[0].startswith("household,slot_10,slot_11")

    def test_write_report_files(self, run, tmp_path):
        paths = write_report(evaluate_policy(half, run), tmp_path)
        assert all(p.exists() for p in paths.values())


class TestCompare:
    def test_oracle_versus_itself(self, rng):
        p = random_tiny_problem(rng, FairnessCase("d1", "acc"), timesteps=(2, 2))
        sol = solve_exhaustive(p)
        a = oracle_report(p, sol)
        table = compare(schedule_report(p, sol.alpha.alpha), a)
        assert all(g == 0.0 for _, _, _, g in table.rows)

    def test_policy_gap_sign(self, rng):
        p = random_tiny_problem(rng, FairnessCase("d1", "instant"), timesteps=(2, 2))
        sol = solve_exhaustive(p)
        worse = schedule_report(p, np.ones(p.shape))
        assert compare(worse, oracle_report(p, sol)).gap("total_cost") >= 0

    def test_instance_mismatch(self, rng):
        p1 = random_tiny_problem(rng)
        p2 = random_tiny_problem(rng)
        with pytest.raises(ValueError, match="instance"):
            compare(schedule_report(p1, np.zeros(p1.shape)), schedule_report(p2, np.zeros(p2.shape)))

    def test_csv_round_trip(self, rng, tmp_path):
        p = random_tiny_problem(rng)
        table = compare(schedule_report(p, np.zeros(p.shape)), oracle_report(p, solve_exhaustive(p)))
        table.to_csv(tmp_path / "c.csv")
        back = ComparisonTable.from_csv(tmp_path / "c.csv")
        assert back.rows == table.rows


class TestCheckpointEvaluation:
    def test_mismatched_config_rejected(self, tmp_path):
        cfg = load_config(overrides={"data": {"households": 3, "days": 10}})
        r = build_run(cfg)
        agent = SACAgent(r.env.observation_size, 3, TrainConfig(hidden=(4,)), np.random.default_rng(0))
        save_checkpoint(tmp_path / "c.json", agent, cfg, r.hash)
        assert evaluate_checkpoint(tmp_path / "c.json", cfg).days == [int(d) for d in r.test_days]
        other = load_config(overrides={"data": {"households": 3, "days": 10}, "reward": {"w2": 2.0}})
        with pytest.raises(ConfigMismatch):
            evaluate_checkpoint(tmp_path / "c.json", other)
