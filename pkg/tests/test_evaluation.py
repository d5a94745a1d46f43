import json
import math

import numpy as np
import pytest

from quadsec import env as qenv
from quadsec import evaluation as ev
from quadsec.evaluation import ExperimentSuite

DT = 0.02


def climb(obs):
    # Proportional altitude hold, enough to make the curves move.
    return np.array([1.75 + 1.5 * (obs[17] - obs[11]), 0.0, 0.0, 0.0])


def push_down(obs):
    return np.array([-10.0, 0.0, 0.0, 0.0])


def short_suite(**kw):
    return ExperimentSuite(**{"repeats": 1, "horizon_s": 3.0, "attack_start_s": 1.0, **kw})


class TestMetrics:
    def test_distance_of_known_offsets(self):
        traj = np.zeros((2, len(qenv.TRAJECTORY_HEADER)))
        traj[0, 1:4] = (1, 2, 2)
        traj[1, 1:4] = (0, 0, 1)
        assert ev.distance_series(traj, (0, 0, 0)).tolist() == [3.0, 1.0]

    def test_settling_examples(self):
        assert ev.settling_time(np.array([0.5, 0.2, 0.05, 0.04]), DT) == pytest.approx(2 * DT)
        assert ev.settling_time(np.array([0.01, 0.02]), DT) == 0.0
        assert ev.settling_time(np.array([0.05, 0.2, 0.05]), DT) == pytest.approx(2 * DT)
        assert ev.settling_time(np.array([0.05, 0.2]), DT) is None

    def test_oscillation_of_a_sine_tail(self):
        t = np.arange(501) * DT
        dist = 0.3 + 0.02 * np.sin(2 * math.pi * t / 0.4)  # peaks land on samples
        dist[:100] = 5.0  # transient outside the trailing window
        assert ev.oscillation(dist, DT) == pytest.approx(0.02, rel=1e-9)

    def test_mean_curve_ignores_ended_runs(self):
        curve = ev.mean_curve([np.array([1.0, 2.0, 3.0]), np.array([3.0])])
        assert curve.tolist() == [2.0, 2.0, 3.0]


@pytest.fixture(scope="module")
def flown(tmp_path_factory):
    out = tmp_path_factory.mktemp("suite")
    layers = {"nominal": climb, "attacker": push_down}
    result = ev.run_suite(short_suite(repeats=2), layers, seed=7, output_dir=out)
    return result, out


class TestSuite:
    def test_layout(self, flown):
        result, out = flown
        assert set(result.summary) == {"nominal", "attack", "random"}
        assert set(result.skipped) == {"defense", "defense_random"}
        assert json.loads((out / "summary.json").read_text()) == result.summary
        folders = sorted((out / "trajectories").iterdir())
        assert len(folders) == 3 * 6
        assert all(len(list(f.glob("run_*.csv"))) == 2 for f in folders)
        assert len(list(out.glob("*.svg"))) == 3 * 6

    def test_summary_reaggregates_from_csv(self, flown):
        result, out = flown
        for scenario, per_hover in result.summary.items():
            for point in ev.HOVER_POINTS:
                key = ev.hover_key(point)
                folder = out / "trajectories" / f"{scenario}_{key.replace(',', '_')}"
                finals = []
                for path in sorted(folder.glob("run_*.csv")):
                    traj = qenv.read_trajectory_csv(path)
                    finals.append(float(np.linalg.norm(traj[-1, 1:4] - np.asarray(point))))
                assert abs(np.mean(finals) - per_hover[key]["mean_final_dist_m"]) < 1e-12

    def test_motor_cut_crashes_and_nominal_does_not(self, flown):
        result, _ = flown
        assert ev.overall(result.summary["attack"])["crash_rate"] == 1.0
        assert ev.overall(result.summary["nominal"])["crash_rate"] == 0.0
        times = [v["mean_time_to_crash_s"] for v in result.summary["attack"].values()]
        assert all(t > 1.0 for t in times)

    def test_spawn_equal_to_hover_starts_at_zero(self, flown):
        result, _ = flown
        for traj in result.trajectories["nominal", ev.hover_key((0.0, 0.0, 0.5))]:
            dist = ev.distance_series(traj, (0.0, 0.0, 0.5))
            assert dist[0] == 0.0 and dist.max() < 1e-12

    def test_continuity_bound(self, flown):
        result, _ = flown
        for runs in result.trajectories.values():
            for traj in runs:
                steps = np.linalg.norm(np.diff(traj[:, 1:4], axis=0), axis=1)
                assert steps.max() <= 1.75 * DT + 1e-12

    def test_repeat_is_deterministic(self, flown):
        result, _ = flown
        again = ev.run_suite(short_suite(repeats=2), {"nominal": climb, "attacker": push_down}, seed=7)
        assert again.summary_json() == result.summary_json()

    def test_needs_nominal(self):
        with pytest.raises(ValueError):
            ev.run_suite(short_suite(), {})


class TestCompare:
    def row(self, crash, dist, n=20):
        return {"crash_rate": crash, "mean_final_dist_m": dist, "n_runs": n}

    def test_example_report(self):
        summary = {
            "attack": {"a": self.row(1.0, 2.0), "b": self.row(0.5, 1.0)},
            "random": {"a": self.row(0.0, 0.5), "b": self.row(0.5, 1.5)},
            "defense": {"a": self.row(0.1, 0.2), "b": self.row(0.0, 0.1)},
        }
        report = ev.compare_scenarios(summary)
        opt = report["optimal_vs_random"]
        assert opt["a"]["delta_crash_rate"] == 1.0 and opt["a"]["crash_and_dist_gt"]
        assert not opt["b"]["optimal_gt_random"] and not opt["b"]["crash_and_dist_gt"]
        assert opt["overall"]["delta_crash_rate"] == pytest.approx(0.5)
        assert opt["overall"]["delta_final_dist_m"] == pytest.approx(0.5)
        assert all(row["recovered"] for row in report["defense_vs_attack"].values())

    def test_invalid_inputs(self):
        with pytest.raises(ValueError):
            ev.compare_scenarios({"attack": {"a": self.row(0, 0)}})
        with pytest.raises(ValueError):
            ev.compare_scenarios({"attack": {"a": self.row(0, 0)}, "random": {"b": self.row(0, 0)}})
