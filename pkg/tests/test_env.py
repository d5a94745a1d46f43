import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from quadsec import dynamics as dyn
from quadsec import env as qenv
from quadsec.dynamics import QuadrotorState
from quadsec.env import EnvConfig, QuadrotorEnv, RewardWeights

W = RewardWeights()
hover_const = lambda obs: np.array([1.75, 0.0, 0.0, 0.0])
vec3 = st.lists(st.floats(-2, 2), min_size=3, max_size=3)


class TestObservation:
    def test_golden_layout(self):
        state = QuadrotorState((10, 11, 12), (4, 5, 6), (7, 8, 9), (1, 2, 3))
        obs = qenv.build_observation(state, (13, 14, 15), (16, 17, 18))
        assert obs.tolist() == list(range(1, 19))
        assert len(qenv.OBS_FIELDS) == qenv.OBS_DIM == 18

    def test_csv_round_trip_keeps_order(self, tmp_path):
        obs = np.arange(18.0) / 7
        path = tmp_path / "obs.csv"
        np.savetxt(path, obs[None], delimiter=",", header=",".join(qenv.OBS_FIELDS), comments="", fmt="%.17g")
        assert path.read_text().splitlines()[0].split(",")[9:12] == ["x", "y", "z"]
        assert np.array_equal(np.loadtxt(path, delimiter=",", skiprows=1), obs)


class TestCompose:
    def test_nominal_only(self):
        applied, parts, clipped = qenv.compose_commands([1.0, 0.2, 0.0, -0.1])
        assert applied == (1.0, 0.2, 0.0, -0.1) and not clipped
        assert not parts["a"].any() and not parts["d"].any()

    def test_motor_cut_attack(self):
        applied, _, _ = qenv.compose_commands([1.75, 0, 0, 0], [-1.75, 0, 0, 0])
        assert applied.v == 0.0

    def test_saturation(self):
        applied, _, clipped = qenv.compose_commands([2, 0.5, 0, 0], [2, 0.9, 0, 0])
        assert applied == (3.5, math.pi / 3, 0.0, 0.0) and clipped

    @given(vec3, vec3, vec3)
    def test_linear_before_clamp(self, a, b, c):
        ub, ua, ud = (np.array([0.5, *x]) for x in (a, b, c))
        _, parts, _ = qenv.compose_commands(ub, ua, ud)
        pre = parts["b"] + parts["a"] + parts["d"]
        assert np.array_equal(pre, (ub + ua) + ud)
        expected, _ = dyn.clamp_command(pre)
        assert qenv.compose_commands(ub, ua, ud)[0] == expected

    def test_nonfinite_layer_rejected(self):
        with pytest.raises(dyn.InvalidInput):
            qenv.compose_commands([1, 0, 0, 0], [math.nan, 0, 0, 0])


class TestReward:
    def test_nominal_at_hover_is_bonus(self):
        s = QuadrotorState.at((0.2, 0.3, 1.0), (0, 0, 0.9))
        assert qenv.reward("nominal", s, (0.2, 0.3, 1.0), np.zeros(4), W) == 1.5

    def test_yaw_is_free(self):
        for psi in (0.0, 0.4, -1.0):
            s = QuadrotorState.at((1, 0, 0), (0, 0, psi))
            assert qenv.reward("nominal", s, (0, 0, 0), np.zeros(4), W) == pytest.approx(0.5)

    def test_attacker_formula(self):
        s = QuadrotorState.at((1, 1, 1))
        assert qenv.reward("attacker", s, (0, 0, 0), np.zeros(4), W) == 3.0

    def test_action_costs(self):
        s = QuadrotorState.at((0, 0, 1))
        u = np.array([1.0, 0.5, -0.5, 0.2])
        cost = 0.01 * 1 + 0.05 * (0.25 + 0.25 + 0.04)
        assert qenv.reward("attacker", s, (0, 0, 1), u, W) == pytest.approx(-cost)
        assert qenv.reward("defender", s, (0, 0, 1), u, W) == pytest.approx(-cost)

    @given(vec3, vec3, st.lists(st.floats(-3, 3), min_size=4, max_size=4))
    def test_attacker_defender_symmetry_without_cost(self, pos, hover, u):
        w = RewardWeights(R=(1e-300,) * 4)
        s = QuadrotorState.at(pos)
        a = qenv.reward("attacker", s, hover, np.zeros(4), w)
        d = qenv.reward("defender", s, hover, np.zeros(4), w)
        assert a == -d

    def test_formula_symmetry_with_costs(self):
        s = QuadrotorState.at((0.3, -0.4, 1.2))
        u = np.array([0.2, 0.1, -0.3, 0.0])
        a = qenv.reward("attacker", s, (0, 0, 1), u, W)
        d = qenv.reward("defender", s, (0, 0, 1), u, W)
        err = qenv.position_cost(s.position, (0, 0, 1), W.Q)
        cost = float(np.sum(np.array(W.R) * u * u))
        assert a == pytest.approx(err - cost) and d == pytest.approx(-err - cost)

    def test_maximum_only_at_hover_and_level(self):
        grid = np.linspace(-0.5, 0.5, 5)
        best = []
        for dx in grid:
            for phi in grid:
                for psi in grid:
                    s = QuadrotorState.at((dx, 0, 1), (phi, 0, psi))
                    if qenv.reward("nominal", s, (0, 0, 1), np.zeros(4), W) == 1.5:
                        best.append((dx, phi))
        assert set(best) == {(0.0, 0.0)}


class TestReset:
    def test_seeded_pairs(self):
        a, b = QuadrotorEnv(EnvConfig(seed=3)), QuadrotorEnv(EnvConfig(seed=3))
        for _ in range(5):
            a.reset(), b.reset()
            assert np.array_equal(a.hover, b.hover) and a.state == b.state

    def test_uniform_hover_statistics(self):
        env = QuadrotorEnv(EnvConfig(seed=0))
        points = []
        for _ in range(10_000):
            env.reset()
            points.append(env.hover)
        mean = np.mean(points, axis=0)
        np.testing.assert_allclose(mean, [0, 0, 1], atol=0.05)
        assert np.min(points, axis=0)[2] >= 0 and np.max(points, axis=0)[2] <= 2

    def test_override(self):
        env = QuadrotorEnv()
        obs = env.reset(spawn=(0, 0, 0.5), hover=(0.85, 0.90, 1.7))
        assert env.state.position.tolist() == [0, 0, 0.5]
        assert env.hover.tolist() == [0.85, 0.90, 1.7]
        assert obs[15:].tolist() == [0.85, 0.90, 1.7]
        assert not obs[:9].any() and not obs[12:15].any()


class TestStep:
    def test_done_exactly_at_horizon(self):
        env = QuadrotorEnv(EnvConfig(seed=0))
        env.reset(spawn=(0, 0, 1), hover=(0, 0, 1))
        steps, done = 0, False
        while not done:
            _, r, done, info = env.step([1.75, 0, 0, 0])
            steps += 1
            assert r == 1.5
        assert steps == 500 and info["truncated"] and not info["terminal"]

    def test_attack_waits_for_start(self):
        cfg = EnvConfig(role="attacker", attack_start_s=2.0, seed=0)
        env = QuadrotorEnv(cfg, nominal=hover_const, record=True)
        env.reset(spawn=(0, 0, 1), hover=(0, 0, 1))
        for k in range(100):
            _, _, _, info = env.step([-1.75, 0.3, 0, 0])
            assert not info["attack_applied"]
            assert info["applied"] == (1.75, 0.0, 0.0, 0.0)
            assert info["commands"]["a"].tolist() == [-1.75, 0.3, 0, 0]
        _, _, _, info = env.step([-1.75, 0.3, 0, 0])
        assert info["attack_applied"] and info["applied"].v == 0.0

    def test_ground_crash_terminates(self):
        env = QuadrotorEnv(EnvConfig(seed=0))
        env.reset(spawn=(0, 0, 0.01), hover=(0, 0, 1))
        _, _, done, info = env.step([0.0, 0, 0, 0])
        assert done and info["terminal"] and info["crash_cause"] == "ground"
        with pytest.raises(qenv.EpisodeFinished):
            env.step([1.75, 0, 0, 0])

    def test_crash_tail_folds_remaining_episode(self):
        cfg = EnvConfig(seed=0, crash_tail_gamma=0.9)
        env = QuadrotorEnv(cfg)
        env.reset(spawn=(0, 0, 0.01), hover=(0, 0, 1))
        _, r, _, _ = env.step([0.0, 0, 0, 0])
        step_r = qenv.reward("nominal", env.state, env.hover, np.zeros(4), W)
        resting = step_r - 1.5
        remaining = 499
        assert r == pytest.approx(step_r + resting * 0.9 * (1 - 0.9**remaining) / 0.1)
        no_tail = QuadrotorEnv(EnvConfig(seed=0, crash_tail_gamma=None))
        no_tail.reset(spawn=(0, 0, 0.01), hover=(0, 0, 1))
        assert no_tail.step([0.0, 0, 0, 0])[1] == pytest.approx(step_r)

    def test_angle_clamp_does_not_terminate(self):
        env = QuadrotorEnv(EnvConfig(seed=0))
        env.reset(spawn=(0, 0, 1.5), hover=(0, 0, 1.5))
        for _ in range(60):
            _, _, done, info = env.step([1.75, 2.0, 0, 0])
        assert not done and info["angle_clamped"][0]

    def test_previous_rate_slots_hold_own_command(self):
        env = QuadrotorEnv(EnvConfig(seed=0))
        env.reset(spawn=(0, 0, 1), hover=(0, 0, 1))
        obs, *_ = env.step([1.75, 0.2, 5.0, -0.1])
        assert obs[12:15].tolist() == [0.2, math.pi / 3, -0.1]

    def test_role_wiring_errors(self):
        with pytest.raises(ValueError):
            QuadrotorEnv(EnvConfig(role="attacker"))
        with pytest.raises(ValueError):
            QuadrotorEnv(EnvConfig(role="defender"), nominal=hover_const)
        with pytest.raises(ValueError):
            EnvConfig(attack_start_s=10.0)

    def test_defender_collection_sums_three_layers(self):
        cfg = EnvConfig(role="defender", seed=0)
        attack = lambda obs: np.array([0.5, 0.1, 0.0, 0.0])
        env = QuadrotorEnv(cfg, nominal=hover_const, attacker=attack)
        env.reset(spawn=(0, 0, 1), hover=(0, 0, 1))
        _, _, _, info = env.step([-0.25, -0.05, 0.0, 0.0])
        assert info["applied"] == pytest.approx((2.0, 0.05, 0.0, 0.0))

    def test_episode_determinism_and_trajectory(self, tmp_path):
        def run():
            env = QuadrotorEnv(EnvConfig(seed=4), record=True)
            env.reset()
            rng = np.random.default_rng(1)
            done = False
            while not done:
                _, _, done, _ = env.step(rng.uniform(-1, 3, 4))
            return env.outcome()

        a, b = run(), run()
        assert a.steps == b.steps and a.total_reward == b.total_reward
        assert np.array_equal(a.trajectory, b.trajectory)
        assert a.trajectory.shape == (a.steps + 1, len(qenv.TRAJECTORY_HEADER))
        np.testing.assert_allclose(a.trajectory[-1, -1], a.final_distance)
        path = tmp_path / "traj.csv"
        qenv.write_trajectory_csv(path, a.trajectory)
        assert path.read_text().splitlines()[0] == ",".join(qenv.TRAJECTORY_HEADER)
        assert np.array_equal(qenv.read_trajectory_csv(path), a.trajectory)


class TestRandomAttack:
    def test_statistics_and_bounds(self):
        rng = np.random.default_rng(0)
        draws = np.array([qenv.random_attack(rng) for _ in range(100_000)])
        assert abs(draws[:, 0].mean() - 1.75) < 0.02
        assert draws[:, 0].min() >= 0 and draws[:, 0].max() <= 3.5
        assert np.abs(draws[:, 1:]).max() <= math.pi / 3
        assert not any(dyn.clamp_command(d)[1] for d in draws[:1000])

    def test_seeded(self):
        a = [qenv.random_attack(np.random.default_rng(2)) for _ in range(2)]
        assert np.array_equal(a[0], a[1])
