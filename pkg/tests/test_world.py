"""World simulation: kinematics, proximity graphs, episode resets."""

import math

import numpy as np
import pytest

from conftest import make_state

from flockrl.world import (
    ControlInput, ScenarioConfig, VehiclePose,
    build_proximity_sets, reset_episode, step_vehicle, step_world,
    trajectory_rows, wrap_angle,
)


class TestWrapAngle:
    def test_interval(self):
        for theta in np.linspace(-25.0, 25.0, 1001):
            w = wrap_angle(theta)
            assert -math.pi < w <= math.pi
            # same angle modulo 2*pi
            assert math.isclose(math.sin(w), math.sin(theta), abs_tol=1e-12)
            assert math.isclose(math.cos(w), math.cos(theta), abs_tol=1e-12)

    def test_boundaries(self):
        assert wrap_angle(math.pi) == pytest.approx(math.pi)
        assert wrap_angle(-math.pi) == pytest.approx(math.pi)
        assert wrap_angle(3 * math.pi) == pytest.approx(math.pi)


class TestStepVehicle:
    def test_straight_line(self):
        pose = step_vehicle(VehiclePose(0, 0, 0), ControlInput(0.15, 0), 0.1)
        assert pose.x == pytest.approx(0.015, abs=1e-15)
        assert pose.y == pytest.approx(0.0, abs=1e-15)
        assert pose.heading == 0.0

    def test_axis_aligned(self):
        pose = step_vehicle(VehiclePose(0, 0, math.pi / 2), ControlInput(0.1, 0), 0.1)
        assert pose.x == pytest.approx(0.0, abs=1e-15)
        assert pose.y == pytest.approx(0.01, abs=1e-15)
        assert pose.heading == pytest.approx(math.pi / 2)

    def test_scalar_oracle(self):
        # direct evaluation of the update equations
        pose = step_vehicle(VehiclePose(1, 1, 0.3), ControlInput(0.12, 0.5), 0.1)
        assert pose.x == pytest.approx(1 + 0.012 * math.cos(0.3), abs=1e-12)
        assert pose.y == pytest.approx(1 + 0.012 * math.sin(0.3), abs=1e-12)
        assert pose.heading == pytest.approx(0.35, abs=1e-12)

    def test_translation_uses_pre_update_heading(self):
        # with a large turn rate the displacement must still follow the
        # old heading
        pose = step_vehicle(VehiclePose(0, 0, 0), ControlInput(0.1, math.pi), 1.0)
        assert pose.x == pytest.approx(0.1)
        assert pose.y == pytest.approx(0.0, abs=1e-15)

    def test_nonfinite_rejected(self):
        with pytest.raises(ValueError):
            step_vehicle(VehiclePose(math.nan, 0, 0), ControlInput(0.1, 0), 0.1)
        with pytest.raises(ValueError):
            step_vehicle(VehiclePose(0, 0, 0), ControlInput(math.inf, 0), 0.1)

    def test_heading_stays_wrapped(self, rng):
        pose = VehiclePose(0, 0, 3.0)
        for _ in range(200):
            u = ControlInput(rng.uniform(0, 0.15), rng.uniform(-math.pi, math.pi))
            pose = step_vehicle(pose, u, 0.1)
            assert -math.pi < pose.heading <= math.pi


class TestProximitySets:
    def test_exact_threshold_is_not_edge(self):
        cfg = ScenarioConfig()
        st = make_state([(0, 0, 0), (cfg.r_n, 0, 0)])
        sets = build_proximity_sets(st, cfg)
        assert sets.neighbor_sets == ((), ())

    def test_below_threshold_mutual(self):
        cfg = ScenarioConfig()
        st = make_state([(0, 0, 0), (0.10, 0, 0)])
        sets = build_proximity_sets(st, cfg)
        assert sets.neighbor_sets == ((1,), (0,))

    def test_obstacle_threshold_strict(self):
        cfg = ScenarioConfig()
        st = make_state([(0, 0, 0)], obstacles=[(cfg.r_o, 0.0)])
        assert build_proximity_sets(st, cfg).obstacle_sets == ((),)
        st = make_state([(0, 0, 0)], obstacles=[(cfg.r_o - 1e-9, 0.0)])
        assert build_proximity_sets(st, cfg).obstacle_sets == ((0,),)

    def test_brute_force_oracle(self, rng):
        cfg = ScenarioConfig(n_vehicles=5, n_obstacles=3, r_n=0.8, r_o=0.9,
                             r_n_prime=0.1, r_o_prime=0.15)
        for _ in range(20):
            pts = rng.uniform(-1, 1, (5, 2))
            obs = rng.uniform(-1, 1, (3, 2))
            st = make_state([(p[0], p[1], 0.0) for p in pts], obstacles=obs)
            sets = build_proximity_sets(st, cfg)
            for i in range(5):
                expected = tuple(
                    j for j in range(5)
                    if j != i and math.dist(pts[i], pts[j]) < cfg.r_n)
                assert sets.neighbor_sets[i] == expected
                expected_o = tuple(
                    o for o in range(3)
                    if math.dist(pts[i], obs[o]) < cfg.r_o)
                assert sets.obstacle_sets[i] == expected_o

    def test_symmetry_and_irreflexivity(self, rng):
        cfg = ScenarioConfig(n_vehicles=6, r_n=0.7)
        for _ in range(30):
            pts = rng.uniform(-1, 1, (6, 2))
            st = make_state([(p[0], p[1], 0.0) for p in pts])
            sets = build_proximity_sets(st, cfg)
            for i in range(6):
                assert i not in sets.neighbor_sets[i]
                for j in sets.neighbor_sets[i]:
                    assert i in sets.neighbor_sets[j]


class TestStepWorld:
    def test_waypoint_moves_toward_origin(self, rng):
        cfg = ScenarioConfig(n_vehicles=1, n_obstacles=0)
        st = make_state([(0, 0, 0)], waypoint=(1.0, 0.0))
        st2 = step_world(st, [ControlInput(0, 0)], cfg, rng)
        assert st2.waypoint == pytest.approx([0.99, 0.0], abs=1e-15)

    def test_waypoint_holds_at_origin(self, rng):
        cfg = ScenarioConfig(n_vehicles=1, n_obstacles=0)
        st = make_state([(0, 0, 0)], waypoint=(0.0, 0.0))
        st2 = step_world(st, [ControlInput(0, 0)], cfg, rng)
        assert st2.waypoint == pytest.approx([0.0, 0.0], abs=0.0)

    def test_waypoint_does_not_overshoot(self, rng):
        cfg = ScenarioConfig(n_vehicles=1, n_obstacles=0)
        st = make_state([(0, 0, 0)], waypoint=(0.005, 0.0))
        st2 = step_world(st, [ControlInput(0, 0)], cfg, rng)
        assert st2.waypoint == pytest.approx([0.0, 0.0], abs=1e-15)

    def test_zero_actions_only_waypoint_moves(self, rng):
        cfg = ScenarioConfig(n_vehicles=2, n_obstacles=0)
        st = make_state([(0.3, -0.2, 1.0), (-0.5, 0.1, -2.0)],
                        waypoint=(0.5, 0.5))
        st2 = step_world(st, [ControlInput(0, 0)] * 2, cfg, rng)
        assert st2.vehicles == st.vehicles
        assert not np.array_equal(st2.waypoint, st.waypoint)
        assert st2.step == st.step + 1

    def test_action_count_mismatch(self, rng):
        cfg = ScenarioConfig(n_vehicles=2, n_obstacles=0)
        st = make_state([(0, 0, 0), (1, 1, 0)])
        with pytest.raises(ValueError):
            step_world(st, [ControlInput(0, 0)], cfg, rng)

    def test_obstacle_speed_fixed(self, rng):
        cfg = ScenarioConfig(n_vehicles=1, n_obstacles=4)
        st = reset_episode(cfg, rng)
        for _ in range(50):
            st2 = step_world(st, [ControlInput(0.1, 0.5)], cfg, rng)
            d = np.linalg.norm(st2.obstacles - st.obstacles, axis=1)
            assert np.all(d <= cfg.v_max_obstacle * cfg.dt + 1e-12)
            st = st2

    def test_vehicle_speed_bound(self, rng):
        cfg = ScenarioConfig(n_vehicles=3, n_obstacles=0)
        st = reset_episode(cfg, rng)
        for _ in range(100):
            actions = [
                ControlInput(rng.uniform(0, cfg.v_max),
                             rng.uniform(-cfg.omega_max, cfg.omega_max))
                for _ in range(3)
            ]
            st2 = step_world(st, actions, cfg, rng)
            for p, q in zip(st.vehicles, st2.vehicles):
                assert math.dist((p.x, p.y), (q.x, q.y)) <= cfg.v_max * cfg.dt + 1e-12
            st = st2


class TestResetEpisode:
    def test_seeded_determinism(self):
        cfg = ScenarioConfig(n_vehicles=4, n_obstacles=2)
        a = reset_episode(cfg, np.random.default_rng(99))
        b = reset_episode(cfg, np.random.default_rng(99))
        assert a.vehicles == b.vehicles
        assert np.array_equal(a.obstacles, b.obstacles)
        assert np.array_equal(a.obstacle_headings, b.obstacle_headings)
        assert np.array_equal(a.waypoint, b.waypoint)
        assert a.step == 0

    def test_cardinality(self, rng):
        st = reset_episode(ScenarioConfig(n_vehicles=3, n_obstacles=2), rng)
        assert len(st.vehicles) == 3
        assert st.obstacles.shape == (2, 2)

    def test_uniform_law_monte_carlo(self):
        cfg = ScenarioConfig(n_vehicles=3, n_obstacles=1)
        rng = np.random.default_rng(7)
        xs = []
        for _ in range(10_000):
            st = reset_episode(cfg, rng)
            xs.append(st.vehicle_positions())
        mean = np.concatenate(xs).mean(axis=0)
        assert np.all(np.abs(mean) < 0.05)

    def test_fields_in_range(self, rng):
        cfg = ScenarioConfig(n_vehicles=5, n_obstacles=3)
        for _ in range(50):
            st = reset_episode(cfg, rng)
            for p in st.vehicles:
                assert -1 <= p.x <= 1 and -1 <= p.y <= 1
                assert -math.pi < p.heading <= math.pi
            assert np.all(np.abs(st.obstacles) <= 1)
            assert np.all(np.abs(st.waypoint) <= 1)


class TestDeterminismAndExport:
    def test_identical_trajectories(self):
        cfg = ScenarioConfig(n_vehicles=3, n_obstacles=2)
        action_rng = np.random.default_rng(5)
        actions = [
            [ControlInput(action_rng.uniform(0, 0.15),
                          action_rng.uniform(-1, 1)) for _ in range(3)]
            for _ in range(20)
        ]

        def rollout():
            env_rng = np.random.default_rng(11)
            st = reset_episode(cfg, env_rng)
            hist = [st]
            for acts in actions:
                st = step_world(st, acts, cfg, env_rng)
                hist.append(st)
            return hist

        h1, h2 = rollout(), rollout()
        for a, b in zip(h1, h2):
            assert a.vehicles == b.vehicles
            assert np.array_equal(a.obstacles, b.obstacles)
            assert np.array_equal(a.waypoint, b.waypoint)

    def test_trajectory_rows(self, rng):
        cfg = ScenarioConfig(n_vehicles=2, n_obstacles=1)
        st = reset_episode(cfg, rng)
        rows = trajectory_rows(st, episode=3)
        assert len(rows) == 2 + 1 + 1
        kinds = [r[2] for r in rows]
        assert kinds == ["vehicle", "vehicle", "obstacle", "waypoint"]
        assert all(r[0] == 3 and r[1] == 0 for r in rows)


class TestScenarioConfigValidation:
    def test_threshold_order(self):
        with pytest.raises(ValueError):
            ScenarioConfig(r_n_prime=0.2, r_n=0.15)
        with pytest.raises(ValueError):
            ScenarioConfig(r_o_prime=0.25, r_o=0.25)

    def test_positive_dt(self):
        with pytest.raises(ValueError):
            ScenarioConfig(dt=0.0)
