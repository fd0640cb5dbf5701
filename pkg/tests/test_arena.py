import numpy as np
import pytest

from hjgames import get_problem
from hjgames.arena import (
    MatchupTable,
    RolloutRecord,
    load_rollout,
    matchup,
    rollout_table,
    safe_band_states,
    safe_rate,
    save_rollout,
    simulate_batch,
    simulate_episode,
)
from hjgames.errors import ConfigError
from hjgames.policies import GradientPolicy, NetValueSource, ScriptedPolicy
from hjgames.problems import eval_boundary, problem_from_config

from test_mpc import AnalyticIntegratorNet
from test_problems import TWO_INTEGRATOR_CONFIG


@pytest.fixture(scope="module")
def intercept():
    return problem_from_config(TWO_INTEGRATOR_CONFIG)


def stationary(problem, role):
    return ScriptedPolicy(role, lambda x, tau: np.zeros(x.shape[:-1] + (2,)), problem)


def straight_line_pursuer(problem):
    def chase(x, tau):
        delta = x[..., 0:2] - x[..., 2:4]
        dist = np.linalg.norm(delta, axis=-1, keepdims=True)
        return 0.5 * delta / np.maximum(dist, 1e-9)

    return ScriptedPolicy("pursuer", chase, problem)


def fleeing_evader(problem):
    def flee(x, tau):
        delta = x[..., 0:2] - x[..., 2:4]
        dist = np.linalg.norm(delta, axis=-1, keepdims=True)
        return 0.5 * delta / np.maximum(dist, 1e-9)

    return ScriptedPolicy("evader", flee, problem)


class TestSimulateEpisode:
    def test_coincident_start_is_instant_capture(self, intercept):
        x0 = np.array([0.0, 0.0, 0.0, 0.0])
        rec = simulate_episode(intercept, stationary(intercept, "evader"), stationary(intercept, "pursuer"), x0, 1.0)
        assert rec.outcome.kind == "captured"
        assert rec.outcome.time == 0.0
        assert rec.cost <= 0.0

    def test_straight_line_capture_time(self, intercept):
        # 1 m separation, 0.36 capture radius, 0.5 m/s closing speed.
        dt = 0.02
        x0 = np.array([0.0, 0.0, 1.0, 0.0])
        rec = simulate_episode(
            intercept, stationary(intercept, "evader"), straight_line_pursuer(intercept), x0, 3.0, dt
        )
        assert rec.outcome.kind == "captured"
        assert rec.outcome.time == pytest.approx((1.0 - 0.36) / 0.5, abs=dt + 1e-9)

    def test_capture_time_lower_bound(self, intercept, rng):
        # capture time >= initial ell / max closing speed (1.0 for this game).
        for _ in range(10):
            x0 = np.concatenate([rng.uniform(-1, 1, 2), rng.uniform(-1, 1, 2)])
            rec = simulate_episode(
                intercept, stationary(intercept, "evader"), straight_line_pursuer(intercept), x0, 5.0
            )
            if rec.outcome.kind == "captured" and rec.outcome.time > 0:
                ell0 = float(eval_boundary(intercept, x0))
                assert rec.outcome.time >= ell0 / 1.0 - rec.dt

    def test_outcome_consistency(self, intercept, rng):
        for _ in range(10):
            x0 = np.concatenate([rng.uniform(-2, 2, 2), rng.uniform(-2, 2, 2)])
            rec = simulate_episode(
                intercept, fleeing_evader(intercept), straight_line_pursuer(intercept), x0, 2.0
            )
            captured = rec.outcome.kind == "captured"
            assert captured == (rec.cost <= 0.0)
            if rec.outcome.kind == "out_of_bounds":
                assert np.all(rec.ell[:-1] > 0.0)

    def test_oob_attributed_to_leaving_player(self):
        prob = get_problem("dubins6d")
        evader = ScriptedPolicy("evader", lambda x, tau: np.zeros(x.shape[:-1] + (1,)), prob)
        pursuer = ScriptedPolicy("pursuer", lambda x, tau: np.zeros(x.shape[:-1] + (1,)), prob)
        x0 = np.array([2.9, 0.0, 0.0, -2.0, 1.0, 3.0])  # evader heads straight for the wall
        rec = simulate_episode(prob, evader, pursuer, x0, 5.0)
        assert rec.outcome.kind == "out_of_bounds"
        assert rec.outcome.player == "evader"
        assert rec.outcome.time == pytest.approx(0.2, abs=0.05)

    def test_clamp_mode_keeps_episode_alive(self):
        prob = get_problem("dubins6d")
        evader = ScriptedPolicy("evader", lambda x, tau: np.zeros(x.shape[:-1] + (1,)), prob)
        pursuer = ScriptedPolicy("pursuer", lambda x, tau: np.zeros(x.shape[:-1] + (1,)), prob)
        x0 = np.array([2.9, 0.0, 0.0, -2.0, 1.0, 3.0])
        rec = simulate_episode(prob, evader, pursuer, x0, 2.0, boundary_mode="clamp")
        assert rec.outcome.kind == "survived"
        assert np.all(rec.states[:, 0] <= 3.0 + 1e-12)

    def test_aborted_on_policy_failure(self, intercept):
        class Broken(ScriptedPolicy):
            def action(self, x, tau):
                raise RuntimeError("boom")

        bad = Broken("pursuer", lambda x, tau: np.zeros(2), intercept)
        rec = simulate_episode(
            intercept, stationary(intercept, "evader"), bad, np.array([0.0, 0.0, 2.0, 0.0]), 1.0
        )
        assert rec.outcome.kind == "aborted"
        assert "boom" in rec.outcome.detail

    def test_batch_matches_single(self, intercept, rng):
        x0s = np.stack(
            [np.concatenate([rng.uniform(-1, 1, 2), rng.uniform(-1, 1, 2)]) for _ in range(6)]
        )
        batch = simulate_batch(
            intercept, fleeing_evader(intercept), straight_line_pursuer(intercept), x0s, 2.0
        )
        for i in range(6):
            rec = simulate_episode(
                intercept, fleeing_evader(intercept), straight_line_pursuer(intercept), x0s[i], 2.0
            )
            assert batch.min_ell[i] == pytest.approx(rec.cost, abs=1e-12)
            if rec.outcome.kind == "captured":
                assert batch.capture_time[i] == pytest.approx(rec.outcome.time, abs=1e-12)
            else:
                assert not np.isfinite(batch.capture_time[i])


class TestRolloutRecordIO:
    def test_json_roundtrip(self, intercept, tmp_path):
        rec = simulate_episode(
            intercept,
            stationary(intercept, "evader"),
            straight_line_pursuer(intercept),
            np.array([0.0, 0.0, 1.0, 0.0]),
            2.0,
        )
        path = str(tmp_path / "rollout.json")
        save_rollout(rec, path)
        loaded = load_rollout(path)
        np.testing.assert_array_equal(loaded.states, rec.states)
        np.testing.assert_array_equal(loaded.ell, rec.ell)
        assert loaded.outcome == rec.outcome

    def test_table_export(self, intercept):
        rec = simulate_episode(
            intercept,
            stationary(intercept, "evader"),
            straight_line_pursuer(intercept),
            np.array([0.0, 0.0, 1.0, 0.0]),
            0.2,
        )
        text = rollout_table(rec)
        lines = text.strip().splitlines()
        assert lines[0].split("\t")[:2] == ["t", "x0"]
        assert len(lines) == rec.times.shape[0] + 1


class TestMatchup:
    def test_fleeing_evader_never_captured_by_stationary(self, intercept, rng):
        states = np.stack(
            [np.concatenate([rng.uniform(-1, 1, 2), rng.uniform(-1, 1, 2)]) for _ in range(20)]
        )
        states = states[eval_boundary(intercept, states) > 0]
        table = matchup(
            intercept,
            {"flee": fleeing_evader(intercept)},
            {"halt": stationary(intercept, "pursuer"), "chase": straight_line_pursuer(intercept)},
            states,
            duration=2.0,
        )
        assert table.cell("flee", "halt")["capture_rate"] == 0.0

    def test_deterministic(self, intercept, rng):
        states = np.stack(
            [np.concatenate([rng.uniform(-1, 1, 2), rng.uniform(-1, 1, 2)]) for _ in range(8)]
        )
        kwargs = dict(
            evaders={"e": fleeing_evader(intercept)},
            pursuers={"p": straight_line_pursuer(intercept)},
            init_states=states,
            duration=1.0,
        )
        a = matchup(intercept, **kwargs)
        b = matchup(intercept, **kwargs)
        np.testing.assert_array_equal(a.capture_rate, b.capture_rate)
        np.testing.assert_array_equal(a.mean_time_to_capture, b.mean_time_to_capture)

    def test_text_and_json_outputs(self, intercept):
        table = MatchupTable(("a",), ("b",), np.array([[50.0]]), np.array([[1.5]]), 10)
        assert "50%" in table.to_text()
        js = table.to_json_dict()
        assert js["capture_rate_percent"] == [[50.0]]

    def test_empty_states_rejected(self, intercept):
        with pytest.raises(ConfigError):
            matchup(intercept, {}, {}, np.zeros((0, 4)), 1.0)


class TestSafeBand:
    def test_band_respected(self):
        prob = get_problem("integrator1d")
        net = AnalyticIntegratorNet()
        states = safe_band_states(prob, lambda xs: net.value(xs, 1.0), 50, seed=0, band=(0.0, 0.1))
        vals = net.value(states, 1.0)
        assert np.all((vals > 0) & (vals < 0.1))

    def test_empty_band_raises(self):
        prob = get_problem("integrator1d")
        net = AnalyticIntegratorNet()
        with pytest.raises(ConfigError):
            safe_band_states(prob, lambda xs: net.value(xs, 1.0), 10, seed=0, band=(5.0, 5.1), max_tries=3)


class TestSafeRate:
    def test_analytic_value_is_fully_safe(self):
        # Perfect value + optimal play: 100% and gaps concentrated at zero.
        prob = get_problem("integrator1d")
        net = AnalyticIntegratorNet()
        net.horizon = 1.0
        adversary = GradientPolicy("pursuer", NetValueSource(net), prob)
        report = safe_rate(prob, net, 200, adversary, seed=1, dt=0.02)
        assert report.rate == 100.0
        assert float(np.quantile(np.abs(report.cost_gaps), 0.95)) <= 0.05

    def test_overconfident_net_flagged(self):
        # Constant V = +1 predicts safety everywhere; the optimal adversary
        # disproves it on a large fraction of states with negative gaps.
        prob = get_problem("integrator1d")

        class ConstantNet(AnalyticIntegratorNet):
            horizon = 1.0

            def value(self, x, tau):
                x = np.atleast_2d(np.asarray(x, float))
                return np.ones(x.shape[0])

        truth = AnalyticIntegratorNet()
        truth.horizon = 1.0
        adversary = GradientPolicy("pursuer", NetValueSource(truth), prob)
        overconfident = ConstantNet()
        evader = GradientPolicy("evader", NetValueSource(overconfident), prob)
        report = safe_rate(prob, overconfident, 200, adversary, seed=2, dt=0.02, evader=evader)
        assert report.rate < 100.0
        assert report.gap_mass_below(-0.05) > 0.3
