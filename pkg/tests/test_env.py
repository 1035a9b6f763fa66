"""Episode environment: observations, reward shape, termination."""

import math

import numpy as np
import pytest

from driftcorner.envs import (
    N_PREVIEW,
    OBS_DIM,
    PREVIEW_SPACING,
    TIME_CAP_FACTOR,
    DriftEnv,
    RewardConfig,
    action_bounds,
    observation_scales,
    observe,
    reward_step,
    reward_terminal,
    run_episode,
)
from driftcorner.plant import CONTROL_DT, ActuatorLimits, PlantState
from driftcorner.track import FrenetPoint, to_cartesian


# -- observation -------------------------------------------------------


def test_observation_vector_layout(uturn, uturn_pretraj):
    env = DriftEnv(uturn, uturn_pretraj)
    obs = env.reset(0, nominal=True)
    v = obs.vector()
    assert v.shape == (OBS_DIM,)
    assert v[0] == pytest.approx(obs.s)
    assert v[8] == 1.0  # run flag starts raised
    assert len(obs.kappa_preview) == N_PREVIEW


def test_observation_frenet_agreement(uturn):
    x, y = to_cartesian(FrenetPoint(45.0, 0.5), uturn)
    state = PlantState(x=x, y=y, phi=uturn.heading_at(45.0), v_x=9.0)
    obs = observe(state, uturn)
    assert obs.s == pytest.approx(45.0, abs=1e-6)
    assert obs.l == pytest.approx(0.5, abs=1e-6)
    assert obs.alpha == pytest.approx(0.0, abs=1e-9)
    # heading aligned with the tangent: progress rate = v_x / (1 - k l)
    k = uturn.curvature_at(45.0)
    assert obs.s_dot == pytest.approx(9.0 / (1.0 - k * 0.5), rel=1e-9)
    assert obs.l_dot == pytest.approx(0.0, abs=1e-9)


def test_preview_samples_curvature_ahead(uturn):
    state = PlantState(x=25.0, y=0.0, v_x=9.0)  # 5 m before the arc
    obs = observe(state, uturn)
    dists = PREVIEW_SPACING * np.arange(1, N_PREVIEW + 1)
    want = np.array([uturn.curvature_at(min(25.0 + d, uturn.s_max))
                     for d in dists])
    np.testing.assert_allclose(obs.kappa_preview, want, atol=1e-12)


def test_observation_scales_positive(uturn):
    sc = observation_scales(uturn)
    assert sc.shape == (OBS_DIM,)
    assert np.all(sc > 0)


# -- reward ------------------------------------------------------------


def test_reward_path_term_spot_value(uturn, uturn_pretraj):
    state = PlantState(x=10.0, y=0.0, v_x=9.0)
    obs = observe(state, uturn)
    a = np.zeros(3)
    terms = reward_step(obs, a, a, uturn_pretraj)
    l_ref = float(uturn_pretraj.l_ref(obs.s))
    v_ref = float(uturn_pretraj.v_ref(obs.s))
    want = -0.5 * abs(obs.l - l_ref) - 0.1 * abs(9.0 - v_ref)
    assert terms.r_p == pytest.approx(want, abs=1e-12)
    assert terms.r_s == 0.0 and terms.r_m == 0.0


def test_reward_slip_bonus_saturates(uturn, uturn_pretraj):
    obs = observe(PlantState(x=10.0, v_x=9.0), uturn)
    a = np.zeros(3)
    small = reward_step(obs, a, a, uturn_pretraj, beta_r=0.1).r_s
    big = reward_step(obs, a, a, uturn_pretraj, beta_r=1.0).r_s
    assert 0.0 < small < big < 2.0
    assert big == pytest.approx(2.0 * (1.0 - math.exp(-3.0)), abs=1e-12)


def test_reward_smoothness_normalized_increments(uturn, uturn_pretraj):
    obs = observe(PlantState(x=10.0, v_x=9.0), uturn)
    low, high = action_bounds()
    terms = reward_step(obs, high, low, uturn_pretraj)
    assert terms.r_m == pytest.approx(-0.5 * 3.0, abs=1e-12)  # full swings


def test_terminal_reward_components(uturn_pretraj):
    t_ref = uturn_pretraj.t_ref
    # completion 1 s faster than the reference
    assert reward_terminal(1, t_ref - 1.0, 134.0, uturn_pretraj) == pytest.approx(
        0.1 * 134.0 + 20.0, abs=1e-9)
    # crash keeps only the progress term
    assert reward_terminal(0, 3.0, 40.0, uturn_pretraj) == pytest.approx(4.0)


def test_reward_config_validation():
    with pytest.raises(ValueError):
        RewardConfig(k_pl=0.5)
    with pytest.raises(ValueError):
        RewardConfig(k_t2=-1.0)


# -- episode mechanics -------------------------------------------------


def test_nominal_reset_is_deterministic(uturn, uturn_pretraj):
    env = DriftEnv(uturn, uturn_pretraj)
    a = env.reset(0, nominal=True).vector()
    b = env.reset(1, nominal=True).vector()
    np.testing.assert_array_equal(a, b)


def test_random_reset_spread(uturn, uturn_pretraj, rng):
    env = DriftEnv(uturn, uturn_pretraj)
    ls = {round(float(env.reset(rng).l), 6) for _ in range(10)}
    assert len(ls) > 1


def test_full_episode_with_tracker(uturn, uturn_pretraj):
    from driftcorner.baseline import BaselineTracker

    env = DriftEnv(uturn, uturn_pretraj, record=True)
    res = run_episode(BaselineTracker(uturn, uturn_pretraj, speed_factor=0.88),
                      env, nominal=True)
    assert res.chi == 1 and res.status == "completed"
    assert res.s_final == pytest.approx(uturn.s_max, abs=1e-6)
    assert res.trace is not None and res.trace.shape[1] == 19
    # trace timing column runs at the control rate
    assert res.trace[1, 0] - res.trace[0, 0] == pytest.approx(CONTROL_DT)
    assert res.t_f == pytest.approx(res.trace[-1, 0], abs=CONTROL_DT)
    assert res.max_speed > 9.0


def test_episode_time_cap(uturn, uturn_pretraj):
    env = DriftEnv(uturn, uturn_pretraj)
    env.reset(0, nominal=True, v0=1.0)
    done, ticks, info = False, 0, {}
    while not done:
        # crawl forward so neither completion nor crash ever fires
        _, _, done, info = env.step(np.array([0.0, 120.0, 10.0]))
        ticks += 1
    res = info["result"]
    assert res.status == "timeout" and res.chi == 0
    assert res.t_f <= TIME_CAP_FACTOR * uturn_pretraj.t_ref + CONTROL_DT


def test_crash_ends_episode(uturn, uturn_pretraj):
    env = DriftEnv(uturn, uturn_pretraj)
    env.reset(0, nominal=True)
    done, info = False, {}
    while not done:
        _, _, done, info = env.step(np.array([0.5, 1000.0, 0.0]))
    assert info["result"].status == "crashed"
    assert info["result"].chi == 0


def test_completion_total_reward_consistency(uturn, uturn_pretraj):
    from driftcorner.baseline import BaselineTracker

    env = DriftEnv(uturn, uturn_pretraj)
    res = run_episode(BaselineTracker(uturn, uturn_pretraj, speed_factor=0.88),
                      env, nominal=True)
    assert res.total_reward == pytest.approx(
        res.r_p_sum + res.r_s_sum + res.r_m_sum + res.r_t, abs=1e-9)
    assert res.r_t == pytest.approx(
        reward_terminal(1, res.t_f, res.s_final, uturn_pretraj), abs=1e-9)


def test_action_bounds_shape():
    low, high = action_bounds(ActuatorLimits())
    assert low.tolist() == [-0.524, 0.0, 0.0]
    assert high.tolist() == [0.524, 1000.0, 10.0]
