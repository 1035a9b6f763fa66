"""Scripted pure-pursuit tracker of a pre-trajectory.

Serves as the environment smoke test and as the non-drift baseline for
closed-loop comparisons between planned and centerline references: a
pure-pursuit steering law with curvature feedforward plus a
proportional speed loop mapped into drive torque / brake pressure.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .envs import DriftEnv, EpisodeResult, OBS_DIM, run_episode
from .planner import PreTrajectory
from .plant import ActuatorLimits, TireParams, VehicleParams, G
from .track import TrackGeometry


@dataclass
class BaselineTracker:
    """Pure-pursuit path tracking + proportional speed control.

    Callable on a raw observation vector; usable directly as the policy
    argument of `run_episode`.
    """

    track: TrackGeometry
    pretraj: PreTrajectory
    params: VehicleParams = VehicleParams()
    limits: ActuatorLimits = ActuatorLimits()
    tires: TireParams = TireParams()
    speed_factor: float = 0.97  # scale on the planned speed (tracking margin)
    lookahead_gain: float = 0.2  # s, lookahead = gain * speed + min
    lookahead_min: float = 1.5  # m
    kp_speed: float = 1.2  # 1/s, speed-loop gain
    error_slowdown: float = 0.75  # 1/m^2, speed cut per squared lateral error
    a_limits: tuple[float, float] = (-6.0, 3.0)
    slip_cap: float = math.radians(10.0)  # front-axle slip clamp (pre-peak)
    rate_damping: float = 0.2  # on the lateral-rate error

    def __call__(self, obs: np.ndarray) -> np.ndarray:
        s, l, alpha, v_x, v_y = obs[0], obs[1], obs[2], obs[6], obs[7]
        v = math.hypot(v_x, v_y)

        # Curvature demand: pure pursuit toward the reference line.
        ld = max(self.lookahead_min, self.lookahead_gain * v)
        s_t = min(s + ld, self.track.s_max)
        l_t = float(self.pretraj.l_ref(s_t))
        # Angle to the target point relative to the vehicle heading; the
        # track tangent rotates by the centerline curvature over the chord.
        dpsi = self.track.heading_at(s_t) - self.track.heading_at(s)
        eta = math.atan2(l_t - l, ld) + 0.5 * dpsi - alpha
        # Damp the lateral-rate error; the slip-inversion loop below is
        # close to a double integrator and oscillates without it.
        dl_ref = (float(self.pretraj.l_ref(s + 0.5)) -
                  float(self.pretraj.l_ref(max(s - 0.5, 0.0)))) / 1.0
        eta -= self.rate_damping * (obs[4] - dl_ref * obs[3]) / max(v, 1.0)
        kappa_dem = 2.0 * math.sin(eta) / ld
        kappa_dem += float(np.interp(s_t, self.pretraj.s, self.pretraj.kappa))

        # Map the demand into a front slip angle by inverting the tire
        # curve for the required front force, and steer relative to the
        # measured front-axle course.  Feedback-linearizing like this
        # avoids winding past the peak-slip angle into deep understeer.
        p, tp = self.params, self.tires
        ay_req = v * v * kappa_dem
        fz_f = p.m * G * p.l_r / p.wheelbase
        f = (p.m * abs(ay_req) * p.l_r / p.wheelbase) / (
            tp.mu * tp.d_front * fz_f)
        slip = math.tan(math.asin(min(f, 0.985)) / tp.c_front) / tp.b_front
        slip = math.copysign(min(slip, self.slip_cap), ay_req)
        yaw_rate = obs[5] + self.track.curvature_at(s) * obs[3]
        axle_course = math.atan2(v_y + p.l_f * yaw_rate, max(v_x, 1.0))
        delta = axle_course + slip

        # Speed: track the plan with a short preview, backing off with
        # lateral error so the loop stays inside the friction budget.
        s_v = min(s + 0.5 * v * 0.5, self.track.s_max)
        v_t = self.speed_factor * float(self.pretraj.v_ref(s_v))
        e_l = l - float(self.pretraj.l_ref(s))
        v_t = max(2.0, v_t / (1.0 + self.error_slowdown * e_l * e_l))
        a = self.kp_speed * (v_t - v_x)
        a = min(max(a, self.a_limits[0]), self.a_limits[1])

        p = self.params
        f_loss = p.c_rr * p.m * G + p.c_drag * v_x * abs(v_x)
        # Steering drag: the front lateral force pulls backward along the
        # body x-axis by sin(delta).
        f_loss += f * tp.mu * tp.d_front * fz_f * abs(math.sin(delta))
        if a >= 0.0:
            t_rt = (p.m * a + f_loss) * p.r_w
            p_b = 0.0
        else:
            t_rt = 0.0
            p_b = max(0.0, (-p.m * a - f_loss) * p.r_w / p.k_b)
        return np.array([
            min(max(delta, -self.limits.delta_max), self.limits.delta_max),
            min(max(t_rt, 0.0), self.limits.t_max),
            min(p_b, self.limits.p_max),
        ])


def closed_loop_time(
    track: TrackGeometry,
    pretraj: PreTrajectory,
    seed: int = 0,
    nominal: bool = True,
    tracker_kw: dict | None = None,
    **env_kw,
) -> EpisodeResult:
    """Run the tracker over one episode and report the result.

    Defaults to the deterministic nominal start so planned-vs-centerline
    comparisons measure the reference, not the initial-state draw."""
    env = DriftEnv(track, pretraj, **env_kw)
    tracker = BaselineTracker(track, pretraj, env.params, env.limits,
                              **(tracker_kw or {}))
    return run_episode(tracker, env, seed, nominal=nominal)
