"""Feedback laws: aerial pointing with gyroscopic compensation, dual-plane
momentum balance with pole-placed gains and offset observer, lean setpoints,
jump and landing leg control, rolling drive, and the self-righting sequence.

Sign conventions follow dynamics.py. All torque outputs are motor torques in
the wheel/leg conventions defined there; every law is checked in the tests
against momentum-balance oracles rather than assumed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .params import RobotParams, AerialGains, BalanceGains, pole_placement
from . import dynamics as dyn
from .dynamics import (BodyState, Command, Contact, SatFlags, TiltState,
                       compute_H, rotate_inv, saturate, upright_state)


class ConditioningError(RuntimeError):
    """Wheel-coupling block of the inertia matrix is numerically singular."""


# ---------------------------------------------------------------------------
# aerial control

def gyro_compensation(omega_R: float, omega_L: float, omega_bz: float,
                      p: RobotParams) -> tuple[float, float]:
    """Wheel torques cancelling the leg-axis precession driven by wheel momenta.

    For the canted-axle pair the exact cancellation under spin about the leg
    axis is

        tau_R =  I_w*omega_bz*( omega_R*tan(2 theta) + omega_L/cos(2 theta))
        tau_L = -I_w*omega_bz*( omega_L*tan(2 theta) + omega_R/cos(2 theta))

    The sign of the own-speed term differs between the two wheels; both signs
    are pinned by the momentum-balance test in test_dynamics/test_controllers.
    """
    if not abs(p.theta) < math.pi / 4.0:
        raise ValueError("cant angle leaves tan(2 theta) unbounded")
    t2 = math.tan(2.0 * p.theta)
    s2 = 1.0 / math.cos(2.0 * p.theta)
    iw = p.i_wheel
    tau_r = iw * omega_bz * (omega_R * t2 + omega_L * s2)
    tau_l = -iw * omega_bz * (omega_L * t2 + omega_R * s2)
    return tau_r, tau_l


def clamp_target_elevation(v_foot_world, max_elevation: float):
    """Limit how far above the horizon the leg target may point (pre-apex)."""
    tx, ty, tz = v_foot_world
    cap = math.sin(max_elevation)
    if tz <= cap:
        return v_foot_world
    hxy = math.hypot(tx, ty)
    if hxy < 1e-9:
        # target straight up: fall back to +x at the elevation cap
        return (math.cos(max_elevation), 0.0, cap)
    sc = math.sqrt(max(1.0 - cap * cap, 0.0)) / hxy
    return (tx * sc, ty * sc, cap)


def aerial_pointing(s: BodyState, v_foot_world, gains: AerialGains,
                    p: RobotParams, pre_apex: bool = False) -> tuple[Command, SatFlags]:
    """PD pointing law driving the CG-to-foot axis onto a world target vector."""
    tx, ty, tz = v_foot_world
    n = math.sqrt(tx * tx + ty * ty + tz * tz)
    if abs(n - 1.0) > 1e-6:
        raise ValueError("target direction must be a unit vector")
    if pre_apex:
        tx, ty, tz = clamp_target_elevation((tx, ty, tz), gains.leg_aim_limit)
    vb = rotate_inv(s.q, (tx, ty, tz))
    tg_r, tg_l = gyro_compensation(s.omega_R, s.omega_L, s.w_b[2], p)
    tau_r = -gains.k_p * vb[1] + gains.k_d * s.w_b[0] + tg_r
    tau_l = gains.k_p * vb[0] + gains.k_d * s.w_b[1] + tg_l
    return saturate(Command(tau_r, tau_l, 0.0), p)


def liftoff_velocity_estimate(leg_rate_at_liftoff: float, w_b, q,
                              p: RobotParams, d_leg: float):
    """CG velocity at liftoff fused from the leg encoder rate and gyro."""
    ell = p.c + d_leg
    wx, wy, _ = w_b
    vb = (wy * ell, -wx * ell, leg_rate_at_liftoff)
    return dyn.rotate(q, vb)


# ---------------------------------------------------------------------------
# balance control

@dataclass(frozen=True)
class MomentumTriple:
    """Per-axis (M, M_dot, M_ddot) feedback states of the balance law."""

    M: tuple[float, float]
    M_dot: tuple[float, float]
    M_ddot: tuple[float, float]


@dataclass
class OffsetEstimate:
    """Estimated balance-point tilt offsets and the observer gain."""

    b_x: float = 0.0
    b_y: float = 0.0
    gain: float = 0.5  # 1/s

    def clamped(self) -> "OffsetEstimate":
        lim = 0.2
        return OffsetEstimate(min(max(self.b_x, -lim), lim),
                              min(max(self.b_y, -lim), lim), self.gain)


def compute_balance_gains(p: RobotParams, poles) -> BalanceGains:
    """Synthesize the per-axis momentum-law gain set from the upright model.

    The toppling time constant is sqrt(H_aa / (m g c)) per tilt axis and the
    wheel velocity gains are the upright momentum sensitivities -H_aw / H_aa,
    so that M_a = T_a^2 (qdot_a - sum_w G_aw u_w) equals the angular momentum
    about the foot over m g c.
    """
    H = compute_H(upright_state(p), p)
    mgc = p.m * p.g * p.c
    t_c = (math.sqrt(H[0, 0] / mgc), math.sqrt(H[1, 1] / mgc))
    g_w = ((-H[0, 2] / H[0, 0], -H[0, 3] / H[0, 0]),
           (-H[1, 2] / H[1, 1], -H[1, 3] / H[1, 1]))
    k_dd, k_d, k_M = pole_placement(poles)
    gains = BalanceGains(k_dd=(k_dd, k_dd), k_d=(k_d, k_d), k_M=(k_M, k_M),
                         t_c=t_c, g_w=g_w)
    gains.validate()
    return gains


def momentum_states(t: TiltState, s: BodyState, g: BalanceGains) -> MomentumTriple:
    """Small-angle momentum substitution: M, M_dot = tilt, M_ddot = tilt rate."""
    rates = (t.q_x_rate, t.q_y_rate)
    tilts = (t.q_x, t.q_y)
    m = tuple(g.t_c[a] ** 2 * (rates[a] - g.g_w[a][0] * s.omega_R
                               - g.g_w[a][1] * s.omega_L) for a in (0, 1))
    return MomentumTriple(M=m, M_dot=tilts, M_ddot=rates)


def balance_control_law(mt: MomentumTriple, g: BalanceGains,
                        off: OffsetEstimate) -> tuple[float, float]:
    """Third-derivative momentum commands, offset-corrected on the tilt term."""
    b = (off.b_x, off.b_y)
    return tuple(g.k_dd[a] * mt.M_ddot[a]
                 + g.k_d[a] * (mt.M_dot[a] - b[a])
                 + g.k_M[a] * mt.M[a] for a in (0, 1))


def balance_torques(s: BodyState, H: np.ndarray, m_ddd,
                    p: RobotParams) -> tuple[Command, SatFlags]:
    """Map commanded tilt accelerations to wheel torques through the model.

    Solves the tilt rows of the stance inertia equation for the wheel
    accelerations, then reads the wheel rows back out for the torques.
    """
    blk = H[0:2, 2:4]
    cond = np.linalg.cond(blk)
    if not np.isfinite(cond) or cond > 1e6:
        raise ConditioningError(
            "wheel coupling block condition number %.3g exceeds 1e6 "
            "(wheel axes nearly parallel)" % cond)
    t = dyn.tilt_of(s)
    mgl = p.m * p.g * (p.c + s.d_leg)
    rhs = np.array([mgl * math.sin(t.q_x) * math.cos(t.q_y) - m_ddd[0] * H[0, 0],
                    mgl * math.sin(t.q_y) * math.cos(t.q_x) - m_ddd[1] * H[1, 1]])
    qdd_w = np.linalg.solve(blk, rhs)
    tau = H[2:4, 2:4] @ qdd_w + np.array(
        [m_ddd[0] * H[2, 0] + m_ddd[1] * H[2, 1],
         m_ddd[0] * H[3, 0] + m_ddd[1] * H[3, 1]])
    return saturate(Command(float(tau[0]), float(tau[1]), 0.0), p)


def offset_observer_update(off: OffsetEstimate, t: TiltState, u: Command,
                           dt: float, saturated: bool = False) -> OffsetEstimate:
    """Leak the balance-point estimate toward the observed equilibrium tilt.

    With the momentum law active, the robot settles exactly at the tilt where
    the gravity torque about the foot vanishes, so the quiet-time tilt IS the
    balance offset. The update is gated while any actuator saturates and
    while the robot is still moving.
    """
    if saturated:
        return off
    quiet = abs(t.q_x_rate) < 0.5 and abs(t.q_y_rate) < 0.5
    if not quiet:
        return off
    k = off.gain * dt
    out = OffsetEstimate(off.b_x + k * (t.q_x - off.b_x),
                         off.b_y + k * (t.q_y - off.b_y), off.gain)
    return out.clamped()


def lean_setpoint(target_bearing: float, lean_angle: float) -> tuple[float, float]:
    """Tilt references leaning the leg axis by lean_angle toward a world bearing."""
    if abs(lean_angle) > 0.5:
        raise ValueError("lean angle limited to +-0.5 rad")
    sa = math.sin(lean_angle)
    q_y = math.asin(sa * math.cos(target_bearing))
    cy = math.cos(q_y)
    q_x = -math.asin(sa * math.sin(target_bearing) / cy) if cy > 1e-9 else 0.0
    return (q_x, q_y)


# ---------------------------------------------------------------------------
# leg control

def jump_torque_profile(phase_time: float, d_leg: float, p: RobotParams) -> float:
    """Launch profile: full pinion torque until the rack is out, then zero."""
    if d_leg >= p.leg_travel:
        return 0.0
    return p.tau_leg_max


def landing_impedance(d_leg: float, d_leg_rate: float, p: RobotParams,
                      b_land: float = 0.10) -> float:
    """Damper emulation on the leg: strictly dissipative, saturated."""
    tau = -b_land * d_leg_rate
    return min(max(tau, -p.tau_leg_max), p.tau_leg_max)


# ---------------------------------------------------------------------------
# rolling control

ROLL_SPEED_GAIN = 0.02  # N m per rad/s of wheel speed error


def rolling_controller(v_cmd: float, yaw_rate_cmd: float, s: BodyState,
                       p: RobotParams) -> tuple[Command, SatFlags]:
    """Differential-drive wheel speed tracking via a proportional loop."""
    r = p.r_eff
    u_ref_r = (v_cmd + 0.5 * yaw_rate_cmd * p.wheel_base) / r
    u_ref_l = (v_cmd - 0.5 * yaw_rate_cmd * p.wheel_base) / r
    tau_r = ROLL_SPEED_GAIN * (u_ref_r - s.omega_R)
    tau_l = ROLL_SPEED_GAIN * (u_ref_l - s.omega_L)
    return saturate(Command(tau_r, tau_l, 0.0), p)


# ---------------------------------------------------------------------------
# self-righting

@dataclass(frozen=True)
class SelfRightPlan:
    """Geometry and targets of the scripted self-right maneuver.

    The robot accelerates, brakes into a pitch-over about the leading
    chassis edge, catches the ground with its (retracted) foot ahead, and
    swings up about the planted foot. During the swing the leg regulates the
    rotational energy toward the barrier to upright: extending raises the CG
    and soaks up excess, retracting feeds some back. The balance controller
    captures near vertical. All values are design constants of the maneuver,
    not physical parameters of the robot.
    """

    v_flip: float = 4.5          # rolling speed at the brake, m/s
    edge_forward: float = 0.05   # chassis edge ahead of the CG along the leg, m
    capture_tilt: float = 0.12   # rad, hand over to balance inside this tilt
    capture_energy: float = 0.012  # J above the barrier: coasts nearly to rest
    e_margin0: float = 0.002     # J kept above the barrier near upright
    e_margin_slope: float = 0.03 # J extra margin per rad of tilt
    timeout_accel: float = 6.0
    timeout_flip: float = 3.0
    timeout_swing: float = 5.0


class SelfRightTimeout(RuntimeError):
    pass


@dataclass
class SelfRightAction:
    command: Command
    done: bool = False
    transfer: str | None = None   # "flip" | "plant" requests to the runner
    phase: str = ""


class SelfRightSequencer:
    """Three-phase scripted stand-up from a rolling rest pose."""

    def __init__(self, plan: SelfRightPlan | None = None):
        self.plan = plan or SelfRightPlan()
        self.phase = "accel"
        self.phase_t0: float | None = None

    def _check_timeout(self, elapsed: float, limit: float, label: str) -> None:
        if elapsed > limit:
            raise SelfRightTimeout("self-right %s phase exceeded %.1f s"
                                   % (label, limit))

    def tick(self, s: BodyState, elapsed: float, p: RobotParams) -> SelfRightAction:
        plan = self.plan
        if self.phase == "accel":
            if s.contact is Contact.STANCE and dyn.tilt_angle(s) < plan.capture_tilt \
                    and abs(s.w_b[0]) + abs(s.w_b[1]) < plan.capture_rate:
                return SelfRightAction(Command(), done=True, phase="accel")
            self._check_timeout(elapsed, plan.timeout_accel, "accel")
            cmd, _ = rolling_controller(plan.v_flip, 0.0, s, p)
            speed = 0.5 * p.r_eff * (s.omega_R + s.omega_L)
            if speed >= plan.v_flip - 0.05:
                # brake: requires enough torque authority to count as "sudden"
                if p.tau_wheel_max < 0.2:
                    raise SelfRightTimeout(
                        "insufficient braking torque for the flip")
                self.phase = "flip"
                return SelfRightAction(Command(), transfer="flip", phase="accel")
            return SelfRightAction(cmd, phase="accel")
        if self.phase == "flip":
            self._check_timeout(elapsed, plan.timeout_flip, "flip")
            # leg stays retracted so the foot catches early, keeping momentum
            return SelfRightAction(Command(), phase="flip")
        if self.phase == "swing":
            self._check_timeout(elapsed, plan.timeout_swing, "swing")
            tilt = dyn.tilt_angle(s)
            if tilt < plan.capture_tilt \
                    and self._energy_excess(s, p) < plan.capture_energy:
                return SelfRightAction(Command(), done=True, phase="swing")
            cmd = self._swing_command(s, p)
            return SelfRightAction(cmd, phase="swing")
        raise RuntimeError("unknown self-right phase %r" % self.phase)

    def _energy_excess(self, s: BodyState, p: RobotParams) -> float:
        """Rotational energy above the barrier to upright: what the balance
        controller would have to absorb after the coast."""
        ell = p.c + s.d_leg
        tilt = dyn.tilt_angle(s)
        H = compute_H(s, p)
        i_eff = 0.5 * (H[0, 0] + H[1, 1])
        e_rot = 0.5 * i_eff * (s.w_b[0] ** 2 + s.w_b[1] ** 2)
        return e_rot - p.m * p.g * ell * (1.0 - math.cos(tilt))

    def notify_planted(self) -> None:
        self.phase = "swing"

    def _swing_command(self, s: BodyState, p: RobotParams) -> Command:
        """Regulate swing energy toward the barrier to upright with the leg.

        Extending raises the CG (soaking up kinetic energy and raising the
        remaining barrier); retracting does the opposite. A deadbeat-ish rate
        servo tracks the commanded extension rate through the leg torque.
        """
        plan = self.plan
        ell = p.c + s.d_leg
        tilt = dyn.tilt_angle(s)
        w_t2 = s.w_b[0] ** 2 + s.w_b[1] ** 2
        H = compute_H(s, p)
        i_eff = 0.5 * (H[0, 0] + H[1, 1])
        e_rot = 0.5 * i_eff * w_t2
        barrier = p.m * p.g * ell * (1.0 - math.cos(tilt))
        margin = plan.e_margin0 + plan.e_margin_slope * tilt
        err = e_rot - (barrier + margin)
        rate_cmd = min(max(40.0 * err, -1.5), 1.5)
        if s.d_leg <= 0.0 and rate_cmd < 0.0:
            rate_cmd = 0.0
        if s.d_leg >= p.leg_travel and rate_cmd > 0.0:
            rate_cmd = 0.0
        f_hold = p.m * (p.g * math.cos(tilt) - ell * w_t2)
        f_servo = 60.0 * (rate_cmd - s.d_leg_rate)
        tau_leg = (f_hold + f_servo) * p.r_pinion
        return saturate(Command(0.0, 0.0, tau_leg), p)[0]


# ---------------------------------------------------------------------------
# assembled balance tick used by the executive

@dataclass
class BalanceStack:
    """Balance pipeline state: gain set plus the offset observer."""

    gains: BalanceGains
    observer: OffsetEstimate

    def command(self, s: BodyState, tilt: TiltState, p: RobotParams,
                ref: tuple[float, float] = (0.0, 0.0), dt: float | None = None,
                ) -> tuple[Command, SatFlags, MomentumTriple]:
        shifted = TiltState(tilt.q_x - ref[0], tilt.q_y - ref[1],
                            tilt.q_x_rate, tilt.q_y_rate)
        mt = momentum_states(shifted, s, self.gains)
        m_ddd = balance_control_law(mt, self.gains, self.observer)
        H = compute_H(s, p)
        cmd, flags = balance_torques(s, H, m_ddd, p)
        if dt is not None and ref == (0.0, 0.0):
            self.observer = offset_observer_update(
                self.observer, shifted, cmd, dt, saturated=flags.any)
        return cmd, flags, mt
