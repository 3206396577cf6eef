"""Mode state machine and mission runner.

One controller runs per tick, selected by mode; transitions fire on dynamics
events (liftoff, touchdown, apex, toppled) and mission actions. The runner
is strictly deterministic: a given script, parameter set, and seed always
produce the identical telemetry sequence.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np

from . import controllers as ctl
from . import dynamics as dyn
from . import estimator as est_mod
from .dynamics import BodyState, Command, Contact, Event, EventKind, TiltState
from .params import AerialGains, RobotParams


class Mode(Enum):
    ROLLING = "rolling"
    SELF_RIGHTING = "self_righting"
    BALANCING = "balancing"
    LEANING = "leaning"
    JUMPING = "jumping"
    AERIAL = "aerial"
    LANDING_DAMPING = "landing_damping"


class MissionError(RuntimeError):
    pass


@dataclass(frozen=True)
class MissionAction:
    kind: str                      # roll | figure8 | self_right | balance | lean | jump | land_to
    duration: float = 0.0
    v: float = 0.0
    yaw_rate: float = 0.0
    bearing: float = 0.0
    angle: float = 0.0
    radius: float = 0.5
    laps: int = 1
    target: str = "rolling"        # for land_to


@dataclass(frozen=True)
class MissionScript:
    actions: tuple[MissionAction, ...]

    @staticmethod
    def parse(text: str) -> "MissionScript":
        """Plain-text mission format: one action per line, key=value args.

        Example::

            roll v=1.0 duration=2.0
            self_right
            balance duration=1.5
            lean bearing_deg=0 angle_deg=20
            jump
            land_to target=rolling
        """
        actions = []
        for lineno, raw in enumerate(text.splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            kind = parts[0]
            kv: dict[str, str] = {}
            for tok in parts[1:]:
                if "=" not in tok:
                    raise MissionError("line %d: expected key=value, got %r"
                                       % (lineno, tok))
                k, _, v = tok.partition("=")
                kv[k] = v
            try:
                actions.append(_action_from(kind, kv))
            except (KeyError, ValueError) as exc:
                raise MissionError("line %d: %s" % (lineno, exc))
        return MissionScript(tuple(actions))


def _action_from(kind: str, kv: dict[str, str]) -> MissionAction:
    f = lambda k, d=0.0: float(kv.get(k, d))
    if kind == "roll":
        return MissionAction("roll", duration=f("duration", 2.0), v=f("v", 0.5),
                             yaw_rate=f("yaw_rate", 0.0))
    if kind == "figure8":
        return MissionAction("figure8", v=f("v", 0.5), radius=f("radius", 0.5),
                             laps=int(f("laps", 1)))
    if kind == "self_right":
        return MissionAction("self_right")
    if kind == "balance":
        return MissionAction("balance", duration=f("duration", 2.0))
    if kind == "lean":
        if "bearing_deg" in kv or "angle_deg" in kv:
            return MissionAction("lean", bearing=math.radians(f("bearing_deg")),
                                 angle=math.radians(f("angle_deg", 20.0)))
        return MissionAction("lean", bearing=f("bearing"), angle=f("angle", 0.35))
    if kind == "jump":
        return MissionAction("jump")
    if kind == "land_to":
        tgt = kv.get("target", "rolling")
        if tgt not in ("rolling", "balancing"):
            raise ValueError("land_to target must be rolling or balancing")
        return MissionAction("land_to", target=tgt)
    raise ValueError("unknown action %r" % kind)


@dataclass
class TelemetryRecord:
    t: float
    mode: str
    events: str
    p: tuple[float, float, float]
    euler: tuple[float, float, float]          # yaw, pitch, roll (Z-Y-X)
    w_b: tuple[float, float, float]
    tilt: tuple[float, float]
    est_euler: tuple[float, float, float]
    wheels: tuple[float, float]
    tau: tuple[float, float, float]
    sat: int
    leg: tuple[float, float]
    m_states: tuple[float, float, float, float, float, float]
    v: tuple[float, float, float]


@dataclass
class TelemetryLog:
    records: list[TelemetryRecord] = field(default_factory=list)
    events: list[Event] = field(default_factory=list)
    mode_changes: list[tuple[float, str, str]] = field(default_factory=list)
    final_state: BodyState | None = None
    summary: dict = field(default_factory=dict)

    def mode_sequence(self) -> list[str]:
        seq = []
        for _, mode, _ in self.mode_changes:
            if not seq or seq[-1] != mode:
                seq.append(mode)
        return seq


class Executive:
    """Per-mission controller dispatcher and transition logic."""

    def __init__(self, p: RobotParams, values: dict[str, float],
                 use_estimator: bool | None = None, seed: int = 0):
        self.p = p
        self.values = values
        self.aerial = AerialGains(k_p=values["aerial_kp"], k_d=values["aerial_kd"],
                                  leg_aim_limit=values["leg_aim_limit"])
        poles = (values["balance_pole_1"], values["balance_pole_2"],
                 values["balance_pole_3"])
        gains = ctl.compute_balance_gains(p, poles)
        self.stack = ctl.BalanceStack(
            gains, ctl.OffsetEstimate(gain=values.get("observer_gain", 0.5)))
        self.b_land = values.get("b_land", 0.10)
        if use_estimator is None:
            use_estimator = values.get("estimator_in_loop", 0.0) >= 0.5
        self.use_estimator = use_estimator
        noise = est_mod.ImuNoise(values.get("gyro_noise", 0.005),
                                 values.get("accel_noise", 0.05),
                                 values.get("gyro_bias_walk", 2e-4))
        self.imu = est_mod.ImuSim(p, noise=noise, seed=seed)
        self.ukf: est_mod.AttitudeUkf | None = None
        self.noise = noise

        self.mode = Mode.BALANCING
        self.mode_t0 = 0.0
        self.sequencer: ctl.SelfRightSequencer | None = None
        self.lean_ref = (0.0, 0.0)
        self.lean_target: MissionAction | None = None
        self.jump_t0 = 0.0
        self.liftoff_v: tuple[float, float, float] | None = None
        self.liftoff_t = 0.0
        self.apex_seen = False
        self.touchdown_speed = 0.0
        self.land_target = "rolling"
        self.topples = 0
        # time for the rack to leave, used to predict the liftoff angle
        a_nom = (p.tau_leg_max / p.r_pinion) / p.m - p.g
        self.t_extend = math.sqrt(2.0 * p.leg_travel / max(a_nom, 0.1))
        self.lean_nudge_t = 0.10    # s of tip-over acceleration
        self.lean_nudge_acc = 4.5   # rad/s^2 commanded during the nudge
        self.jump_fire_lead = math.radians(4.0)  # calibrated on the reference robot
        self.td_armed = False

    # -- measurement ---------------------------------------------------------

    def measure(self, prev: BodyState, s: BodyState) -> tuple[TiltState, BodyState]:
        """Tilt feedback for the balance stack: truth or filtered attitude."""
        if not self.use_estimator:
            return dyn.tilt_of(s), s
        if self.ukf is None:
            e0 = est_mod.AttitudeEstimate(s.q, (0.0, 0.0, 0.0),
                                          np.diag([1e-4] * 3 + [1e-6] * 3))
            self.ukf = est_mod.AttitudeUkf(self.p, noise=self.noise, est=e0)
        if s.t - prev.t < 0.5 * self.p.loop_dt:
            # no motion interval to sample yet (first tick)
            e = self.ukf.est
            s_est = replace(s, q=e.q_est)
            return dyn.tilt_of(s_est), s_est
        z = self.imu.sample(prev, s)
        e = self.ukf.update(z, self.p.loop_dt)
        w_est = tuple(z.gyro[i] - e.gyro_bias_est[i] for i in range(3))
        s_est = replace(s, q=e.q_est, w_b=w_est)
        return dyn.tilt_of(s_est), s_est

    def est_euler(self, s: BodyState) -> tuple[float, float, float]:
        if self.ukf is not None:
            return dyn.euler_zyx(self.ukf.est.q_est)
        return dyn.euler_zyx(s.q)


def run_mission(script: MissionScript, initial: BodyState, p: RobotParams,
                values: dict[str, float], seed: int = 0, ground=None,
                timeout: float = 60.0, use_estimator: bool | None = None,
                injections=None, topple_limit: int = 3) -> TelemetryLog:
    """Simulate a mission script to completion, timeout, or repeated topple."""
    ex = Executive(p, values, use_estimator=use_estimator, seed=seed)
    log = TelemetryLog()
    s = initial
    if s.contact in (Contact.ROLLING_A, Contact.ROLLING_B):
        ex.mode = Mode.ROLLING
    elif s.contact is Contact.FLIGHT:
        ex.mode = Mode.AERIAL
    log.mode_changes.append((s.t, ex.mode.value, "initial"))
    idx = 0
    action_t0 = s.t
    injections = sorted(injections or [], key=lambda item: item[0])
    inj_i = 0
    dt = p.loop_dt
    n_max = int(round(timeout / dt))
    meas_prev = s  # state at the previous control tick, for IMU sampling
    pending_events = []

    for _ in range(n_max):
        if idx >= len(script.actions) and ex.mode in (Mode.BALANCING, Mode.ROLLING):
            break
        action = script.actions[idx] if idx < len(script.actions) else None

        while inj_i < len(injections) and injections[inj_i][0] <= s.t:
            s = injections[inj_i][1](s)
            inj_i += 1

        prev = s
        tilt_meas, s_meas = ex.measure(meas_prev, s)
        meas_prev = s
        cmd, sat, mt = _dispatch(ex, s, s_meas, tilt_meas, action, log)
        # log state, estimate, and command at the same epoch, before stepping
        e_tr = dyn.euler_zyx(s.q)
        tr = dyn.tilt_of(s)
        log.records.append(TelemetryRecord(
            t=s.t, mode=ex.mode.value,
            events=";".join(ev.kind.value for ev in pending_events),
            p=s.p, euler=e_tr, w_b=s.w_b, tilt=(tr.q_x, tr.q_y),
            est_euler=ex.est_euler(s), wheels=(s.omega_R, s.omega_L),
            tau=(cmd.tau_R, cmd.tau_L, cmd.tau_leg), sat=int(sat.any),
            leg=(s.d_leg, s.d_leg_rate),
            m_states=(mt.M[0], mt.M_dot[0], mt.M_ddot[0],
                      mt.M[1], mt.M_dot[1], mt.M_ddot[1]),
            v=s.v))
        s = dyn.step(s, cmd, dt, p)
        if s.p[2] < -0.5:
            raise MissionError("simulation diverged: CG fell through the ground "
                               "at t=%.3f" % s.t)
        events = dyn.detect_events(prev, s, p, ground=ground)
        log.events.extend(events)
        pending_events = events
        s, advanced = _transition(ex, s, events, action, action_t0, log, p)
        if advanced:
            idx += 1
            action_t0 = s.t
        if ex.topples > topple_limit:
            raise MissionError("repeated topple limit exceeded")
    else:
        if idx < len(script.actions):
            raise MissionError("mission timed out with actions remaining")
    log.final_state = s
    return log


_ZERO_MT = ctl.MomentumTriple((0.0, 0.0), (0.0, 0.0), (0.0, 0.0))


def _dispatch(ex: Executive, s: BodyState, s_meas: BodyState,
              tilt: TiltState, action: MissionAction | None, log: TelemetryLog):
    """Exactly one controller per tick, chosen by mode."""
    p = ex.p
    mode = ex.mode
    if mode is Mode.ROLLING:
        if action is not None and action.kind == "roll":
            cmd, sat = ctl.rolling_controller(action.v, action.yaw_rate, s, p)
        elif action is not None and action.kind == "figure8":
            t_lobe = 2.0 * math.pi * action.radius / max(action.v, 1e-6)
            t_rel = (s.t - ex.mode_t0) % (2.0 * t_lobe)
            yaw = action.v / action.radius * (1.0 if t_rel < t_lobe else -1.0)
            cmd, sat = ctl.rolling_controller(action.v, yaw, s, p)
        else:
            cmd, sat = ctl.rolling_controller(0.0, 0.0, s, p)
        return cmd, sat, _ZERO_MT
    if mode is Mode.SELF_RIGHTING:
        act = ex.sequencer.tick(s, s.t - ex.mode_t0, p)
        ex._sr_action = act
        return act.command, dyn.SatFlags(), _ZERO_MT
    if mode is Mode.BALANCING:
        cmd, sat, mt = ex.stack.command(s_meas, tilt, p, dt=p.loop_dt)
        if s.d_leg > 0.003:
            # drift the leg back to nominal retraction after a self-right
            ell = p.c + s.d_leg
            f_hold = p.m * (p.g - ell * (s.w_b[0] ** 2 + s.w_b[1] ** 2))
            tau_leg = (f_hold + 40.0 * (-0.08 - s.d_leg_rate)) * p.r_pinion
            tau_leg = min(max(tau_leg, -p.tau_leg_max), p.tau_leg_max)
            cmd = Command(cmd.tau_R, cmd.tau_L, tau_leg)
        return cmd, sat, mt
    if mode is Mode.LEANING:
        # the wheels cannot hold a static lean (their momentum budget is a
        # few hundredths of N m s), so the lean is a nudge into a guided
        # topple toward the bearing, wheels idle during the fall
        if s.t - ex.mode_t0 < ex.lean_nudge_t:
            tgt = ex.lean_target
            full = ctl.lean_setpoint(tgt.bearing, tgt.angle)
            mag = math.hypot(*full)
            if mag < 1e-9:
                return ex.stack.command(s_meas, tilt, p)
            dirn = (full[0] / mag, full[1] / mag)
            m_ddd = (ex.lean_nudge_acc * dirn[0], ex.lean_nudge_acc * dirn[1])
            H = dyn.compute_H(s_meas, p)
            cmd, sat = ctl.balance_torques(s_meas, H, m_ddd, p)
            return cmd, sat, _ZERO_MT
        return Command(), dyn.SatFlags(), _ZERO_MT
    if mode is Mode.JUMPING:
        # wheels quiet through the launch so the aerial phase starts with
        # torque headroom
        tau_leg = ctl.jump_torque_profile(s.t - ex.jump_t0, s.d_leg, p)
        return Command(0.0, 0.0, tau_leg), dyn.SatFlags(), _ZERO_MT
    if mode is Mode.AERIAL:
        target = _aerial_target(ex, s)
        cmd, sat = ctl.aerial_pointing(s_meas, target, ex.aerial, p,
                                       pre_apex=not ex.apex_seen)
        return cmd, sat, _ZERO_MT
    if mode is Mode.LANDING_DAMPING:
        tau_leg = ctl.landing_impedance(s.d_leg, s.d_leg_rate, p, ex.b_land)
        return Command(0.0, 0.0, tau_leg), dyn.SatFlags(), _ZERO_MT
    raise RuntimeError("unhandled mode %s" % mode)


def _aerial_target(ex: Executive, s: BodyState) -> tuple[float, float, float]:
    """Aim the leg along the ballistically-propagated liftoff velocity."""
    v0 = ex.liftoff_v or (0.0, 0.0, -1.0)
    t = s.t - ex.liftoff_t
    v = (v0[0], v0[1], v0[2] - ex.p.g * t)
    n = math.sqrt(v[0] ** 2 + v[1] ** 2 + v[2] ** 2)
    if n < 1e-6:
        return (1.0, 0.0, 0.0)
    return (v[0] / n, v[1] / n, v[2] / n)


def _set_mode(ex: Executive, log: TelemetryLog, t: float, mode: Mode,
              cause: str) -> None:
    if mode is not ex.mode:
        ex.mode = mode
        ex.mode_t0 = t
        log.mode_changes.append((t, mode.value, cause))


def _transition(ex: Executive, s: BodyState, events: list[Event],
                action: MissionAction | None, action_t0: float,
                log: TelemetryLog, p: RobotParams) -> tuple[BodyState, bool]:
    """Apply guard logic; returns (possibly converted state, action-advanced)."""
    kinds = {e.kind for e in events}
    advanced = False
    mode = ex.mode

    if EventKind.TOPPLED in kinds and mode not in (Mode.SELF_RIGHTING,
                                                   Mode.LANDING_DAMPING,
                                                   Mode.AERIAL):
        ex.topples += 1
        ex.sequencer = ctl.SelfRightSequencer()
        s = _settle_to_rolling(s, p)
        _set_mode(ex, log, s.t, Mode.SELF_RIGHTING, "toppled")
        return s, False

    if mode is Mode.ROLLING:
        if action is None:
            return s, False
        if action.kind in ("roll", "figure8"):
            dur = action.duration if action.kind == "roll" \
                else 2.0 * (2.0 * math.pi * action.radius / max(action.v, 1e-6)) * action.laps
            if s.t - action_t0 >= dur:
                advanced = True
        elif action.kind == "self_right":
            ex.sequencer = ctl.SelfRightSequencer()
            _set_mode(ex, log, s.t, Mode.SELF_RIGHTING, "mission self_right")
        else:
            # mission wants balancing work; must self-right first
            ex.sequencer = ctl.SelfRightSequencer()
            _set_mode(ex, log, s.t, Mode.SELF_RIGHTING, "mission implies upright")
        return s, advanced

    if mode is Mode.SELF_RIGHTING:
        act = getattr(ex, "_sr_action", None)
        if act is not None and act.transfer == "flip":
            s = _brake_flip(s, ex, p)
        if ex.sequencer.phase == "flip" and s.pivot_b is not None:
            planted, s2 = _try_plant(s, p)
            if planted:
                s = s2
                ex.sequencer.notify_planted()
        if act is not None and act.done:
            _set_mode(ex, log, s.t, Mode.BALANCING, "capture region")
            if action is not None and action.kind == "self_right":
                advanced = True
        return s, advanced

    if mode is Mode.BALANCING:
        if action is None:
            return s, False
        if action.kind == "balance":
            if s.t - action_t0 >= action.duration:
                advanced = True
        elif action.kind == "lean":
            ex.lean_target = action
            ex.lean_ref = (0.0, 0.0)
            _set_mode(ex, log, s.t, Mode.LEANING, "mission lean")
        elif action.kind in ("roll", "figure8"):
            s = _settle_to_rolling(s, p)
            _set_mode(ex, log, s.t, Mode.ROLLING, "mission roll")
        elif action.kind == "self_right":
            advanced = True  # already upright
        elif action.kind == "jump":
            # jump without a lean: go straight up
            ex.lean_target = MissionAction("lean", bearing=0.0, angle=0.0)
            ex.lean_ref = (0.0, 0.0)
            _set_mode(ex, log, s.t, Mode.LEANING, "mission jump")
        elif action.kind == "land_to":
            advanced = True
        return s, advanced

    if mode is Mode.LEANING:
        tgt = ex.lean_target
        full = ctl.lean_setpoint(tgt.bearing, tgt.angle)
        t = dyn.tilt_of(s)
        tilt_mag = math.hypot(t.q_x, t.q_y)
        rate_to = t.q_x_rate * full[0] + t.q_y_rate * full[1]
        rate_mag = math.hypot(t.q_x_rate, t.q_y_rate)
        if rate_to < 0.0:
            rate_mag = -rate_mag
        # fire when the predicted velocity angle at liftoff reaches the
        # commanded lean; the lead term accounts for tilt growth during the
        # extension and for the tangential velocity the rotation adds
        pred = tilt_mag + max(rate_mag, 0.0) * ex.t_extend
        if pred >= abs(tgt.angle) - ex.jump_fire_lead:
            if action is not None and action.kind == "lean":
                advanced = True
            ex.jump_t0 = s.t
            _set_mode(ex, log, s.t, Mode.JUMPING, "lean reached")
        return s, advanced

    if mode is Mode.JUMPING:
        if action is not None and action.kind == "jump":
            advanced = True
        lo = next((e for e in events if e.kind is EventKind.LIFTOFF), None)
        if lo is not None:
            ex.liftoff_v = ctl.liftoff_velocity_estimate(
                s.d_leg_rate if s.d_leg_rate > 0 else _axial_speed(s),
                s.w_b, s.q, p, s.d_leg)
            # once airborne the launch velocity is simply the CG velocity
            ex.liftoff_v = s.v
            ex.liftoff_t = s.t
            ex.apex_seen = False
            ex.td_armed = False
            s = dyn.stance_to_flight(s, p)
            _set_mode(ex, log, s.t, Mode.AERIAL, "liftoff")
        return s, advanced

    if mode is Mode.AERIAL:
        if EventKind.APEX in kinds:
            ex.apex_seen = True
        # the foot leaves the ground at exactly zero height, so touchdown is
        # armed only after real clearance
        if not ex.td_armed and dyn.foot_position(s, p)[2] > 0.01:
            ex.td_armed = True
        td = next((e for e in events if e.kind is EventKind.TOUCHDOWN), None)
        if td is not None and not ex.td_armed:
            td = None
        if td is not None:
            ex.touchdown_speed = math.sqrt(sum(c * c for c in s.v))
            contact = dyn.foot_position(s, p)
            s = dyn.flight_to_stance(s, p, contact)
            if action is not None and action.kind == "land_to":
                ex.land_target = action.target
                advanced = True
            _set_mode(ex, log, s.t, Mode.LANDING_DAMPING, "touchdown")
        return s, advanced

    if mode is Mode.LANDING_DAMPING:
        lo = next((e for e in events if e.kind is EventKind.LIFTOFF), None)
        if lo is not None:
            # bounce: re-engage aerial control
            ex.liftoff_v = s.v
            ex.liftoff_t = s.t
            ex.apex_seen = False
            ex.td_armed = False
            s = dyn.stance_to_flight(s, p)
            _set_mode(ex, log, s.t, Mode.AERIAL, "bounce")
            return s, False
        settled = abs(s.d_leg_rate) < 0.05 and s.t - ex.mode_t0 > 0.05
        if settled:
            if ex.land_target == "balancing" and dyn.tilt_angle(s) < 0.25:
                _set_mode(ex, log, s.t, Mode.BALANCING, "landing dissipated")
            else:
                s = _settle_to_rolling(s, p)
                _set_mode(ex, log, s.t, Mode.ROLLING, "landing dissipated")
        return s, advanced

    return s, advanced


def _axial_speed(s: BodyState) -> float:
    vb = dyn.rotate_inv(s.q, s.v)
    return vb[2]


def _settle_to_rolling(s: BodyState, p: RobotParams) -> BodyState:
    """Kinematic settle onto the wide rolling side after landing or toppling."""
    vx, vy = s.v[0], s.v[1]
    sp = math.hypot(vx, vy)
    if sp > 0.05:
        heading = math.atan2(vy, vx)
    else:
        zb = dyn.rotate(s.q, (0.0, 0.0, 1.0))
        heading = math.atan2(-zb[1], -zb[0])
    return dyn.make_rolling_state(s.t, s.p[0], s.p[1], heading, p,
                                  side=Contact.ROLLING_A, speed=sp, d_leg=0.0)


def _brake_flip(s: BodyState, ex: Executive, p: RobotParams) -> BodyState:
    """Sudden brake: lock the wheels and pivot over the leading chassis edge.

    The pivot sits on the ground ahead of the CG: forward along the leg axis
    (which points along the travel direction while rolling) by edge_forward,
    down by the rolling support height. The wheels lock, so their spin
    momentum joins the pitch-over momentum through the transfer map.
    """
    plan = ex.sequencer.plan
    n_b = dyn._side_normal(s.contact)
    h = p.r_eff
    pivot_b = (-h * n_b[0], -h * n_b[1], -plan.edge_forward)
    anchor = _world_pivot(s, pivot_b)
    return dyn.pivot_transfer(s, p, pivot_b, anchor, lock_wheels=True)


def _world_pivot(s: BodyState, pivot_b) -> tuple[float, float, float]:
    w = dyn.rotate(s.q, pivot_b)
    return (s.p[0] + w[0], s.p[1] + w[1], 0.0)


def _try_plant(s: BodyState, p: RobotParams) -> tuple[bool, BodyState]:
    """Transfer the pivot to the foot once it reaches the ground, descending."""
    fp = dyn.foot_position(s, p)
    if fp[2] > 0.0:
        return False, s
    fv = dyn.foot_velocity(s, p)
    if fv[2] > 0.0:
        return False, s
    contact = (fp[0], fp[1], 0.0)
    return True, dyn.flight_to_stance(s, p, contact)
