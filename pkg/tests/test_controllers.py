import dataclasses
import math

import numpy as np
import pytest

from monohop import dynamics as dyn
from monohop import controllers as ctl
from monohop.controllers import (BalanceStack, ConditioningError,
                                 MomentumTriple, OffsetEstimate,
                                 aerial_pointing, balance_control_law,
                                 balance_torques, compute_balance_gains,
                                 gyro_compensation, jump_torque_profile,
                                 landing_impedance, lean_setpoint,
                                 liftoff_velocity_estimate, momentum_states,
                                 offset_observer_update, rolling_controller)
from monohop.dynamics import (BodyState, Command, Contact, TiltState,
                              compute_H, quat_from_rotvec, quat_normalize,
                              step, tilt_of, upright_state)
from monohop.params import AerialGains, params_from_values, reference_values


REF_POLES = (-7.0, -8.0, -9.0)


@pytest.fixture(scope="module")
def gains(p):
    return compute_balance_gains(p, REF_POLES)


@pytest.fixture()
def aerial_gains(values):
    return AerialGains(values["aerial_kp"], values["aerial_kd"],
                       values["leg_aim_limit"])


# ---------------------------------------------------------------------------
# gyroscopic compensation

def test_gyro_zero_cases(p):
    assert gyro_compensation(100.0, -50.0, 0.0, p) == (0.0, 0.0)
    assert gyro_compensation(0.0, 0.0, 2.0, p) == (0.0, 0.0)


def test_gyro_linearity(p):
    base = gyro_compensation(80.0, -40.0, 1.5, p)
    # linear in each wheel speed and in the spin rate individually
    a = gyro_compensation(160.0, -40.0, 1.5, p)
    b = gyro_compensation(0.0, -40.0, 1.5, p)
    assert a[0] + b[0] == pytest.approx(2 * base[0])
    assert a[1] + b[1] == pytest.approx(2 * base[1])
    c = gyro_compensation(80.0, -40.0, 3.0, p)
    assert c[0] == pytest.approx(2 * base[0])
    assert c[1] == pytest.approx(2 * base[1])


def test_gyro_values_at_reference_point(p):
    """Direct evaluation at I_w=1e-4, omega_R=100, omega_L=-100, wz=2.

    tau_R follows the published expression term for term. The own-speed term
    of tau_L carries the opposite sign: the momentum-balance derivation (and
    the cancellation test below) fixes it, since the exact canceller is
    tau_L = -I_w*wz*(omega_L*tan(2t) + omega_R/cos(2t)).
    """
    values = reference_values()
    values["i_wheel"] = 1e-4
    values["i_wheel_t"] = 1e-4
    p2 = params_from_values(values)
    t30 = math.tan(math.radians(30.0))
    s30 = 1.0 / math.cos(math.radians(30.0))
    tau_r, tau_l = gyro_compensation(100.0, -100.0, 2.0, p2)
    assert tau_r == pytest.approx(0.02 * t30 - 0.02 * s30, rel=1e-12)
    assert tau_l == pytest.approx(0.02 * t30 - 0.02 * s30, rel=1e-12)


def test_gyro_is_exact_canceller(p):
    """Momentum-balance oracle: with the compensation applied, a pure spin
    about the leg axis leaves the chassis angular acceleration untouched."""
    s = BodyState(t=0.0, p=(0, 0, 5.0), q=(1, 0, 0, 0), v=(0, 0, 0),
                  w_b=(0.0, 0.0, 2.5), omega_R=70.0, omega_L=40.0,
                  d_leg=0.0, d_leg_rate=0.0, contact=Contact.FLIGHT)
    tau_r, tau_l = gyro_compensation(s.omega_R, s.omega_L, s.w_b[2], p)
    qd, wd, ud, v, a = dyn.flight_dynamics(s, Command(tau_r, tau_l, 0.0), p)
    assert abs(wd[0]) < 1e-12 and abs(wd[1]) < 1e-12
    # without compensation the wheel momenta drive precession
    qd, wd_off, ud, v, a = dyn.flight_dynamics(s, Command(), p)
    assert math.hypot(wd_off[0], wd_off[1]) > 1.0


# ---------------------------------------------------------------------------
# aerial pointing

def test_aerial_fixed_point(p, aerial_gains):
    s = upright_state(p)
    s = dataclasses.replace(s, contact=Contact.FLIGHT)
    cmd, flags = aerial_pointing(s, (0.0, 0.0, -1.0), aerial_gains, p)
    assert cmd.tau_R == 0.0 and cmd.tau_L == 0.0


def test_aerial_target_along_body_x(p, aerial_gains):
    s = upright_state(p)
    s = dataclasses.replace(s, contact=Contact.FLIGHT)
    cmd, flags = aerial_pointing(s, (1.0, 0.0, 0.0), aerial_gains, p)
    assert cmd.tau_L == pytest.approx(min(aerial_gains.k_p, p.tau_wheel_max))
    assert cmd.tau_R == pytest.approx(0.0)


def test_aerial_decomposes_into_pd_plus_gyro(p):
    gains = AerialGains(k_p=0.05, k_d=0.01, leg_aim_limit=math.radians(15))
    q = quat_from_rotvec((0.05, -0.03, 0.0))
    s = BodyState(t=0.0, p=(0, 0, 5.0), q=quat_normalize(q), v=(0, 0, 0),
                  w_b=(0.2, -0.1, 1.5), omega_R=30.0, omega_L=-20.0,
                  d_leg=0.0, d_leg_rate=0.0, contact=Contact.FLIGHT)
    target = (0.0, 0.0, -1.0)
    cmd, flags = aerial_pointing(s, target, gains, p)
    vb = dyn.rotate_inv(s.q, target)
    tg = gyro_compensation(s.omega_R, s.omega_L, s.w_b[2], p)
    assert cmd.tau_R == pytest.approx(-gains.k_p * vb[1] + gains.k_d * s.w_b[0] + tg[0])
    assert cmd.tau_L == pytest.approx(gains.k_p * vb[0] + gains.k_d * s.w_b[1] + tg[1])


def test_aerial_rejects_non_unit_target(p, aerial_gains):
    s = dataclasses.replace(upright_state(p), contact=Contact.FLIGHT)
    with pytest.raises(ValueError):
        aerial_pointing(s, (0.0, 0.0, -1.1), aerial_gains, p)


def test_target_elevation_clamp():
    from monohop.controllers import clamp_target_elevation
    lim = math.radians(15)
    t = clamp_target_elevation((0.0, 0.0, 1.0), lim)
    assert t[2] == pytest.approx(math.sin(lim))
    t = clamp_target_elevation((math.cos(0.9), 0.0, math.sin(0.9)), lim)
    assert t[2] == pytest.approx(math.sin(lim))
    assert math.hypot(t[0], t[1]) == pytest.approx(math.cos(lim))
    below = (math.cos(-0.5), 0.0, math.sin(-0.5))
    assert clamp_target_elevation(below, lim) == below


# ---------------------------------------------------------------------------
# momentum states and the balance law

def test_momentum_states_zero(p, gains):
    s = upright_state(p)
    mt = momentum_states(TiltState(0, 0, 0, 0), s, gains)
    assert mt.M == (0.0, 0.0)
    assert mt.M_dot == (0.0, 0.0)
    assert mt.M_ddot == (0.0, 0.0)


def test_momentum_states_substitution_identity(p, gains):
    s = upright_state(p)
    mt = momentum_states(TiltState(0.01, 0.0, 0.0, 0.0), s, gains)
    assert mt.M_dot[0] == pytest.approx(0.01)
    assert mt.M[0] == 0.0 and mt.M_ddot[0] == 0.0


def test_momentum_states_equal_angular_momentum_over_mgc(p, gains):
    # with wheels spinning at zero tilt rate, M is the (scaled) momentum the
    # wheels hold about the foot, negative of the chassis share
    s = dataclasses.replace(upright_state(p), omega_R=20.0, omega_L=-5.0)
    H = compute_H(s, p)
    mt = momentum_states(TiltState(0, 0, 0, 0), s, gains)
    mgc = p.m * p.g * p.c
    expect_x = (H[0, 2] * 20.0 + H[0, 3] * -5.0) / mgc
    assert mt.M[0] == pytest.approx(expect_x, rel=1e-9)


def test_balance_law_terms(gains):
    mt = MomentumTriple(M=(0.0, 0.0), M_dot=(0.0, 0.0), M_ddot=(0.0, 0.0))
    assert balance_control_law(mt, gains, OffsetEstimate()) == (0.0, 0.0)
    mt = MomentumTriple(M=(0.0, 0.0), M_dot=(0.01, 0.0), M_ddot=(0.0, 0.0))
    out = balance_control_law(mt, gains, OffsetEstimate())
    assert out[0] == pytest.approx(gains.k_d[0] * 0.01)
    assert out[1] == 0.0


def test_closed_loop_decay_matches_slowest_pole(p, gains):
    # simulate the linearized per-axis closed loop and fit the tail decay
    stack = BalanceStack(gains, OffsetEstimate(gain=0.0))
    s = upright_state(p, q_x=0.01)
    tilts = []
    for _ in range(1500):
        t = tilt_of(s)
        cmd, flags, mt = stack.command(s, t, p)
        s = step(s, cmd, p.loop_dt, p)
        tilts.append(abs(tilt_of(s).q_x) + 1e-300)
    # fit exp rate over the tail (after fast poles die out)
    lo, hi = 700, 1300
    ts = np.arange(lo, hi) * p.loop_dt
    ys = np.log(np.array(tilts[lo:hi]))
    rate = np.polyfit(ts, ys, 1)[0]
    assert rate == pytest.approx(-7.0, rel=0.08)


def test_balance_torques_equilibrium(p, gains):
    s = upright_state(p)
    H = compute_H(s, p)
    cmd, flags = balance_torques(s, H, (0.0, 0.0), p)
    assert cmd.tau_R == pytest.approx(0.0, abs=1e-15)
    assert cmd.tau_L == pytest.approx(0.0, abs=1e-15)


def test_balance_torques_eq4_roundtrip(p):
    """Algebraic oracle: the returned wheel accelerations substituted back
    into the tilt rows must reproduce the commanded tilt accelerations."""
    rng = np.random.default_rng(5)
    for _ in range(50):
        q_x, q_y = rng.uniform(-0.001, 0.001, size=2)
        s = upright_state(p, q_x=q_x, q_y=q_y)
        s = dataclasses.replace(s, omega_R=rng.uniform(-30, 30),
                                omega_L=rng.uniform(-30, 30))
        H = compute_H(s, p)
        m_ddd = tuple(rng.uniform(-1.0, 1.0, size=2))
        cmd, flags = balance_torques(s, H, m_ddd, p)
        assert not flags.any
        qd, wd, ud, dr, ddd = dyn.stance_dynamics(s, cmd, p)
        t = tilt_of(s)
        mgl = p.m * p.g * (p.c + s.d_leg)
        # row residuals of the 4x4 equation at the achieved accelerations
        ach_x = (mgl * math.sin(t.q_x) * math.cos(t.q_y)
                 - H[0, 2] * ud[0] - H[0, 3] * ud[1]) / H[0, 0]
        ach_y = (mgl * math.sin(t.q_y) * math.cos(t.q_x)
                 - H[1, 2] * ud[0] - H[1, 3] * ud[1]) / H[1, 1]
        assert ach_x == pytest.approx(m_ddd[0], rel=1e-8, abs=1e-9)
        assert ach_y == pytest.approx(m_ddd[1], rel=1e-8, abs=1e-9)
        # and the true tilt accelerations from the full dynamics agree
        assert wd[0] == pytest.approx(m_ddd[0], rel=1e-6, abs=1e-8)
        assert wd[1] == pytest.approx(m_ddd[1], rel=1e-6, abs=1e-8)


def test_balance_torques_conditioning_error(p):
    s = upright_state(p)
    H = compute_H(s, p)
    # parallel wheel axes: the coupling block loses rank
    H = H.copy()
    H[0:2, 2] = H[0:2, 3]
    H[2, 0:2] = H[3, 0:2]
    with pytest.raises(ConditioningError, match="condition number"):
        balance_torques(s, H, (0.1, 0.0), p)


def test_near_parallel_axes_from_large_cant():
    # theta near pi/4 leaves the two axles nearly collinear along the bisector
    values = reference_values()
    values["theta"] = math.pi / 4 - 1e-9
    p2 = params_from_values(values)
    s = upright_state(p2)
    H = compute_H(s, p2)
    with pytest.raises(ConditioningError):
        balance_torques(s, H, (0.1, 0.0), p2)


# ---------------------------------------------------------------------------
# offset observer

def test_observer_stays_zero_when_balanced(p, gains):
    off = OffsetEstimate(gain=0.5)
    t = TiltState(0.0, 0.0, 0.0, 0.0)
    for _ in range(1000):
        off = offset_observer_update(off, t, Command(), 0.002)
    assert off.b_x == 0.0 and off.b_y == 0.0


def test_observer_frozen_when_saturated(p):
    off = OffsetEstimate(b_x=0.01, gain=0.5)
    t = TiltState(0.1, 0.0, 0.0, 0.0)
    out = offset_observer_update(off, t, Command(), 0.002, saturated=True)
    assert out.b_x == off.b_x


def test_observer_converges_to_static_equilibrium(p, values):
    """CG displaced 5 mm at c = 0.15 m: the balance point moves to
    atan(0.005/0.15) and the observer must find it."""
    vals = dict(values)
    vals["cg_offset_y"] = 0.005
    p2 = params_from_values(vals)
    gains = compute_balance_gains(p2, REF_POLES)
    stack = BalanceStack(gains, OffsetEstimate(gain=1.5))
    s = upright_state(p2, q_x=-0.02)
    for _ in range(4000):
        t = tilt_of(s)
        cmd, flags, mt = stack.command(s, t, p2, dt=p2.loop_dt)
        s = step(s, cmd, p2.loop_dt, p2)
    b_expect = math.atan2(0.005, 0.15)
    # the offset appears about the x tilt axis for a +y CG shift
    assert abs(stack.observer.b_x) == pytest.approx(b_expect, rel=0.15)
    # and the robot is actually balanced there: tilt steady, wheels quiet
    t = tilt_of(s)
    assert abs(abs(t.q_x) - b_expect) < 0.005
    assert abs(t.q_x_rate) < 0.01


# ---------------------------------------------------------------------------
# lean setpoints

def test_lean_zero(p):
    assert lean_setpoint(0.7, 0.0) == (0.0, 0.0)


def test_lean_bearing_zero(p):
    q_x, q_y = lean_setpoint(0.0, math.radians(20))
    assert q_x == pytest.approx(0.0, abs=1e-12)
    assert q_y == pytest.approx(math.radians(20))


def test_lean_bearing_45_rotation_composition(p):
    q_x, q_y = lean_setpoint(math.radians(45), 0.2)
    assert abs(q_x) == pytest.approx(0.2 / math.sqrt(2), rel=0.02)
    assert abs(q_y) == pytest.approx(0.2 / math.sqrt(2), rel=0.02)
    # verify via rotation composition: leg axis lands 0.2 rad from vertical,
    # leaning toward the bearing
    s = upright_state(params_from_values(reference_values()), q_x=q_x, q_y=q_y)
    zb = dyn.rotate(s.q, (0.0, 0.0, 1.0))
    assert math.acos(zb[2]) == pytest.approx(0.2, rel=1e-6)
    azim = math.degrees(math.atan2(zb[1], zb[0]))
    assert azim == pytest.approx(45.0, abs=1.0)


def test_lean_limit(p):
    with pytest.raises(ValueError):
        lean_setpoint(0.0, 0.6)


# ---------------------------------------------------------------------------
# leg controllers

def test_jump_profile(p):
    assert jump_torque_profile(0.0, 0.0, p) == p.tau_leg_max
    assert jump_torque_profile(0.1, p.leg_travel, p) == 0.0


def test_landing_impedance_signs_and_passivity(p):
    assert landing_impedance(0.1, 0.0, p) == 0.0
    tau = landing_impedance(0.1, -1.0, p)
    assert tau > 0.0
    rng = np.random.default_rng(0)
    for rate in rng.uniform(-4, 4, size=200):
        tau = landing_impedance(0.1, rate, p, b_land=0.1)
        assert tau * rate <= 0.0
        assert abs(tau) <= p.tau_leg_max


def test_landing_drop_dissipates(p, values):
    """Energy-audit oracle: drop from the jump apex height, leg aligned down;
    the damper must kill at least 75 percent of the touchdown speed."""
    v_td = math.sqrt(2 * p.g * 0.59)
    s = upright_state(p, d_leg=p.leg_travel)
    s = dataclasses.replace(s, contact=Contact.FLIGHT,
                            p=(0.0, 0.0, p.c + p.leg_travel + 1e-4),
                            v=(0.0, 0.0, -v_td))
    s = dyn.flight_to_stance(s, p, (0.0, 0.0, 0.0))
    td_speed = v_td
    for _ in range(400):
        tau = landing_impedance(s.d_leg, s.d_leg_rate, p,
                                b_land=values["b_land"])
        s = step(s, Command(0, 0, tau), p.loop_dt, p)
        if abs(s.d_leg_rate) < 0.02 and s.t > 0.05:
            break
    resid = math.sqrt(sum(c * c for c in s.v))
    assert resid < 0.25 * td_speed


# ---------------------------------------------------------------------------
# rolling control

def test_rolling_controller_rest_zero(p):
    s = dyn.make_rolling_state(0.0, 0, 0, 0.0, p)
    cmd, flags = rolling_controller(0.0, 0.0, s, p)
    assert cmd.tau_R == 0.0 and cmd.tau_L == 0.0


def test_rolling_controller_forward_symmetric(p):
    s = dyn.make_rolling_state(0.0, 0, 0, 0.0, p)
    cmd, flags = rolling_controller(0.5, 0.0, s, p)
    assert cmd.tau_R == pytest.approx(cmd.tau_L)
    assert cmd.tau_R > 0.0


# ---------------------------------------------------------------------------
# liftoff velocity estimate

def test_liftoff_estimate_vertical(p):
    v = liftoff_velocity_estimate(3.0, (0, 0, 0), (1, 0, 0, 0), p, p.leg_travel)
    assert v == pytest.approx((0.0, 0.0, 3.0))


def test_liftoff_estimate_leaned(p):
    q = quat_from_rotvec((0.0, math.radians(20), 0.0))
    v = liftoff_velocity_estimate(3.0, (0, 0, 0), q, p, p.leg_travel)
    assert v[2] == pytest.approx(3.0 * math.cos(math.radians(20)))
    assert v[0] == pytest.approx(3.0 * math.sin(math.radians(20)))


def test_liftoff_estimate_matches_simulation(p, values):
    """Run the real jump and compare the estimate to the simulator truth."""
    from monohop.executive import MissionScript, run_mission
    script = MissionScript.parse(
        "balance duration=0.3\nlean bearing_deg=0 angle_deg=15\njump\n"
        "land_to target=rolling")
    log = run_mission(script, upright_state(p), p, values, timeout=15.0)
    # compare at the first aerial record: log stores the true CG velocity
    recs = log.records
    i = next(i for i, r in enumerate(recs) if r.mode == "aerial")
    prev = recs[i - 1]
    est = liftoff_velocity_estimate(prev.leg[1], prev.w_b,
                                    _quat_from_euler(prev.euler), p,
                                    prev.leg[0])
    truth = recs[i].v
    err = math.dist(est, truth) / math.hypot(*truth)
    assert err < 0.02


def _quat_from_euler(euler):
    yaw, pitch, roll = euler
    qz = quat_from_rotvec((0, 0, yaw))
    qy = quat_from_rotvec((0, pitch, 0))
    qx = quat_from_rotvec((roll, 0, 0))
    return quat_normalize(dyn.quat_mul(dyn.quat_mul(qz, qy), qx))


# ---------------------------------------------------------------------------
# saturation

def test_all_outputs_respect_limits(p, gains, aerial_gains):
    rng = np.random.default_rng(11)
    stack = BalanceStack(gains, OffsetEstimate())
    for _ in range(100):
        q = quat_from_rotvec(tuple(rng.uniform(-0.3, 0.3, size=3)))
        s = BodyState(t=0.0, p=(0, 0, 1.0), q=quat_normalize(q), v=(0, 0, 0),
                      w_b=tuple(rng.uniform(-3, 3, size=3)),
                      omega_R=rng.uniform(-180, 180),
                      omega_L=rng.uniform(-180, 180),
                      d_leg=0.0, d_leg_rate=0.0, contact=Contact.FLIGHT)
        tgt = rng.standard_normal(3)
        tgt /= np.linalg.norm(tgt)
        cmd, flags = aerial_pointing(s, tuple(tgt), aerial_gains, p)
        assert abs(cmd.tau_R) <= p.tau_wheel_max
        assert abs(cmd.tau_L) <= p.tau_wheel_max
        s2 = dataclasses.replace(s, contact=Contact.STANCE)
        cmd, flags, mt = stack.command(s2, tilt_of(s2), p)
        assert abs(cmd.tau_R) <= p.tau_wheel_max
        assert abs(cmd.tau_L) <= p.tau_wheel_max
