"""Acceptance suite: every release criterion at its stated tolerance.

Each test prints one PASS/FAIL line (visible with ``pytest -s`` or in the
captured output) so a run of this module doubles as the acceptance report.
"""

import dataclasses
import math
import time

import numpy as np
import pytest

from monohop import controllers as ctl
from monohop import dynamics as dyn
from monohop.controllers import (BalanceStack, OffsetEstimate, aerial_pointing,
                                 balance_torques, compute_balance_gains,
                                 gyro_compensation)
from monohop.dynamics import (BodyState, Command, Contact, compute_H,
                              quat_from_rotvec, quat_normalize, step, tilt_of,
                              total_angular_momentum, upright_state)
from monohop.executive import MissionScript, run_mission
from monohop.harness import ScenarioConfig, run_scenario
from monohop.params import AerialGains, pole_placement


def report(name: str, ok: bool, detail: str) -> None:
    print("ACCEPTANCE %s - %s: %s" % ("PASS" if ok else "FAIL", name, detail))
    assert ok, "%s: %s" % (name, detail)


REF_POLES = (-7.0, -8.0, -9.0)


def test_jump_reproduction(tmp_path):
    t0 = time.time()
    summary = run_scenario(ScenarioConfig(scenario="lean_jump",
                                          out_path=str(tmp_path / "lj.csv")))
    wall = time.time() - t0
    apex = summary["apex_height_m"]
    rng = summary["range_m"]
    ok = (abs(apex - 0.59) <= 0.10 * 0.59
          and abs(rng - 0.82) <= 0.15 * 0.82
          and wall < 10.0)
    report("jump reproduction", ok,
           "apex %.3f m (0.59 +-10%%), range %.3f m (0.82 +-15%%), %.1f s wall"
           % (apex, rng, wall))


def test_low_gravity_scaling(tmp_path):
    summary = run_scenario(ScenarioConfig(scenario="enceladus_scale",
                                          out_path=str(tmp_path / "enc.csv")))
    apex = summary["apex_height_m"]
    rng = summary["range_m"]
    ok = apex > 40.0 and rng > 60.0
    report("low-gravity scaling", ok,
           "apex %.1f m (>40), range %.1f m (>60) at g/80" % (apex, rng))


def test_disturbance_envelope(tmp_path):
    summary = run_scenario(ScenarioConfig(scenario="disturbance",
                                          out_path=str(tmp_path / "d.csv")))
    j_max = summary["max_rejected_impulse_Nms"]
    resp = summary["responses"]
    ok = (0.01 <= j_max <= 0.054
          and resp["J=0.013"]["recovered"] and resp["J=0.009"]["recovered"])
    report("disturbance envelope", ok,
           "max rejected %.4f N m s in [0.01, 0.054]; 0.013/0.009 recovered: "
           "%s/%s" % (j_max, resp["J=0.013"]["recovered"],
                      resp["J=0.009"]["recovered"]))


def test_pole_placement_and_closed_loop(p):
    # round-trip precision of the gain synthesis
    rng = np.random.default_rng(1)
    worst_rt = 0.0
    for _ in range(20):
        poles = -rng.uniform(0.5, 12.0, size=3)
        k_dd, k_d, k_M = pole_placement(poles)
        back = np.sort(np.roots([1.0, -k_dd, -k_d, -k_M]).real)
        worst_rt = max(worst_rt, float(np.max(np.abs(back - np.sort(poles)))))
    # numerical linearization of the full stance closed loop at upright
    gains = compute_balance_gains(p, REF_POLES)
    stack = BalanceStack(gains, OffsetEstimate(gain=0.0))

    def f(x):
        s = upright_state(p, q_x=x[0], q_y=x[1])
        ca = math.cos(x[0])
        sa = math.sin(x[0])
        ww = (x[2], x[3] * ca, x[3] * sa)
        wb = dyn.rotate_inv(s.q, ww)
        s = dataclasses.replace(s, w_b=wb, omega_R=x[4], omega_L=x[5])
        t = tilt_of(s)
        cmd, flags, mt = stack.command(s, t, p)
        qd, wd, ud, dr, ddd = dyn.stance_dynamics(s, cmd, p)
        return np.array([t.q_x_rate, t.q_y_rate, wd[0], wd[1], ud[0], ud[1]])

    eps = 1e-6
    A = np.zeros((6, 6))
    for i in range(6):
        dx = np.zeros(6)
        dx[i] = eps
        A[:, i] = (f(dx) - f(-dx)) / (2 * eps)
    ev = np.sort(np.linalg.eigvals(A).real)
    want = np.sort(np.array(REF_POLES * 2, dtype=float))
    rel = np.max(np.abs(ev - want) / np.abs(want))
    ok = worst_rt < 1e-9 and rel < 0.05
    report("pole placement", ok,
           "round-trip %.2e (<1e-9); closed-loop eigenvalue error %.2f%% (<5%%)"
           % (worst_rt, 100 * rel))


def test_torque_mapping_consistency(p):
    """Commanded versus achieved third momentum derivative on 1000 random
    unsaturated states near upright."""
    rng = np.random.default_rng(12)
    worst = 0.0
    for _ in range(1000):
        s = upright_state(p, q_x=rng.uniform(-1e-3, 1e-3),
                          q_y=rng.uniform(-1e-3, 1e-3))
        s = dataclasses.replace(s, omega_R=rng.uniform(-30, 30),
                                omega_L=rng.uniform(-30, 30))
        H = compute_H(s, p)
        m_ddd = (rng.uniform(0.2, 1.0) * rng.choice([-1, 1]),
                 rng.uniform(0.2, 1.0) * rng.choice([-1, 1]))
        cmd, flags = balance_torques(s, H, m_ddd, p)
        assert not flags.any
        qd, wd, ud, dr, ddd = dyn.stance_dynamics(s, cmd, p)
        worst = max(worst,
                    abs(wd[0] - m_ddd[0]) / abs(m_ddd[0]),
                    abs(wd[1] - m_ddd[1]) / abs(m_ddd[1]))
    ok = worst < 1e-6
    report("torque mapping consistency", ok,
           "worst relative error %.2e over 1000 states (<1e-6)" % worst)


def test_gyroscopic_compensation(p):
    def fly(compensated: bool) -> float:
        s = BodyState(t=0.0, p=(0, 0, 50.0), q=(1, 0, 0, 0), v=(0, 0, 0),
                      w_b=(0.0, 0.0, 2.0), omega_R=100.0, omega_L=-100.0,
                      d_leg=0.0, d_leg_rate=0.0, contact=Contact.FLIGHT)
        for _ in range(500):
            if compensated:
                tr, tl = gyro_compensation(s.omega_R, s.omega_L, s.w_b[2], p)
            else:
                tr = tl = 0.0
            s = step(s, Command(tr, tl, 0.0), p.loop_dt, p)
        r = dyn.rot_matrix(s.q)
        return math.degrees(math.acos(max(-1.0, min(1.0, r[8]))))

    dev_on = fly(True)
    dev_off = fly(False)
    ok = dev_on < 0.5 and dev_off > 5.0
    report("gyroscopic compensation", ok,
           "leg-axis deviation %.3f deg over 1 s (<0.5); uncompensated %.1f deg"
           % (dev_on, dev_off))


def test_conservation(p):
    s = BodyState(t=0.0, p=(0, 0, 50.0), q=quat_normalize((0.9, 0.2, -0.3, 0.1)),
                  v=(1.0, -0.5, 2.0), w_b=(0.7, -1.1, 1.8),
                  omega_R=60.0, omega_L=-45.0, d_leg=0.1, d_leg_rate=0.0,
                  contact=Contact.FLIGHT)
    L0 = total_angular_momentum(s, p)
    worst_q = 0.0
    for i in range(500):
        tr = 0.35 * math.sin(11.0 * i * p.loop_dt)
        tl = 0.25 * math.cos(17.0 * i * p.loop_dt + 0.3)
        s = step(s, Command(tr, tl, 0.0), p.loop_dt, p)
        worst_q = max(worst_q, abs(sum(c * c for c in s.q) - 1.0))
    rel = float(np.linalg.norm(total_angular_momentum(s, p) - L0)
                / np.linalg.norm(L0))
    ok = rel < 1e-6 and worst_q < 1e-9
    report("conservation", ok,
           "momentum drift %.2e (<1e-6); quaternion norm error %.2e (<1e-9)"
           % (rel, worst_q))


def test_aerial_convergence(p, values):
    gains = AerialGains(values["aerial_kp"], values["aerial_kd"],
                        values["leg_aim_limit"])
    rng = np.random.default_rng(7)
    target = (0.0, 0.0, -1.0)

    def pointing_error(s):
        foot = dyn.rotate(s.q, (0.0, 0.0, -1.0))
        dot = sum(a * b for a, b in zip(foot, target))
        return math.degrees(math.acos(max(-1.0, min(1.0, dot))))

    n_ok = 0
    trials = 100
    for _ in range(trials):
        while True:
            ax = rng.standard_normal(3)
            ax /= np.linalg.norm(ax)
            ang = rng.uniform(0.0, math.pi / 2)
            q = quat_from_rotvec(tuple(ax * ang))
            s = BodyState(t=0.0, p=(0, 0, 100.0), q=quat_normalize(q),
                          v=(0, 0, 0), w_b=(0.0, 0.0, float(rng.uniform(-3, 3))),
                          omega_R=0.0, omega_L=0.0, d_leg=0.0, d_leg_rate=0.0,
                          contact=Contact.FLIGHT)
            if pointing_error(s) <= 90.0:
                break
        passed = True
        reached = False
        for _ in range(750):  # 1.5 s of flight
            cmd, _ = aerial_pointing(s, target, gains, p)
            s = step(s, cmd, p.loop_dt, p)
            err = pointing_error(s)
            if s.t >= 0.5:
                if not reached and err >= 5.0:
                    passed = False
                reached = True
                if err > 5.0:
                    passed = False  # never re-diverge
        if passed:
            n_ok += 1
    ok = n_ok >= 95
    report("aerial convergence", ok,
           "%d/%d trials under 5 deg within 0.5 s (need >=95)" % (n_ok, trials))


def test_mode_sequence_and_determinism(tmp_path):
    out1 = tmp_path / "c1.csv"
    out2 = tmp_path / "c2.csv"
    s1 = run_scenario(ScenarioConfig(scenario="combined", seed=4,
                                     out_path=str(out1)))
    s2 = run_scenario(ScenarioConfig(scenario="combined", seed=4,
                                     out_path=str(out2)))
    want = ["rolling", "self_righting", "balancing", "leaning", "jumping",
            "aerial", "landing_damping", "rolling"]
    same = open(out1, "rb").read() == open(out2, "rb").read()
    ok = s1["mode_sequence"] == want and same
    report("mode sequence", ok,
           "sequence %s; telemetry bytes identical: %s"
           % ("->".join(s1["mode_sequence"]), same))


def test_self_right(tmp_path):
    t0 = time.time()
    summary = run_scenario(ScenarioConfig(scenario="self_right",
                                          out_path=str(tmp_path / "sr.csv")))
    ok = summary["success"] and summary["final_tilt_rad"] < 0.1 \
        and summary["duration_s"] < 10.0
    report("self-right", ok,
           "final tilt %.4f rad (<0.1) in %.1f s (<10)"
           % (summary["final_tilt_rad"], summary["duration_s"]))
