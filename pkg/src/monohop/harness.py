"""Scenario runner reproducing the experiment set: figure-eight rolling,
lean-and-jump (at Earth and low gravity), balance disturbance rejection,
self-righting, and the combined multi-mode demonstration.

Every scenario writes versioned CSV telemetry and prints summary metrics
that are recomputed from the written file, so the printed numbers can always
be reproduced from the artifact alone.
"""

from __future__ import annotations

import csv
import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import controllers as ctl
from . import dynamics as dyn
from . import executive as exe
from .dynamics import BodyState, Command, Contact
from .executive import MissionScript, TelemetryLog, run_mission
from .params import (ConfigError, RobotParams, load_config, params_from_values,
                     reference_config_path)

SCHEMA_VERSION = "monohop-telemetry v1"

SCENARIOS = ("figure8", "lean_jump", "disturbance", "self_right", "combined",
             "enceladus_scale")


class ScenarioError(RuntimeError):
    pass


@dataclass
class ScenarioConfig:
    scenario: str
    params_path: str = ""
    seed: int = 0
    out_path: str = ""
    overrides: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.scenario not in SCENARIOS:
            raise ScenarioError("unknown scenario %r; choose from %s"
                                % (self.scenario, ", ".join(SCENARIOS)))
        if not self.params_path:
            self.params_path = reference_config_path()

    def load(self) -> tuple[RobotParams, dict]:
        values = load_config(self.params_path)
        for key, val in list(self.overrides.items()):
            if key not in values and key not in _SCENARIO_KEYS:
                raise ScenarioError("override %r is not a known key" % key)
            try:
                num = float(val)
            except (TypeError, ValueError):
                raise ScenarioError("override %r must be numeric" % key)
            self.overrides[key] = num
            if key in values:
                values[key] = num
        p = params_from_values({k: v for k, v in values.items()})
        return p, values


# scenario-specific override knobs (in addition to any config key)
_SCENARIO_KEYS = {"lean_deg", "bearing_deg", "impulse", "impulse_axis_deg",
                  "figure8_radius", "figure8_speed", "step_height", "step_x"}


CSV_COLUMNS = [
    "t", "mode", "events",
    "px", "py", "pz", "yaw", "pitch", "roll", "wx", "wy", "wz",
    "tilt_x", "tilt_y", "est_yaw", "est_pitch", "est_roll",
    "omega_R", "omega_L", "tau_R", "tau_L", "tau_leg", "sat",
    "d_leg", "d_leg_rate",
    "M_x", "Mdot_x", "Mddot_x", "M_y", "Mdot_y", "Mddot_y",
    "vx", "vy", "vz",
]


def write_telemetry(path: str, log: TelemetryLog) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        f.write("# %s\n" % SCHEMA_VERSION)
        w = csv.writer(f)
        w.writerow(CSV_COLUMNS)
        for r in log.records:
            w.writerow([
                "%.6f" % r.t, r.mode, r.events,
                *("%.9g" % v for v in r.p),
                *("%.9g" % v for v in r.euler),
                *("%.9g" % v for v in r.w_b),
                *("%.9g" % v for v in r.tilt),
                *("%.9g" % v for v in r.est_euler),
                *("%.9g" % v for v in r.wheels),
                *("%.9g" % v for v in r.tau),
                r.sat,
                *("%.9g" % v for v in r.leg),
                *("%.9g" % v for v in r.m_states),
                *("%.9g" % v for v in r.v),
            ])


def read_telemetry(path: str) -> dict:
    """Load a telemetry CSV back into column arrays (plus mode/event lists)."""
    with open(path, "r", encoding="utf-8") as f:
        header = f.readline().strip()
        if not header.startswith("#") or SCHEMA_VERSION not in header:
            raise ScenarioError("unsupported telemetry schema: %r" % header)
        rows = list(csv.DictReader(f))
    if not rows:
        raise ScenarioError("no records")
    out: dict = {"mode": [r["mode"] for r in rows],
                 "events": [r["events"] for r in rows]}
    for col in CSV_COLUMNS:
        if col in ("mode", "events"):
            continue
        out[col] = np.array([float(r[col]) for r in rows])
    return out


def apply_impulse(s: BodyState, J, p: RobotParams,
                  location: str = "top") -> BodyState:
    """Angular impulse about the foot, as from a pendulum strike at the top."""
    return dyn.apply_angular_impulse(s, tuple(J), p)


# ---------------------------------------------------------------------------
# scenario implementations

def run_scenario(cfg: ScenarioConfig) -> dict:
    """Run a scenario, write telemetry, and return the printed summary."""
    p, values = cfg.load()
    t0 = time.time()
    fn = {
        "figure8": _run_figure8,
        "lean_jump": _run_lean_jump,
        "disturbance": _run_disturbance,
        "self_right": _run_self_right,
        "combined": _run_combined,
        "enceladus_scale": _run_enceladus,
    }[cfg.scenario]
    summary, log = fn(cfg, p, values)
    if cfg.out_path:
        write_telemetry(cfg.out_path, log)
        summary["telemetry"] = cfg.out_path
    summary["wall_time_s"] = round(time.time() - t0, 3)
    return summary


def summarize_from_file(scenario: str, path: str) -> dict:
    """Recompute a scenario's metrics from its telemetry file."""
    data = read_telemetry(path)
    if scenario in ("lean_jump", "enceladus_scale"):
        return _jump_metrics_from(data)
    if scenario == "figure8":
        return _figure8_metrics_from(data)
    if scenario == "self_right":
        return _self_right_metrics_from(data)
    if scenario == "combined":
        return {"mode_sequence": _dedup(data["mode"])}
    raise ScenarioError("no file summary for scenario %r" % scenario)


def _dedup(seq):
    out = []
    for m in seq:
        if not out or out[-1] != m:
            out.append(m)
    return out


def _run_figure8(cfg, p, values):
    radius = cfg.overrides.get("figure8_radius", 0.5)
    speed = cfg.overrides.get("figure8_speed", 0.5)
    script = MissionScript(
        (exe.MissionAction("figure8", v=speed, radius=radius, laps=1),))
    s0 = dyn.make_rolling_state(0.0, 0.0, 0.0, 0.0, p)
    lap_t = 4.0 * math.pi * radius / speed
    log = run_mission(script, s0, p, values, seed=cfg.seed,
                      timeout=lap_t + 5.0)
    summary = _figure8_metrics(log)
    return summary, log


def _figure8_metrics(log):
    xs = np.array([r.p[0] for r in log.records])
    ys = np.array([r.p[1] for r in log.records])
    yaw_rate = np.array([_yaw_rate_of(r) for r in log.records])
    return _figure8_summary(xs, ys, yaw_rate)


def _figure8_metrics_from(data):
    yaw_rate = data["wx"] * 0.0
    # while rolling, w_b is the yaw rate about the side normal; recover its sign
    wmag = np.sqrt(data["wx"] ** 2 + data["wy"] ** 2 + data["wz"] ** 2)
    yaw_rate = np.sign(data["wx"]) * wmag
    return _figure8_summary(data["px"], data["py"], yaw_rate)


def _yaw_rate_of(r):
    w = r.w_b
    mag = math.sqrt(w[0] ** 2 + w[1] ** 2 + w[2] ** 2)
    return math.copysign(mag, w[0]) if mag > 1e-9 else 0.0


def _figure8_summary(xs, ys, yaw_rate):
    # curvature sign sequence: collapse the yaw-rate sign, ignoring dead zone
    signs = []
    for w in yaw_rate:
        sgn = 0 if abs(w) < 0.05 else (1 if w > 0 else -1)
        if sgn != 0 and (not signs or signs[-1] != sgn):
            signs.append(sgn)
    closure = float(math.hypot(xs[-1] - xs[0], ys[-1] - ys[0]))
    return {"curvature_signs": signs, "closure_error_m": round(closure, 4)}


def _jump_script(cfg):
    lean = cfg.overrides.get("lean_deg", 20.0)
    bearing = cfg.overrides.get("bearing_deg", 0.0)
    return MissionScript.parse(
        "balance duration=0.5\n"
        "lean bearing_deg=%g angle_deg=%g\n"
        "jump\n"
        "land_to target=rolling\n" % (bearing, lean))


def _run_lean_jump(cfg, p, values):
    log = run_mission(_jump_script(cfg), dyn.upright_state(p), p, values,
                      seed=cfg.seed, timeout=20.0)
    return _jump_metrics(log, p), log


def _run_enceladus(cfg, p, values):
    if "g" not in cfg.overrides:
        values = dict(values)
        values["g"] = values["g"] / 80.0
        p = params_from_values({k: v for k, v in values.items()})
    # low gravity stretches every phase of the flight
    log = run_mission(_jump_script(cfg), dyn.upright_state(p), p, values,
                      seed=cfg.seed, timeout=150.0)
    return _jump_metrics(log, p), log


def _jump_metrics(log, p):
    recs = log.records
    lo = next((r for r in recs if r.mode == "aerial"), None)
    if lo is None:
        raise ScenarioError("jump never lifted off")
    zs = [r.p[2] for r in recs]
    apex = max(zs) - lo.p[2]
    td = next((r for r in recs if r.mode == "landing_damping"), None)
    rng = math.hypot(td.p[0] - lo.p[0], td.p[1] - lo.p[1]) if td else float("nan")
    v = lo.v
    speed = math.sqrt(sum(c * c for c in v))
    angle = math.degrees(math.atan2(math.hypot(v[0], v[1]), v[2]))
    # worst leg pointing error against the velocity vector after apex
    apex_t = next((e.t for e in log.events if e.kind is dyn.EventKind.APEX), None)
    perr = float("nan")
    if apex_t is not None:
        errs = []
        for r in recs:
            if r.mode != "aerial" or r.t <= apex_t + 0.05:
                continue
            errs.append(_pointing_error_rec(r))
        if errs:
            perr = max(errs)
    resid = float("nan")
    if td is not None:
        tail = [r for r in recs if r.mode == "landing_damping"]
        if tail:
            last = tail[-1]
            resid = math.sqrt(sum(c * c for c in last.v))
    td_speed = math.sqrt(sum(c * c for c in td.v)) if td else float("nan")
    return {
        "liftoff_speed_mps": round(speed, 3),
        "liftoff_angle_deg": round(angle, 2),
        "apex_height_m": round(apex, 3),
        "range_m": round(rng, 3),
        "max_pointing_error_after_apex_deg": round(perr, 2),
        "touchdown_speed_mps": round(td_speed, 3),
        "residual_speed_mps": round(resid, 3),
    }


def _pointing_error_rec(r) -> float:
    yaw, pitch, roll = r.euler
    # reconstruct the leg axis from the logged Euler angles
    cy, sy = math.cos(yaw), math.sin(yaw)
    cp, sp = math.cos(pitch), math.sin(pitch)
    cr, sr = math.cos(roll), math.sin(roll)
    # body z column of Rz(yaw)Ry(pitch)Rx(roll)
    zb = (cy * sp * cr + sy * sr, sy * sp * cr - cy * sr, cp * cr)
    foot = (-zb[0], -zb[1], -zb[2])
    v = r.v
    n = math.sqrt(sum(c * c for c in v))
    if n < 1e-6:
        return 0.0
    dot = sum(f * c / n for f, c in zip(foot, v))
    return math.degrees(math.acos(max(-1.0, min(1.0, dot))))


def _jump_metrics_from(data):
    modes = data["mode"]
    i_lo = next((i for i, m in enumerate(modes) if m == "aerial"), None)
    if i_lo is None:
        raise ScenarioError("no aerial phase in telemetry")
    apex = float(np.max(data["pz"]) - data["pz"][i_lo])
    i_td = next((i for i, m in enumerate(modes) if m == "landing_damping"), None)
    rng = float("nan")
    if i_td is not None:
        rng = float(math.hypot(data["px"][i_td] - data["px"][i_lo],
                               data["py"][i_td] - data["py"][i_lo]))
    return {"apex_height_m": round(apex, 3), "range_m": round(rng, 3)}


def _run_disturbance(cfg, p, values):
    """Bisect the largest rejected angular impulse; log the sample responses."""
    axis_deg = cfg.overrides.get("impulse_axis_deg", 90.0)
    ax = (math.cos(math.radians(axis_deg)), math.sin(math.radians(axis_deg)), 0.0)

    def rejected(J: float) -> bool:
        script = MissionScript.parse("balance duration=4.5")
        hit = lambda s: dyn.apply_angular_impulse(
            s, (J * ax[0], J * ax[1], J * ax[2]), p)
        try:
            lg = run_mission(script, dyn.upright_state(p), p, values,
                             seed=cfg.seed, injections=[(0.5, hit)],
                             timeout=5.5)
        except exe.MissionError:
            return False
        toppled = any(e.kind is dyn.EventKind.TOPPLED for e in lg.events)
        r = lg.records[-1]
        return not toppled and math.hypot(*r.tilt) < 0.05

    lo, hi = 0.0, 0.08
    if not rejected(0.005):
        raise ScenarioError("balance cannot reject even 0.005 N m s")
    lo = 0.005
    for _ in range(12):
        mid = 0.5 * (lo + hi)
        if rejected(mid):
            lo = mid
        else:
            hi = mid

    # response traces at the two reference impulse magnitudes
    samples = {}
    J_sample = cfg.overrides.get("impulse", None)
    mags = (0.013, 0.009) if J_sample is None else (float(J_sample),)
    log = None
    for J in mags:
        script = MissionScript.parse("balance duration=4.0")
        hit = lambda s, J=J: dyn.apply_angular_impulse(
            s, (J * ax[0], J * ax[1], J * ax[2]), p)
        lg = run_mission(script, dyn.upright_state(p), p, values,
                         seed=cfg.seed, injections=[(1.0, hit)], timeout=5.0)
        r = lg.records[-1]
        samples["J=%.3f" % J] = {
            "recovered": bool(math.hypot(*r.tilt) < 0.02),
            "final_tilt_rad": round(math.hypot(*r.tilt), 5),
        }
        log = lg if log is None else log
    return {"max_rejected_impulse_Nms": round(lo, 4),
            "bracket_Nms": [round(lo, 4), round(hi, 4)],
            "responses": samples}, log


def _run_self_right(cfg, p, values):
    script = MissionScript.parse("self_right\nbalance duration=3.0")
    s0 = dyn.make_rolling_state(0.0, 0.0, 0.0, 0.0, p)
    log = run_mission(script, s0, p, values, seed=cfg.seed, timeout=10.0)
    return _self_right_metrics(log), log


def _self_right_metrics(log):
    r = log.records[-1]
    tilt = math.hypot(*r.tilt)
    return {"success": bool(tilt < 0.1 and r.mode == "balancing"),
            "final_tilt_rad": round(tilt, 4),
            "duration_s": round(r.t, 3)}


def _self_right_metrics_from(data):
    tilt = float(math.hypot(data["tilt_x"][-1], data["tilt_y"][-1]))
    return {"success": bool(tilt < 0.1 and data["mode"][-1] == "balancing"),
            "final_tilt_rad": round(tilt, 4)}


def _run_combined(cfg, p, values):
    """Roll, self-right, balance, lean, jump, land, and roll away."""
    lean = cfg.overrides.get("lean_deg", 16.0)
    script = MissionScript.parse(
        "roll v=1.0 duration=1.2\n"
        "self_right\n"
        "balance duration=1.5\n"
        "lean bearing_deg=0 angle_deg=%g\n"
        "jump\n"
        "land_to target=rolling\n"
        "roll v=0.5 duration=1.5\n" % lean)
    s0 = dyn.make_rolling_state(0.0, 0.0, 0.0, 0.0, p)
    log = run_mission(script, s0, p, values, seed=cfg.seed, timeout=30.0)
    return {"mode_sequence": log.mode_sequence()}, log
