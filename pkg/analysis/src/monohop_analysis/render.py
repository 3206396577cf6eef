"""Render the standard figures from monohop telemetry CSV files.

The input contract is the versioned telemetry schema written by the
simulator CLI (``# monohop-telemetry v1`` header line, then CSV). This
package depends only on that file format, never on the simulator itself.

Figure kinds:

* ``jump_traces``   - chassis Euler angles, wheel velocity and torque, and
  leg pointing direction, with mode-shaded background
* ``leg_traces``    - leg position, velocity, and commanded torque
* ``disturbance``   - Euler angles and body rates around impulse events
* ``selfright``     - Euler angles through the stand-up, mode shaded (the
  pitch trace wraps at the +-pi/2 domain limits)
* ``mode_timeline`` - the mode sequence as a colored band

Mode shading follows the reference color convention: blue balancing, green
jumping, yellow aerial, red rolling; the remaining modes use neutral
extensions of that palette.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np
import pandas as pd

SCHEMA = "monohop-telemetry v1"

KINDS = ("jump_traces", "leg_traces", "disturbance", "selfright",
         "mode_timeline")

MODE_COLORS = {
    "balancing": "#9ecbff",        # blue
    "jumping": "#a8e6a1",          # green
    "aerial": "#ffe699",           # yellow
    "rolling": "#ffb3b3",          # red
    "self_righting": "#ffd9b3",    # orange (extension)
    "leaning": "#d6eaff",          # pale blue (extension)
    "landing_damping": "#e0e0e0",  # gray (extension)
}

REQUIRED = ["t", "mode", "events", "yaw", "pitch", "roll",
            "wx", "wy", "wz", "omega_R", "omega_L", "tau_R", "tau_L",
            "tau_leg", "d_leg", "d_leg_rate", "vx", "vy", "vz"]


class RenderError(ValueError):
    pass


@dataclass(frozen=True)
class PlotSpec:
    path: str
    kind: str
    out_path: str

    def __post_init__(self):
        if self.kind not in KINDS:
            raise RenderError("unknown figure kind %r; choose from %s"
                              % (self.kind, ", ".join(KINDS)))


def load(path: str) -> pd.DataFrame:
    with open(path, "r", encoding="utf-8") as f:
        header = f.readline().strip()
        if not header.startswith("#") or SCHEMA not in header:
            raise RenderError("unsupported schema: %r (need %s)"
                              % (header, SCHEMA))
        df = pd.read_csv(f)
    if df.empty:
        raise RenderError("no records")
    missing = [c for c in REQUIRED if c not in df.columns]
    if missing:
        raise RenderError("missing columns: %s" % ", ".join(missing))
    return df


def shade_modes(ax, df: pd.DataFrame) -> None:
    """Color the background by the active mode, one span per mode stretch."""
    t = df["t"].to_numpy()
    modes = df["mode"].to_numpy()
    start = 0
    for i in range(1, len(modes) + 1):
        if i == len(modes) or modes[i] != modes[start]:
            color = MODE_COLORS.get(modes[start], "#f0f0f0")
            t_end = t[i] if i < len(modes) else t[-1]
            ax.axvspan(t[start], t_end, color=color, lw=0, zorder=0)
            start = i


def _deg(x):
    return np.degrees(x)


def _leg_direction_angles(df: pd.DataFrame):
    """World elevation of the leg axis and of the velocity vector, deg."""
    yaw = df["yaw"].to_numpy()
    pitch = df["pitch"].to_numpy()
    roll = df["roll"].to_numpy()
    cy, sy = np.cos(yaw), np.sin(yaw)
    cp, sp = np.cos(pitch), np.sin(pitch)
    cr, sr = np.cos(roll), np.sin(roll)
    # third column of Rz Ry Rx: the body z axis in world coordinates
    zb = np.stack([cy * sp * cr + sy * sr,
                   sy * sp * cr - cy * sr,
                   cp * cr])
    foot = -zb
    leg_el = np.degrees(np.arcsin(np.clip(foot[2], -1.0, 1.0)))
    v = np.stack([df["vx"].to_numpy(), df["vy"].to_numpy(),
                  df["vz"].to_numpy()])
    vn = np.linalg.norm(v, axis=0)
    with np.errstate(invalid="ignore", divide="ignore"):
        v_el = np.degrees(np.arcsin(np.where(vn > 1e-6, v[2] / vn, np.nan)))
    return leg_el, v_el


def render(spec: PlotSpec) -> str:
    """Render one figure; returns the caption text."""
    df = load(spec.path)
    fn = {
        "jump_traces": _render_jump,
        "leg_traces": _render_leg,
        "disturbance": _render_disturbance,
        "selfright": _render_selfright,
        "mode_timeline": _render_timeline,
    }[spec.kind]
    caption = fn(df, spec.out_path)
    return caption


def _finish(fig, out_path: str) -> None:
    fig.savefig(out_path, dpi=120, metadata={"Software": "monohop-analysis"})
    plt.close(fig)


def _render_jump(df: pd.DataFrame, out_path: str) -> str:
    fig, axes = plt.subplots(3, 1, figsize=(9, 8), sharex=True)
    t = df["t"]
    for ax in axes:
        shade_modes(ax, df)
    axes[0].plot(t, _deg(df["yaw"]), label="yaw", lw=1.0)
    axes[0].plot(t, _deg(df["pitch"]), label="pitch", lw=1.0)
    axes[0].plot(t, _deg(df["roll"]), label="roll", lw=1.0)
    axes[0].set_ylabel("orientation [deg]")
    axes[0].legend(loc="upper right", fontsize=8)
    axes[1].plot(t, df["omega_R"], label="wheel R [rad/s]", lw=1.0)
    axes[1].plot(t, df["omega_L"], label="wheel L [rad/s]", lw=1.0)
    ax_tau = axes[1].twinx()
    ax_tau.plot(t, df["tau_R"], label="tau R", lw=0.8, ls="--", color="C2")
    ax_tau.plot(t, df["tau_L"], label="tau L", lw=0.8, ls="--", color="C3")
    ax_tau.set_ylabel("torque [N m]")
    axes[1].set_ylabel("wheel speed [rad/s]")
    axes[1].legend(loc="upper left", fontsize=8)
    ax_tau.legend(loc="upper right", fontsize=8)
    leg_el, v_el = _leg_direction_angles(df)
    axes[2].plot(t, leg_el, label="leg elevation", lw=1.0)
    axes[2].plot(t, v_el, label="velocity elevation", lw=1.0, ls="--")
    axes[2].set_ylabel("pointing [deg]")
    axes[2].set_xlabel("time [s]")
    axes[2].legend(loc="upper right", fontsize=8)
    fig.suptitle("Lean jump: orientation, wheels, leg pointing")
    _finish(fig, out_path)
    return ("Chassis orientation Euler angles, wheel velocity and torques, "
            "and leg pointing direction. Background shading: blue balancing, "
            "green jumping, yellow aerial.")


def _render_leg(df: pd.DataFrame, out_path: str) -> str:
    fig, axes = plt.subplots(3, 1, figsize=(9, 7), sharex=True)
    t = df["t"]
    for ax in axes:
        shade_modes(ax, df)
    axes[0].plot(t, df["d_leg"], lw=1.0)
    axes[0].set_ylabel("leg position [m]")
    axes[1].plot(t, df["d_leg_rate"], lw=1.0)
    axes[1].set_ylabel("leg velocity [m/s]")
    axes[2].plot(t, df["tau_leg"], lw=1.0)
    axes[2].set_ylabel("leg torque [N m]")
    axes[2].set_xlabel("time [s]")
    fig.suptitle("Leg position, velocity, and commanded torque")
    _finish(fig, out_path)
    return ("Leg position, velocity, and commanded pinion torque: the first "
            "extension peak is the launch, the damped second contact the "
            "landing.")


def _render_disturbance(df: pd.DataFrame, out_path: str) -> str:
    fig, axes = plt.subplots(2, 1, figsize=(9, 6), sharex=True)
    t = df["t"]
    for ax in axes:
        shade_modes(ax, df)
    axes[0].plot(t, _deg(df["pitch"]), label="pitch", lw=1.0)
    axes[0].plot(t, _deg(df["roll"]), label="roll", lw=1.0)
    axes[0].set_ylabel("tilt [deg]")
    axes[0].legend(loc="upper right", fontsize=8)
    axes[1].plot(t, df["wx"], label="wx", lw=1.0)
    axes[1].plot(t, df["wy"], label="wy", lw=1.0)
    axes[1].set_ylabel("body rate [rad/s]")
    axes[1].set_xlabel("time [s]")
    axes[1].legend(loc="upper right", fontsize=8)
    fig.suptitle("Balance disturbance response")
    _finish(fig, out_path)
    return ("Euler angles and angular velocity while balancing through "
            "angular-impulse strikes; offsets from zero reflect the balance "
            "offset of the machine.")


def _render_selfright(df: pd.DataFrame, out_path: str) -> str:
    fig, ax = plt.subplots(figsize=(9, 4))
    shade_modes(ax, df)
    t = df["t"]
    ax.plot(t, _deg(df["yaw"]), label="yaw", lw=1.0)
    ax.plot(t, _deg(df["pitch"]), label="pitch", lw=1.0)
    ax.plot(t, _deg(df["roll"]), label="roll", lw=1.0)
    ax.set_ylabel("orientation [deg]")
    ax.set_xlabel("time [s]")
    ax.legend(loc="upper right", fontsize=8)
    fig.suptitle("Self-righting: rolling (red) into balancing (blue)")
    _finish(fig, out_path)
    return ("Euler angles during self-righting; the pitch discontinuity is "
            "the Z-Y-X chart passing its +-90 deg domain limit.")


def _render_timeline(df: pd.DataFrame, out_path: str) -> str:
    fig, ax = plt.subplots(figsize=(9, 1.8))
    t = df["t"].to_numpy()
    modes = df["mode"].to_numpy()
    start = 0
    seen = []
    for i in range(1, len(modes) + 1):
        if i == len(modes) or modes[i] != modes[start]:
            color = MODE_COLORS.get(modes[start], "#f0f0f0")
            t_end = t[i] if i < len(modes) else t[-1]
            ax.axvspan(t[start], t_end, color=color, lw=0)
            if modes[start] not in seen:
                seen.append(modes[start])
            start = i
    handles = [plt.Rectangle((0, 0), 1, 1, color=MODE_COLORS.get(m, "#f0f0f0"))
               for m in seen]
    ax.legend(handles, seen, loc="center left", bbox_to_anchor=(1.0, 0.5),
              fontsize=8)
    ax.set_yticks([])
    ax.set_xlim(t[0], t[-1])
    ax.set_xlabel("time [s]")
    fig.suptitle("Mode timeline")
    fig.subplots_adjust(right=0.78)
    _finish(fig, out_path)
    return "Executive mode over time: " + " -> ".join(seen) + "."
