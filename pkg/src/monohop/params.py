"""Physical constants, controller gain containers, and the config loader.

The config format is plain ``key = value`` text with ``#`` comments. Angles
are radians unless the value carries an explicit ``deg`` suffix. Parsing is
strict: unknown keys, missing keys, and non-finite values are errors so a
typo cannot silently fall back to a default.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from importlib import resources

import numpy as np


class ConfigError(ValueError):
    """Raised for unreadable, incomplete, or physically invalid configs."""


@dataclass(frozen=True)
class RobotParams:
    """Physical constants of the robot and simulation environment."""

    m: float                # total mass, kg
    c: float                # foot contact to CG at nominal retraction, m
    i_body: tuple[float, float, float]  # chassis inertia diagonal about CG, kg m^2
    i_wheel: float          # wheel inertia about its spin axle, kg m^2
    i_wheel_t: float        # wheel transverse inertia, kg m^2
    theta: float            # wheel cant angle, rad
    r_wheel: float          # wheel rolling radius, m
    wheel_base: float       # lateral contact separation when rolling, m
    leg_travel: float       # max leg extension, m
    r_pinion: float         # leg pinion radius, m
    tau_wheel_max: float    # wheel torque limit, N m
    tau_leg_max: float      # leg pinion torque limit, N m
    omega_wheel_max: float  # wheel speed limit, rad/s
    g: float                # gravity magnitude, m/s^2
    loop_dt: float          # control period, s
    cg_offset: tuple[float, float] = (0.0, 0.0)  # CG offset from leg axis, m

    @property
    def i_body_mat(self) -> np.ndarray:
        return np.diag(self.i_body)

    @property
    def r_eff(self) -> float:
        """Effective rolling radius of a canted wheel (contact off the axle plane)."""
        return self.r_wheel * math.cos(self.theta)

    @property
    def mcg(self) -> float:
        """Gravity torque scale m*c*g about the foot at nominal retraction."""
        return self.m * self.c * self.g

    def validate(self) -> None:
        if not math.isfinite(self.m) or self.m <= 0.0:
            raise ConfigError("m: mass must be positive")
        if self.c <= 0.0:
            raise ConfigError("c: foot-to-CG distance must be positive")
        if any(v <= 0.0 for v in self.i_body):
            raise ConfigError("i_body: all inertia eigenvalues must be positive")
        if self.i_wheel <= 0.0 or self.i_wheel_t <= 0.0:
            raise ConfigError("i_wheel: wheel inertias must be positive")
        if not 0.0 < self.theta < math.pi / 4.0:
            raise ConfigError("theta: cant angle must lie in (0, pi/4)")
        if self.r_wheel <= 0.0 or self.wheel_base <= 0.0 or self.r_pinion <= 0.0:
            raise ConfigError("r_wheel/wheel_base/r_pinion must be positive")
        if not 0.0 < self.leg_travel <= 0.30:
            raise ConfigError("leg_travel: must be in (0, 0.30] m for the reference rack")
        if self.tau_wheel_max <= 0.0 or self.tau_leg_max <= 0.0:
            raise ConfigError("tau_wheel_max/tau_leg_max must be positive")
        if self.omega_wheel_max <= 0.0:
            raise ConfigError("omega_wheel_max must be positive")
        if self.g <= 0.0:
            raise ConfigError("g: gravity magnitude must be positive")
        if abs(self.loop_dt - 1.0 / 500.0) > 1e-12:
            raise ConfigError("loop_dt: reference robot control loop runs at 500 Hz")
        for v in (self.m, self.c, self.i_wheel, self.theta, self.g, self.loop_dt,
                  self.r_wheel, self.wheel_base, self.leg_travel, self.tau_wheel_max,
                  self.tau_leg_max, self.omega_wheel_max, *self.i_body, *self.cg_offset):
            if not math.isfinite(v):
                raise ConfigError("non-finite value in parameters")


@dataclass(frozen=True)
class AerialGains:
    """Gains of the in-flight leg pointing controller."""

    k_p: float              # N m per unit direction error
    k_d: float              # N m s/rad
    leg_aim_limit: float    # max target elevation above horizontal before apex, rad

    def validate(self) -> None:
        if self.k_p <= 0.0 or self.k_d <= 0.0:
            raise ConfigError("aerial gains k_p, k_d must be positive")


@dataclass(frozen=True)
class BalanceGains:
    """Per-axis balance law gains plus the model constants they act through.

    ``k_dd, k_d, k_M`` close the loop over the momentum triple so the
    characteristic polynomial is s^3 - k_dd s^2 - k_d s - k_M. ``t_c`` is the
    toppling time constant per axis and ``g_w`` the velocity gain of each
    wheel in each tilt plane, both derived from the upright inertia matrix.
    """

    k_dd: tuple[float, float]
    k_d: tuple[float, float]
    k_M: tuple[float, float]
    t_c: tuple[float, float]          # s, per axis
    g_w: tuple[tuple[float, float], tuple[float, float]]  # [axis][wheel]

    def validate(self) -> None:
        for ax in (0, 1):
            poly = [1.0, -self.k_dd[ax], -self.k_d[ax], -self.k_M[ax]]
            roots = np.roots(poly)
            if np.any(roots.real >= 0.0):
                raise ConfigError("balance gains are unstable on axis %d" % ax)
            if self.t_c[ax] <= 0.0:
                raise ConfigError("toppling time constant must be positive")


def pole_placement(poles) -> tuple[float, float, float]:
    """Gains (k_dd, k_d, k_M) so s^3 - k_dd s^2 - k_d s - k_M has the given roots.

    Accepts three poles, real or complex; complex ones must come in conjugate
    pairs and every pole must have negative real part.
    """
    p = np.atleast_1d(np.asarray(poles, dtype=complex))
    if p.shape != (3,):
        raise ValueError("exactly three poles required")
    if np.any(p.real >= 0.0):
        raise ValueError("all poles must have negative real part")
    # conjugate closure: sorting by (re, im) pairs each complex pole with its mirror
    conj_sorted = np.sort_complex(np.conj(p))
    if not np.allclose(np.sort_complex(p), conj_sorted, rtol=0.0, atol=1e-12):
        raise ValueError("complex poles must come in conjugate pairs")
    coeffs = np.poly(p)  # [1, c2, c1, c0]
    if np.max(np.abs(coeffs.imag)) > 1e-9:
        raise ValueError("pole set does not yield a real polynomial")
    c2, c1, c0 = coeffs.real[1:]
    return (-c2, -c1, -c0)


# Keys the loader understands, beyond the RobotParams fields themselves.
# Controller/estimator tuning lives in the same file so one --params flag
# configures a whole run.
_ROBOT_KEYS = {
    "m", "c", "i_body_xx", "i_body_yy", "i_body_zz", "i_wheel", "i_wheel_t",
    "theta", "r_wheel", "wheel_base", "leg_travel", "r_pinion",
    "tau_wheel_max", "tau_leg_max", "omega_wheel_max", "g", "loop_dt",
    "cg_offset_x", "cg_offset_y",
}
_TUNING_KEYS = {
    "aerial_kp", "aerial_kd", "leg_aim_limit",
    "balance_pole_1", "balance_pole_2", "balance_pole_3",
    "observer_gain", "b_land",
    "gyro_noise", "accel_noise", "gyro_bias_walk", "estimator_in_loop",
}
KNOWN_KEYS = _ROBOT_KEYS | _TUNING_KEYS


def parse_config(text: str) -> dict[str, float]:
    """Parse key = value lines into floats, converting 'deg' suffixed angles."""
    values: dict[str, float] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError("line %d: expected 'key = value', got %r" % (lineno, raw))
        key, _, rhs = line.partition("=")
        key = key.strip()
        rhs = rhs.strip()
        if key not in KNOWN_KEYS:
            raise ConfigError("line %d: unknown key %r" % (lineno, key))
        if key in values:
            raise ConfigError("line %d: duplicate key %r" % (lineno, key))
        degrees = False
        if rhs.endswith("deg"):
            degrees = True
            rhs = rhs[:-3].strip()
        try:
            val = float(rhs)
        except ValueError:
            raise ConfigError("line %d: %s: cannot parse %r as a number" % (lineno, key, rhs))
        if not math.isfinite(val):
            raise ConfigError("line %d: %s: value must be finite" % (lineno, key))
        values[key] = math.radians(val) if degrees else val
    return values


def _require(values: dict[str, float], key: str) -> float:
    if key not in values:
        raise ConfigError("missing key %r" % key)
    return values[key]


def params_from_values(values: dict[str, float]) -> RobotParams:
    p = RobotParams(
        m=_require(values, "m"),
        c=_require(values, "c"),
        i_body=(_require(values, "i_body_xx"),
                _require(values, "i_body_yy"),
                _require(values, "i_body_zz")),
        i_wheel=_require(values, "i_wheel"),
        i_wheel_t=_require(values, "i_wheel_t"),
        theta=_require(values, "theta"),
        r_wheel=_require(values, "r_wheel"),
        wheel_base=_require(values, "wheel_base"),
        leg_travel=_require(values, "leg_travel"),
        r_pinion=_require(values, "r_pinion"),
        tau_wheel_max=_require(values, "tau_wheel_max"),
        tau_leg_max=_require(values, "tau_leg_max"),
        omega_wheel_max=_require(values, "omega_wheel_max"),
        g=_require(values, "g"),
        loop_dt=_require(values, "loop_dt"),
        cg_offset=(values.get("cg_offset_x", 0.0), values.get("cg_offset_y", 0.0)),
    )
    p.validate()
    return p


def load_config(path) -> dict[str, float]:
    """Read and parse a config file; returns the full key-value map."""
    try:
        with open(path, "r", encoding="utf-8") as f:
            text = f.read()
    except OSError as exc:
        raise ConfigError("cannot read config %s: %s" % (path, exc))
    return parse_config(text)


def load_params(path) -> RobotParams:
    """Load and validate RobotParams from a config file."""
    return params_from_values(load_config(path))


def aerial_gains_from_values(values: dict[str, float]) -> AerialGains:
    g = AerialGains(
        k_p=_require(values, "aerial_kp"),
        k_d=_require(values, "aerial_kd"),
        leg_aim_limit=_require(values, "leg_aim_limit"),
    )
    g.validate()
    return g


def balance_poles_from_values(values: dict[str, float]) -> tuple[float, float, float]:
    return (_require(values, "balance_pole_1"),
            _require(values, "balance_pole_2"),
            _require(values, "balance_pole_3"))


def reference_config_path() -> str:
    """Path of the packaged reference configuration."""
    return str(resources.files("monohop.data") / "reference.cfg")


def reference_values() -> dict[str, float]:
    return load_config(reference_config_path())


def reference_params() -> RobotParams:
    return load_params(reference_config_path())
