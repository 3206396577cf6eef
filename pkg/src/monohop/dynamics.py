"""Hybrid rigid-body dynamics of the one-leg, two-reaction-wheel robot.

Frames and conventions (fixed here, used by every other module):

* Body frame: +z runs from the foot toward the head, so the robot's leg
  points along -z and the CG sits at +(c + d_leg) z above the foot during
  stance. World frame: +z up, gravity -z.
* Wheel spin axes in the body frame:
      a_R = (cos(theta), sin(theta), 0)
      a_L = (sin(theta), cos(theta), 0)
  i.e. each axle is canted by the cant angle away from the body x/y axes,
  leaving 90 deg - 2*theta between the axles. Positive wheel speed is
  right-handed about these axes; positive motor torque accelerates positive
  wheel speed and reacts on the chassis about -a.
* Tilt chart: R_world_body = Rx(q_x) Ry(q_y) Rz(psi). q_x, q_y are the
  world-aligned tilt coordinates of the balance model, psi the (uncontrolled)
  rotation about the leg axis.
* Logged Euler angles are intrinsic Z-Y-X (yaw, pitch, roll).

Stance is an ideal frictionless ball pivot at the foot; flight is a free
rigid body; rolling is planar differential-drive kinematics with the wheels
integrating from torque against rolling resistance. Wheel rotors enter the
rigid-body terms as balanced rotors: transverse inertia i_wheel_t is carried
with the chassis, the spin degree of freedom couples only through i_wheel.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from enum import Enum
from functools import lru_cache

import numpy as np

from .params import RobotParams


class Contact(Enum):
    STANCE = "stance"
    FLIGHT = "flight"
    ROLLING_A = "rolling_a"
    ROLLING_B = "rolling_b"


class EventKind(Enum):
    LIFTOFF = "liftoff"
    TOUCHDOWN = "touchdown"
    APEX = "apex"
    TOPPLED = "toppled"


@dataclass(frozen=True)
class Event:
    kind: EventKind
    t: float


@dataclass(frozen=True)
class Command:
    """Actuator torques for one control tick."""

    tau_R: float = 0.0
    tau_L: float = 0.0
    tau_leg: float = 0.0


@dataclass(frozen=True)
class SatFlags:
    wheel_R: bool = False
    wheel_L: bool = False
    leg: bool = False

    @property
    def any(self) -> bool:
        return self.wheel_R or self.wheel_L or self.leg


def saturate(cmd: Command, p: RobotParams) -> tuple[Command, SatFlags]:
    """Clamp a command to actuator limits, reporting which channels clipped."""
    tr = min(max(cmd.tau_R, -p.tau_wheel_max), p.tau_wheel_max)
    tl = min(max(cmd.tau_L, -p.tau_wheel_max), p.tau_wheel_max)
    tg = min(max(cmd.tau_leg, -p.tau_leg_max), p.tau_leg_max)
    flags = SatFlags(tr != cmd.tau_R, tl != cmd.tau_L, tg != cmd.tau_leg)
    return Command(tr, tl, tg), flags


@dataclass(frozen=True)
class BodyState:
    """Full simulation state at one instant.

    p, v are CG position/velocity in the world frame; q rotates body to
    world; w_b is the chassis angular velocity in the body frame. anchor is
    the pinned world point during stance (the foot, or the flip pivot when
    pivot_b is set); pivot_b is the body-frame vector from the CG to a
    non-foot pivot used during self-righting.
    """

    t: float
    p: tuple[float, float, float]
    q: tuple[float, float, float, float]
    v: tuple[float, float, float]
    w_b: tuple[float, float, float]
    omega_R: float
    omega_L: float
    d_leg: float
    d_leg_rate: float
    contact: Contact
    anchor: tuple[float, float, float] = (0.0, 0.0, 0.0)
    pivot_b: tuple[float, float, float] | None = None


@dataclass(frozen=True)
class TiltState:
    """World-aligned tilt coordinates of the chassis and their rates."""

    q_x: float
    q_y: float
    q_x_rate: float
    q_y_rate: float


# ---------------------------------------------------------------------------
# quaternion / rotation helpers (scalar, hot path)

def quat_normalize(q):
    w, x, y, z = q
    n = math.sqrt(w * w + x * x + y * y + z * z)
    return (w / n, x / n, y / n, z / n)


def quat_mul(a, b):
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return (aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw)


def quat_from_rotvec(r):
    rx, ry, rz = r
    th = math.sqrt(rx * rx + ry * ry + rz * rz)
    if th < 1e-12:
        return (1.0, 0.5 * rx, 0.5 * ry, 0.5 * rz)
    s = math.sin(0.5 * th) / th
    return (math.cos(0.5 * th), s * rx, s * ry, s * rz)


def rot_matrix(q):
    """3x3 body-to-world matrix as nine floats (row major)."""
    w, x, y, z = q
    xx, yy, zz = x * x, y * y, z * z
    xy, xz, yz = x * y, x * z, y * z
    wx, wy, wz = w * x, w * y, w * z
    return (1.0 - 2.0 * (yy + zz), 2.0 * (xy - wz), 2.0 * (xz + wy),
            2.0 * (xy + wz), 1.0 - 2.0 * (xx + zz), 2.0 * (yz - wx),
            2.0 * (xz - wy), 2.0 * (yz + wx), 1.0 - 2.0 * (xx + yy))


def rotate(q, u):
    """World vector of body vector u."""
    r = rot_matrix(q)
    return (r[0] * u[0] + r[1] * u[1] + r[2] * u[2],
            r[3] * u[0] + r[4] * u[1] + r[5] * u[2],
            r[6] * u[0] + r[7] * u[1] + r[8] * u[2])


def rotate_inv(q, u):
    """Body vector of world vector u."""
    r = rot_matrix(q)
    return (r[0] * u[0] + r[3] * u[1] + r[6] * u[2],
            r[1] * u[0] + r[4] * u[1] + r[7] * u[2],
            r[2] * u[0] + r[5] * u[1] + r[8] * u[2])


def euler_zyx(q) -> tuple[float, float, float]:
    """Intrinsic Z-Y-X (yaw, pitch, roll) of the body-to-world rotation."""
    r = rot_matrix(q)
    pitch = math.asin(max(-1.0, min(1.0, -r[6])))
    yaw = math.atan2(r[3], r[0])
    roll = math.atan2(r[7], r[8])
    return (yaw, pitch, roll)


def tilt_of(s: BodyState) -> TiltState:
    """Tilt coordinates and rates under the Rx(q_x) Ry(q_y) Rz(psi) chart."""
    r = rot_matrix(s.q)
    z1, z2, z3 = r[2], r[5], r[8]        # body z axis in world
    q_y = math.asin(max(-1.0, min(1.0, z1)))
    q_x = math.atan2(-z2, z3)
    # world angular velocity, then solve E(q_x, q_y) rates = omega_w
    ww = rotate(s.q, s.w_b)
    ca, sa = math.cos(q_x), math.sin(q_x)
    cb, sb = math.cos(q_y), math.sin(q_y)
    # E columns: [x_hat, Rx*y_hat, Rx*Ry*z_hat]
    # invert analytically: psi_rate from third row pair, then back-substitute
    psi_rate = (ww[1] * sa + ww[2] * ca) / cb if abs(cb) > 1e-9 else 0.0
    qx_rate = ww[0] - psi_rate * sb
    qy_rate = ww[1] * ca - ww[2] * sa
    return TiltState(q_x, q_y, qx_rate, qy_rate)


def tilt_angle(s: BodyState) -> float:
    """Angle between the leg axis and vertical, rad."""
    r = rot_matrix(s.q)
    return math.acos(max(-1.0, min(1.0, r[8])))


# ---------------------------------------------------------------------------
# params-derived constants

def wheel_axes(theta: float):
    ct, st = math.cos(theta), math.sin(theta)
    return (ct, st, 0.0), (st, ct, 0.0)


class _Consts:
    """Precomputed per-params constants for the scalar dynamics core."""

    def __init__(self, p: RobotParams):
        self.p = p
        self.m = p.m
        self.c = p.c
        self.g = p.g
        self.iw = p.i_wheel
        self.ox, self.oy = p.cg_offset
        self.a_R, self.a_L = wheel_axes(p.theta)
        # locked inertia about the CG: chassis + both rotors as rigid bodies
        ilock = np.diag(p.i_body).astype(float)
        for a in (self.a_R, self.a_L):
            av = np.array(a)
            ilock += p.i_wheel_t * np.eye(3) + (p.i_wheel - p.i_wheel_t) * np.outer(av, av)
        self.ilock = ilock
        aR = np.array(self.a_R)
        aL = np.array(self.a_L)
        self.aaT = np.outer(aR, aR) + np.outer(aL, aL)
        # flight: (ilock - iw*aaT) is constant; precompute its inverse
        self.m3_flight = ilock - p.i_wheel * self.aaT
        self.m3_flight_inv = np.linalg.inv(self.m3_flight)
        self.mfi = tuple(self.m3_flight_inv.ravel())
        self.il = tuple(ilock.ravel())
        self.aat = tuple(self.aaT.ravel())
        # rolling: generalized inertia over (omega_R, omega_L)
        r = p.r_eff
        w = p.wheel_base
        n = math.sqrt(0.5)
        nvec = np.array([n, -n, 0.0])
        i_psi = float(nvec @ ilock @ nvec)
        a = 0.25 * p.m * r * r + i_psi * r * r / (w * w) + p.i_wheel
        b = 0.25 * p.m * r * r - i_psi * r * r / (w * w)
        det = a * a - b * b
        self.roll_minv = (a / det, -b / det, -b / det, a / det)
        self.c_roll = 1.0e-4  # rolling resistance, N m per rad/s
        self.h_side = r  # CG height above ground while rolling
        self.leg_rate_free = 2.0  # unloaded rack speed at full torque, m/s


@lru_cache(maxsize=8)
def _consts(p: RobotParams) -> _Consts:
    return _Consts(p)


def _solve3(m00, m01, m02, m11, m12, m22, b0, b1, b2):
    """Solve a symmetric 3x3 system by Cramer's rule."""
    c00 = m11 * m22 - m12 * m12
    c01 = m02 * m12 - m01 * m22
    c02 = m01 * m12 - m02 * m11
    det = m00 * c00 + m01 * c01 + m02 * c02
    c11 = m00 * m22 - m02 * m02
    c12 = m01 * m02 - m00 * m12
    c22 = m00 * m11 - m01 * m01
    return ((c00 * b0 + c01 * b1 + c02 * b2) / det,
            (c01 * b0 + c11 * b1 + c12 * b2) / det,
            (c02 * b0 + c12 * b1 + c22 * b2) / det)


# ---------------------------------------------------------------------------
# derivative cores (tuples in, tuples out)

def _motor_torques(uR, uL, tau_R, tau_L, omax):
    """Zero torque that would push a wheel past its speed limit."""
    if uR >= omax and tau_R > 0.0 or uR <= -omax and tau_R < 0.0:
        tau_R = 0.0
    if uL >= omax and tau_L > 0.0 or uL <= -omax and tau_L < 0.0:
        tau_L = 0.0
    return tau_R, tau_L


def _pivot_rates(y, cmd: Command, cst: _Consts, foot_pivot: bool,
                 rho_fixed=None):
    """Rates for motion pinned at a point: stance (foot) or a flip pivot.

    y = (qw,qx,qy,qz, wx,wy,wz, uR,uL, d, dd). For the foot pivot the CG sits
    at rho = (ox, oy, c + d) from the pivot and d is a dynamic coordinate; for
    a fixed pivot rho is constant and the (unloaded) leg moves kinematically.
    """
    qw, qx, qy, qz, wx, wy, wz, uR, uL, d, dd = y
    p = cst.p
    tau_R, tau_L = _motor_torques(uR, uL, cmd.tau_R, cmd.tau_L, p.omega_wheel_max)
    aRx, aRy, _ = cst.a_R
    aLx, aLy, _ = cst.a_L
    iw = cst.iw
    m = cst.m

    if foot_pivot:
        ell = cst.c + d
        rho = (cst.ox, cst.oy, ell)
    else:
        rho = rho_fixed
    rx, ry, rz = rho

    # body-frame gravity
    r = rot_matrix((qw, qx, qy, qz))
    gbx, gby, gbz = -cst.g * r[6], -cst.g * r[7], -cst.g * r[8]

    # pivot inertia I_f = Ilock + m(|rho|^2 I - rho rho^T)
    il = cst.il
    rr = rx * rx + ry * ry + rz * rz
    i00 = il[0] + m * (rr - rx * rx)
    i01 = il[1] - m * rx * ry
    i02 = il[2] - m * rx * rz
    i11 = il[4] + m * (rr - ry * ry)
    i12 = il[5] - m * ry * rz
    i22 = il[8] + m * (rr - rz * rz)

    # angular momentum about the pivot, body frame
    hx = iw * (uR * aRx + uL * aLx)
    hy = iw * (uR * aRy + uL * aLy)
    Lx = i00 * wx + i01 * wy + i02 * wz + hx
    Ly = i01 * wx + i11 * wy + i12 * wz + hy
    Lz = i02 * wx + i12 * wy + i22 * wz

    # gravity torque about the pivot + inertia-rate + gyroscopic terms
    tgx = m * (ry * gbz - rz * gby)
    tgy = m * (rz * gbx - rx * gbz)
    tgz = m * (rx * gby - ry * gbx)
    if foot_pivot:
        # d/dt of the pivot inertia from the extending leg (rho ~ ell z_hat)
        two_mld = 2.0 * m * ell * dd
        tgx -= two_mld * wx
        tgy -= two_mld * wy
    bx = tgx - (wy * Lz - wz * Ly) - (tau_R * aRx + tau_L * aLx)
    by = tgy - (wz * Lx - wx * Lz) - (tau_R * aRy + tau_L * aLy)
    bz = tgz - (wx * Ly - wy * Lx)

    aat = cst.aat
    wdx, wdy, wdz = _solve3(i00 - iw * aat[0], i01 - iw * aat[1], i02 - iw * aat[2],
                            i11 - iw * aat[4], i12 - iw * aat[5], i22 - iw * aat[8],
                            bx, by, bz)

    udR = tau_R / iw - (aRx * wdx + aRy * wdy)
    udL = tau_L / iw - (aLx * wdx + aLy * wdy)

    if foot_pivot:
        # prismatic leg: whole mass accelerates along the leg axis
        f_leg = cmd.tau_leg / p.r_pinion
        ddd = ell * (wx * wx + wy * wy) - cst.g * r[8] + f_leg / m
        # hard stops
        if d <= 0.0 and ddd < 0.0 and dd <= 0.0:
            ddd = 0.0
        if d >= p.leg_travel and ddd > 0.0 and dd >= 0.0:
            ddd = 0.0
        d_rate = dd
    else:
        # unloaded rack: kinematic rate proportional to commanded torque
        d_rate = (cmd.tau_leg / p.tau_leg_max) * cst.leg_rate_free
        if d <= 0.0 and d_rate < 0.0 or d >= p.leg_travel and d_rate > 0.0:
            d_rate = 0.0
        ddd = 0.0

    return (0.5 * (-qx * wx - qy * wy - qz * wz),
            0.5 * (qw * wx + qy * wz - qz * wy),
            0.5 * (qw * wy + qz * wx - qx * wz),
            0.5 * (qw * wz + qx * wy - qy * wx),
            wdx, wdy, wdz, udR, udL, d_rate, ddd)


def _flight_rates(y, cmd: Command, cst: _Consts):
    """Free-body rates. y = (q(4), w(3), uR, uL, p(3), v(3), d)."""
    qw, qx, qy, qz, wx, wy, wz, uR, uL, px, py, pz, vx, vy, vz, d = y
    p = cst.p
    tau_R, tau_L = _motor_torques(uR, uL, cmd.tau_R, cmd.tau_L, p.omega_wheel_max)
    aRx, aRy, _ = cst.a_R
    aLx, aLy, _ = cst.a_L
    iw = cst.iw
    il = cst.il

    hx = iw * (uR * aRx + uL * aLx)
    hy = iw * (uR * aRy + uL * aLy)
    Lx = il[0] * wx + il[1] * wy + il[2] * wz + hx
    Ly = il[1] * wx + il[4] * wy + il[5] * wz + hy
    Lz = il[2] * wx + il[5] * wy + il[8] * wz

    bx = -(wy * Lz - wz * Ly) - (tau_R * aRx + tau_L * aLx)
    by = -(wz * Lx - wx * Lz) - (tau_R * aRy + tau_L * aLy)
    bz = -(wx * Ly - wy * Lx)

    mfi = cst.mfi
    wdx = mfi[0] * bx + mfi[1] * by + mfi[2] * bz
    wdy = mfi[3] * bx + mfi[4] * by + mfi[5] * bz
    wdz = mfi[6] * bx + mfi[7] * by + mfi[8] * bz

    udR = tau_R / iw - (aRx * wdx + aRy * wdy)
    udL = tau_L / iw - (aLx * wdx + aLy * wdy)

    d_rate = (cmd.tau_leg / p.tau_leg_max) * cst.leg_rate_free
    if d <= 0.0 and d_rate < 0.0 or d >= p.leg_travel and d_rate > 0.0:
        d_rate = 0.0

    return (0.5 * (-qx * wx - qy * wy - qz * wz),
            0.5 * (qw * wx + qy * wz - qz * wy),
            0.5 * (qw * wy + qz * wx - qx * wz),
            0.5 * (qw * wz + qx * wy - qy * wx),
            wdx, wdy, wdz, udR, udL,
            vx, vy, vz, 0.0, 0.0, -cst.g, d_rate)


def _rolling_rates(y, cmd: Command, cst: _Consts):
    """Planar differential drive. y = (x, y, heading, uR, uL)."""
    x, yy, psi, uR, uL = y
    p = cst.p
    tau_R, tau_L = _motor_torques(uR, uL, cmd.tau_R, cmd.tau_L, p.omega_wheel_max)
    bR = tau_R - cst.c_roll * uR
    bL = tau_L - cst.c_roll * uL
    mi = cst.roll_minv
    udR = mi[0] * bR + mi[1] * bL
    udL = mi[2] * bR + mi[3] * bL
    r = p.r_eff
    v = 0.5 * r * (uR + uL)
    psid = r * (uR - uL) / p.wheel_base
    return (v * math.cos(psi), v * math.sin(psi), psid, udR, udL)


def _rk4(f, y, h, cmd, *args):
    k1 = f(y, cmd, *args)
    y2 = tuple(a + 0.5 * h * b for a, b in zip(y, k1))
    k2 = f(y2, cmd, *args)
    y3 = tuple(a + 0.5 * h * b for a, b in zip(y, k2))
    k3 = f(y3, cmd, *args)
    y4 = tuple(a + h * b for a, b in zip(y, k3))
    k4 = f(y4, cmd, *args)
    s = h / 6.0
    return tuple(a + s * (b + 2.0 * (c + d) + e)
                 for a, b, c, d, e in zip(y, k1, k2, k3, k4))


N_SUBSTEPS = 10  # fixed-step integrator runs at loop_dt / 10


# ---------------------------------------------------------------------------
# public derivative probes (used by tests and the controllers)

def stance_dynamics(s: BodyState, u: Command, p: RobotParams):
    """State derivative in stance. Returns (q_dot, w_dot, u_dot, d_rate, d_accel)."""
    _check_state(s)
    if s.contact is not Contact.STANCE:
        raise ValueError("stance_dynamics requires stance contact")
    if not -1e-9 <= s.d_leg <= p.leg_travel + 1e-9:
        raise ValueError("leg extension out of range")
    cst = _consts(p)
    y = s.q + s.w_b + (s.omega_R, s.omega_L, s.d_leg, s.d_leg_rate)
    if s.pivot_b is None:
        dy = _pivot_rates(y, u, cst, True)
    else:
        rho = (-s.pivot_b[0], -s.pivot_b[1], -s.pivot_b[2])
        dy = _pivot_rates(y, u, cst, False, rho)
    return dy[0:4], dy[4:7], dy[7:9], dy[9], dy[10]


def flight_dynamics(s: BodyState, u: Command, p: RobotParams):
    """State derivative in flight. Returns (q_dot, w_dot, u_dot, v, a)."""
    _check_state(s)
    if s.contact is not Contact.FLIGHT:
        raise ValueError("flight_dynamics requires flight contact")
    cst = _consts(p)
    y = s.q + s.w_b + (s.omega_R, s.omega_L) + s.p + s.v + (s.d_leg,)
    dy = _flight_rates(y, u, cst)
    return dy[0:4], dy[4:7], dy[7:9], dy[9:12], dy[12:15]


def rolling_dynamics(s: BodyState, u: Command, p: RobotParams):
    """State derivative while rolling. Returns (v_forward, yaw_rate, u_dot)."""
    _check_state(s)
    if s.contact not in (Contact.ROLLING_A, Contact.ROLLING_B):
        raise ValueError("rolling_dynamics requires rolling contact")
    cst = _consts(p)
    x, y, psi = _rolling_pose(s)
    dy = _rolling_rates((x, y, psi, s.omega_R, s.omega_L), u, cst)
    v = math.hypot(dy[0], dy[1])
    if dy[0] * math.cos(psi) + dy[1] * math.sin(psi) < 0.0:
        v = -v
    return v, dy[2], dy[3:5]


def _check_state(s: BodyState) -> None:
    vals = s.q + s.w_b + s.p + s.v + (s.omega_R, s.omega_L, s.d_leg, s.d_leg_rate)
    for v in vals:
        if not math.isfinite(v):
            raise ValueError("non-finite state")


# ---------------------------------------------------------------------------
# integration step

def step(s: BodyState, u: Command, dt: float, p: RobotParams) -> BodyState:
    """Advance one zero-order-hold command interval with fixed-step RK4."""
    if not dt > 0.0:
        raise ValueError("dt must be positive")
    _check_state(s)
    cst = _consts(p)
    h = dt / N_SUBSTEPS
    if s.contact is Contact.STANCE:
        y = s.q + s.w_b + (s.omega_R, s.omega_L, s.d_leg, s.d_leg_rate)
        if s.pivot_b is None:
            for _ in range(N_SUBSTEPS):
                y = _rk4(_pivot_rates, y, h, u, cst, True)
                y = _clamp_stance(y, p)
        else:
            rho = (-s.pivot_b[0], -s.pivot_b[1], -s.pivot_b[2])
            for _ in range(N_SUBSTEPS):
                y = _rk4(_pivot_rates, y, h, u, cst, False, rho)
                y = _clamp_stance(y, p)
        q = quat_normalize(y[0:4])
        w = y[4:7]
        d, dd = y[9], y[10]
        if s.pivot_b is None:
            rho = (cst.ox, cst.oy, cst.c + d)
        pw = rotate(q, rho)
        pos = (s.anchor[0] + pw[0], s.anchor[1] + pw[1], s.anchor[2] + pw[2])
        # CG velocity from the pivot constraint
        vb = (w[1] * rho[2] - w[2] * rho[1],
              w[2] * rho[0] - w[0] * rho[2],
              w[0] * rho[1] - w[1] * rho[0])
        if s.pivot_b is None:
            vb = (vb[0], vb[1], vb[2] + dd)
        vel = rotate(q, vb)
        return replace(s, t=s.t + dt, p=pos, q=q, v=vel, w_b=w,
                       omega_R=y[7], omega_L=y[8], d_leg=d, d_leg_rate=dd)
    if s.contact is Contact.FLIGHT:
        y = s.q + s.w_b + (s.omega_R, s.omega_L) + s.p + s.v + (s.d_leg,)
        for _ in range(N_SUBSTEPS):
            y = _rk4(_flight_rates, y, h, u, cst)
        q = quat_normalize(y[0:4])
        d = min(max(y[15], 0.0), p.leg_travel)
        return replace(s, t=s.t + dt, q=q, w_b=y[4:7], omega_R=y[7], omega_L=y[8],
                       p=y[9:12], v=y[12:15], d_leg=d, d_leg_rate=0.0)
    # rolling
    x, yy, psi = _rolling_pose(s)
    y = (x, yy, psi, s.omega_R, s.omega_L)
    for _ in range(N_SUBSTEPS):
        y = _rk4(_rolling_rates, y, h, u, cst)
    return _rolling_body_state(s.t + dt, y[0], y[1], y[2], y[3], y[4],
                               s.contact, p, d_leg=s.d_leg)


def _clamp_stance(y, p: RobotParams):
    d, dd = y[9], y[10]
    if d < 0.0:
        y = y[0:9] + (0.0, max(0.0, dd))
    elif d > p.leg_travel:
        # the massless rack transmits no impulse at the stop: the chassis
        # keeps its axial speed, which becomes the liftoff velocity
        y = y[0:9] + (p.leg_travel, dd)
    return y


# ---------------------------------------------------------------------------
# rolling pose mapping

_SQ2 = math.sqrt(0.5)


def _side_normal(contact: Contact):
    """Body-frame ground normal for each rolling side."""
    if contact is Contact.ROLLING_A:
        return (_SQ2, -_SQ2, 0.0)
    return (-_SQ2, _SQ2, 0.0)


def _rolling_pose(s: BodyState) -> tuple[float, float, float]:
    """(x, y, heading) of the rolling robot; heading is the travel azimuth."""
    zb = rotate(s.q, (0.0, 0.0, 1.0))
    psi = math.atan2(-zb[1], -zb[0])
    return s.p[0], s.p[1], psi


def _rolling_body_state(t, x, y, psi, uR, uL, contact, p: RobotParams,
                        d_leg=0.0) -> BodyState:
    cst = _consts(p)
    n_b = _side_normal(contact)
    h = (math.cos(psi), math.sin(psi), 0.0)
    e3 = (-h[0], -h[1], 0.0)          # world image of body z
    en = (0.0, 0.0, 1.0)              # world image of n_b
    sgn = 1.0 if contact is Contact.ROLLING_A else -1.0
    # world image of the wheel-symmetry bisector axis, right-handed per side
    em = (-sgn * math.sin(psi), sgn * math.cos(psi), 0.0)
    # columns of R: images of x, y, z body axes
    ex = tuple((sgn * en[i] + em[i]) * _SQ2 for i in range(3))
    ey = tuple((em[i] - sgn * en[i]) * _SQ2 for i in range(3))
    q = _quat_from_matrix(ex, ey, e3)
    r = p.r_eff
    v = 0.5 * r * (uR + uL)
    psid = r * (uR - uL) / p.wheel_base
    w_b = tuple(psid * c for c in n_b)
    return BodyState(t=t, p=(x, y, cst.h_side), q=q,
                     v=(v * h[0], v * h[1], 0.0), w_b=w_b,
                     omega_R=uR, omega_L=uL, d_leg=d_leg, d_leg_rate=0.0,
                     contact=contact)


def make_rolling_state(t, x, y, heading, p: RobotParams,
                       side: Contact = Contact.ROLLING_A,
                       speed: float = 0.0, d_leg: float = 0.0) -> BodyState:
    uR = uL = speed / p.r_eff
    return _rolling_body_state(t, x, y, heading, uR, uL, side, p, d_leg=d_leg)


def _quat_from_matrix(cx, cy, cz):
    """Quaternion from the three world-frame column vectors of R."""
    m00, m01, m02 = cx[0], cy[0], cz[0]
    m10, m11, m12 = cx[1], cy[1], cz[1]
    m20, m21, m22 = cx[2], cy[2], cz[2]
    tr = m00 + m11 + m22
    if tr > 0.0:
        sq = math.sqrt(tr + 1.0) * 2.0
        q = ((0.25 * sq), (m21 - m12) / sq, (m02 - m20) / sq, (m10 - m01) / sq)
    elif m00 > m11 and m00 > m22:
        sq = math.sqrt(1.0 + m00 - m11 - m22) * 2.0
        q = ((m21 - m12) / sq, 0.25 * sq, (m01 + m10) / sq, (m02 + m20) / sq)
    elif m11 > m22:
        sq = math.sqrt(1.0 + m11 - m00 - m22) * 2.0
        q = ((m02 - m20) / sq, (m01 + m10) / sq, 0.25 * sq, (m12 + m21) / sq)
    else:
        sq = math.sqrt(1.0 + m22 - m00 - m11) * 2.0
        q = ((m10 - m01) / sq, (m02 + m20) / sq, (m12 + m21) / sq, 0.25 * sq)
    return quat_normalize(q)


# ---------------------------------------------------------------------------
# inertia matrix and momentum probes

def compute_H(s: BodyState, p: RobotParams) -> np.ndarray:
    """4x4 joint-space inertia over (q_x, q_y, q_R, q_L) at the current pose."""
    cst = _consts(p)
    ell = p.c + s.d_leg
    rho = np.array([cst.ox, cst.oy, ell])
    i_f = cst.ilock + p.m * (float(rho @ rho) * np.eye(3) - np.outer(rho, rho))
    r = rot_matrix(s.q)
    # tilt tangent axes in body coordinates
    zb = (r[2], r[5], r[8])
    q_x = math.atan2(-zb[1], zb[2])
    ca, sa = math.cos(q_x), math.sin(q_x)
    b1 = np.array([r[0], r[1], r[2]])                      # R^T x_hat
    b2 = ca * np.array([r[3], r[4], r[5]]) + sa * np.array([r[6], r[7], r[8]])
    B = np.column_stack([b1, b2])
    H = np.empty((4, 4))
    H[:2, :2] = B.T @ i_f @ B
    aR = np.array(cst.a_R)
    aL = np.array(cst.a_L)
    H[0, 2] = p.i_wheel * float(aR @ b1)
    H[0, 3] = p.i_wheel * float(aL @ b1)
    H[1, 2] = p.i_wheel * float(aR @ b2)
    H[1, 3] = p.i_wheel * float(aL @ b2)
    H[2, 0], H[3, 0], H[2, 1], H[3, 1] = H[0, 2], H[0, 3], H[1, 2], H[1, 3]
    H[2:, 2:] = p.i_wheel * np.eye(2)
    return H


def total_angular_momentum(s: BodyState, p: RobotParams) -> np.ndarray:
    """World angular momentum about the CG (flight/rolling) or pivot (stance)."""
    cst = _consts(p)
    w = np.array(s.w_b)
    h = p.i_wheel * (s.omega_R * np.array(cst.a_R) + s.omega_L * np.array(cst.a_L))
    if s.contact is Contact.STANCE:
        if s.pivot_b is None:
            rho = np.array([cst.ox, cst.oy, p.c + s.d_leg])
        else:
            rho = -np.array(s.pivot_b)
        i_f = cst.ilock + p.m * (float(rho @ rho) * np.eye(3) - np.outer(rho, rho))
        lb = i_f @ w + h
        if s.pivot_b is None:
            lb += p.m * np.cross(rho, [0.0, 0.0, s.d_leg_rate])
        return np.array(rotate(s.q, tuple(lb)))
    lb = cst.ilock @ w + h
    return np.array(rotate(s.q, tuple(lb)))


def mechanical_energy(s: BodyState, p: RobotParams) -> float:
    """Kinetic + potential energy; conserved in torque-free flight."""
    cst = _consts(p)
    w = np.array(s.w_b)
    e_rot = 0.5 * float(w @ cst.ilock @ w)
    for u, a in ((s.omega_R, cst.a_R), (s.omega_L, cst.a_L)):
        e_rot += 0.5 * p.i_wheel * u * u + p.i_wheel * u * float(np.array(a) @ w)
    v2 = s.v[0] ** 2 + s.v[1] ** 2 + s.v[2] ** 2
    return e_rot + 0.5 * p.m * v2 + p.m * p.g * s.p[2]


# ---------------------------------------------------------------------------
# contact transitions

def stance_to_flight(s: BodyState, p: RobotParams) -> BodyState:
    """Release the pivot; p and v are already maintained consistently."""
    return replace(s, contact=Contact.FLIGHT, pivot_b=None, d_leg_rate=0.0)


def flight_to_stance(s: BodyState, p: RobotParams,
                     contact_point: tuple[float, float, float]) -> BodyState:
    """Inelastic touchdown: pin the foot, preserve momentum about the contact.

    The massless rack transmits no impulse along the leg axis, so the axial
    CG velocity carries into the leg compression rate; wheel spin about each
    axle is preserved through the impact.
    """
    cst = _consts(p)
    ell = p.c + s.d_leg
    rho = np.array([cst.ox, cst.oy, ell])
    r_b = np.array(rotate_inv(s.q, (s.p[0] - contact_point[0],
                                    s.p[1] - contact_point[1],
                                    s.p[2] - contact_point[2])))
    v_b = np.array(rotate_inv(s.q, s.v))
    w = np.array(s.w_b)
    aR = np.array(cst.a_R)
    aL = np.array(cst.a_L)
    h = p.i_wheel * (s.omega_R * aR + s.omega_L * aL)
    L_pre = p.m * np.cross(r_b, v_b) + cst.ilock @ w + h
    i_f = cst.ilock + p.m * (float(rho @ rho) * np.eye(3) - np.outer(rho, rho))
    m3 = i_f - p.i_wheel * cst.aaT
    w_post = np.linalg.solve(m3, L_pre - h - p.i_wheel * (cst.aaT @ w))
    uR = s.omega_R + float(aR @ (w - w_post))
    uL = s.omega_L + float(aL @ (w - w_post))
    dd = float(v_b[2])
    vb_post = np.cross(w_post, rho) + np.array([0.0, 0.0, dd])
    return replace(s, contact=Contact.STANCE, anchor=tuple(contact_point),
                   pivot_b=None, w_b=tuple(w_post), omega_R=uR, omega_L=uL,
                   d_leg_rate=dd, v=rotate(s.q, tuple(vb_post)))


def pivot_transfer(s: BodyState, p: RobotParams, new_pivot_b, anchor_w,
                   lock_wheels: bool = False) -> BodyState:
    """Impulsively move the pinned point to a new body point (self-righting).

    With lock_wheels the wheel motors hold the rotors against the chassis
    through the impact, folding their spin momentum into the body rotation;
    otherwise each rotor's absolute spin about its axle is preserved.
    """
    cst = _consts(p)
    rho = -np.array(new_pivot_b)
    r_b = np.array(rotate_inv(s.q, (s.p[0] - anchor_w[0],
                                    s.p[1] - anchor_w[1],
                                    s.p[2] - anchor_w[2])))
    v_b = np.array(rotate_inv(s.q, s.v))
    w = np.array(s.w_b)
    aR = np.array(cst.a_R)
    aL = np.array(cst.a_L)
    h = p.i_wheel * (s.omega_R * aR + s.omega_L * aL)
    L_pre = p.m * np.cross(r_b, v_b) + cst.ilock @ w + h
    i_f = cst.ilock + p.m * (float(rho @ rho) * np.eye(3) - np.outer(rho, rho))
    if lock_wheels:
        w_post = np.linalg.solve(i_f, L_pre)
        uR = uL = 0.0
    else:
        m3 = i_f - p.i_wheel * cst.aaT
        w_post = np.linalg.solve(m3, L_pre - h - p.i_wheel * (cst.aaT @ w))
        uR = s.omega_R + float(aR @ (w - w_post))
        uL = s.omega_L + float(aL @ (w - w_post))
    vb_post = np.cross(w_post, rho)
    return replace(s, contact=Contact.STANCE, anchor=tuple(anchor_w),
                   pivot_b=tuple(new_pivot_b), w_b=tuple(w_post),
                   omega_R=uR, omega_L=uL, d_leg_rate=0.0,
                   v=rotate(s.q, tuple(vb_post)))


def foot_position(s: BodyState, p: RobotParams) -> tuple[float, float, float]:
    f = rotate(s.q, (0.0, 0.0, -(p.c + s.d_leg)))
    return (s.p[0] + f[0], s.p[1] + f[1], s.p[2] + f[2])


def foot_velocity(s: BodyState, p: RobotParams) -> tuple[float, float, float]:
    fb = (0.0, 0.0, -(p.c + s.d_leg))
    w = s.w_b
    vb = (w[1] * fb[2] - w[2] * fb[1],
          w[2] * fb[0] - w[0] * fb[2],
          w[0] * fb[1] - w[1] * fb[0] - s.d_leg_rate)
    vw = rotate(s.q, vb)
    return (s.v[0] + vw[0], s.v[1] + vw[1], s.v[2] + vw[2])


def foot_force(prev: BodyState, next_s: BodyState, p: RobotParams) -> tuple[float, float, float]:
    """Pivot constraint force implied by the CG velocity change across a step."""
    dt = next_s.t - prev.t
    if dt <= 0.0:
        return (0.0, 0.0, p.m * p.g)
    ax = (next_s.v[0] - prev.v[0]) / dt
    ay = (next_s.v[1] - prev.v[1]) / dt
    az = (next_s.v[2] - prev.v[2]) / dt
    return (p.m * ax, p.m * ay, p.m * (az + p.g))


def detect_events(prev: BodyState, next_s: BodyState, p: RobotParams,
                  ground=None) -> list[Event]:
    """Phase-boundary events between two consecutive states.

    Timestamps are linearly interpolated across the interval. ``ground`` maps
    (x, y) to terrain height; default is the flat plane z = 0.
    """
    if ground is None:
        ground = lambda x, y: 0.0
    events: list[Event] = []
    dt = next_s.t - prev.t
    if dt <= 0.0:
        return events
    if prev.contact is Contact.STANCE and next_s.contact is Contact.STANCE \
            and prev.pivot_b is None:
        # liftoff: normal force through zero while extending, or rack stop
        fz = foot_force(prev, next_s, p)[2]
        if next_s.d_leg_rate > 0.0 and fz <= 0.0:
            events.append(Event(EventKind.LIFTOFF, next_s.t))
        elif prev.d_leg < p.leg_travel <= next_s.d_leg + 1e-12 \
                and prev.d_leg_rate > 0.0:
            frac = (p.leg_travel - prev.d_leg) / max(next_s.d_leg - prev.d_leg, 1e-12)
            events.append(Event(EventKind.LIFTOFF, prev.t + min(frac, 1.0) * dt))
        # toppled: leg axis past horizontal
        c_prev = rot_matrix(prev.q)[8]
        c_next = rot_matrix(next_s.q)[8]
        if c_prev > 0.0 >= c_next:
            frac = c_prev / max(c_prev - c_next, 1e-12)
            events.append(Event(EventKind.TOPPLED, prev.t + frac * dt))
    if prev.contact is Contact.FLIGHT:
        if prev.v[2] > 0.0 >= next_s.v[2]:
            frac = prev.v[2] / max(prev.v[2] - next_s.v[2], 1e-12)
            events.append(Event(EventKind.APEX, prev.t + frac * dt))
        fp_prev = foot_position(prev, p)
        fp_next = foot_position(next_s, p)
        h_prev = fp_prev[2] - ground(fp_prev[0], fp_prev[1])
        h_next = fp_next[2] - ground(fp_next[0], fp_next[1])
        if h_prev > 0.0 >= h_next:
            vfz = (fp_next[2] - fp_prev[2]) / dt
            if vfz < 0.0:
                frac = h_prev / max(h_prev - h_next, 1e-12)
                events.append(Event(EventKind.TOUCHDOWN, prev.t + frac * dt))
    return events


def upright_state(p: RobotParams, t: float = 0.0, foot=(0.0, 0.0, 0.0),
                  q_x: float = 0.0, q_y: float = 0.0, yaw: float = 0.0,
                  d_leg: float = 0.0) -> BodyState:
    """Stance state at the given tilt chart coordinates, zero rates."""
    qx = quat_from_rotvec((q_x, 0.0, 0.0))
    qy = quat_from_rotvec((0.0, q_y, 0.0))
    qz = quat_from_rotvec((0.0, 0.0, yaw))
    q = quat_normalize(quat_mul(quat_mul(qx, qy), qz))
    cst = _consts(p)
    rho = (cst.ox, cst.oy, p.c + d_leg)
    pw = rotate(q, rho)
    return BodyState(t=t, p=(foot[0] + pw[0], foot[1] + pw[1], foot[2] + pw[2]),
                     q=q, v=(0.0, 0.0, 0.0), w_b=(0.0, 0.0, 0.0),
                     omega_R=0.0, omega_L=0.0, d_leg=d_leg, d_leg_rate=0.0,
                     contact=Contact.STANCE, anchor=tuple(foot))


def apply_angular_impulse(s: BodyState, J_world, p: RobotParams) -> BodyState:
    """Instantaneous angular-momentum increment about the foot pivot.

    Wheel speeds relative to the chassis are held, so the tilt-rate jump is
    the impulse over the pivot inertia (J_x / H11 at upright).
    """
    cst = _consts(p)
    ell = p.c + s.d_leg
    rho = np.array([cst.ox, cst.oy, ell])
    i_f = cst.ilock + p.m * (float(rho @ rho) * np.eye(3) - np.outer(rho, rho))
    jb = np.array(rotate_inv(s.q, tuple(J_world)))
    dw = np.linalg.solve(i_f, jb)
    w = (s.w_b[0] + dw[0], s.w_b[1] + dw[1], s.w_b[2] + dw[2])
    vb = np.cross(w, rho) + np.array([0.0, 0.0, s.d_leg_rate])
    return replace(s, w_b=w, v=rotate(s.q, tuple(vb)))
