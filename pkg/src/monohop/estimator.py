"""Simulated IMU and a sigma-point attitude filter.

The filter is an error-state unscented Kalman filter over a 6-dimensional
error (attitude rotation vector, gyro bias). Propagation integrates the
bias-corrected gyro; the accelerometer corrects tilt only when its magnitude
is close to gravity, since during launch and landing the specific force is
nothing like the gravity direction. Yaw is unobservable from these two
sensors and its variance grows without bound.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .params import RobotParams
from . import dynamics as dyn
from .dynamics import BodyState, Command, Contact


@dataclass(frozen=True)
class ImuSample:
    """Body-frame specific force and angular rate at one timestamp."""

    accel: tuple[float, float, float]   # m/s^2
    gyro: tuple[float, float, float]    # rad/s
    t: float


@dataclass(frozen=True)
class ImuNoise:
    gyro_density: float = 0.005     # rad/s/sqrt(Hz)
    accel_density: float = 0.05     # m/s^2/sqrt(Hz)
    bias_walk: float = 2.0e-4       # rad/s/sqrt(s)


class ImuSim:
    """Deterministic noisy IMU driven by the true state and applied command."""

    def __init__(self, p: RobotParams, noise: ImuNoise | None = None,
                 seed: int = 0):
        self.p = p
        self.noise = noise or ImuNoise()
        self.rng = np.random.default_rng(seed)
        self.bias = np.zeros(3)

    def sample(self, prev: BodyState, cur: BodyState) -> ImuSample:
        dt = max(cur.t - prev.t, 1e-9)
        p = self.p
        # specific force: f = a_world - g_world rotated into the body
        ax = (cur.v[0] - prev.v[0]) / dt
        ay = (cur.v[1] - prev.v[1]) / dt
        az = (cur.v[2] - prev.v[2]) / dt
        f_w = (ax, ay, az + p.g)
        f_b = dyn.rotate_inv(cur.q, f_w)
        n = self.noise
        sq = 1.0 / math.sqrt(dt)
        accel = tuple(f_b[i] + n.accel_density * sq * v
                      for i, v in enumerate(self.rng.standard_normal(3)))
        self.bias = self.bias + n.bias_walk * math.sqrt(dt) * self.rng.standard_normal(3)
        # rate-integrating (delta-angle) gyro: the reported rate is the true
        # rotation over the sample interval divided by dt, which stays honest
        # through contact impulses where the instantaneous rate jumps
        dq = dyn.quat_mul(_conj(prev.q), cur.q)
        dth = _rotvec(dq)
        gyro = tuple(dth[i] / dt + self.bias[i] + n.gyro_density * sq * v
                     for i, v in enumerate(self.rng.standard_normal(3)))
        return ImuSample(accel=accel, gyro=gyro, t=cur.t)


def imu_model(s: BodyState, p: RobotParams, seed: int,
              accel_world=(0.0, 0.0, 0.0),
              noise: ImuNoise | None = None) -> ImuSample:
    """One-shot IMU measurement of a state with known world acceleration.

    With seed-driven noise disabled (noise densities zero) this returns the
    ideal specific force and body rates.
    """
    rng = np.random.default_rng(seed)
    n = noise or ImuNoise()
    f_w = (accel_world[0], accel_world[1], accel_world[2] + p.g)
    f_b = dyn.rotate_inv(s.q, f_w)
    accel = tuple(f_b[i] + n.accel_density * v
                  for i, v in enumerate(rng.standard_normal(3)))
    gyro = tuple(s.w_b[i] + n.gyro_density * v
                 for i, v in enumerate(rng.standard_normal(3)))
    return ImuSample(accel=accel, gyro=gyro, t=s.t)


@dataclass
class AttitudeEstimate:
    """Filter output: attitude quaternion, gyro bias, 6x6 error covariance."""

    q_est: tuple[float, float, float, float]
    gyro_bias_est: tuple[float, float, float]
    covariance: np.ndarray

    def tilt_error_to(self, q_true) -> float:
        """Angle between estimated and true leg axes, rad."""
        z_est = dyn.rotate(self.q_est, (0.0, 0.0, 1.0))
        z_true = dyn.rotate(q_true, (0.0, 0.0, 1.0))
        dot = sum(a * b for a, b in zip(z_est, z_true))
        return math.acos(max(-1.0, min(1.0, dot)))


def initial_estimate(p_cov: float = 0.05, b_cov: float = 1e-4) -> AttitudeEstimate:
    cov = np.diag([p_cov] * 3 + [b_cov] * 3)
    return AttitudeEstimate((1.0, 0.0, 0.0, 0.0), (0.0, 0.0, 0.0), cov)


class AttitudeUkf:
    """Error-state UKF fusing gyro propagation with gravity-direction updates."""

    def __init__(self, p: RobotParams, noise: ImuNoise | None = None,
                 est: AttitudeEstimate | None = None):
        self.p = p
        self.noise = noise or ImuNoise()
        self.est = est or initial_estimate()
        self.accel_gate = 0.2   # relative window around |f| = g
        self.rate_gate = 0.5    # rad/s; spinning means f is not gravity
        self._kappa = 1.0

    # -- sigma point machinery over the 6D error state ---------------------

    def _sigma_points(self, P: np.ndarray):
        n = 6
        lam = self._kappa
        S = np.linalg.cholesky((n + lam) * P)
        pts = [np.zeros(n)]
        for i in range(n):
            pts.append(S[:, i])
            pts.append(-S[:, i])
        w0 = lam / (n + lam)
        wi = 0.5 / (n + lam)
        weights = np.array([w0] + [wi] * (2 * n))
        return pts, weights

    def update(self, z: ImuSample, dt: float) -> AttitudeEstimate:
        if not dt > 0.0:
            raise ValueError("dt must be positive")
        est = self.est
        q = est.q_est
        b = np.array(est.gyro_bias_est)
        P = est.covariance
        n = self.noise

        # propagate mean with the bias-corrected gyro
        w_c = np.array(z.gyro) - b
        dq = dyn.quat_from_rotvec(tuple(w_c * dt))
        q_prop = dyn.quat_normalize(dyn.quat_mul(q, dq))

        # propagate covariance through the sigma points
        pts, wts = self._sigma_points(P + 1e-12 * np.eye(6))
        prop = []
        for x in pts:
            qi = dyn.quat_mul(q, dyn.quat_from_rotvec(tuple(x[:3])))
            wi = np.array(z.gyro) - (b + x[3:])
            qi = dyn.quat_mul(qi, dyn.quat_from_rotvec(tuple(wi * dt)))
            # error of the propagated sigma point relative to the propagated mean
            dqi = dyn.quat_mul(_quat_conj(q_prop), dyn.quat_normalize(qi))
            prop.append(np.concatenate([_rotvec_of(dqi), x[3:]]))
        # covariance from the sigma spread; the mean stays pinned to the
        # gyro-propagated quaternion so dead reckoning is exact at zero noise
        mean = sum(w * x for w, x in zip(wts, prop))
        P_prop = sum(w * np.outer(x - mean, x - mean)
                     for w, x in zip(wts, prop))
        Q = np.zeros((6, 6))
        Q[:3, :3] = (n.gyro_density ** 2 / dt) * dt * dt * np.eye(3)
        Q[3:, 3:] = (n.bias_walk ** 2) * dt * np.eye(3)
        P_prop = P_prop + Q

        b_new = b
        q_new = q_prop
        P_new = P_prop

        # accelerometer tilt correction, gated on |f| close to g and low spin
        f = np.array(z.accel)
        fn = float(np.linalg.norm(f))
        g = self.p.g
        quiet = float(np.linalg.norm(w_c)) < self.rate_gate
        if abs(fn - g) < self.accel_gate * g and quiet:
            pts, wts = self._sigma_points(P_prop + 1e-12 * np.eye(6))
            zs = []
            for x in pts:
                qi = dyn.quat_mul(q_prop, dyn.quat_from_rotvec(tuple(x[:3])))
                zi = np.array(dyn.rotate_inv(qi, (0.0, 0.0, 1.0)))
                zs.append(zi)
            z_mean = sum(w * zi for w, zi in zip(wts, zs))
            Pzz = sum(w * np.outer(zi - z_mean, zi - z_mean)
                      for w, zi in zip(wts, zs))
            Pxz = sum(w * np.outer(x, zi - z_mean)
                      for w, x, zi in zip(wts, pts, zs))
            r_acc = (self.noise.accel_density / g) ** 2 / dt + 1e-6
            Pzz = Pzz + r_acc * np.eye(3)
            innov = f / fn - z_mean
            # chi-square innovation gate: an accelerometer that disagrees
            # beyond 5 sigma is measuring thrust, not gravity
            maha2 = float(innov @ np.linalg.solve(Pzz, innov))
            if maha2 < 25.0:
                K = Pxz @ np.linalg.inv(Pzz)
                dx = K @ innov
                # rotation about the gravity direction is unobservable from
                # the accelerometer: keep that component gyro-only
                g_b = np.asarray(z_mean) / max(np.linalg.norm(z_mean), 1e-12)
                dx[:3] -= g_b * float(g_b @ dx[:3])
                q_new = dyn.quat_normalize(
                    dyn.quat_mul(q_prop, dyn.quat_from_rotvec(tuple(dx[:3]))))
                b_new = b + dx[3:]
                P_new = P_prop - K @ Pzz @ K.T
                # restore the unobservable axis variance the K update removed
                var_g = float(g_b @ P_prop[:3, :3] @ g_b)
                var_g_new = float(g_b @ P_new[:3, :3] @ g_b)
                P_new[:3, :3] += np.outer(g_b, g_b) * (var_g - var_g_new)

        P_new = 0.5 * (P_new + P_new.T)
        # keep the covariance PSD against roundoff
        evals = np.linalg.eigvalsh(P_new)
        if evals[0] < 0.0:
            P_new = P_new + (1e-12 - evals[0]) * np.eye(6)
        self.est = AttitudeEstimate(q_new, tuple(b_new), P_new)
        return self.est


def attitude_update(est: AttitudeEstimate, z: ImuSample, dt: float,
                    p: RobotParams, noise: ImuNoise | None = None) -> AttitudeEstimate:
    """Functional single-step wrapper around the UKF."""
    ukf = AttitudeUkf(p, noise=noise, est=est)
    return ukf.update(z, dt)


def _conj(q):
    return (q[0], -q[1], -q[2], -q[3])


def _rotvec(q):
    w, x, y, z = q
    if w < 0.0:
        w, x, y, z = -w, -x, -y, -z
    nv = math.sqrt(x * x + y * y + z * z)
    if nv < 1e-12:
        return (2.0 * x, 2.0 * y, 2.0 * z)
    ang = 2.0 * math.atan2(nv, w)
    return (x * ang / nv, y * ang / nv, z * ang / nv)


def _quat_conj(q):
    return (q[0], -q[1], -q[2], -q[3])


def _rotvec_of(q):
    w, x, y, z = q
    if w < 0.0:
        w, x, y, z = -w, -x, -y, -z
    nv = math.sqrt(x * x + y * y + z * z)
    if nv < 1e-12:
        return np.array([2.0 * x, 2.0 * y, 2.0 * z])
    ang = 2.0 * math.atan2(nv, w)
    return np.array([x, y, z]) * (ang / nv)
