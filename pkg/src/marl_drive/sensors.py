"""Measurements derived from ground-truth simulation state: wheel encoders,
indoor positioning, IMU, planar LIDAR and pinhole camera projection math."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .dynamics import VehicleState

# --------------------------------------------------------------------------
# Encoders and positioning
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class EncoderSpec:
    ppr: float = 16.0
    gear_ratio: float = 120.0

    def __post_init__(self):
        if not (self.ppr > 0 and self.gear_ratio > 0):
            raise ValueError("ppr and gear_ratio must be > 0")


def encoder_ticks(spec: EncoderSpec, n_rev: float) -> int:
    """Whole pulses counted after ``n_rev`` wheel revolutions."""
    if n_rev < 0:
        raise ValueError("n_rev must be >= 0")
    # the product is formed in one expression so exact multiples stay exact
    return int(math.floor(spec.ppr * spec.gear_ratio * n_rev + 1e-9))


def ips_read(state: VehicleState, noise_std: float = 0.0, rng: np.random.Generator | None = None) -> np.ndarray:
    """Position (x, y, z) in the world frame; the world is planar so z = 0."""
    out = np.array([state.x, state.y, 0.0])
    if noise_std > 0.0:
        out[:2] += (rng or np.random.default_rng()).normal(0.0, noise_std, 2)
    return out


# --------------------------------------------------------------------------
# IMU
# --------------------------------------------------------------------------


def euler_to_quaternion(roll: float, pitch: float, yaw: float) -> np.ndarray:
    """Scalar-first quaternion for intrinsic Z-Y-X (yaw, pitch, roll) angles."""
    cr, sr = math.cos(0.5 * roll), math.sin(0.5 * roll)
    cp, sp = math.cos(0.5 * pitch), math.sin(0.5 * pitch)
    cy, sy = math.cos(0.5 * yaw), math.sin(0.5 * yaw)
    return np.array([
        cr * cp * cy + sr * sp * sy,
        sr * cp * cy - cr * sp * sy,
        cr * sp * cy + sr * cp * sy,
        cr * cp * sy - sr * sp * cy,
    ])


def quaternion_to_euler(q) -> np.ndarray:
    """Inverse of :func:`euler_to_quaternion`; returns (roll, pitch, yaw)."""
    w, x, y, z = q
    roll = math.atan2(2 * (w * x + y * z), 1 - 2 * (x * x + y * y))
    pitch = math.asin(max(-1.0, min(1.0, 2 * (w * y - z * x))))
    yaw = math.atan2(2 * (w * z + x * y), 1 - 2 * (y * y + z * z))
    return np.array([roll, pitch, yaw])


@dataclass(frozen=True)
class ImuReading:
    linear_accel: np.ndarray
    angular_vel: np.ndarray
    euler: np.ndarray
    quaternion: np.ndarray


def imu_read(state: VehicleState, prev_state: VehicleState, dt: float) -> ImuReading:
    """Body-frame specific force (without gravity), gyro rates and attitude.

    The acceleration of the body origin in body axes is the finite-differenced
    body velocity plus the transport term yaw_rate x v.
    """
    if dt <= 0:
        raise ValueError("dt must be > 0")
    r = state.yaw_rate
    ax = (state.vx - prev_state.vx) / dt - r * state.vy
    ay = (state.vy - prev_state.vy) / dt + r * state.vx
    euler = np.array([0.0, 0.0, state.yaw])
    return ImuReading(
        linear_accel=np.array([ax, ay, 0.0]),
        angular_vel=np.array([0.0, 0.0, r]),
        euler=euler,
        quaternion=euler_to_quaternion(*euler),
    )


# --------------------------------------------------------------------------
# LIDAR
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class LidarSpec:
    """Planar scanner.  Beam angles are measured counter-clockwise from the
    vehicle heading, in degrees, over ``[theta_min, theta_max)``."""

    r_min: float = 0.15
    r_max: float = 12.0
    theta_min: float = 0.0
    theta_max: float = 360.0
    theta_res: float = 1.0
    update_rate: float = 7.0
    mount: tuple = (0.0, 0.0, 0.0)  # x, y, yaw offset in the body frame

    def __post_init__(self):
        if not (0 < self.r_min < self.r_max):
            raise ValueError("need 0 < r_min < r_max")
        if not (self.theta_min < self.theta_max):
            raise ValueError("need theta_min < theta_max")
        n = (self.theta_max - self.theta_min) / self.theta_res
        if self.theta_res <= 0 or abs(n - round(n)) > 1e-9:
            raise ValueError("theta_res must divide the angular span")

    @property
    def n_beams(self) -> int:
        return int(round((self.theta_max - self.theta_min) / self.theta_res))

    def beam_angles(self) -> np.ndarray:
        """Beam angles in radians relative to the mount heading."""
        return np.deg2rad(self.theta_min + self.theta_res * np.arange(self.n_beams))

    def period_steps(self, dt: float) -> int:
        """Physics steps between scans for the requested update rate."""
        return max(1, int(round(1.0 / (self.update_rate * dt))))


@dataclass(frozen=True)
class LidarScan:
    ranges: np.ndarray  # one per beam, increasing angle; inf = no return
    spec: LidarSpec = field(repr=False, default_factory=LidarSpec)


def lidar_origin(pose, spec: LidarSpec) -> tuple[float, float, float]:
    """World pose of the scanner: vehicle pose composed with the mount offset."""
    x, y, yaw = pose
    mx, my, myaw = spec.mount
    c, s = math.cos(yaw), math.sin(yaw)
    return x + c * mx - s * my, y + s * mx + c * my, yaw + myaw


def lidar_scan(pose, spec: LidarSpec, world, extra_segments=None) -> LidarScan:
    """Iterative ray cast of every beam against ``world``.

    A return closer than ``r_min`` or farther than ``r_max`` is reported as no
    return (``inf``).  ``extra_segments`` are dynamic obstacles such as other
    vehicles' outlines.
    """
    ox, oy, oyaw = lidar_origin(pose, spec)
    hits = world.cast(ox, oy, oyaw + spec.beam_angles(), spec.r_max, extra_segments)
    ranges = np.where((hits >= spec.r_min) & (hits <= spec.r_max), hits, np.inf)
    return LidarScan(ranges, spec)


OBS_BEAMS = 27
OBS_SPACING_DEG = 10.0
OBS_CLAMP = 10.0


def downsample_angles_deg() -> np.ndarray:
    """-130 ... +130 degrees: 27 beams, 10 degrees apart, centred on the heading."""
    return OBS_SPACING_DEG * (np.arange(OBS_BEAMS) - OBS_BEAMS // 2)


def beam_downsample(scan: LidarScan) -> np.ndarray:
    """27 readings centred on the heading, each clamped to 10 m (no return -> 10 m)."""
    spec = scan.spec
    wanted = downsample_angles_deg()
    idx = (wanted - spec.theta_min) / spec.theta_res
    # angles outside a 360-degree scan's range wrap around
    span = spec.theta_max - spec.theta_min
    if abs(span - 360.0) < 1e-9:
        idx = np.mod(idx, spec.n_beams)
    rounded = np.round(idx)
    if np.any(np.abs(idx - rounded) > 1e-9) or np.any(rounded < 0) or np.any(rounded >= spec.n_beams):
        raise ValueError("scan does not contain every downsampled beam angle")
    return np.minimum(scan.ranges[rounded.astype(int)], OBS_CLAMP)


# --------------------------------------------------------------------------
# Camera
# --------------------------------------------------------------------------


class DegenerateProjection(ValueError):
    pass


@dataclass(frozen=True)
class CameraIntrinsics:
    focal_length: float = 3.04     # mm
    sensor_size: tuple = (3.68, 2.76)  # mm
    near: float = 0.01             # m
    far: float = 1000.0            # m
    resolution: tuple = (640, 480)  # px

    def __post_init__(self):
        if not (0 < self.near < self.far):
            raise ValueError("need 0 < near < far")
        if not (self.focal_length > 0 and self.sensor_size[0] > 0 and self.sensor_size[1] > 0):
            raise ValueError("focal length and sensor size must be > 0")

    def frustum(self) -> tuple[float, float, float, float]:
        """(L, R, B, T) extents of the near plane in metres."""
        f, (sx, sy), n = self.focal_length, self.sensor_size, self.near
        r = n * sx / (2.0 * f)
        t = n * sy / (2.0 * f)
        return -r, r, -t, t


def pose_matrix(position, rotation) -> np.ndarray:
    """4x4 camera-to-world transform from a position and 3x3 rotation."""
    m = np.eye(4)
    m[:3, :3] = np.asarray(rotation, dtype=float)
    m[:3, 3] = np.asarray(position, dtype=float)
    return m


def camera_matrices(intr: CameraIntrinsics, camera_pose=None) -> tuple[np.ndarray, np.ndarray]:
    """View matrix V (world -> camera) and projection matrix P.

    The camera looks down its -z axis (right-handed, y up).  ``camera_pose`` is
    the 4x4 camera-to-world transform (identity by default).
    """
    pose = np.eye(4) if camera_pose is None else np.asarray(camera_pose, dtype=float)
    rot = pose[:3, :3]
    t = pose[:3, 3]
    V = np.eye(4)
    V[:3, :3] = rot.T
    V[:3, 3] = -rot.T @ t
    L, R, B, T = intr.frustum()
    n, f = intr.near, intr.far
    P = np.zeros((4, 4))
    P[0, 0] = 2 * n / (R - L)
    P[0, 2] = (R + L) / (R - L)
    P[1, 1] = 2 * n / (T - B)
    P[1, 2] = (T + B) / (T - B)
    P[2, 2] = -(f + n) / (f - n)
    P[2, 3] = -2 * f * n / (f - n)
    P[3, 2] = -1.0
    return V, P


def project_point(V: np.ndarray, P: np.ndarray, W, resolution=(640, 480)):
    """Clip coordinates C = P V W, perspective division to NDC, then the
    viewport transform (pixel origin top-left, y down)."""
    W = np.asarray(W, dtype=float)
    if W.shape == (3,):
        W = np.append(W, 1.0)
    C = P @ V @ W
    if abs(C[3]) < 1e-300:
        raise DegenerateProjection("point lies on the camera plane (w_c = 0)")
    ndc = C[:3] / C[3]
    w, h = resolution
    pixel = np.array([(ndc[0] + 1.0) * 0.5 * w, (1.0 - ndc[1]) * 0.5 * h])
    return ndc, pixel
