"""Planar vehicle model: rigid chassis on four sprung corners.

Conventions used throughout the package:

* World frame is right-handed with yaw measured counter-clockwise from +x.
* Body frame has +x forward and +y to the left; the centre of mass sits at
  the geometric centre of the wheelbase/track rectangle.
* Steering angles follow the actuator convention: a positive steering angle
  turns the vehicle to the RIGHT (clockwise).  The physical wheel angle in the
  body frame is therefore the negative of the steering angle.
* Wheel/corner order is FL, FR, RL, RR.

The per-step arithmetic lives in small ``numba`` kernels so that the public
helpers (``eval_friction``, ``suspension_step`` ...) and the integrator share
one implementation.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, fields
from typing import NamedTuple, Sequence

import numpy as np
from numba import njit

GRAVITY = 9.81
SLIP_EPS = 0.05  # m/s, low-speed regularisation of the slip denominators
SLIP_CLAMP = 10.0
MAX_DT = 0.02
# the vertical corner dynamics are much faster than the planar ones, so each
# suspension update is split into substeps no longer than this
SUSPENSION_SUBSTEP = 2.5e-4

FL, FR, RL, RR = 0, 1, 2, 3


class InvalidKnots(ValueError):
    pass


class InvalidParams(ValueError):
    pass


class IntegrationDiverged(RuntimeError):
    pass


@njit(cache=True)
def _wrap(a):
    w = (a + math.pi) % (2.0 * math.pi)
    if w <= 0.0:
        w += 2.0 * math.pi
    return w - math.pi


def wrap_angle(a: float) -> float:
    """Wrap an angle to (-pi, pi]."""
    return float(_wrap(float(a)))


# --------------------------------------------------------------------------
# Friction spline
# --------------------------------------------------------------------------


def _expand(a: float, b: float, c: float, d: float, s: float) -> tuple[float, float, float, float]:
    # a(S-s)^3 + b(S-s)^2 + c(S-s) + d  ->  global cubic coefficients
    return (
        a,
        b - 3.0 * a * s,
        c - 2.0 * b * s + 3.0 * a * s * s,
        d - c * s + b * s * s - a * s ** 3,
    )


@dataclass(frozen=True, eq=False)
class FrictionSpline:
    """Two-piece cubic slip -> normalised force curve.

    ``coeffs[k] = (a_k, b_k, c_k, d_k)`` with ``f_k(S) = a S^3 + b S^2 + c S + d``
    in absolute slip coordinates.
    """

    knots: tuple[tuple[float, float], tuple[float, float], tuple[float, float]]
    coeffs: np.ndarray

    @property
    def s0(self) -> float:
        return self.knots[0][0]

    @property
    def se(self) -> float:
        return self.knots[1][0]

    @property
    def sa(self) -> float:
        return self.knots[2][0]

    @property
    def fa(self) -> float:
        return self.knots[2][1]


def fit_friction_spline(knots: Sequence[Sequence[float]]) -> FrictionSpline:
    """Fit the two cubic segments through (S0,F0), (Se,Fe), (Sa,Fa).

    Segment 0 has zero curvature at S0 and zero slope at Se; segment 1 has zero
    slope at both Se and Sa.
    """
    if len(knots) != 3:
        raise InvalidKnots(f"expected 3 knots, got {len(knots)}")
    (s0, f0), (se, fe), (sa, fa) = [(float(s), float(f)) for s, f in knots]
    if not all(map(math.isfinite, (s0, f0, se, fe, sa, fa))):
        raise InvalidKnots("knots must be finite")
    if not (s0 < se < sa):
        raise InvalidKnots(f"knots must satisfy S0 < Se < Sa, got {s0}, {se}, {sa}")

    h0 = se - s0
    rise = fe - f0
    seg0 = _expand(-rise / (2.0 * h0 ** 3), 0.0, 1.5 * rise / h0, f0, s0)

    h1 = sa - se
    fall = fa - fe
    seg1 = _expand(-2.0 * fall / h1 ** 3, 3.0 * fall / h1 ** 2, 0.0, fe, se)

    return FrictionSpline(
        knots=((s0, f0), (se, fe), (sa, fa)),
        coeffs=np.array([seg0, seg1], dtype=float),
    )


@njit(cache=True)
def _friction(c, se, sa, fa, s):
    mag = abs(s)
    if mag >= sa:
        val = fa
    else:
        k = 1 if mag >= se else 0
        val = ((c[k, 0] * mag + c[k, 1]) * mag + c[k, 2]) * mag + c[k, 3]
    if s > 0.0:
        return val
    if s < 0.0:
        return -val
    return 0.0


@njit(cache=True)
def _friction_slope(c, se, sa, s):
    mag = abs(s)
    if mag >= sa:
        return 0.0
    k = 1 if mag >= se else 0
    return (3.0 * c[k, 0] * mag + 2.0 * c[k, 1]) * mag + c[k, 2]


@njit(cache=True)
def _friction_many(c, se, sa, fa, s, slope):
    out = np.empty(s.shape[0])
    for i in range(s.shape[0]):
        out[i] = _friction_slope(c, se, sa, s[i]) if slope else _friction(c, se, sa, fa, s[i])
    return out


def _spline_apply(spline: FrictionSpline, S, slope: bool):
    arr = np.asarray(S, dtype=float)
    flat = _friction_many(spline.coeffs, spline.se, spline.sa, spline.fa,
                          np.ascontiguousarray(arr.ravel()), slope)
    if arr.ndim == 0:
        return float(flat[0])
    return flat.reshape(arr.shape)


def eval_friction(spline: FrictionSpline, S):
    """Normalised tire force for slip ``S`` (scalar or array).

    Odd-symmetric in S and constant at the asymptote value beyond Sa.
    """
    return _spline_apply(spline, S, False)


def friction_slope(spline: FrictionSpline, S):
    """dF/dS; an even function of S, zero past the asymptote knot."""
    return _spline_apply(spline, S, True)


DEFAULT_KNOTS = ((0.0, 0.0), (0.2, 1.0), (0.8, 0.6))


# --------------------------------------------------------------------------
# Slip and steering geometry
# --------------------------------------------------------------------------


@njit(cache=True)
def _long_slip(r_w, omega, v_x):
    den = max(abs(v_x), SLIP_EPS)
    return min(max((r_w * omega - v_x) / den, -SLIP_CLAMP), SLIP_CLAMP)


@njit(cache=True)
def _lat_slip(v_x, v_y):
    den = max(abs(v_x), SLIP_EPS)
    return min(max(v_y / den, -SLIP_CLAMP), SLIP_CLAMP)


def longitudinal_slip(r_w, omega, v_x):
    """(r_w * omega - v_x) / max(|v_x|, eps), clamped to +-SLIP_CLAMP."""
    if np.ndim(omega) == 0 and np.ndim(v_x) == 0:
        return float(_long_slip(float(r_w), float(omega), float(v_x)))
    den = np.maximum(np.abs(v_x), SLIP_EPS)
    return np.clip((np.multiply(r_w, omega) - v_x) / den, -SLIP_CLAMP, SLIP_CLAMP)


def lateral_slip(v_x, v_y):
    """v_y / max(|v_x|, eps), clamped to +-SLIP_CLAMP."""
    if np.ndim(v_x) == 0 and np.ndim(v_y) == 0:
        return float(_lat_slip(float(v_x), float(v_y)))
    den = np.maximum(np.abs(v_x), SLIP_EPS)
    return np.clip(np.divide(v_y, den), -SLIP_CLAMP, SLIP_CLAMP)


@njit(cache=True)
def _ackermann(l, w, delta):
    t = math.tan(delta)
    return (math.atan(2.0 * l * t / (2.0 * l + w * t)),
            math.atan(2.0 * l * t / (2.0 * l - w * t)))


def ackermann_angles(l: float, w: float, delta: float) -> tuple[float, float]:
    """Left and right front wheel angles for a steering command ``delta``."""
    dl, dr = _ackermann(float(l), float(w), float(delta))
    return float(dl), float(dr)


# --------------------------------------------------------------------------
# Parameters
# --------------------------------------------------------------------------

# layout of VehicleParams.packed, the flat vector handed to the kernels
P_RW, P_L, P_W, P_MW, P_IW, P_MASS, P_IZ, P_TQ, P_BRAKE, P_SLIM, P_SRATE, P_WMAX, P_SE, P_SA, P_FA = range(15)
P_CM, P_K, P_B = 15, 19, 23
P_SIZE = 27


@dataclass(eq=False)
class VehicleParams:
    """Physical parameters of one vehicle; treat as immutable once built."""

    body_mass: float
    corner_masses: np.ndarray
    wheel_mass: float
    wheel_radius: float
    wheelbase: float
    track_width: float
    spring_stiffness: np.ndarray
    damping: np.ndarray
    drive_torque_limit: float
    brake_torque: float
    steer_inertia: float
    steer_limit: float
    steer_rate_limit: float
    friction_spline: FrictionSpline = field(default_factory=lambda: fit_friction_spline(DEFAULT_KNOTS))
    # wheel speed at which the motor torque falls to zero at full duty
    max_wheel_speed: float = 100.0
    overhang: float = 0.05
    side_margin: float = 0.02

    def __post_init__(self):
        if not isinstance(self.friction_spline, FrictionSpline):
            self.friction_spline = fit_friction_spline(self.friction_spline)
        self.corner_masses = np.asarray(self.corner_masses, dtype=float).reshape(4)
        self.spring_stiffness = np.asarray(self.spring_stiffness, dtype=float).reshape(4)
        self.damping = np.asarray(self.damping, dtype=float).reshape(4)
        scalars = [
            "body_mass", "wheel_mass", "wheel_radius", "wheelbase", "track_width",
            "drive_torque_limit", "brake_torque", "steer_inertia", "steer_limit",
            "steer_rate_limit", "max_wheel_speed",
        ]
        for name in scalars:
            v = float(getattr(self, name))
            if not (math.isfinite(v) and v > 0.0):
                raise InvalidParams(f"{name} must be finite and > 0, got {v}")
            setattr(self, name, v)
        for name in ("corner_masses", "spring_stiffness", "damping"):
            arr = getattr(self, name)
            if not (np.all(np.isfinite(arr)) and np.all(arr > 0.0)):
                raise InvalidParams(f"{name} entries must be finite and > 0")
        total = float(self.corner_masses.sum())
        if abs(total - self.body_mass) > 1e-9 * self.body_mass:
            raise InvalidParams(f"corner masses sum to {total}, body_mass is {self.body_mass}")
        if not (0.0 < self.steer_limit < math.pi / 2):
            raise InvalidParams("steer_limit must lie in (0, pi/2)")
        if self.track_width * math.tan(self.steer_limit) >= 2.0 * self.wheelbase:
            raise InvalidParams("steer_limit too large for the Ackermann geometry")
        self.overhang = float(self.overhang)
        self.side_margin = float(self.side_margin)
        if self.overhang < 0.0 or self.side_margin < 0.0:
            raise InvalidParams("overhang and side_margin must be >= 0")

        packed = np.zeros(P_SIZE)
        packed[P_RW] = self.wheel_radius
        packed[P_L] = self.wheelbase
        packed[P_W] = self.track_width
        packed[P_MW] = self.wheel_mass
        packed[P_IW] = self.wheel_inertia
        packed[P_MASS] = self.total_mass
        packed[P_IZ] = self.yaw_inertia
        packed[P_TQ] = self.drive_torque_limit
        packed[P_BRAKE] = self.brake_torque
        packed[P_SLIM] = self.steer_limit
        packed[P_SRATE] = self.steer_rate_limit
        packed[P_WMAX] = self.max_wheel_speed
        packed[P_SE] = self.friction_spline.se
        packed[P_SA] = self.friction_spline.sa
        packed[P_FA] = self.friction_spline.fa
        packed[P_CM:P_CM + 4] = self.corner_masses
        packed[P_K:P_K + 4] = self.spring_stiffness
        packed[P_B:P_B + 4] = self.damping
        self.packed = packed

    @property
    def wheel_inertia(self) -> float:
        return 0.5 * self.wheel_mass * self.wheel_radius ** 2

    @property
    def total_mass(self) -> float:
        return self.body_mass + 4.0 * self.wheel_mass

    @property
    def corner_positions(self) -> np.ndarray:
        hl, hw = 0.5 * self.wheelbase, 0.5 * self.track_width
        return np.array([[hl, hw], [hl, -hw], [-hl, hw], [-hl, -hw]])

    @property
    def yaw_inertia(self) -> float:
        # point masses at the corners
        r2 = (self.corner_positions ** 2).sum(axis=1)
        return float(((self.corner_masses + self.wheel_mass) * r2).sum())

    @property
    def footprint_size(self) -> tuple[float, float]:
        """(length, width) of the collision rectangle."""
        return (self.wheelbase + 2.0 * self.overhang, self.track_width + 2.0 * self.side_margin)

    @property
    def top_speed(self) -> float:
        return self.max_wheel_speed * self.wheel_radius

    def to_dict(self) -> dict:
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, np.ndarray):
                v = [float(x) for x in v]
            elif isinstance(v, FrictionSpline):
                v = [list(k) for k in v.knots]
            out[f.name] = v
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "VehicleParams":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise InvalidParams(f"unknown vehicle parameter(s): {sorted(unknown)}")
        return cls(**d)


def _critical(k: float, m: float, ratio: float) -> float:
    return ratio * 2.0 * math.sqrt(k * m)


def nigel_params(**overrides) -> VehicleParams:
    """Small four-wheel car used at the intersection (values not published; chosen here)."""
    corner = 0.3
    k = 150.0
    base = dict(
        body_mass=4 * corner,
        corner_masses=[corner] * 4,
        wheel_mass=0.04,
        wheel_radius=0.0325,
        wheelbase=0.141,
        track_width=0.153,
        spring_stiffness=[k] * 4,
        damping=[_critical(k, corner, 0.5)] * 4,
        drive_torque_limit=0.5,
        brake_torque=0.02,
        steer_inertia=1e-4,
        steer_limit=0.5,
        steer_rate_limit=4.0,
        max_wheel_speed=1.0 / 0.0325,
        overhang=0.045,
        side_margin=0.01,
    )
    base.update(overrides)
    return VehicleParams(**base)


def f1tenth_params(**overrides) -> VehicleParams:
    """1:10 racing car; only the 85.6 N*m drive torque limit is a published value."""
    corner = 0.8
    k = 800.0
    base = dict(
        body_mass=4 * corner,
        corner_masses=[corner] * 4,
        wheel_mass=0.1,
        wheel_radius=0.059,
        wheelbase=0.324,
        track_width=0.236,
        spring_stiffness=[k] * 4,
        damping=[_critical(k, corner, 0.5)] * 4,
        drive_torque_limit=85.6,
        brake_torque=0.5,
        steer_inertia=5e-4,
        steer_limit=0.4189,
        steer_rate_limit=3.2,
        max_wheel_speed=6.0 / 0.059,
        overhang=0.09,
        side_margin=0.02,
    )
    base.update(overrides)
    return VehicleParams(**base)


PRESETS = {"nigel": nigel_params, "f1tenth": f1tenth_params}


def preset(name: str, **overrides) -> VehicleParams:
    try:
        factory = PRESETS[name]
    except KeyError:
        raise InvalidParams(f"unknown vehicle preset {name!r}; choose from {sorted(PRESETS)}") from None
    return factory(**overrides)


# --------------------------------------------------------------------------
# State and command
# --------------------------------------------------------------------------

# layout of VehicleState.vec
S_X, S_Y, S_YAW, S_VX, S_VY, S_R = range(6)
S_OMEGA, S_STEER, S_Z, S_ZD, S_UZ, S_UZD = 6, 10, 11, 15, 19, 23
STATE_SIZE = 27


class VehicleState:
    """Kinodynamic state of one vehicle, backed by a flat float64 vector.

    Vector layout: x, y, yaw, vx, vy, yaw_rate, wheel_speeds[4], steer,
    sprung_z[4], sprung_zdot[4], unsprung_z[4], unsprung_zdot[4].
    """

    __slots__ = ("vec",)
    VECTOR_SIZE = STATE_SIZE

    def __init__(self, x=0.0, y=0.0, yaw=0.0, vx=0.0, vy=0.0, yaw_rate=0.0,
                 wheel_speeds=None, steer=0.0, sprung_z=None, sprung_zdot=None,
                 unsprung_z=None, unsprung_zdot=None):
        v = np.zeros(STATE_SIZE)
        v[:6] = (x, y, yaw, vx, vy, yaw_rate)
        v[S_STEER] = steer
        for start, arr in ((S_OMEGA, wheel_speeds), (S_Z, sprung_z), (S_ZD, sprung_zdot),
                           (S_UZ, unsprung_z), (S_UZD, unsprung_zdot)):
            if arr is not None:
                v[start:start + 4] = arr
        self.vec = v

    @classmethod
    def from_vector(cls, v) -> "VehicleState":
        v = np.array(v, dtype=float)
        if v.shape != (STATE_SIZE,):
            raise ValueError(f"state vector must have shape ({STATE_SIZE},), got {v.shape}")
        obj = cls.__new__(cls)
        obj.vec = v
        return obj

    @classmethod
    def at_pose(cls, x: float, y: float, yaw: float, speed: float = 0.0,
                params: VehicleParams | None = None) -> "VehicleState":
        """State at a pose, rolling straight ahead at ``speed``."""
        omega = speed / params.wheel_radius if params is not None else 0.0
        return cls(x=x, y=y, yaw=wrap_angle(yaw), vx=speed, wheel_speeds=[omega] * 4)

    def as_vector(self) -> np.ndarray:
        return self.vec.copy()

    def copy(self) -> "VehicleState":
        return VehicleState.from_vector(self.vec)

    def replace(self, **kw) -> "VehicleState":
        d = self.to_dict()
        d.update(kw)
        return VehicleState(**d)

    def to_dict(self) -> dict:
        return dict(
            x=self.x, y=self.y, yaw=self.yaw, vx=self.vx, vy=self.vy, yaw_rate=self.yaw_rate,
            wheel_speeds=self.wheel_speeds, steer=self.steer, sprung_z=self.sprung_z,
            sprung_zdot=self.sprung_zdot, unsprung_z=self.unsprung_z, unsprung_zdot=self.unsprung_zdot,
        )

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.vec)))

    def __eq__(self, other):
        return isinstance(other, VehicleState) and bool(np.array_equal(self.vec, other.vec))

    __hash__ = None

    def __repr__(self):
        return (f"VehicleState(x={self.x:.4f}, y={self.y:.4f}, yaw={self.yaw:.4f}, "
                f"vx={self.vx:.4f}, vy={self.vy:.4f}, yaw_rate={self.yaw_rate:.4f}, steer={self.steer:.4f})")

    x = property(lambda s: float(s.vec[S_X]))
    y = property(lambda s: float(s.vec[S_Y]))
    yaw = property(lambda s: float(s.vec[S_YAW]))
    vx = property(lambda s: float(s.vec[S_VX]))
    vy = property(lambda s: float(s.vec[S_VY]))
    yaw_rate = property(lambda s: float(s.vec[S_R]))
    steer = property(lambda s: float(s.vec[S_STEER]))
    wheel_speeds = property(lambda s: s.vec[S_OMEGA:S_OMEGA + 4].copy())
    sprung_z = property(lambda s: s.vec[S_Z:S_Z + 4].copy())
    sprung_zdot = property(lambda s: s.vec[S_ZD:S_ZD + 4].copy())
    unsprung_z = property(lambda s: s.vec[S_UZ:S_UZ + 4].copy())
    unsprung_zdot = property(lambda s: s.vec[S_UZD:S_UZD + 4].copy())

    @property
    def speed(self) -> float:
        return math.hypot(self.vx, self.vy)


@dataclass(frozen=True)
class ActuatorCommand:
    """throttle: duty fraction in [-1, 1]; steering: rad, positive turns right."""

    throttle: float = 0.0
    steering: float = 0.0

    def validate(self, params: VehicleParams) -> None:
        if not (-1.0 <= self.throttle <= 1.0):
            raise ValueError(f"throttle {self.throttle} outside [-1, 1]")
        if abs(self.steering) > params.steer_limit + 1e-12:
            raise ValueError(f"steering {self.steering} exceeds limit {params.steer_limit}")


# --------------------------------------------------------------------------
# Suspension
# --------------------------------------------------------------------------


class CornerState(NamedTuple):
    """Vertical state of one or more corners, displacements from static equilibrium."""

    Z: np.ndarray
    Zdot: np.ndarray
    z: np.ndarray
    zdot: np.ndarray


@njit(cache=True)
def _corner_euler(Z, Zd, z, zd, K, B, M, m_w, h, load):
    static = (M + m_w) * GRAVITY
    spring = K * (Z - z) + B * (Zd - zd)
    Zd_new = Zd + h * (-spring - load) / M
    Z_new = Z + h * Zd_new
    if z > 0.0 or static + load - spring < 0.0:
        # wheel off the ground
        zd_new = zd + h * (spring - static - load) / m_w
        z_new = z + h * zd_new
        if z_new < 0.0:
            z_new = 0.0
            zd_new = 0.0
    else:
        z_new = 0.0
        zd_new = 0.0
    return Z_new, Zd_new, z_new, zd_new


@njit(cache=True)
def _corner(Z, Zd, z, zd, K, B, M, m_w, dt, load):
    n = int(math.ceil(dt / SUSPENSION_SUBSTEP - 1e-9))
    h = dt / n
    for _ in range(n):
        Z, Zd, z, zd = _corner_euler(Z, Zd, z, zd, K, B, M, m_w, h, load)
    if z > 0.0:
        normal = 0.0
    else:
        normal = max((M + m_w) * GRAVITY + load - K * (Z - z) - B * (Zd - zd), 0.0)
    return Z, Zd, z, zd, normal


def suspension_step(corner: CornerState, K, B, M, m_w, dt: float, external_load=0.0):
    """Advance the sprung/unsprung pair of each corner by ``dt``.

    Semi-implicit Euler, split into substeps of at most ``SUSPENSION_SUBSTEP``.

    ``external_load`` is an additional downward force on the sprung mass.  The
    unsprung mass rests on rigid ground (z = 0) while the contact reaction is
    non-negative and lifts off otherwise.  Returns ``(new_corner, normal_force)``.
    """
    if dt <= 0.0:
        raise ValueError("dt must be > 0")
    arrays = np.broadcast_arrays(*(np.asarray(a, dtype=float) for a in (*corner, K, B, M, external_load)))
    shape = arrays[0].shape
    flat = [a.ravel() for a in arrays]
    out = np.empty((5, flat[0].size))
    for i in range(flat[0].size):
        out[:, i] = _corner(flat[0][i], flat[1][i], flat[2][i], flat[3][i],
                            flat[4][i], flat[5][i], flat[6][i], float(m_w), float(dt), flat[7][i])
    res = [o.reshape(shape) if shape else float(o[0]) for o in out]
    return CornerState(*res[:4]), res[4]


# --------------------------------------------------------------------------
# Tires and integration
# --------------------------------------------------------------------------


def wheel_angles(params: VehicleParams, steer: float) -> np.ndarray:
    """Physical wheel angles in the body frame (CCW positive), FL FR RL RR."""
    dl, dr = ackermann_angles(params.wheelbase, params.track_width, steer)
    return np.array([-dl, -dr, 0.0, 0.0])


@njit(cache=True)
def _contact(vx, vy, r, px, py, gamma):
    # velocity of the contact point expressed in the wheel frame
    vbx = vx - r * py
    vby = vy + r * px
    cg = math.cos(gamma)
    sg = math.sin(gamma)
    return cg * vbx + sg * vby, -sg * vbx + cg * vby, cg, sg


@njit(cache=True)
def _tire_forces(s, p, c, normals, out):
    hl = 0.5 * p[P_L]
    hw = 0.5 * p[P_W]
    dl, dr = _ackermann(p[P_L], p[P_W], s[S_STEER])
    for i in range(4):
        px = hl if i < 2 else -hl
        py = hw if i % 2 == 0 else -hw
        gamma = -dl if i == 0 else (-dr if i == 1 else 0.0)
        u, w, cg, sg = _contact(s[S_VX], s[S_VY], s[S_R], px, py, gamma)
        fx = normals[i] * _friction(c, p[P_SE], p[P_SA], p[P_FA], _long_slip(p[P_RW], s[S_OMEGA + i], u))
        fy = -normals[i] * _friction(c, p[P_SE], p[P_SA], p[P_FA], _lat_slip(u, w))
        out[i, 0] = cg * fx - sg * fy
        out[i, 1] = sg * fx + cg * fy


def compute_tire_forces(state: VehicleState, params: VehicleParams, normals) -> np.ndarray:
    """Body-frame (Fx, Fy) of every tire, shape (4, 2)."""
    out = np.empty((4, 2))
    _tire_forces(state.vec, params.packed, params.friction_spline.coeffs,
                 np.ascontiguousarray(np.broadcast_to(np.asarray(normals, dtype=float), (4,))), out)
    return out


def kinetic_energy(state: VehicleState, params: VehicleParams) -> float:
    return float(
        0.5 * params.total_mass * (state.vx ** 2 + state.vy ** 2)
        + 0.5 * params.yaw_inertia * state.yaw_rate ** 2
        + 0.5 * params.wheel_inertia * np.dot(state.wheel_speeds, state.wheel_speeds)
    )


@njit(cache=True)
def _det3(m):
    return (m[0, 0] * (m[1, 1] * m[2, 2] - m[1, 2] * m[2, 1])
            - m[0, 1] * (m[1, 0] * m[2, 2] - m[1, 2] * m[2, 0])
            + m[0, 2] * (m[1, 0] * m[2, 1] - m[1, 1] * m[2, 0]))


@njit(cache=True)
def _solve3(a, b):
    # Cramer's rule; the matrix is the identity plus a scaled PSD term
    det = _det3(a)
    x = np.empty(3)
    for k in range(3):
        m = a.copy()
        m[:, k] = b
        x[k] = _det3(m) / det
    return x


@njit(cache=True)
def _step(s, throttle, steering, p, c, dt):
    out = s.copy()
    r_w = p[P_RW]
    se = p[P_SE]
    sa = p[P_SA]
    fa = p[P_FA]

    # steering slews toward the command at a bounded rate
    target = min(max(steering, -p[P_SLIM]), p[P_SLIM])
    max_delta = p[P_SRATE] * dt
    steer = s[S_STEER] + min(max(target - s[S_STEER], -max_delta), max_delta)
    dl, dr = _ackermann(p[P_L], p[P_W], steer)
    out[S_STEER] = steer

    normals = np.empty(4)
    for i in range(4):
        Z, Zd, z, zd, n = _corner(s[S_Z + i], s[S_ZD + i], s[S_UZ + i], s[S_UZD + i],
                                  p[P_K + i], p[P_B + i], p[P_CM + i], p[P_MW], dt, 0.0)
        out[S_Z + i] = Z
        out[S_ZD + i] = Zd
        out[S_UZ + i] = z
        out[S_UZD + i] = zd
        normals[i] = n

    hl = 0.5 * p[P_L]
    hw = 0.5 * p[P_W]
    px = np.array([hl, hl, -hl, -hl])
    py = np.array([hw, -hw, hw, -hw])
    u = np.empty(4)
    w = np.empty(4)
    cg = np.empty(4)
    sg = np.empty(4)
    den = np.empty(4)
    for i in range(4):
        gamma = -dl if i == 0 else (-dr if i == 1 else 0.0)
        u[i], w[i], cg[i], sg[i] = _contact(s[S_VX], s[S_VY], s[S_R], px[i], py[i], gamma)
        den[i] = max(abs(u[i]), SLIP_EPS)

    # wheel spin, implicit in the tire reaction and the motor back-EMF.  One
    # motor drives the rear axle through an open differential: both rear
    # wheels get the same torque, set by their mean speed.
    iw = p[P_IW]
    omega = s[S_OMEGA:S_OMEGA + 4]
    torque = np.zeros(4)
    motor_stiff = 0.0
    if throttle != 0.0:
        raw = throttle - 0.5 * (omega[2] + omega[3]) / p[P_WMAX]
        tq = p[P_TQ] * min(max(raw, -1.0), 1.0)
        torque[2] = tq
        torque[3] = tq
        if abs(raw) < 1.0:
            motor_stiff = p[P_TQ] / p[P_WMAX]
    inertia = np.empty(4)
    rhs = np.empty(4)
    omega_new = np.empty(4)
    for i in range(4):
        sx_raw = (r_w * omega[i] - u[i]) / den[i]
        sx = min(max(sx_raw, -SLIP_CLAMP), SLIP_CLAMP)
        fx = normals[i] * _friction(c, se, sa, fa, sx)
        stiff = 0.0
        if abs(sx_raw) < SLIP_CLAMP:
            stiff = normals[i] * max(_friction_slope(c, se, sa, sx), 0.0)
        inertia[i] = iw + dt * r_w * r_w * stiff / den[i]
        rhs[i] = dt * (torque[i] - r_w * fx)
        omega_new[i] = omega[i] + rhs[i] / inertia[i]
    if motor_stiff > 0.0:
        b = 0.5 * dt * motor_stiff
        a_l = inertia[2]
        a_r = inertia[3]
        det = a_l * a_r + b * (a_l + a_r)
        omega_new[2] = omega[2] + ((a_r + b) * rhs[2] - b * rhs[3]) / det
        omega_new[3] = omega[3] + ((a_l + b) * rhs[3] - b * rhs[2]) / det
    if throttle == 0.0:
        # idle holding torque on the driven wheels acts like a brake
        for i in range(2, 4):
            drop = dt * p[P_BRAKE] / inertia[i]
            mag = max(abs(omega_new[i]) - drop, 0.0)
            omega_new[i] = mag if omega_new[i] > 0.0 else -mag
    out[S_OMEGA:S_OMEGA + 4] = omega_new

    # chassis forces with the updated wheel speeds; the damping matrix
    # sum_i G_i^T R_i diag(cx, cy) R_i^T G_i makes the velocity update implicit
    qx = 0.0
    qy = 0.0
    qz = 0.0
    jac = np.zeros((3, 3))
    for i in range(4):
        sx_raw = (r_w * omega_new[i] - u[i]) / den[i]
        sx = min(max(sx_raw, -SLIP_CLAMP), SLIP_CLAMP)
        sy_raw = w[i] / den[i]
        sy = min(max(sy_raw, -SLIP_CLAMP), SLIP_CLAMP)
        fx = normals[i] * _friction(c, se, sa, fa, sx)
        fy = -normals[i] * _friction(c, se, sa, fa, sy)
        cx = 0.0
        cy = 0.0
        if abs(sx_raw) < SLIP_CLAMP:
            cx = normals[i] * max(_friction_slope(c, se, sa, sx), 0.0) * (1.0 + max(sx, 0.0)) / den[i]
        if abs(sy_raw) < SLIP_CLAMP:
            cy = normals[i] * max(_friction_slope(c, se, sa, sy), 0.0) / den[i]
        fbx = cg[i] * fx - sg[i] * fy
        fby = sg[i] * fx + cg[i] * fy
        qx += fbx
        qy += fby
        qz += px[i] * fby - py[i] * fbx
        d11 = cx * cg[i] * cg[i] + cy * sg[i] * sg[i]
        d12 = (cx - cy) * cg[i] * sg[i]
        d22 = cx * sg[i] * sg[i] + cy * cg[i] * cg[i]
        jac[0, 0] += d11
        jac[0, 1] += d12
        jac[1, 1] += d22
        jac[0, 2] += -py[i] * d11 + px[i] * d12
        jac[1, 2] += -py[i] * d12 + px[i] * d22
        jac[2, 2] += py[i] * py[i] * d11 - 2.0 * px[i] * py[i] * d12 + px[i] * px[i] * d22
    jac[1, 0] = jac[0, 1]
    jac[2, 0] = jac[0, 2]
    jac[2, 1] = jac[1, 2]

    m = p[P_MASS]
    iz = p[P_IZ]
    inv = np.array([1.0 / m, 1.0 / m, 1.0 / iz])
    rhs3 = np.array([
        dt * (qx / m + s[S_R] * s[S_VY]),
        dt * (qy / m - s[S_R] * s[S_VX]),
        dt * qz / iz,
    ])
    lhs = np.eye(3)
    for a in range(3):
        for b in range(3):
            lhs[a, b] += dt * inv[a] * jac[a, b]
    dq = _solve3(lhs, rhs3)
    vx = s[S_VX] + dq[0]
    vy = s[S_VY] + dq[1]
    r = s[S_R] + dq[2]

    heading = s[S_YAW] + 0.5 * dt * r
    ch = math.cos(heading)
    sh = math.sin(heading)
    out[S_X] = s[S_X] + dt * (vx * ch - vy * sh)
    out[S_Y] = s[S_Y] + dt * (vx * sh + vy * ch)
    out[S_YAW] = _wrap(s[S_YAW] + dt * r)
    out[S_VX] = vx
    out[S_VY] = vy
    out[S_R] = r
    return out


@njit(cache=True)
def _step_many(states, throttles, steerings, p, c, dt, substeps):
    out = states.copy()
    for k in range(out.shape[0]):
        s = out[k].copy()
        for _ in range(substeps):
            s = _step(s, throttles[k], steerings[k], p, c, dt)
        out[k] = s
    return out


def _check_dt(dt: float) -> None:
    if not (0.0 < dt <= MAX_DT):
        raise ValueError(f"dt must lie in (0, {MAX_DT}], got {dt}")


def step_vehicle(state: VehicleState, cmd: ActuatorCommand, params: VehicleParams, dt: float) -> VehicleState:
    """Advance one vehicle by ``dt`` seconds (semi-implicit Euler).

    Tire forces are stiff at low speed, so the wheel-spin and chassis velocity
    updates use the local slope of the friction curve as an implicit damping
    term; positions are then advanced with the updated velocities.
    """
    _check_dt(dt)
    new = _step(state.vec, float(cmd.throttle), float(cmd.steering), params.packed,
                params.friction_spline.coeffs, float(dt))
    if not np.all(np.isfinite(new)):
        raise IntegrationDiverged("non-finite vehicle state after integration step")
    obj = VehicleState.__new__(VehicleState)
    obj.vec = new
    return obj


def step_vehicles(states: np.ndarray, throttles, steerings, params: VehicleParams,
                  dt: float, substeps: int = 1) -> np.ndarray:
    """Batched :func:`step_vehicle` over an (n, STATE_SIZE) array of state vectors.

    Each vehicle is advanced ``substeps`` times with its command held.
    """
    _check_dt(dt)
    out = _step_many(np.ascontiguousarray(states, dtype=float),
                     np.ascontiguousarray(throttles, dtype=float),
                     np.ascontiguousarray(steerings, dtype=float),
                     params.packed, params.friction_spline.coeffs, float(dt), int(substeps))
    if not np.all(np.isfinite(out)):
        raise IntegrationDiverged("non-finite vehicle state after integration step")
    return out
