import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from marl_drive.dynamics import (
    ActuatorCommand,
    CornerState,
    DEFAULT_KNOTS,
    GRAVITY,
    IntegrationDiverged,
    InvalidKnots,
    InvalidParams,
    VehicleState,
    ackermann_angles,
    compute_tire_forces,
    eval_friction,
    fit_friction_spline,
    friction_slope,
    kinetic_energy,
    lateral_slip,
    longitudinal_slip,
    nigel_params,
    preset,
    step_vehicle,
    step_vehicles,
    suspension_step,
    wrap_angle,
)

# Goldens frozen from a symbolic solve of the boundary conditions
# (sympy, exact rationals): F(0.1) = 11/16, F(0.5) = 4/5.
F_AT_0_1 = 11.0 / 16.0
F_AT_0_5 = 4.0 / 5.0
# atan formulas evaluated with sympy to 20 digits for l=0.25, w=0.15, delta=0.3
ACK_L = 0.27585078627778370715
ACK_R = 0.32861619360813780425


@pytest.fixture(scope="module")
def spline():
    return fit_friction_spline(DEFAULT_KNOTS)


class TestFrictionSpline:
    def test_knots_interpolated(self, spline):
        for s, f in DEFAULT_KNOTS:
            assert abs(eval_friction(spline, s) - f) < 1e-12

    def test_extremum_and_asymptote_slopes(self, spline):
        assert abs(friction_slope(spline, 0.2)) < 1e-9
        assert abs(friction_slope(spline, 0.8 - 1e-12)) < 1e-9

    def test_c1_at_extremum(self, spline):
        c = spline.coeffs
        se = spline.se
        vals = [np.polyval(c[k], se) for k in range(2)]
        slopes = [np.polyval(np.polyder(c[k]), se) for k in range(2)]
        assert abs(vals[0] - vals[1]) < 1e-9
        assert abs(slopes[0] - slopes[1]) < 1e-9

    def test_natural_start(self, spline):
        assert abs(np.polyval(np.polyder(spline.coeffs[0], 2), 0.0)) < 1e-12

    def test_golden_values(self, spline):
        assert eval_friction(spline, 0.1) == pytest.approx(F_AT_0_1, abs=1e-12)
        assert eval_friction(spline, 0.5) == pytest.approx(F_AT_0_5, abs=1e-12)

    def test_symbolic_oracle(self):
        sp = pytest.importorskip("sympy")
        S, a, b, c, d = sp.symbols("S a b c d")
        f = a * S ** 3 + b * S ** 2 + c * S + d
        knots = [(sp.Rational(1, 10), sp.Rational(1, 5)), (sp.Rational(1, 2), 1), (sp.Rational(3, 2), sp.Rational(7, 10))]
        (s0, f0), (se, fe), (sa, fa) = knots
        seg0 = sp.solve([f.subs(S, s0) - f0, f.subs(S, se) - fe, sp.diff(f, S).subs(S, se),
                         sp.diff(f, S, 2).subs(S, s0)], [a, b, c, d])
        seg1 = sp.solve([f.subs(S, se) - fe, f.subs(S, sa) - fa, sp.diff(f, S).subs(S, se),
                         sp.diff(f, S).subs(S, sa)], [a, b, c, d])
        spl = fit_friction_spline([(float(s), float(v)) for s, v in knots])
        for x in np.linspace(0.1, 1.49, 37):
            seg = seg0 if x < 0.5 else seg1
            expected = float(f.subs(seg).subs(S, sp.Float(x, 30)))
            assert eval_friction(spl, x) == pytest.approx(expected, abs=1e-12)

    def test_clamp_beyond_asymptote(self, spline):
        np.testing.assert_array_equal(eval_friction(spline, [0.8, 1.5, 9.0]), [0.6, 0.6, 0.6])
        assert eval_friction(spline, -3.0) == -0.6

    def test_negative_extremum(self, spline):
        assert eval_friction(spline, -0.2) == pytest.approx(-1.0, abs=1e-12)

    @given(st.floats(-20, 20, allow_nan=False))
    def test_odd_symmetry(self, s):
        spl = fit_friction_spline(DEFAULT_KNOTS)
        assert eval_friction(spl, -s) == -eval_friction(spl, s)

    def test_array_shape_preserved(self, spline):
        out = eval_friction(spline, np.zeros((3, 2)))
        assert out.shape == (3, 2)

    @pytest.mark.parametrize("knots", [
        [(0, 0), (0.2, 1), (0.2, 0.6)],
        [(0.3, 0), (0.2, 1), (0.8, 0.6)],
        [(0, 0), (0.2, 1)],
        [(0, 0), (0.2, float("nan")), (0.8, 0.6)],
    ])
    def test_invalid_knots(self, knots):
        with pytest.raises(InvalidKnots):
            fit_friction_spline(knots)


class TestSlip:
    def test_pure_rolling(self):
        assert longitudinal_slip(0.05, 20.0, 1.0) == 0.0

    def test_formula(self):
        assert longitudinal_slip(0.05, 20.0, 0.9) == pytest.approx(0.1 / 0.9, abs=1e-12)

    def test_regularised_and_clamped(self):
        assert longitudinal_slip(0.05, 10.0, 0.0) == 10.0
        assert longitudinal_slip(0.05, -10.0, 0.0) == -10.0

    @given(st.floats(0.05, 30), st.floats(0.01, 0.1))
    def test_rolling_property(self, v, r_w):
        assert abs(longitudinal_slip(r_w, v / r_w, v)) < 1e-12

    def test_lateral(self):
        assert lateral_slip(2.0, 0.0) == 0.0
        assert lateral_slip(2.0, 0.5) == pytest.approx(0.25)
        assert lateral_slip(-2.0, 0.5) == pytest.approx(0.25)
        assert lateral_slip(0.0, 1.0) == 10.0

    def test_vectorised(self):
        out = longitudinal_slip(0.05, np.array([20.0, 10.0]), np.array([1.0, 0.0]))
        np.testing.assert_allclose(out, [0.0, 10.0])


class TestAckermann:
    def test_straight(self):
        assert ackermann_angles(0.25, 0.15, 0.0) == (0.0, 0.0)

    def test_golden(self):
        dl, dr = ackermann_angles(0.25, 0.15, 0.3)
        assert dl == pytest.approx(ACK_L, abs=1e-14)
        assert dr == pytest.approx(ACK_R, abs=1e-14)

    def test_mirror_and_inner_outer(self):
        rng = np.random.default_rng(0)
        for delta in rng.uniform(-0.5, 0.5, 100):
            dl, dr = ackermann_angles(0.141, 0.153, delta)
            ml, mr = ackermann_angles(0.141, 0.153, -delta)
            assert ml == pytest.approx(-dr, abs=1e-14)
            assert mr == pytest.approx(-dl, abs=1e-14)
            # positive steering turns right, so the right wheel is on the inside
            inner, outer = (dr, dl) if delta > 0 else (dl, dr)
            assert abs(inner) >= abs(outer)


class TestParams:
    def test_presets_valid(self):
        for name in ("nigel", "f1tenth"):
            p = preset(name)
            assert p.corner_masses.sum() == pytest.approx(p.body_mass)
        assert preset("f1tenth").drive_torque_limit == 85.6

    def test_unknown_preset(self):
        with pytest.raises(InvalidParams):
            preset("tank")

    @pytest.mark.parametrize("override", [
        {"wheel_radius": 0.0},
        {"body_mass": 2.0},
        {"damping": [1, 1, -1, 1]},
        {"steer_limit": 1.6},
        {"steer_limit": 1.55},
    ])
    def test_invalid(self, override):
        with pytest.raises(InvalidParams):
            nigel_params(**override)

    def test_round_trip(self):
        p = preset("nigel")
        q = type(p).from_dict(p.to_dict())
        np.testing.assert_array_equal(p.packed, q.packed)


class TestSuspension:
    def test_static_equilibrium(self):
        p = preset("nigel")
        c = CornerState(np.zeros(4), np.zeros(4), np.zeros(4), np.zeros(4))
        c2, n = suspension_step(c, p.spring_stiffness, p.damping, p.corner_masses, p.wheel_mass, 0.01)
        np.testing.assert_allclose(n, (p.corner_masses + p.wheel_mass) * GRAVITY)
        np.testing.assert_array_equal(c2.Z, 0.0)

    @pytest.mark.parametrize("name", ["nigel", "f1tenth"])
    def test_step_response_matches_fine_reference(self, name):
        p = preset(name)
        K, B, M, m_w = p.spring_stiffness[0], p.damping[0], p.corner_masses[0], p.wheel_mass
        dt = 0.01
        corner = CornerState(0.01, 0.0, 0.0, 0.0)
        traj = [0.01]
        for _ in range(100):
            corner, _n = suspension_step(corner, K, B, M, m_w, dt)
            traj.append(corner.Z)
        # reference: the wheel stays on the ground, so the sprung mass obeys
        # M Z'' = -K Z - B Z'; integrate with RK4 at dt = 1e-5
        h = 1e-5
        y = np.array([0.01, 0.0])
        rhs = lambda y: np.array([y[1], (-K * y[0] - B * y[1]) / M])
        ref = [y[0]]
        per = int(round(dt / h))
        for k in range(100 * per):
            k1 = rhs(y)
            k2 = rhs(y + 0.5 * h * k1)
            k3 = rhs(y + 0.5 * h * k2)
            k4 = rhs(y + h * k3)
            y = y + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
            if (k + 1) % per == 0:
                ref.append(y[0])
        err = np.max(np.abs(np.array(traj) - np.array(ref)))
        assert err < 0.01 * 0.01

    def test_critical_damping_no_overshoot(self):
        K, M, m_w = 150.0, 0.3, 0.04
        B = 2 * math.sqrt(K * M)
        corner = CornerState(0.01, 0.0, 0.0, 0.0)
        for _ in range(300):
            corner, _n = suspension_step(corner, K, B, M, m_w, 0.01)
            assert corner.Z >= 0.0

    def test_lift_off_zero_normal(self):
        # a large upward velocity pulls the wheel off the ground
        corner = CornerState(0.0, 3.0, 0.0, 0.0)
        lifted = False
        for _ in range(20):
            corner, n = suspension_step(corner, 150.0, 6.0, 0.3, 0.04, 0.005)
            assert n >= 0.0
            if corner.z > 0:
                lifted = True
                assert n == 0.0
        assert lifted

    def test_dt_must_be_positive(self):
        with pytest.raises(ValueError):
            suspension_step(CornerState(0.0, 0.0, 0.0, 0.0), 1.0, 1.0, 1.0, 1.0, 0.0)


class TestTireForces:
    def test_zero_slip(self):
        p = preset("nigel")
        s = VehicleState.at_pose(0, 0, 0, speed=0.5, params=p)
        np.testing.assert_allclose(compute_tire_forces(s, p, np.full(4, 3.0)), 0.0, atol=1e-12)

    def test_airborne(self):
        p = preset("nigel")
        s = VehicleState(vx=0.5, vy=0.3, wheel_speeds=[40, 40, 40, 40])
        np.testing.assert_array_equal(compute_tire_forces(s, p, np.zeros(4)), 0.0)

    def test_rear_drive_force_sum(self):
        p = preset("nigel")
        v = 0.5
        w_roll = v / p.wheel_radius
        w_rear = 1.05 * w_roll
        s = VehicleState(vx=v, wheel_speeds=[w_roll, w_roll, w_rear, w_rear])
        normals = np.full(4, 3.0)
        forces = compute_tire_forces(s, p, normals)
        sx = (p.wheel_radius * w_rear - v) / v
        expected = 2 * 3.0 * eval_friction(p.friction_spline, sx)
        assert forces[:, 0].sum() == pytest.approx(expected, rel=1e-12)
        assert abs(forces[:, 1].sum()) < 1e-12


def run(state, cmd, p, steps, dt=0.01):
    for _ in range(steps):
        state = step_vehicle(state, cmd, p, dt)
    return state


class TestStepVehicle:
    def test_equilibrium_fixed_point(self):
        p = preset("nigel")
        s0 = VehicleState()
        s1 = run(s0, ActuatorCommand(0.0, 0.0), p, 50)
        np.testing.assert_array_equal(s1.as_vector()[:11], s0.as_vector()[:11])

    @pytest.mark.parametrize("name", ["nigel", "f1tenth"])
    def test_straight_line(self, name):
        p = preset(name)
        s = VehicleState()
        xs = []
        for _ in range(200):
            s = step_vehicle(s, ActuatorCommand(0.6, 0.0), p, 0.01)
            xs.append(s.x)
            assert abs(s.vy) < 1e-6
        assert np.all(np.diff(xs) > 0)
        assert abs(s.y) < 1e-9

    @pytest.mark.parametrize("name,steer", [("nigel", 0.2), ("nigel", -0.3), ("f1tenth", 0.2), ("f1tenth", -0.3)])
    def test_low_speed_turn_radius(self, name, steer):
        p = preset(name)
        s = VehicleState()
        pts = []
        for k in range(2500):
            s = step_vehicle(s, ActuatorCommand(0.2 if name == "nigel" else 0.05, steer), p, 0.01)
            if k > 1000:
                pts.append((s.x, s.y))
        pts = np.array(pts)
        A = np.c_[2 * pts, np.ones(len(pts))]
        c = np.linalg.lstsq(A, (pts ** 2).sum(1), rcond=None)[0]
        radius = math.sqrt(c[2] + c[0] ** 2 + c[1] ** 2)
        dl, dr = ackermann_angles(p.wheelbase, p.track_width, steer)
        kin = p.wheelbase / math.tan(abs(0.5 * (dl + dr)))
        assert abs(radius - kin) / kin < 0.05
        # positive steering turns right (clockwise)
        assert np.sign(s.yaw_rate) == -np.sign(steer)

    def test_steering_rate_limited(self):
        p = preset("nigel")
        s = step_vehicle(VehicleState(), ActuatorCommand(0.0, 0.5), p, 0.01)
        assert s.steer == pytest.approx(p.steer_rate_limit * 0.01)

    @pytest.mark.parametrize("name", ["nigel", "f1tenth"])
    def test_coasting_energy_non_increasing(self, name):
        p = preset(name)
        s = VehicleState.at_pose(0, 0, 0.3, speed=0.8 * p.top_speed, params=p)
        energy = []
        for k in range(300):
            s = step_vehicle(s, ActuatorCommand(0.0, 0.1 if k > 50 else 0.0), p, 0.01)
            energy.append(kinetic_energy(s, p))
        assert np.all(np.diff(energy) <= 1e-12)

    def test_top_speed_reached(self):
        p = preset("nigel")
        s = run(VehicleState(), ActuatorCommand(0.5, 0.0), p, 400)
        assert s.vx == pytest.approx(0.5 * p.top_speed, rel=1e-3)

    def test_reverse(self):
        p = preset("nigel")
        s = run(VehicleState(), ActuatorCommand(-0.3, 0.0), p, 200)
        assert s.vx < -0.2 and s.x < 0

    def test_first_order_convergence(self):
        p = preset("nigel")

        def endpoint(dt):
            s = VehicleState.at_pose(0, 0, 0, speed=0.3, params=p)
            cmd = ActuatorCommand(0.5, 0.2)
            for _ in range(int(round(1.0 / dt))):
                s = step_vehicle(s, cmd, p, dt)
            return np.array([s.x, s.y])

        e = [endpoint(dt) for dt in (0.01, 0.005, 0.0025)]
        d1 = np.linalg.norm(e[1] - e[0])
        d2 = np.linalg.norm(e[2] - e[1])
        assert d2 < 2 * d1

    def test_deterministic(self):
        p = preset("f1tenth")
        s = VehicleState.at_pose(1, 2, 0.4, speed=2.0, params=p)
        cmd = ActuatorCommand(0.7, -0.2)
        a = step_vehicle(s, cmd, p, 0.01)
        b = step_vehicle(s, cmd, p, 0.01)
        assert a.as_vector().tobytes() == b.as_vector().tobytes()

    def test_batched_matches_single(self):
        p = preset("nigel")
        states = [VehicleState.at_pose(i, 0, 0.1 * i, speed=0.2 * i, params=p) for i in range(3)]
        thr = np.array([0.2, 0.5, -0.4])
        steer = np.array([0.0, 0.3, -0.2])
        batch = step_vehicles(np.stack([s.vec for s in states]), thr, steer, p, 0.01, substeps=5)
        for i, s in enumerate(states):
            single = run(s, ActuatorCommand(thr[i], steer[i]), p, 5)
            np.testing.assert_array_equal(batch[i], single.vec)

    def test_yaw_wrapped(self):
        p = preset("nigel")
        s = VehicleState.at_pose(0, 0, math.pi - 1e-3, speed=0.5, params=p)
        for _ in range(300):
            s = step_vehicle(s, ActuatorCommand(0.5, -0.4), p, 0.01)
            assert -math.pi < s.yaw <= math.pi

    def test_bad_dt(self):
        p = preset("nigel")
        with pytest.raises(ValueError):
            step_vehicle(VehicleState(), ActuatorCommand(), p, 0.05)
        with pytest.raises(ValueError):
            step_vehicle(VehicleState(), ActuatorCommand(), p, 0.0)

    def test_divergence_detected(self):
        p = preset("nigel")
        bad = VehicleState(vx=float("inf"))
        with pytest.raises(IntegrationDiverged):
            step_vehicle(bad, ActuatorCommand(), p, 0.01)

    def test_command_validation(self):
        p = preset("nigel")
        with pytest.raises(ValueError):
            ActuatorCommand(1.5, 0.0).validate(p)
        with pytest.raises(ValueError):
            ActuatorCommand(0.0, 0.6).validate(p)


@settings(max_examples=50)
@given(st.floats(-50, 50, allow_nan=False))
def test_wrap_angle_range(a):
    w = wrap_angle(a)
    assert -math.pi < w <= math.pi
    assert math.isclose(math.cos(w), math.cos(a), abs_tol=1e-9)
