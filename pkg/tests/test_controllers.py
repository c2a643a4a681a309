import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.optimize import brentq

from stopgo.cfm import DEFAULT_IDM, CfmInput, idm_accel
from stopgo.controllers import (ControlCommand, FollowerStopper, IdmRelaxation, command_to_accel,
                                controller_from_dict, controller_to_dict, follower_stopper_bands,
                                follower_stopper_command, idm_relaxation_accel)

FS = FollowerStopper(5.0)


class TestIdmRelaxation:
    @given(s=st.floats(0.5, 300), v=st.floats(0, 35), dv=st.floats(-10, 10))
    def test_gamma_zero_is_idm(self, s, v, dv):
        spec = IdmRelaxation(5.0, 0.0)
        assert idm_relaxation_accel(CfmInput(s, v, dv), spec) == idm_accel(CfmInput(s, v, dv), DEFAULT_IDM)

    @given(s=st.floats(0.5, 300), dv=st.floats(-10, 10), g=st.floats(0.1, 2))
    def test_at_desired_speed(self, s, dv, g):
        inp = CfmInput(s, 5.0, dv)
        assert idm_relaxation_accel(inp, IdmRelaxation(5.0, g)) == idm_accel(inp, DEFAULT_IDM)

    def test_relaxation_term(self):
        inp = CfmInput(1e6, 3.0, 0.0)
        got = idm_relaxation_accel(inp, IdmRelaxation(5.0, 1.0))
        assert got == pytest.approx(idm_accel(inp, DEFAULT_IDM) + 2.0, rel=1e-14)

    def test_clamp_on_total(self):
        # stopped car, short gap: IDM says brake and relaxation pulls forward; the sum is what gets clamped
        inp = CfmInput(1.5, 0.0, 0.0)
        assert idm_relaxation_accel(inp, IdmRelaxation(5.0, 0.5)) >= 0.0
        assert idm_relaxation_accel(CfmInput(0.5, 0.0, 0.0), IdmRelaxation(1.0, 0.1)) == 0.0

    def test_invalid(self):
        with pytest.raises(ValueError):
            IdmRelaxation(0.0, 1.0)
        with pytest.raises(ValueError):
            IdmRelaxation(5.0, -0.1)

    def test_steady_state_speed(self):
        spec = IdmRelaxation(5.0, 0.5)
        f = lambda v: idm_accel(CfmInput(1e12, v, 0.0), DEFAULT_IDM) + 0.5 * (5.0 - v)  # noqa: E731
        v_star = brentq(f, 0.0, 30.0, xtol=1e-14)
        v, dt = 0.0, 0.1
        for _ in range(5000):
            v = max(0.0, v + idm_relaxation_accel(CfmInput(1e12, v, 0.0), spec) * dt)
        assert abs(v - v_star) < 1e-3


class TestFollowerStopper:
    def test_free_region(self):
        assert follower_stopper_command(CfmInput(1e4, 10.0, -10.0), FS) == 5.0

    def test_stop_region(self):
        assert follower_stopper_command(CfmInput(3.0, 5.0, 0.0), FS) == 0.0

    def test_bands_quadratic(self):
        x1, x2, x3 = follower_stopper_bands(-2.0, FS)
        assert (x1, x2, x3) == pytest.approx((4.5 + 4 / 3.0, 5.25 + 2.0, 6.0 + 4.0))
        assert follower_stopper_bands(3.0, FS) == pytest.approx((4.5, 5.25, 6.0))

    def test_continuity_at_boundaries(self):
        for dv in (-3.0, -1.0, 0.0, 2.0):
            for b in follower_stopper_bands(dv, FS):
                left = follower_stopper_command(CfmInput(b - 1e-12, 4.0, dv), FS)
                right = follower_stopper_command(CfmInput(b + 1e-12, 4.0, dv), FS)
                assert abs(left - right) < 1e-9

    def test_continuity_fine_grid(self):
        for dv in np.linspace(-4, 4, 9):
            s = np.linspace(4.0, 20.0, 20001)
            u = np.array([follower_stopper_command(CfmInput(x, 4.0, dv), FS) for x in s])
            # slope is bounded, so any jump would show as an outlier step
            assert np.max(np.abs(np.diff(u))) < 5.0 * (s[1] - s[0]) * 10

    @given(s=st.floats(0.01, 100), v=st.floats(0, 35), dv=st.floats(-20, 20), vd=st.floats(0.5, 30))
    def test_output_range(self, s, v, dv, vd):
        u = follower_stopper_command(CfmInput(s, v, dv), FollowerStopper(vd))
        assert 0.0 <= u <= vd

    def test_invalid(self):
        with pytest.raises(ValueError):
            FollowerStopper(5.0, dx0=(5.0, 4.0, 6.0))
        with pytest.raises(ValueError):
            FollowerStopper(5.0, decel=(0.5, 1.0, 1.5))


class TestCommandToAccel:
    def test_cases(self):
        assert command_to_accel(ControlCommand("speed", 7.0), 7.0, 0.4) == 0.0
        assert command_to_accel(ControlCommand("speed", 10.0), 0.0, 0.4, (-3.0, 3.0)) == 3.0
        assert command_to_accel(ControlCommand("accel", 1.2), 5.0, 0.4) == 1.2

    def test_dt(self):
        with pytest.raises(ValueError):
            command_to_accel(ControlCommand("accel", 1.0), 0.0, 0.0)


def test_serialization_round_trip():
    for spec in (FollowerStopper(4.0), IdmRelaxation(6.0, 1.0)):
        assert controller_from_dict(controller_to_dict(spec)) == spec
    assert controller_from_dict(None) is None
    with pytest.raises(ValueError):
        controller_from_dict({"type": "pid", "v_desired": 3})
