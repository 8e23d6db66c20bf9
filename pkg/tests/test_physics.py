import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from aqpinn.errors import ConfigurationError, DataError
from aqpinn.physics import (FlowDerivatives, FluidConstants, ns_residuals, rest_derivatives,
                            streamfunction_velocities, taylor_green, taylor_green_derivatives,
                            uniform_flow_derivatives, vorticity)

import oracles


def _max_residual(d, k):
    r = ns_residuals(d, k)
    return max(float(np.max(np.abs(np.asarray(c)))) for c in (r.f_x, r.f_y, r.c))


def test_taylor_green_is_an_exact_solution():
    rng = np.random.default_rng(0)
    x, y = rng.uniform(0, 2 * np.pi, (2, 1000))
    t = rng.uniform(0, 5, 1000)
    for nu, rho in [(0.01, 1.0), (0.1, 2.5)]:
        d = taylor_green_derivatives(x, y, t, nu, rho)
        assert _max_residual(d, FluidConstants(rho, nu)) < 1e-10


def test_taylor_green_derivatives_match_finite_differences():
    nu, rho, h = 0.05, 1.3, 1e-5
    x0, y0, t0 = 0.7, -1.1, 0.4
    d = taylor_green_derivatives(x0, y0, t0, nu, rho)
    comp = {"u": 0, "v": 1, "p": 2}
    for name, idx in comp.items():
        f = lambda z: taylor_green(z[0], z[1], z[2], nu, rho)[idx]  # noqa: E731
        g = oracles.central_diff(f, [x0, y0, t0], h)
        for axis, a in zip("xyt", g):
            attr = f"{name}_{axis}"
            if hasattr(d, attr):
                assert getattr(d, attr) == pytest.approx(a, abs=1e-8)
    for name in "uv":
        f = lambda z: taylor_green(z[0], z[1], z[2], nu, rho)[comp[name]]  # noqa: E731
        H = oracles.hessian_fd(f, [x0, y0, t0], 1e-4)
        assert getattr(d, f"{name}_xx") == pytest.approx(H[0, 0], abs=1e-6)
        assert getattr(d, f"{name}_yy") == pytest.approx(H[1, 1], abs=1e-6)


@pytest.mark.parametrize("speed,pressure", [(0.0, 0.0), (0.0, 3.0), (1.0, 0.0), (-2.5, 1.0)])
def test_rest_and_uniform_flows_have_zero_residual(speed, pressure):
    d = uniform_flow_derivatives(speed, pressure, shape=(1000,))
    assert _max_residual(d, FluidConstants()) < 1e-10
    assert _max_residual(rest_derivatives(pressure, shape=(1000,)), FluidConstants()) < 1e-10


def test_residual_formula_on_a_hand_example():
    d = rest_derivatives(shape=())
    d.u, d.v, d.u_x, d.u_y, d.p_x, d.u_xx, d.u_yy, d.u_t = 2.0, 3.0, 0.5, -1.0, 4.0, 1.0, 2.0, 0.25
    d.v_y = 0.1
    r = ns_residuals(d, FluidConstants(rho=2.0, nu=0.1))
    assert r.f_x == pytest.approx(0.25 + 2 * 0.5 + 3 * -1.0 + 4.0 / 2 - 0.1 * 3.0)
    assert r.f_y == pytest.approx(3.0 * 0.1)
    assert r.c == pytest.approx(0.6)


def test_vorticity_of_taylor_green():
    x, y, t, nu = 0.3, 1.2, 0.5, 0.02
    d = taylor_green_derivatives(x, y, t, nu)
    assert vorticity(d) == pytest.approx(2 * np.cos(x) * np.cos(y) * np.exp(-2 * nu * t))


@settings(max_examples=50, deadline=None)
@given(st.floats(-5, 5), st.floats(-5, 5))
def test_streamfunction_velocities_are_divergence_free(a, b):
    # psi = a x y + b sin(x) cos(y): u_x + v_y = psi_xy - psi_yx = 0
    x, y = 0.4, -0.9
    psi_xy = a - b * np.cos(x) * np.sin(y)
    u, v = streamfunction_velocities(a * y + b * np.cos(x) * np.cos(y), a * x - b * np.sin(x) * np.sin(y))
    assert u == pytest.approx(a * x - b * np.sin(x) * np.sin(y))
    assert v == pytest.approx(-(a * y + b * np.cos(x) * np.cos(y)))
    assert psi_xy - psi_xy == 0.0


def test_constants_validation():
    with pytest.raises(ConfigurationError):
        FluidConstants(rho=0.0)
    with pytest.raises(ConfigurationError):
        FluidConstants(nu=-1.0)


def test_check_finite_flags_bad_fields():
    d = rest_derivatives(shape=(3,))
    assert d.check_finite() is d
    d.p_y = np.array([0.0, np.nan, 0.0])
    with pytest.raises(DataError, match="p_y"):
        d.check_finite()


def test_flow_derivatives_field_order():
    names = [f for f in FlowDerivatives.__dataclass_fields__]
    assert names[:3] == ["u", "v", "p"]
    assert len(names) == 15
